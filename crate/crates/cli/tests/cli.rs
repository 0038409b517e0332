use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn nestlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestlab")).args(args).env_remove("NESTLAB_BITS").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn json_ok(args: &[&str], schema_name: &str) -> Value {
    let o = nestlab(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let errors: Vec<String> = schema(schema_name).iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{args:?}: {errors:?}");
    v
}

#[test]
fn classify_ulam_is_ce_candidate() {
    let v = json_ok(&["classify", "--family", "quadratic:a=2"], "classify");
    assert_eq!(v["verdict"], "CECandidate");
    let lambda = v["detail"]["CECandidate"]["lambda_hat"].as_f64().unwrap();
    assert!((lambda - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    for (args, flag) in [
        (vec!["classify"], "--family"),
        (vec!["scan", "--family", "pquadratic", "--window", "a=1.5:2,eps=0", "--samples", "0"], "--samples"),
        (vec!["nest", "--family", "quadratic:a=2", "--bits", "200"], "--bits"),
        (vec!["nest", "--family", "cubic:a=2"], "--family"),
        (vec!["kneading", "--family", "quadratic:a=2", "--format", "csv"], "--format"),
        (vec!["stats", "--family", "quadratic:a=2", "--wr", "0.1,0.5"], "--wr"),
        (vec!["scan", "--family", "pquadratic", "--window", "b=1:2", "--samples", "3"], "--window"),
        (vec!["transversality", "--family", "quadratic:a=2", "--direction", "1,0"], "--direction"),
    ] {
        let o = nestlab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?} wrote data");
        assert!(stderr(&o).contains(flag), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn computation_errors_exit_1_without_data() {
    // superattracting: the critical orbit hits 0
    let o = nestlab(&["stats", "--family", "quadratic:a=0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(stderr(&o).contains("critical"));
}

#[test]
fn every_subcommand_matches_its_schema() {
    let dir = tempfile::tempdir().unwrap();
    let consts = dir.path().join("c.cfg");
    std::fs::write(&consts, "gamma = 2\nb = 8\nb_tilde = 2\n").unwrap();
    let v = json_ok(&["nest", "--family", "quadratic:a=1.7951", "--levels", "2"], "nest");
    assert_eq!(v["levels"][0]["branches"].as_array().unwrap().len(), 2);
    json_ok(
        &[
            "stats",
            "--family",
            "quadratic:a=1.7951",
            "--ce",
            "200",
            "--bce",
            "4",
            "--recurrence",
            "1000",
            "--wr",
            "0.5,0.1",
            "--wr-n",
            "2000",
            "--levels",
            "2",
            "--consts",
            consts.to_str().unwrap(),
        ],
        "stats",
    );
    let v = json_ok(&["transversality", "--family", "quadratic:a=2", "--direction", "1", "--field-degree", "400"], "transversality");
    assert!((v["sum"]["value"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let v = json_ok(&["kneading", "--family", "quadratic:a=1", "--depth", "10"], "kneading");
    assert_eq!(v["regular"]["period"], 2);
    json_ok(&["straighten", "--family", "pquadratic:a=1.8,eps=0.05"], "straighten");
    json_ok(&["window", "--family", "quadratic:a=1.7951", "--level", "1"], "window");
    let out = dir.path().join("s.csv");
    json_ok(
        &["scan", "--family", "pquadratic", "--window", "a=1.5:2,eps=0", "--samples", "6", "--jobs", "2", "--out", out.to_str().unwrap()],
        "scan_summary",
    );
    let o = nestlab(&["scan", "--family", "pquadratic", "--window", "a=1.5:2,eps=0", "--samples", "4", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let rec = schema("scan_record");
    for line in stdout(&o).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(rec.is_valid(&v), "{line}");
    }
}

#[test]
fn precision_from_env_flag_and_config() {
    let run = |args: &[&str], env: Option<&str>| -> u64 {
        let mut c = Command::new(env!("CARGO_BIN_EXE_nestlab"));
        c.args(args).env_remove("NESTLAB_BITS");
        if let Some(b) = env {
            c.env("NESTLAB_BITS", b);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v["precision_bits"].as_u64().unwrap()
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("n.cfg");
    std::fs::write(&cfg, "# budgets\nprecision_bits = 80\n").unwrap();
    let base = ["nest", "--family", "quadratic:a=1.7951", "--levels", "1"];
    assert_eq!(run(&base, None), 53);
    assert_eq!(run(&base, Some("106")), 106);
    let with_cfg = [&base[..], &["--config", cfg.to_str().unwrap()]].concat();
    assert_eq!(run(&with_cfg, None), 80);
    assert_eq!(run(&with_cfg, Some("70")), 70);
    let with_flag = [&base[..], &["--bits", "90"]].concat();
    assert_eq!(run(&with_flag, Some("70")), 90);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.cfg");
    std::fs::write(&cfg, "ce_n = 500\nrecurrence_n = 1000\nmax_iter = 100\n").unwrap();
    let used = |extra: &[&str]| {
        let args = [&["classify", "--family", "quadratic:a=2", "--config", cfg.to_str().unwrap()][..], extra].concat();
        let v = json_ok(&args, "classify");
        v["budgets_used"]["orbit_iterations"].as_u64().unwrap()
    };
    assert_eq!(used(&[]), 100 + 500 + 1000);
    assert_eq!(used(&["--ce-n", "50"]), 100 + 50 + 1000);
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = nestlab(&["classify", "--family", "quadratic:a=2", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn version_lists_defaults() {
    let o = nestlab(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    for key in ["ce_threshold = 0.05", "max_period = 1000", "b_tilde = 2", "cycle_tol", "precision_bits = 53"] {
        assert!(s.contains(key), "missing {key}");
    }
}

#[test]
fn numbers_carry_seventeen_digits() {
    let o = nestlab(&["nest", "--family", "quadratic:a=2", "--levels", "1", "--format", "csv"]);
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let lo = row.split(',').nth(8).unwrap();
    let mantissa = lo.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").len(), 17, "{lo}");
}

#[test]
fn scan_output_is_independent_of_workers() {
    let run = |jobs: &str| {
        let o = nestlab(&["scan", "--family", "pquadratic", "--window", "a=1.5:2,eps=0", "--samples", "12", "--seed", "7", "--jobs", jobs]);
        assert_eq!(o.status.code(), Some(0));
        o.stdout
    };
    let one = run("1");
    assert_eq!(one, run("4"));
    assert_eq!(one, run("8"));
}
