//! Argument grammar and subcommand drivers for the `nestlab` binary.

pub mod output;

use clap::builder::RangedU64ValueParser;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use nestlab::kneading::{self, KneadingError, CYCLE_TOL, MULT_TOL};
use nestlab::maps::{FamilySpec, MapFamily};
use nestlab::nest::{build_nest, Nest, NestBudget};
use nestlab::scan::{self, Budgets, ParamWindow, ScanError, ScanSummary};
use nestlab::stats::{self, ClassifierConstants};
use nestlab::transversality;
use nestlab::{Dd, MapInstance, Real};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser, Debug, Clone, PartialEq)]
#[command(name = "nestlab", version, about = "Principal nests and critical-orbit statistics of unimodal maps")]
pub struct Invocation {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Cmd {
    /// Principal nest levels and their return branches.
    Nest(NestArgs),
    /// Critical-orbit statistics and the branch taxonomy.
    Stats(StatsArgs),
    /// Transversality sum along a parameter direction.
    Transversality(TransversalityArgs),
    /// Kneading sequence, attracting cycle and renormalization.
    Kneading(KneadingArgs),
    /// Quadratic map with the same kneading.
    Straighten(StraightenArgs),
    /// Regular / CE-candidate verdict for one parameter.
    Classify(ClassifyArgs),
    /// Seeded parameter sweep.
    Scan(ScanArgs),
    /// Phase-parameter window around a parameter.
    Window(WindowArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Json,
    Csv,
    Text,
}

impl OutFormat {
    fn name(self) -> &'static str {
        match self {
            OutFormat::Json => "json",
            OutFormat::Csv => "csv",
            OutFormat::Text => "text",
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Default)]
pub struct Common {
    #[arg(long, value_enum)]
    pub format: Option<OutFormat>,
    /// Mantissa bits (53 = f64, up to 106 = double-double).
    #[arg(long, env = "NESTLAB_BITS", value_parser = RangedU64ValueParser::<u32>::new().range(53..=106))]
    pub bits: Option<u32>,
    /// key = value file of budget defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write data here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Default)]
pub struct BudgetArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub max_period: Option<usize>,
    #[arg(long)]
    pub renorm_max_period: Option<usize>,
    #[arg(long)]
    pub nest_levels: Option<usize>,
    #[arg(long)]
    pub ce_n: Option<usize>,
    #[arg(long)]
    pub recurrence_n: Option<usize>,
    #[arg(long)]
    pub ce_threshold: Option<f64>,
    #[arg(long)]
    pub max_critical_return: Option<usize>,
}

fn positive() -> RangedU64ValueParser<usize> {
    RangedU64ValueParser::<usize>::new().range(1..)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct NestArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[arg(long, default_value_t = 3, value_parser = positive())]
    pub levels: usize,
    /// Absolute branch length cut-off.
    #[arg(long)]
    pub min_branch: Option<f64>,
    /// Longest critical return time followed.
    #[arg(long, value_parser = positive())]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct StatsArgs {
    #[arg(long)]
    pub family: FamilySpec,
    /// Length of the a_k series.
    #[arg(long, default_value_t = 1000, value_parser = RangedU64ValueParser::<usize>::new().range(2..))]
    pub ce: usize,
    /// Depth of the exhaustive preimage search.
    #[arg(long, value_parser = RangedU64ValueParser::<usize>::new().range(1..=20))]
    pub bce: Option<usize>,
    /// Orbit length for the recurrence exponent.
    #[arg(long, value_parser = RangedU64ValueParser::<usize>::new().range(100..))]
    pub recurrence: Option<usize>,
    /// Comma-separated, strictly decreasing radii.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub wr: Option<Vec<f64>>,
    /// Orbit length for the wr table.
    #[arg(long, default_value_t = 100_000, value_parser = RangedU64ValueParser::<usize>::new().range(1000..))]
    pub wr_n: usize,
    /// Nest depth used for e_n and the taxonomy.
    #[arg(long, default_value_t = 3, value_parser = positive())]
    pub levels: usize,
    /// Classify return branches.
    #[arg(long)]
    pub taxonomy: bool,
    /// key = value file of classifier constants (implies --taxonomy).
    #[arg(long)]
    pub consts: Option<PathBuf>,
    #[arg(long, default_value_t = 200, value_parser = RangedU64ValueParser::<usize>::new().range(8..))]
    pub grid: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct TransversalityArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub direction: Vec<f64>,
    #[arg(long, default_value_t = 60, value_parser = positive())]
    pub terms: usize,
    /// Also build a transversal polynomial field of at most this degree.
    #[arg(long, value_parser = RangedU64ValueParser::<usize>::new().range(2..))]
    pub field_degree: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct KneadingArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[arg(long, default_value_t = 60, value_parser = positive())]
    pub depth: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct StraightenArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 60, value_parser = positive())]
    pub depth: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    #[command(flatten)]
    pub common: Common,
}

fn parse_family_name(s: &str) -> Result<MapFamily, String> {
    FamilySpec::parse_family(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ScanArgs {
    /// Family name without parameters, e.g. `pquadratic`.
    #[arg(long, value_parser = parse_family_name)]
    pub family: MapFamily,
    /// Parameter box, e.g. `a=1.5:2,eps=0`.
    #[arg(long)]
    pub window: String,
    #[arg(long, value_parser = positive())]
    pub samples: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, value_parser = positive())]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub budgets: BudgetArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct WindowArgs {
    #[arg(long)]
    pub family: FamilySpec,
    #[arg(long, default_value_t = 1, value_parser = positive())]
    pub level: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[command(flatten)]
    pub common: Common,
}

fn push<T: std::fmt::Display>(v: &mut Vec<String>, flag: &str, x: T) {
    v.push(format!("--{flag}={x}"));
}

fn push_opt<T: std::fmt::Display>(v: &mut Vec<String>, flag: &str, x: &Option<T>) {
    if let Some(x) = x {
        push(v, flag, x);
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Common {
    fn render(&self, v: &mut Vec<String>) {
        if let Some(f) = self.format {
            push(v, "format", f.name());
        }
        push_opt(v, "bits", &self.bits);
        push_opt(v, "config", &self.config.as_ref().map(|p| p.display().to_string()));
        push_opt(v, "out", &self.out.as_ref().map(|p| p.display().to_string()));
    }
}

impl BudgetArgs {
    fn render(&self, v: &mut Vec<String>) {
        push_opt(v, "max-iter", &self.max_iter);
        push_opt(v, "max-period", &self.max_period);
        push_opt(v, "renorm-max-period", &self.renorm_max_period);
        push_opt(v, "nest-levels", &self.nest_levels);
        push_opt(v, "ce-n", &self.ce_n);
        push_opt(v, "recurrence-n", &self.recurrence_n);
        push_opt(v, "ce-threshold", &self.ce_threshold);
        push_opt(v, "max-critical-return", &self.max_critical_return);
    }

    fn apply(&self, b: &mut Budgets) {
        let set = |dst: &mut usize, x: Option<usize>| {
            if let Some(x) = x {
                *dst = x;
            }
        };
        set(&mut b.max_iter, self.max_iter);
        set(&mut b.max_period, self.max_period);
        set(&mut b.renorm_max_period, self.renorm_max_period);
        set(&mut b.nest_levels, self.nest_levels);
        set(&mut b.ce_n, self.ce_n);
        set(&mut b.recurrence_n, self.recurrence_n);
        set(&mut b.max_critical_return, self.max_critical_return);
        if let Some(x) = self.ce_threshold {
            b.ce_threshold = x;
        }
    }
}

impl Invocation {
    /// Argument vector (without the program name) that parses back to `self`.
    pub fn render(&self) -> Vec<String> {
        let mut v = Vec::new();
        match &self.command {
            Cmd::Nest(a) => {
                v.push("nest".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "levels", a.levels);
                push_opt(&mut v, "min-branch", &a.min_branch);
                push_opt(&mut v, "budget", &a.budget);
                a.common.render(&mut v);
            }
            Cmd::Stats(a) => {
                v.push("stats".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "ce", a.ce);
                push_opt(&mut v, "bce", &a.bce);
                push_opt(&mut v, "recurrence", &a.recurrence);
                push_opt(&mut v, "wr", &a.wr.as_deref().map(join));
                push(&mut v, "wr-n", a.wr_n);
                push(&mut v, "levels", a.levels);
                if a.taxonomy {
                    v.push("--taxonomy".into());
                }
                push_opt(&mut v, "consts", &a.consts.as_ref().map(|p| p.display().to_string()));
                push(&mut v, "grid", a.grid);
                a.common.render(&mut v);
            }
            Cmd::Transversality(a) => {
                v.push("transversality".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "direction", join(&a.direction));
                push(&mut v, "terms", a.terms);
                push_opt(&mut v, "field-degree", &a.field_degree);
                a.common.render(&mut v);
            }
            Cmd::Kneading(a) => {
                v.push("kneading".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "depth", a.depth);
                a.common.render(&mut v);
            }
            Cmd::Straighten(a) => {
                v.push("straighten".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "tol", a.tol);
                push(&mut v, "depth", a.depth);
                a.common.render(&mut v);
            }
            Cmd::Classify(a) => {
                v.push("classify".into());
                push(&mut v, "family", &a.family);
                a.budgets.render(&mut v);
                a.common.render(&mut v);
            }
            Cmd::Scan(a) => {
                v.push("scan".into());
                push(&mut v, "family", a.family.name());
                push(&mut v, "window", &a.window);
                push(&mut v, "samples", a.samples);
                push(&mut v, "seed", a.seed);
                push_opt(&mut v, "jobs", &a.jobs);
                a.budgets.render(&mut v);
                a.common.render(&mut v);
            }
            Cmd::Window(a) => {
                v.push("window".into());
                push(&mut v, "family", &a.family);
                push(&mut v, "level", a.level);
                push(&mut v, "tol", a.tol);
                a.common.render(&mut v);
            }
        }
        v
    }

    pub fn parse<I, T>(args: I) -> Result<Invocation, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let m = command().try_get_matches_from(args)?;
        Invocation::from_arg_matches(&m)
    }
}

/// Algorithm-affecting defaults, printed by `--version`.
pub fn long_version() -> String {
    let mut s = format!("{}\n\n[budgets]\n", env!("CARGO_PKG_VERSION"));
    s.push_str(&Budgets::default().to_kv());
    s.push_str("\n[classifier]\n");
    s.push_str(&ClassifierConstants::default().to_kv());
    let nb = NestBudget::default();
    let _ = write!(
        s,
        "\n[nest]\nmax_period = {}\nmax_return_time = {}\nmax_critical_return = {}\nmin_branch_fraction = {}\nmax_landing_iterations = {}\nunreliable_below = 1e3 * epsilon * half_width\n",
        nb.max_period, nb.max_return_time, nb.max_critical_return, nb.min_branch_fraction, nb.max_landing_iterations
    );
    let _ = write!(
        s,
        "\n[tolerances]\ncycle_tol = {CYCLE_TOL:e}\nmultiplier_tol = {MULT_TOL:e}\ncritical_hit = 1e3 * epsilon * half_width\nprecision_bits = 53\n"
    );
    s
}

fn command() -> clap::Command {
    let lv: &'static str = Box::leak(long_version().into_boxed_str());
    Invocation::command().long_version(lv)
}

#[derive(Debug)]
pub enum CliError {
    Usage { flag: String, message: String },
    Compute(String),
}

impl CliError {
    fn usage(flag: &str, message: impl std::fmt::Display) -> CliError {
        CliError::Usage { flag: flag.to_string(), message: message.to_string() }
    }

    fn compute(message: impl std::fmt::Display) -> CliError {
        CliError::Compute(message.to_string())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
/// Data goes to `out` (or `--out`) only when the whole run succeeded.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match Invocation::parse(argv) {
        Ok(inv) => inv,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
            } else {
                let _ = out.write_all(text.as_bytes());
            }
            return e.exit_code();
        }
    };
    match execute(&inv) {
        Ok(Output { data, path }) => {
            let res = match path {
                Some(p) => std::fs::write(&p, data).map_err(|e| format!("cannot write {}: {e}", p.display())),
                None => out.write_all(data.as_bytes()).map_err(|e| e.to_string()),
            };
            match res {
                Ok(()) => 0,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    1
                }
            }
        }
        Err(CliError::Usage { flag, message }) => {
            let _ = writeln!(err, "error: invalid value for '{flag}': {message}");
            2
        }
        Err(CliError::Compute(message)) => {
            let _ = writeln!(err, "error: {message}");
            1
        }
    }
}

struct Output {
    data: String,
    path: Option<PathBuf>,
}

fn load_budgets(common: &Common) -> Result<Budgets, CliError> {
    let mut b = Budgets::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))?;
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| CliError::usage("--config", format!("line {}: expected key = value", ln + 1)))?;
            b.set(k, v).map_err(|e| CliError::usage("--config", format!("line {}: {e}", ln + 1)))?;
        }
    }
    if let Some(bits) = common.bits {
        b.precision_bits = bits;
    }
    Ok(b)
}

fn instance(spec: &FamilySpec) -> Result<MapInstance, CliError> {
    spec.instance().map_err(|e| CliError::usage("--family", e))
}

fn format_of(common: &Common, allowed: &[OutFormat], default: OutFormat, cmd: &str) -> Result<OutFormat, CliError> {
    let f = common.format.unwrap_or(default);
    if !allowed.contains(&f) {
        return Err(CliError::usage("--format", format!("`{}` is not available for `{cmd}`", f.name())));
    }
    Ok(f)
}

fn emit(v: &Value, f: OutFormat) -> String {
    match f {
        OutFormat::Text => output::text(v),
        _ => output::json(v),
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn execute(inv: &Invocation) -> Result<Output, CliError> {
    use OutFormat::*;
    let (data, common) = match &inv.command {
        Cmd::Nest(a) => {
            let f = format_of(&a.common, &[Json, Csv, Text], Json, "nest")?;
            (cmd_nest(a, f)?, &a.common)
        }
        Cmd::Stats(a) => {
            let f = format_of(&a.common, &[Json, Csv, Text], Json, "stats")?;
            (cmd_stats(a, f)?, &a.common)
        }
        Cmd::Transversality(a) => {
            let f = format_of(&a.common, &[Json, Text], Json, "transversality")?;
            (cmd_transversality(a, f)?, &a.common)
        }
        Cmd::Kneading(a) => {
            let f = format_of(&a.common, &[Json, Text], Json, "kneading")?;
            (cmd_kneading(a, f)?, &a.common)
        }
        Cmd::Straighten(a) => {
            let f = format_of(&a.common, &[Json, Text], Json, "straighten")?;
            (cmd_straighten(a, f)?, &a.common)
        }
        Cmd::Classify(a) => {
            let f = format_of(&a.common, &[Json, Text], Json, "classify")?;
            (cmd_classify(a, f)?, &a.common)
        }
        Cmd::Scan(a) => return cmd_scan(a),
        Cmd::Window(a) => {
            let f = format_of(&a.common, &[Json, Text], Json, "window")?;
            (cmd_window(a, f)?, &a.common)
        }
    };
    Ok(Output { data, path: common.out.clone() })
}

fn f64_nest(m: &MapInstance, budget: &NestBudget, bits: u32) -> Result<Nest<f64>, CliError> {
    let err = CliError::compute;
    if bits > 53 {
        let n = build_nest::<Dd>(m, budget).map_err(err)?;
        Ok(Nest {
            restrictive: nestlab::nest::RestrictiveInterval {
                half_width: n.restrictive.half_width.to_f64(),
                period: n.restrictive.period,
                depth: n.restrictive.depth,
                max_period_exceeded: n.restrictive.max_period_exceeded,
            },
            levels: n.levels.iter().map(|l| l.to_f64()).collect(),
            stop: n.stop,
        })
    } else {
        build_nest::<f64>(m, budget).map_err(err)
    }
}

fn cmd_nest(a: &NestArgs, f: OutFormat) -> Result<String, CliError> {
    let budgets = load_budgets(&a.common)?;
    let m = instance(&a.family)?;
    if let Some(l) = a.min_branch {
        if !(l > 0.0) {
            return Err(CliError::usage("--min-branch", "must be positive"));
        }
    }
    let mut nb = NestBudget {
        max_levels: a.levels,
        max_period: budgets.renorm_max_period,
        min_branch_length: a.min_branch,
        ..NestBudget::default()
    };
    if let Some(b) = a.budget {
        nb.max_critical_return = b;
    }
    let nest = f64_nest(&m, &nb, budgets.precision_bits)?;
    if f == OutFormat::Csv {
        let mut s = String::from("n,c_n,v_n,s_n,tau_n,central,reliability,j,lo,hi,r\n");
        let opt = |x: Option<String>| x.unwrap_or_default();
        for l in &nest.levels {
            let head = format!(
                "{},{},{},{},{},{},{:?}",
                l.n,
                opt(l.c.map(output::float)),
                opt(l.v.map(|v| v.to_string())),
                opt(l.s.map(|v| v.to_string())),
                opt(l.tau.map(|v| v.to_string())),
                opt(l.central.map(|v| v.to_string())),
                l.reliability
            );
            if l.branches.is_empty() {
                let _ = writeln!(s, "{head},,,,");
            }
            for b in l.sorted_branches() {
                let _ = writeln!(s, "{head},{},{},{},{}", b.index, output::float(b.lo), output::float(b.hi), b.return_time);
            }
        }
        return Ok(s);
    }
    let levels: Vec<Value> = nest
        .levels
        .iter()
        .map(|l| {
            json!({
                "n": l.n,
                "interval": [-l.half_width, l.half_width],
                "c_n": l.c,
                "v_n": l.v,
                "s_n": l.s,
                "tau_n": l.tau,
                "central": l.central,
                "reliability": to_value(&l.reliability),
                "status": to_value(&l.status),
                "critical_return": l.critical_return,
                "branches": l.sorted_branches().iter().map(|b| json!({
                    "j": b.index, "lo": b.lo, "hi": b.hi, "r": b.return_time,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let v = json!({
        "family": a.family.to_string(),
        "precision_bits": budgets.precision_bits,
        "restrictive": {
            "half_width": nest.restrictive.half_width,
            "period": nest.restrictive.period,
            "depth": nest.restrictive.depth,
        },
        "stop": to_value(&nest.stop),
        "levels": levels,
    });
    Ok(emit(&v, f))
}

fn cmd_stats(a: &StatsArgs, f: OutFormat) -> Result<String, CliError> {
    let budgets = load_budgets(&a.common)?;
    let m = instance(&a.family)?;
    let consts = match &a.consts {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::usage("--consts", format!("{}: {e}", p.display())))?;
            ClassifierConstants::parse_kv(&text).map_err(|e| CliError::usage("--consts", e))?
        }
        None => ClassifierConstants::default(),
    };
    if let Some(wr) = &a.wr {
        if wr.is_empty() || wr.windows(2).any(|w| !(w[1] < w[0])) || wr.iter().any(|d| !(*d > 0.0)) {
            return Err(CliError::usage("--wr", "radii must be positive and strictly decreasing"));
        }
    }
    let taxonomy = a.taxonomy || a.consts.is_some();
    let nb = NestBudget {
        max_levels: a.levels,
        max_period: budgets.renorm_max_period,
        ..if taxonomy { NestBudget::default() } else { NestBudget::lite() }
    };
    let nest = f64_nest(&m, &nb, budgets.precision_bits)?;
    let reliable: Vec<_> = nest.reliable_levels().cloned().collect();
    let ce = stats::ce_series(&m, a.ce, Some(&reliable)).map_err(CliError::compute)?;
    if f == OutFormat::Csv {
        let mut s = String::from("k,a_k\n");
        for (k, x) in ce.a.iter().enumerate() {
            let _ = writeln!(s, "{},{}", k + 1, output::float(*x));
        }
        return Ok(s);
    }
    let mut v = json!({
        "family": a.family.to_string(),
        "ce": {
            "n": a.ce,
            "a_k": ce.a,
            "liminf_estimate": ce.liminf_estimate,
            "tail_window": [ce.tail_window.0, ce.tail_window.1],
            "e_n": ce.e,
            "c_n": nest.scaling_factors(),
        },
    });
    if let Some(d) = a.bce {
        let rows = stats::bce_min_exponent(&m, d).map_err(CliError::compute)?;
        v["bce"] = to_value(&rows);
    }
    if let Some(n) = a.recurrence {
        let r = stats::recurrence_exponent(&m, n).map_err(CliError::compute)?;
        v["recurrence"] = json!({
            "n": n,
            "fitted_exponent": if r.fitted_exponent.is_finite() { json!(r.fitted_exponent) } else { json!("inf") },
            "fit_points": r.fit_points,
            "non_recurrent": r.non_recurrent,
            "periodic": r.periodic,
            "closest_returns": r.closest_returns.iter().map(|(k, d)| json!([k, d])).collect::<Vec<_>>(),
        });
    }
    if let Some(wr) = &a.wr {
        let rows = stats::wr_statistic(&m, a.wr_n, wr).map_err(CliError::compute)?;
        v["wr"] = json!({
            "n": a.wr_n,
            "rows": rows.iter().map(|(d, x)| json!({"delta": d, "value": x})).collect::<Vec<_>>(),
        });
    }
    if taxonomy {
        let (tax, _) = stats::classify_branches(&m, &nest.levels, &consts, a.grid).map_err(CliError::compute)?;
        v["taxonomy"] = json!({
            "constants": to_value(&consts),
            "n0": tax.n0,
            "lambda_n0": tax.lambda_n0,
            "words": to_value(&tax.words),
            "branches": to_value(&tax.branches),
        });
    }
    Ok(emit(&v, f))
}

fn cmd_transversality(a: &TransversalityArgs, f: OutFormat) -> Result<String, CliError> {
    let m = instance(&a.family)?;
    if a.direction.len() != a.family.family.parameter_dim() {
        return Err(CliError::usage(
            "--direction",
            format!("expected {} component(s) for `{}`", a.family.family.parameter_dim(), a.family.family.name()),
        ));
    }
    let sum = transversality::tsujii_sum(a.family.family, &a.family.params, &a.direction, a.terms).map_err(|e| match e {
        transversality::TransversalityError::InvalidArgument(msg) => CliError::usage("--direction", msg),
        e => CliError::compute(e),
    })?;
    let sm = transversality::summability_check(&m, a.terms).map_err(CliError::compute)?;
    let finite = |x: f64| if x.is_finite() { json!(x) } else { json!("inf") };
    let mut v = json!({
        "family": a.family.to_string(),
        "direction": a.direction,
        "terms": a.terms,
        "sum": {
            "value": sum.value,
            "tail_bound": finite(sum.tail_bound),
            "converged": sum.converged,
            "verdict": to_value(&sum.verdict()),
            "partial_sums": sum.partial_sums,
        },
        "summability": {
            "partial_sum": sm.partial_sum,
            "geometric_tail": sm.geometric_tail,
            "decay_ratio": sm.decay_ratio,
            "tail_bound": finite(sm.tail_bound),
        },
    });
    if let Some(cap) = a.field_degree {
        let fld = transversality::construct_transversal_field(&m, a.terms, cap).map_err(CliError::compute)?;
        v["field"] = json!({
            "degree": fld.field.degree(),
            "half_width": fld.field.half_width,
            "coefficients": fld.field.coefficients,
            "epsilon": fld.epsilon,
            "s": fld.s,
            "nu": fld.nu.value,
            "verdict": to_value(&fld.nu.verdict()),
        });
    }
    Ok(emit(&v, f))
}

fn cmd_kneading(a: &KneadingArgs, f: OutFormat) -> Result<String, CliError> {
    let budgets = load_budgets(&a.common)?;
    let m = instance(&a.family)?;
    let ks = kneading::kneading_sequence(&m, a.depth);
    let regular = match kneading::detect_regular(&m, budgets.max_iter, budgets.max_period) {
        Ok(Some(r)) => json!({"period": r.period, "multiplier": r.multiplier, "orbit": r.orbit}),
        Ok(None) => Value::Null,
        Err(KneadingError::NeutralSuspected { multiplier }) => json!({"neutral_suspected": multiplier}),
        Err(e) => return Err(CliError::compute(e)),
    };
    let renorm = kneading::detect_renormalization(&m, budgets.renorm_max_period);
    let v = json!({
        "family": a.family.to_string(),
        "depth": ks.depth,
        "sequence": ks.to_string(),
        "periodic_suffix": ks.periodic_suffix.map(|(s, p)| json!({"start": s, "period": p})),
        "truncated": ks.truncated,
        "regular": regular,
        "renormalization": renorm.as_ref().map(to_value),
    });
    Ok(emit(&v, f))
}

fn cmd_straighten(a: &StraightenArgs, f: OutFormat) -> Result<String, CliError> {
    if !(a.tol > 0.0) {
        return Err(CliError::usage("--tol", "must be positive"));
    }
    let m = instance(&a.family)?;
    let s = kneading::straighten(&m, a.depth, a.tol).map_err(CliError::compute)?;
    let mut v = to_value(&s);
    v["family"] = json!(a.family.to_string());
    v["bracket"] = json!([s.bracket.0, s.bracket.1]);
    Ok(emit(&v, f))
}

fn classification_value(spec: &str, c: &scan::Classification) -> Value {
    let mut v = to_value(c);
    v["family"] = json!(spec);
    v["detail"] = v["verdict"].take();
    v["verdict"] = json!(c.verdict.name());
    v
}

fn cmd_classify(a: &ClassifyArgs, f: OutFormat) -> Result<String, CliError> {
    let mut budgets = load_budgets(&a.common)?;
    a.budgets.apply(&mut budgets);
    budgets.validate().map_err(|e| CliError::usage("budgets", e))?;
    instance(&a.family)?;
    let c = scan::classify_parameter(a.family.family, &a.family.params, &budgets);
    Ok(emit(&classification_value(&a.family.to_string(), &c), f))
}

fn scan_err(e: ScanError) -> CliError {
    match e {
        ScanError::InvalidArgument(m) => CliError::usage("budgets", m),
        e => CliError::compute(e),
    }
}

fn cmd_scan(a: &ScanArgs) -> Result<Output, CliError> {
    let mut budgets = load_budgets(&a.common)?;
    a.budgets.apply(&mut budgets);
    budgets.validate().map_err(|e| CliError::usage("budgets", e))?;
    let window = ParamWindow::parse(a.family, &a.window).map_err(|e| CliError::usage("--window", e))?;
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let format = match (a.common.format, &a.common.out) {
        (Some(OutFormat::Text), _) => return Err(CliError::usage("--format", "`text` is not available for `scan`")),
        (Some(OutFormat::Json), _) => scan::Format::JsonLines,
        (Some(OutFormat::Csv), _) => scan::Format::Csv,
        (None, Some(p)) => scan::Format::from_path(p),
        (None, None) => scan::Format::Csv,
    };
    match &a.common.out {
        Some(path) => {
            let o = scan::scan_to_path(&window, a.samples, &budgets, a.seed, jobs, path, format).map_err(scan_err)?;
            let s = ScanSummary::of(&o.records);
            let v = json!({
                "out": path.display().to_string(),
                "samples": s.samples,
                "computed": o.computed,
                "reused": o.reused,
                "regular": s.regular,
                "ce_candidate": s.ce_candidate,
                "renormalizable": s.renormalizable,
                "undetermined": s.undetermined,
            });
            Ok(Output { data: output::json(&v), path: None })
        }
        None => {
            let records = scan::scan_range(&window, a.samples, &budgets, a.seed, jobs).map_err(scan_err)?;
            let bytes = scan::render(&records, format, true).map_err(CliError::compute)?;
            Ok(Output { data: String::from_utf8(bytes).expect("utf-8 records"), path: None })
        }
    }
}

fn cmd_window(a: &WindowArgs, f: OutFormat) -> Result<String, CliError> {
    if !(a.tol > 0.0) {
        return Err(CliError::usage("--tol", "must be positive"));
    }
    instance(&a.family)?;
    let w = scan::parameter_window(a.family.family, &a.family.params, a.level, a.tol).map_err(CliError::compute)?;
    let v = json!({
        "family": a.family.to_string(),
        "level": w.n,
        "axis": a.family.family.param_names()[w.axis],
        "base": w.base,
        "interval": [w.interval.0, w.interval.1],
        "degenerate": w.degenerate,
        "signature": {
            "renorm_period": w.signature.renorm_period,
            "renorm_depth": w.signature.renorm_depth,
            "central": w.signature.central.iter().map(|(t, s, h)| json!([t, s, format!("{h:016x}")])).collect::<Vec<_>>(),
            "tau": w.signature.tau.iter().map(|(t, s, h)| json!([t, s, format!("{h:016x}")])).collect::<Vec<_>>(),
        },
    });
    Ok(emit(&v, f))
}
