//! Parameter classification, seeded scans, phase-parameter windows and persistence.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kneading::{detect_regular, detect_renormalization, KneadingError, RegularReport};
use crate::maps::{t_from_a, FamilySpec, MapError, MapFamily, MapInstance};
use crate::nest::{build_nest, renormalization_tower, return_signature, NestBudget};
use crate::numerics::{Dd, Precision};
use crate::stats::{ce_series, recurrence_exponent, StatsError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("I/O failure on {path}: {source}")]
    IOFailure { path: PathBuf, source: std::io::Error },
    #[error("{0} is locked by another scan (remove the lock file if that scan is dead)")]
    Locked(PathBuf),
    #[error("{0} belongs to a different scan; choose another output path")]
    ManifestMismatch(PathBuf),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("signature at the base parameter is not computable: {0}")]
    SignatureUnstable(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScanError + '_ {
    move |source| ScanError::IOFailure { path: path.to_path_buf(), source }
}

/// Work limits for [`classify_parameter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Critical-orbit iterations for attractor detection.
    pub max_iter: usize,
    /// Longest attracting period searched.
    pub max_period: usize,
    /// Largest total period of the renormalization search.
    pub renorm_max_period: usize,
    pub nest_levels: usize,
    /// Length `N` of the `a_k` series.
    pub ce_n: usize,
    pub recurrence_n: usize,
    /// Minimum of `a_k` over the tail window for a CE candidate.
    pub ce_threshold: f64,
    pub max_critical_return: usize,
    pub precision_bits: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_iter: 20_000,
            max_period: 1000,
            renorm_max_period: 64,
            nest_levels: 5,
            ce_n: 10_000,
            recurrence_n: 100_000,
            ce_threshold: 0.05,
            max_critical_return: 200_000,
            precision_bits: 53,
        }
    }
}

impl Budgets {
    pub const KEYS: [&'static str; 9] = [
        "max_iter",
        "max_period",
        "renorm_max_period",
        "nest_levels",
        "ce_n",
        "recurrence_n",
        "ce_threshold",
        "max_critical_return",
        "precision_bits",
    ];

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScanError> {
        let bad = || ScanError::InvalidArgument(format!("bad value `{value}` for `{key}`"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        match key.trim() {
            "max_iter" => self.max_iter = int()?,
            "max_period" => self.max_period = int()?,
            "renorm_max_period" => self.renorm_max_period = int()?,
            "nest_levels" => self.nest_levels = int()?,
            "ce_n" => self.ce_n = int()?,
            "recurrence_n" => self.recurrence_n = int()?,
            "ce_threshold" => self.ce_threshold = value.trim().parse().map_err(|_| bad())?,
            "max_critical_return" => self.max_critical_return = int()?,
            "precision_bits" => self.precision_bits = int()? as u32,
            k => return Err(ScanError::InvalidArgument(format!("unknown budget key `{k}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        Precision::new(self.precision_bits).map_err(|e| ScanError::InvalidArgument(e.to_string()))?;
        if self.max_period == 0 || self.max_period > 1000 {
            return Err(ScanError::InvalidArgument("max_period must lie in 1..=1000".into()));
        }
        if self.ce_n < 2 || self.recurrence_n < 100 || self.nest_levels == 0 {
            return Err(ScanError::InvalidArgument("ce_n >= 2, recurrence_n >= 100 and nest_levels >= 1 required".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "max_iter = {}\nmax_period = {}\nrenorm_max_period = {}\nnest_levels = {}\nce_n = {}\nrecurrence_n = {}\nce_threshold = {}\nmax_critical_return = {}\nprecision_bits = {}\n",
            self.max_iter,
            self.max_period,
            self.renorm_max_period,
            self.nest_levels,
            self.ce_n,
            self.recurrence_n,
            self.ce_threshold,
            self.max_critical_return,
            self.precision_bits
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UndeterminedReason {
    BudgetExhausted,
    Unreliable,
    NeutralSuspected,
    CriticalNonReturningCE,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Regular(RegularReport),
    CECandidate { lambda_hat: f64, recurrence_exponent: f64, nest_depth: usize },
    Renormalizable { period: usize, depth_reached: usize },
    Undetermined(UndeterminedReason),
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Regular(_) => "Regular",
            Verdict::CECandidate { .. } => "CECandidate",
            Verdict::Renormalizable { .. } => "Renormalizable",
            Verdict::Undetermined(_) => "Undetermined",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BudgetsUsed {
    pub orbit_iterations: usize,
    pub nest_levels: usize,
    pub precision_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub budgets_used: BudgetsUsed,
    /// Scaling factors of the reliable nest levels.
    pub c_n: Vec<f64>,
    pub e_n: Vec<Option<f64>>,
    pub renormalization: Option<(usize, usize)>,
    pub flags: Vec<String>,
}

/// Regular detection, then renormalization, then CE statistics on the nest.
///
/// Finitely renormalizable maps continue to the CE analysis (their nest starts
/// inside the restrictive interval); `Renormalizable` is reserved for maps
/// whose tower runs past the period budget.
pub fn classify_parameter(fam: MapFamily, params: &[f64], budgets: &Budgets) -> Classification {
    let mut c = Classification {
        verdict: Verdict::Undetermined(UndeterminedReason::Unreliable),
        budgets_used: BudgetsUsed { precision_bits: budgets.precision_bits, ..Default::default() },
        c_n: Vec::new(),
        e_n: Vec::new(),
        renormalization: None,
        flags: Vec::new(),
    };
    let m = match fam.instance(params) {
        Ok(m) => m,
        Err(e) => {
            c.flags.push(format!("invalid: {e}"));
            return c;
        }
    };
    c.budgets_used.orbit_iterations += budgets.max_iter;
    match detect_regular(&m, budgets.max_iter, budgets.max_period.clamp(1, 1000)) {
        Ok(Some(r)) => {
            c.verdict = Verdict::Regular(r);
            return c;
        }
        Ok(None) => {}
        Err(KneadingError::NeutralSuspected { .. }) => {
            c.verdict = Verdict::Undetermined(UndeterminedReason::NeutralSuspected);
            return c;
        }
        Err(e) => {
            c.flags.push(e.to_string());
            return c;
        }
    }
    if let Some(r) = detect_renormalization(&m, budgets.renorm_max_period) {
        c.renormalization = Some((r.period, r.steps.len()));
        if r.max_period_exceeded {
            c.verdict = Verdict::Renormalizable { period: r.period, depth_reached: r.steps.len() };
            return c;
        }
        c.flags.push(format!("renormalizable:{}", r.period));
    }
    let budget = NestBudget {
        max_period: budgets.renorm_max_period,
        max_levels: budgets.nest_levels,
        max_critical_return: budgets.max_critical_return,
        ..NestBudget::lite()
    };
    let levels = if budgets.precision_bits > 53 {
        build_nest::<Dd>(&m, &budget).map(|n| (n.levels.iter().map(|l| l.to_f64()).collect::<Vec<_>>(), n.stop))
    } else {
        build_nest::<f64>(&m, &budget).map(|n| (n.levels, n.stop))
    };
    let levels = match levels {
        Ok((levels, stop)) => {
            c.flags.push(format!("nest_stop:{stop:?}"));
            levels
        }
        Err(e) => {
            c.flags.push(format!("nest:{e}"));
            Vec::new()
        }
    };
    let reliable: Vec<_> =
        levels.iter().filter(|l| l.reliability == crate::nest::Reliability::Reliable && l.c.is_some()).cloned().collect();
    c.budgets_used.nest_levels = levels.len();
    c.c_n = reliable.iter().filter_map(|l| l.c).collect();
    c.budgets_used.orbit_iterations += budgets.ce_n + budgets.recurrence_n;
    let ce = match ce_series(&m, budgets.ce_n, Some(&reliable)) {
        Ok(s) => s,
        Err(StatsError::CriticalOrbitPeriodic { first_zero }) => {
            c.flags.push(format!("critical_periodic:{first_zero}"));
            return c;
        }
        Err(e) => {
            c.flags.push(e.to_string());
            return c;
        }
    };
    c.e_n = ce.e.clone();
    let rec = match recurrence_exponent(&m, budgets.recurrence_n) {
        Ok(r) => r,
        Err(e) => {
            c.flags.push(e.to_string());
            return c;
        }
    };
    if rec.non_recurrent {
        c.flags.push("non_recurrent".into());
    }
    c.verdict = if ce.liminf_estimate >= budgets.ce_threshold && rec.fitted_exponent.is_finite() && !rec.periodic {
        Verdict::CECandidate { lambda_hat: ce.liminf_estimate, recurrence_exponent: rec.fitted_exponent, nest_depth: reliable.len() }
    } else {
        Verdict::Undetermined(UndeterminedReason::BudgetExhausted)
    };
    c
}

/// One row of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub schema_version: u32,
    pub index: usize,
    pub family: String,
    pub params: Vec<f64>,
    pub t: Option<f64>,
    pub a: Option<f64>,
    pub verdict: String,
    pub reason: Option<String>,
    pub period: Option<usize>,
    pub multiplier: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub recurrence_exponent: Option<f64>,
    pub nest_depth: Option<usize>,
    pub renorm_period: Option<usize>,
    pub renorm_depth: Option<usize>,
    pub c_n: Vec<f64>,
    pub e_n: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ScanRecord {
    pub fn from_classification(index: usize, fam: MapFamily, params: &[f64], c: &Classification) -> ScanRecord {
        let a = fam.raw_a(params);
        let mut r = ScanRecord {
            schema_version: SCHEMA_VERSION,
            index,
            family: FamilySpec { family: fam, params: Vec::new() }.family.to_string(),
            params: params.to_vec(),
            t: match fam {
                MapFamily::NormalizedQuadratic => params.first().copied(),
                _ => a.map(t_from_a),
            },
            a,
            verdict: c.verdict.name().into(),
            reason: None,
            period: None,
            multiplier: None,
            lambda_hat: None,
            recurrence_exponent: None,
            nest_depth: None,
            renorm_period: c.renormalization.map(|r| r.0),
            renorm_depth: c.renormalization.map(|r| r.1),
            c_n: c.c_n.iter().copied().filter(|x| x.is_finite()).collect(),
            e_n: c.e_n.iter().map(|e| e.and_then(finite)).collect(),
            flags: c.flags.clone(),
        };
        if let MapFamily::EvenPolynomial { degree } = fam {
            r.family = format!("evenpoly/{degree}");
        }
        match &c.verdict {
            Verdict::Regular(rr) => {
                r.period = Some(rr.period);
                r.multiplier = finite(rr.multiplier);
            }
            Verdict::CECandidate { lambda_hat, recurrence_exponent, nest_depth } => {
                r.lambda_hat = finite(*lambda_hat);
                r.recurrence_exponent = finite(*recurrence_exponent);
                r.nest_depth = Some(*nest_depth);
            }
            Verdict::Renormalizable { period, depth_reached } => {
                r.period = Some(*period);
                r.renorm_depth = Some(*depth_reached);
            }
            Verdict::Undetermined(why) => r.reason = Some(format!("{why:?}")),
        }
        r
    }
}

pub const CSV_HEADER: [&str; 18] = [
    "schema_version",
    "index",
    "family",
    "params",
    "t",
    "a",
    "verdict",
    "reason",
    "period",
    "multiplier",
    "lambda_hat",
    "recurrence_exponent",
    "nest_depth",
    "renorm_period",
    "renorm_depth",
    "c_n",
    "e_n",
    "flags",
];

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_opt_f(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn csv_row(r: &ScanRecord) -> Vec<String> {
    vec![
        r.schema_version.to_string(),
        r.index.to_string(),
        r.family.clone(),
        r.params.iter().map(|&p| fmt_f(p)).collect::<Vec<_>>().join(";"),
        fmt_opt_f(r.t),
        fmt_opt_f(r.a),
        r.verdict.clone(),
        r.reason.clone().unwrap_or_default(),
        fmt_opt(r.period),
        fmt_opt_f(r.multiplier),
        fmt_opt_f(r.lambda_hat),
        fmt_opt_f(r.recurrence_exponent),
        fmt_opt(r.nest_depth),
        fmt_opt(r.renorm_period),
        fmt_opt(r.renorm_depth),
        r.c_n.iter().map(|&c| fmt_f(c)).collect::<Vec<_>>().join(";"),
        r.e_n.iter().map(|e| fmt_opt_f(*e)).collect::<Vec<_>>().join(";"),
        r.flags.join(";"),
    ]
}

fn parse_row(row: &csv::StringRecord) -> Result<ScanRecord, ScanError> {
    let bad = |what: &str| ScanError::Malformed(format!("{what} in {row:?}"));
    if row.len() != CSV_HEADER.len() {
        return Err(bad("wrong field count"));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|_| bad("bad float"));
    let opt_f = |s: &str| if s.is_empty() { Ok(None) } else { f(s).map(Some) };
    let opt_u = |s: &str| if s.is_empty() { Ok(None) } else { s.parse::<usize>().map(Some).map_err(|_| bad("bad integer")) };
    let list = |s: &str| -> Vec<String> {
        if s.is_empty() {
            Vec::new()
        } else {
            s.split(';').map(String::from).collect()
        }
    };
    Ok(ScanRecord {
        schema_version: row[0].parse().map_err(|_| bad("bad schema version"))?,
        index: row[1].parse().map_err(|_| bad("bad index"))?,
        family: row[2].to_string(),
        params: list(&row[3]).iter().map(|s| f(s)).collect::<Result<_, _>>()?,
        t: opt_f(&row[4])?,
        a: opt_f(&row[5])?,
        verdict: row[6].to_string(),
        reason: (!row[7].is_empty()).then(|| row[7].to_string()),
        period: opt_u(&row[8])?,
        multiplier: opt_f(&row[9])?,
        lambda_hat: opt_f(&row[10])?,
        recurrence_exponent: opt_f(&row[11])?,
        nest_depth: opt_u(&row[12])?,
        renorm_period: opt_u(&row[13])?,
        renorm_depth: opt_u(&row[14])?,
        c_n: list(&row[15]).iter().map(|s| f(s)).collect::<Result<_, _>>()?,
        e_n: if row[16].is_empty() { Vec::new() } else { row[16].split(';').map(opt_f).collect::<Result<_, _>>()? },
        flags: list(&row[17]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Csv,
    JsonLines,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => Format::JsonLines,
            _ => Format::Csv,
        }
    }
}

/// Serializes records; CSV output starts with a header line.
pub fn render(records: &[ScanRecord], format: Format, header: bool) -> Result<Vec<u8>, ScanError> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            let io = |e: csv::Error| ScanError::Malformed(e.to_string());
            if header {
                w.write_record(CSV_HEADER).map_err(io)?;
            }
            for r in records {
                w.write_record(csv_row(r)).map_err(io)?;
            }
            w.into_inner().map_err(|e| ScanError::Malformed(e.to_string()))
        }
        Format::JsonLines => {
            let mut out = Vec::new();
            for r in records {
                serde_json::to_writer(&mut out, r).map_err(|e| ScanError::Malformed(e.to_string()))?;
                out.push(b'\n');
            }
            Ok(out)
        }
    }
}

pub fn parse_records(bytes: &[u8], format: Format) -> Result<Vec<ScanRecord>, ScanError> {
    match format {
        Format::Csv => {
            let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
            rd.records().map(|r| r.map_err(|e| ScanError::Malformed(e.to_string())).and_then(|r| parse_row(&r))).collect()
        }
        Format::JsonLines => bytes
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).map_err(|e| ScanError::Malformed(e.to_string())))
            .collect(),
    }
}

pub fn export(records: &[ScanRecord], format: Format, path: &Path) -> Result<(), ScanError> {
    if records.is_empty() {
        return Err(ScanError::InvalidArgument("nothing to export".into()));
    }
    let bytes = render(records, format, true)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Parameter box: `(lo, hi)` for every family parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamWindow {
    pub family: MapFamily,
    pub ranges: Vec<(f64, f64)>,
}

impl ParamWindow {
    /// Parses `a=1.5:2,eps=0`; for `nquadratic`, `a=` ranges are converted to `t`.
    pub fn parse(family: MapFamily, text: &str) -> Result<ParamWindow, ScanError> {
        let names = family.param_names();
        let mut ranges = vec![None; names.len()];
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| ScanError::InvalidArgument(format!("expected name=lo:hi, got `{part}`")))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| ScanError::InvalidArgument(format!("bad number `{s}`")));
            let (lo, hi) = match v.split_once(':') {
                Some((lo, hi)) => (num(lo)?, num(hi)?),
                None => (num(v)?, num(v)?),
            };
            let (key, lo, hi) = match (family, k.trim()) {
                (MapFamily::NormalizedQuadratic, "a") => ("t".to_string(), t_from_a(lo), t_from_a(hi)),
                (MapFamily::PerturbedQuadratic, "e" | "epsilon") => ("eps".to_string(), lo, hi),
                (_, k) => (k.to_string(), lo, hi),
            };
            let i = names.iter().position(|n| *n == key).ok_or_else(|| ScanError::InvalidArgument(format!("unknown parameter `{key}`")))?;
            if !(lo <= hi) {
                return Err(ScanError::InvalidArgument(format!("empty range for `{key}`")));
            }
            ranges[i] = Some((lo, hi));
        }
        if family == MapFamily::PerturbedQuadratic && ranges[1].is_none() {
            ranges[1] = Some((0.0, 0.0));
        }
        let ranges = ranges
            .into_iter()
            .zip(&names)
            .map(|(r, n)| r.ok_or_else(|| ScanError::InvalidArgument(format!("missing range for `{n}`"))))
            .collect::<Result<_, _>>()?;
        Ok(ParamWindow { family, ranges })
    }

    pub fn to_spec(&self) -> String {
        self.family
            .param_names()
            .iter()
            .zip(&self.ranges)
            .map(|(n, (lo, hi))| if lo == hi { format!("{n}={lo}") } else { format!("{n}={lo}:{hi}") })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn varying(&self) -> Vec<usize> {
        (0..self.ranges.len()).filter(|&i| self.ranges[i].0 < self.ranges[i].1).collect()
    }

    /// Parameters of sample `i` of `samples`: stratified along the single
    /// varying axis, or along random lines through the box centre otherwise.
    pub fn sample(&self, i: usize, samples: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let varying = self.varying();
        let mut p: Vec<f64> = self.ranges.iter().map(|r| 0.5 * (r.0 + r.1)).collect();
        match varying.len() {
            0 => {}
            1 => {
                rng.set_stream(i as u64);
                let u = (i as f64 + rng.random::<f64>()) / samples as f64;
                let (lo, hi) = self.ranges[varying[0]];
                p[varying[0]] = lo + (hi - lo) * u;
            }
            _ => {
                let lines = (samples as f64).sqrt().ceil() as usize;
                let per_line = samples.div_ceil(lines);
                let (line, j) = (i / per_line, i % per_line);
                rng.set_stream((1u64 << 32) + line as u64);
                let mut dir: Vec<f64> = varying.iter().map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-12);
                dir.iter_mut().for_each(|d| *d /= norm);
                // in box coordinates [-1, 1]^k the line through 0 leaves at |s| = 1 / max|dir|
                let smax = 1.0 / dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                rng.set_stream(i as u64);
                let u = (j as f64 + rng.random::<f64>()) / per_line as f64;
                let s = -smax + 2.0 * smax * u;
                for (d, &k) in dir.iter().zip(&varying) {
                    let (lo, hi) = self.ranges[k];
                    p[k] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * s * d;
                }
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSummary {
    pub samples: usize,
    pub regular: usize,
    pub ce_candidate: usize,
    pub renormalizable: usize,
    pub undetermined: usize,
}

impl ScanSummary {
    pub fn of(records: &[ScanRecord]) -> ScanSummary {
        let count = |v: &str| records.iter().filter(|r| r.verdict == v).count();
        ScanSummary {
            samples: records.len(),
            regular: count("Regular"),
            ce_candidate: count("CECandidate"),
            renormalizable: count("Renormalizable"),
            undetermined: count("Undetermined"),
        }
    }

    pub fn fraction(&self, n: usize) -> f64 {
        n as f64 / self.samples.max(1) as f64
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, ScanError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| ScanError::InvalidArgument(e.to_string()))
}

fn classify_indices(
    window: &ParamWindow,
    indices: &[usize],
    samples: usize,
    budgets: &Budgets,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Vec<ScanRecord> {
    pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let p = window.sample(i, samples, seed);
                let c = classify_parameter(window.family, &p, budgets);
                ScanRecord::from_classification(i, window.family, &p, &c)
            })
            .collect()
    })
}

/// Classifies `samples` seeded parameters in the window; rows are ordered by index.
pub fn scan_range(window: &ParamWindow, samples: usize, budgets: &Budgets, seed: u64, jobs: usize) -> Result<Vec<ScanRecord>, ScanError> {
    if samples == 0 {
        return Err(ScanError::InvalidArgument("samples must be >= 1".into()));
    }
    budgets.validate()?;
    let indices: Vec<usize> = (0..samples).collect();
    Ok(classify_indices(window, &indices, samples, budgets, seed, &pool(jobs)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    window: ParamWindow,
    samples: usize,
    seed: u64,
    budgets: Budgets,
    format: Format,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub records: Vec<ScanRecord>,
    pub computed: usize,
    pub reused: usize,
}

/// Runs a scan into `path`, resuming from rows already persisted by the same scan.
///
/// Rows are appended in index order in chunks as they finish; a partial last
/// line from an interrupted run is dropped. On completion the file is
/// rewritten whole so it is byte-identical to an uninterrupted run.
pub fn scan_to_path(
    window: &ParamWindow,
    samples: usize,
    budgets: &Budgets,
    seed: u64,
    jobs: usize,
    path: &Path,
    format: Format,
) -> Result<ScanOutcome, ScanError> {
    if samples == 0 {
        return Err(ScanError::InvalidArgument("samples must be >= 1".into()));
    }
    budgets.validate()?;
    let lock = sidecar(path, ".lock");
    OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            ScanError::Locked(path.to_path_buf())
        } else {
            ScanError::IOFailure { path: lock.clone(), source: e }
        }
    })?;
    let _guard = LockGuard(lock);
    let manifest_path = sidecar(path, ".manifest.json");
    let manifest = Manifest { schema_version: SCHEMA_VERSION, window: window.clone(), samples, seed, budgets: budgets.clone(), format };
    let mut have: Vec<Option<ScanRecord>> = vec![None; samples];
    if path.exists() {
        let old: Option<Manifest> = fs::read(&manifest_path).ok().and_then(|b| serde_json::from_slice(&b).ok());
        if old.as_ref() != Some(&manifest) {
            return Err(ScanError::ManifestMismatch(path.to_path_buf()));
        }
        for r in read_partial(path, format)? {
            if r.index < samples {
                let i = r.index;
                have[i] = Some(r);
            }
        }
    }
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).map_err(io_err(&manifest_path))?;
    let missing: Vec<usize> = (0..samples).filter(|&i| have[i].is_none()).collect();
    let reused = samples - missing.len();
    let pool = pool(jobs)?;
    {
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        if fresh {
            f.write_all(&render(&[], format, true)?).map_err(io_err(path))?;
        }
        let chunk = (jobs.max(1) * 8).max(16);
        for part in missing.chunks(chunk) {
            let recs = classify_indices(window, part, samples, budgets, seed, &pool);
            f.write_all(&render(&recs, format, false)?).map_err(io_err(path))?;
            f.flush().map_err(io_err(path))?;
            for r in recs {
                let i = r.index;
                have[i] = Some(r);
            }
        }
    }
    let records: Vec<ScanRecord> = have.into_iter().map(|r| r.expect("every index classified")).collect();
    export(&records, format, path)?;
    Ok(ScanOutcome { records, computed: missing.len(), reused })
}

/// Records readable from a possibly truncated output file; an unterminated
/// last line is treated as lost.
fn read_partial(path: &Path, format: Format) -> Result<Vec<ScanRecord>, ScanError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut lines = text.split_inclusive('\n').filter(|l| l.ends_with('\n'));
    if format == Format::Csv {
        lines.next();
    }
    for line in lines {
        let line = line.trim_end_matches('\n');
        if line.is_empty() {
            continue;
        }
        let parsed = match format {
            Format::Csv => {
                let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
                rd.records().next().and_then(|r| r.ok()).and_then(|r| parse_row(&r).ok())
            }
            Format::JsonLines => serde_json::from_str(line).ok(),
        };
        if let Some(r) = parsed {
            out.push(r);
        }
    }
    Ok(out)
}

/// Topological data held fixed on a phase-parameter window `J_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowSignature {
    pub renorm_period: usize,
    pub renorm_depth: usize,
    /// `(v_k, side, itinerary hash)` of the central return at levels `1..=n`.
    pub central: Vec<(u32, i8, u64)>,
    /// Signature of the branch holding `R_k(0)` for `k < n` (determines `τ_k`).
    pub tau: Vec<(u32, i8, u64)>,
}

pub fn window_signature(m: &MapInstance, n: usize, budget: &NestBudget) -> Option<WindowSignature> {
    let (steps, _) = renormalization_tower::<f64>(m, budget.max_period);
    let nest = build_nest::<f64>(m, &NestBudget { max_levels: n, ..budget.clone() }).ok()?;
    if nest.levels.len() < n {
        return None;
    }
    let mut central = Vec::with_capacity(n);
    let mut tau = Vec::new();
    for (k, l) in nest.levels.iter().take(n).enumerate() {
        central.push(l.central_signature()?);
        if k + 1 < n {
            let x = l.critical_return?;
            tau.push(return_signature(m, x, l.half_width, budget.max_critical_return)?);
        }
    }
    Some(WindowSignature { renorm_period: nest.restrictive.period, renorm_depth: steps.len(), central, tau })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterWindow {
    pub n: usize,
    /// Index of the varied parameter.
    pub axis: usize,
    pub base: f64,
    pub interval: (f64, f64),
    pub signature: WindowSignature,
    /// The window is narrower than the requested tolerance.
    pub degenerate: bool,
}

/// Nest budget for comparing signatures near a base whose tower has total
/// period `renorm_period`: deeper renormalizations inside small periodic
/// windows are not searched, so the level-`n` combinatorics carry through them.
pub fn window_budget(renorm_period: usize) -> NestBudget {
    NestBudget { max_period: renorm_period.max(1), ..NestBudget::lite() }
}

/// Largest stride of the outward search; gaps in `J_n` narrower than this can be missed.
pub const WINDOW_MAX_STEP: f64 = 1e-3;

/// Outward search from the base parameter for the maximal interval with the
/// same level-`n` signature, along the first parameter axis.
pub fn parameter_window(fam: MapFamily, params: &[f64], n: usize, window_tol: f64) -> Result<ParameterWindow, ScanError> {
    if n == 0 || !(window_tol > 0.0) {
        return Err(ScanError::InvalidArgument("need n >= 1 and window_tol > 0".into()));
    }
    let base_map = fam.instance(params)?;
    let probe = window_signature(&base_map, n, &NestBudget::lite())
        .ok_or_else(|| ScanError::SignatureUnstable(format!("no level-{n} nest at the base")))?;
    let budget = window_budget(probe.renorm_period);
    let sig_at = |v: f64| -> Option<WindowSignature> {
        let mut p = params.to_vec();
        p[0] = v;
        let m = fam.instance(&p).ok()?;
        window_signature(&m, n, &budget)
    };
    let base = params[0];
    let sig = sig_at(base).ok_or_else(|| ScanError::SignatureUnstable(format!("no level-{n} nest at the base")))?;
    if sig_at(base) != Some(sig.clone()) {
        return Err(ScanError::SignatureUnstable("signature is not reproducible".into()));
    }
    let same = |v: f64| sig_at(v).as_ref() == Some(&sig);
    let mut ends = [base, base];
    for (e, dir) in ends.iter_mut().zip([-1.0, 1.0]) {
        let mut inside = base;
        let mut step = window_tol;
        let outside = loop {
            let v = base + dir * step;
            if !same(v) {
                break v;
            }
            inside = v;
            if (step - 16.0).abs() < window_tol {
                break v;
            }
            step = (step * 2.0).min(step + WINDOW_MAX_STEP).min(16.0);
        };
        let (mut a, mut b) = (inside, outside);
        while (b - a).abs() > window_tol {
            let mid = 0.5 * (a + b);
            if same(mid) {
                a = mid;
            } else {
                b = mid;
            }
        }
        *e = a;
    }
    let interval = (ends[0], ends[1]);
    Ok(ParameterWindow { n, axis: 0, base, interval, signature: sig, degenerate: interval.1 - interval.0 < window_tol })
}
