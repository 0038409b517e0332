//! Critical-orbit statistics and the branch taxonomies of the principal nest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{MapError, MapInstance};
use crate::nest::{first_return, NestError, NestLevel};
use crate::numerics::{bisect_predicate, golden_min};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("critical orbit hits the critical point at step {first_zero} (superattracting)")]
    CriticalOrbitPeriodic { first_zero: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no orbit segment stays outside the neighbourhood long enough")]
    NoSegments,
    #[error("level {0} has no central interval")]
    CriticalNonReturning(usize),
    #[error("not enough branch data: {0}")]
    InsufficientBranches(String),
    #[error("no branch with index {0}")]
    NoSuchBranch(i32),
    #[error("insufficient depth: {0}")]
    InsufficientDepth(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Nest(#[from] NestError),
}

/// Points within this distance of 0 count as hitting the critical point.
pub fn sym_tol(m: &MapInstance) -> f64 {
    1e3 * f64::EPSILON * m.half_width()
}

/// `a_k = ln|Df^k(f(0))| / k` and the nest-indexed `e_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CESeries {
    /// `a[k-1] = a_k` for `k = 1..=N`.
    pub a: Vec<f64>,
    /// `e[i] = a_{v_n - 1}` for the i-th supplied level.
    pub e: Vec<Option<f64>>,
    pub liminf_estimate: f64,
    /// Inclusive `k` range used for the liminf surrogate.
    pub tail_window: (usize, usize),
    pub first_zero: Option<usize>,
}

impl CESeries {
    pub fn a_k(&self, k: usize) -> f64 {
        self.a[k - 1]
    }
}

/// Tail window `[⌈N/2⌉, N]` used for every liminf surrogate.
pub fn tail_window(n: usize) -> (usize, usize) {
    (n.div_ceil(2).max(1), n)
}

pub fn ce_series(m: &MapInstance, n: usize, nest: Option<&[NestLevel<f64>]>) -> Result<CESeries, StatsError> {
    if n < 2 {
        return Err(StatsError::InvalidArgument("ce_series needs N >= 2".into()));
    }
    let tol = sym_tol(m);
    let limit = m.half_width() * (1.0 + 10.0 * f64::EPSILON);
    let mut a = Vec::with_capacity(n);
    let mut x = 0.0f64;
    let mut sum = 0.0;
    for k in 1..=n {
        x = m.value(x);
        if x.abs() <= tol {
            return Err(StatsError::CriticalOrbitPeriodic { first_zero: k });
        }
        if !(x.abs() <= limit) {
            return Err(MapError::EscapedDomain { step: k, x }.into());
        }
        sum += m.deriv(x).abs().ln();
        a.push(sum / k as f64);
    }
    let tail_window = tail_window(n);
    let liminf_estimate = a[tail_window.0 - 1..].iter().copied().fold(f64::INFINITY, f64::min);
    let e = nest.unwrap_or(&[]).iter().map(|l| l.v.filter(|&v| v >= 2 && v - 1 <= n).map(|v| a[v - 2])).collect();
    Ok(CESeries { a, e, liminf_estimate, tail_window, first_zero: None })
}

/// Positive solution of `f(x) = t`, if any.
fn preimage_pos(m: &MapInstance, t: f64) -> Option<f64> {
    let hw = m.half_width();
    let top = m.value(0.0);
    if t > top || t < m.value(hw) {
        return None;
    }
    if t == top {
        return Some(0.0);
    }
    let (a, b) = bisect_predicate(|x: f64| m.value(x) > t, 0.0, hw, 0.0);
    Some(0.5 * (a + b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BceLevel {
    pub n: usize,
    pub min_exponent: f64,
    pub argmin: f64,
    pub preimages: usize,
}

/// Minimum over `{x : f^n(x) = 0}` of `ln|Df^n(x)| / n` for `n = 1..=depth`.
///
/// Depth-first descent of the preimage tree; targets without preimages prune
/// their subtree.
pub fn bce_min_exponent(m: &MapInstance, depth: usize) -> Result<Vec<BceLevel>, StatsError> {
    if depth > 20 {
        return Err(StatsError::InvalidArgument("BCE depth is limited to 20".into()));
    }
    let mut out: Vec<BceLevel> = (1..=depth).map(|n| BceLevel { n, min_exponent: f64::INFINITY, argmin: f64::NAN, preimages: 0 }).collect();
    if depth == 0 {
        return Ok(out);
    }
    // (node, depth, accumulated ln|Df| along the path)
    let mut stack: Vec<(f64, usize, f64)> = Vec::new();
    let push_children = |stack: &mut Vec<(f64, usize, f64)>, z: f64, n: usize, acc: f64| {
        if let Some(w) = preimage_pos(m, z) {
            let l = acc + m.deriv(w).abs().ln();
            stack.push((w, n + 1, l));
            if w != 0.0 {
                stack.push((-w, n + 1, l));
            }
        }
    };
    push_children(&mut stack, 0.0, 0, 0.0);
    while let Some((x, n, acc)) = stack.pop() {
        let lvl = &mut out[n - 1];
        lvl.preimages += 1;
        let e = acc / n as f64;
        if e < lvl.min_exponent || (e == lvl.min_exponent && x > lvl.argmin) {
            lvl.min_exponent = e;
            lvl.argmin = x;
        }
        if n < depth {
            push_children(&mut stack, x, n, acc);
        }
    }
    Ok(out)
}

/// Closest returns of the critical orbit and the fitted recurrence exponent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceRecord {
    pub closest_returns: Vec<(usize, f64)>,
    pub fitted_exponent: f64,
    pub fit_points: usize,
    pub non_recurrent: bool,
    /// The orbit hit the critical point.
    pub periodic: bool,
}

pub fn recurrence_exponent(m: &MapInstance, n: usize) -> Result<RecurrenceRecord, StatsError> {
    if n < 100 {
        return Err(StatsError::InvalidArgument("recurrence needs N >= 100".into()));
    }
    let tol = sym_tol(m);
    let mut records = Vec::new();
    let mut best = f64::INFINITY;
    let mut x = 0.0f64;
    let mut periodic = false;
    for k in 1..=n {
        x = m.value(x);
        let d = x.abs();
        if d <= tol {
            periodic = true;
            records.push((k, d));
            break;
        }
        if d < best {
            best = d;
            records.push((k, d));
        }
    }
    if periodic {
        return Ok(RecurrenceRecord {
            closest_returns: records,
            fitted_exponent: f64::INFINITY,
            fit_points: 0,
            non_recurrent: false,
            periodic,
        });
    }
    let late: Vec<(usize, f64)> = records.iter().copied().filter(|&(k, _)| k > 10).collect();
    if late.is_empty() {
        return Ok(RecurrenceRecord { closest_returns: records, fitted_exponent: 0.0, fit_points: 0, non_recurrent: true, periodic });
    }
    let cut = (n as f64).sqrt();
    let mut pts: Vec<(f64, f64)> = records.iter().filter(|&&(k, _)| k as f64 > cut).map(|&(k, d)| ((k as f64).ln(), -d.ln())).collect();
    if pts.len() < 2 {
        pts = late.iter().map(|&(k, d)| ((k as f64).ln(), -d.ln())).collect();
    }
    let fitted_exponent = if pts.len() == 1 {
        pts[0].1 / pts[0].0
    } else {
        let nn = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / nn;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / nn;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            my / mx
        }
    };
    Ok(RecurrenceRecord { closest_returns: records, fitted_exponent, fit_points: pts.len(), non_recurrent: false, periodic })
}

/// `δ ↦ (1/N) Σ_{k ≤ N, |f^k(0)| < δ} ln|Df(f^k(0))|`.
pub fn wr_statistic(m: &MapInstance, n: usize, deltas: &[f64]) -> Result<Vec<(f64, f64)>, StatsError> {
    if n < 1000 {
        return Err(StatsError::InvalidArgument("WR statistic needs N >= 1000".into()));
    }
    if deltas.windows(2).any(|w| !(w[0] > w[1])) || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(StatsError::InvalidArgument("deltas must be positive and strictly decreasing".into()));
    }
    let mut sums = vec![0.0f64; deltas.len()];
    let mut x = 0.0f64;
    for _ in 0..n {
        x = m.value(x);
        let ax = x.abs();
        if ax < deltas[0] {
            let l = m.deriv(x).abs().ln();
            for (s, &d) in sums.iter_mut().zip(deltas) {
                if ax < d {
                    *s += l;
                }
            }
        }
    }
    Ok(deltas.iter().zip(sums).map(|(&d, s)| (d, s / n as f64)).collect())
}

fn log_deriv_iter(m: &MapInstance, x: f64, r: usize) -> f64 {
    let mut z = x;
    let mut s = 0.0;
    for _ in 0..r {
        let (v, d) = m.value_deriv(z);
        s += d.abs().ln();
        z = v;
    }
    s
}

/// Minimum of `phi` over `[lo, hi]`: grid, both endpoints, then golden-section refinement.
fn grid_min<F: Fn(f64) -> f64>(phi: F, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    let grid = grid.max(2);
    let xs: Vec<f64> = (0..=grid).map(|i| lo + (hi - lo) * i as f64 / grid as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
    let (bi, _) = vals.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let (mut bx, mut bv) = (xs[bi], vals[bi]);
    let a = xs[bi.saturating_sub(1)];
    let b = xs[(bi + 1).min(grid)];
    if b > a {
        let (gx, gv) = golden_min(&phi, a, b, (b - a) * 1e-12);
        if gv < bv {
            bx = gx;
            bv = gv;
        }
    }
    (bx, bv)
}

/// `λ_n(j) = inf_{I^j_n} ln|DR_n| / r_n(j)`.
pub fn branch_hyperbolicity(m: &MapInstance, level: &NestLevel<f64>, j: i32, grid: usize) -> Result<f64, StatsError> {
    let b = level.branch(j).ok_or(StatsError::NoSuchBranch(j))?;
    let r = b.return_time;
    Ok(grid_min(|x| log_deriv_iter(m, x, r) / r as f64, b.lo, b.hi, grid).1)
}

/// `λ_n = inf_j λ_n(j)` over the tabulated branches.
pub fn level_hyperbolicity(m: &MapInstance, level: &NestLevel<f64>, grid: usize) -> Result<f64, StatsError> {
    if level.branches.is_empty() {
        return Err(StatsError::InsufficientBranches(format!("level {} has no branches", level.n)));
    }
    level.branches.iter().map(|b| branch_hyperbolicity(m, level, b.index, grid)).try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// Domain `C^d_n` of the composition `R_n^{|d|}` along the word `d`.
pub fn word_cylinder(m: &MapInstance, level: &NestLevel<f64>, word: &[i32]) -> Result<(f64, f64), StatsError> {
    let branches = word.iter().map(|&j| level.branch(j).ok_or(StatsError::NoSuchBranch(j))).collect::<Result<Vec<_>, _>>()?;
    let Some(last) = branches.last() else {
        return Ok(level.interval());
    };
    let (mut a, mut c) = (last.lo, last.hi);
    for b in branches.iter().rev().skip(1) {
        let r = b.return_time;
        let g = |x: f64| m.iterate(x, r);
        let increasing = g(b.lo) < g(b.hi);
        let solve = |t: f64| -> f64 {
            // first point of the branch whose image passes t
            if increasing {
                bisect_predicate(|x| g(x) < t, b.lo, b.hi, 0.0).1
            } else {
                bisect_predicate(|x| g(x) > t, b.lo, b.hi, 0.0).1
            }
        };
        let (x1, x2) = (solve(a), solve(c));
        a = x1.min(x2);
        c = x1.max(x2);
    }
    Ok((a, c))
}

/// `sup |DR^d_n| / inf |DR^d_n|` over the domain of the word.
pub fn distortion(m: &MapInstance, level: &NestLevel<f64>, word: &[i32], grid: usize) -> Result<f64, StatsError> {
    if word.is_empty() {
        return Ok(1.0);
    }
    let (lo, hi) = word_cylinder(m, level, word)?;
    let total: usize = word.iter().map(|&j| level.branch(j).map(|b| b.return_time).unwrap_or(0)).sum();
    let phi = |x: f64| log_deriv_iter(m, x, total);
    let (_, min) = grid_min(phi, lo, hi, grid);
    let (_, negmax) = grid_min(|x| -phi(x), lo, hi, grid);
    Ok((-negmax - min).exp().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityEstimate {
    pub c_est: f64,
    pub lambda_est: f64,
    pub window: usize,
    pub windows: usize,
}

/// Uniform expansion away from 0: over orbits of an interior grid, windows of
/// `W = ⌈√N⌉` consecutive iterates outside `(-ε, ε)` give
/// `λ = exp(min window average of ln|Df|)` and `C = min |Df^{m+1}| / λ^m` over
/// window prefixes.
pub fn hyperbolicity_outside(m: &MapInstance, eps: f64, n: usize, grid: usize) -> Result<HyperbolicityEstimate, StatsError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(StatsError::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if n < 1 || grid < 1 {
        return Err(StatsError::InvalidArgument("N and grid must be positive".into()));
    }
    let hw = m.half_width();
    let thr = eps * hw;
    let w = ((n as f64).sqrt().ceil() as usize).clamp(4.min(n), n);
    let mut min_avg = f64::INFINITY;
    let mut windows = 0usize;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for i in 1..=grid {
        let mut x = hw * (-1.0 + 2.0 * i as f64 / (grid + 1) as f64);
        let mut logs = Vec::with_capacity(n);
        let mut outside = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, d) = m.value_deriv(x);
            logs.push(d.abs().ln());
            outside.push(x.abs() > thr);
            x = v;
        }
        let mut run = 0usize;
        let mut wsum = 0.0;
        for k in 0..n {
            if outside[k] {
                run += 1;
                wsum += logs[k];
                if run > w {
                    wsum -= logs[k - w];
                }
                if run >= w {
                    windows += 1;
                    min_avg = min_avg.min(wsum / w as f64);
                    starts.push(logs[k + 1 - w..=k].to_vec());
                }
            } else {
                run = 0;
                wsum = 0.0;
            }
        }
    }
    if windows == 0 {
        return Err(StatsError::NoSegments);
    }
    let ln_lambda = min_avg;
    let mut ln_c = f64::INFINITY;
    for seg in &starts {
        let mut acc = 0.0;
        for (mm, l) in seg.iter().enumerate() {
            acc += l;
            ln_c = ln_c.min(acc - mm as f64 * ln_lambda);
        }
    }
    Ok(HyperbolicityEstimate { c_est: ln_c.exp(), lambda_est: ln_lambda.exp(), window: w, windows })
}

/// Lower bound for `p_γ(X | I)` from the test maps `h_{c,s}(x) = sign(x-c)|x-c|^s`
/// with `max(s, 1/s) ≤ γ`.
///
/// Exponents run over the lattice `exp(kΔ)`, `Δ = 1/family_size`, and centres
/// over a fixed grid of `I` plus the endpoints of `X`, so the family only grows
/// with `γ`.
pub fn capacity_lower_bound(x: &[(f64, f64)], i: (f64, f64), gamma: f64, family_size: usize) -> Result<f64, StatsError> {
    if !(gamma >= 1.0) {
        return Err(StatsError::InvalidArgument("gamma must be >= 1".into()));
    }
    let (i0, i1) = i;
    if !(i1 > i0) {
        return Err(StatsError::InvalidArgument("I must be a nondegenerate interval".into()));
    }
    let family_size = family_size.max(1);
    let len = i1 - i0;
    // X ∩ I in the unit coordinates of I, merged
    let mut parts: Vec<(f64, f64)> =
        x.iter().map(|&(a, b)| (((a.min(b) - i0) / len).max(0.0), ((a.max(b) - i0) / len).min(1.0))).filter(|(a, b)| b > a).collect();
    parts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in parts {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let lebesgue: f64 = merged.iter().map(|(a, b)| b - a).sum();
    let delta = 1.0 / family_size as f64;
    let kmax = (gamma.ln() / delta + 1e-9).floor() as i64;
    if kmax == 0 {
        return Ok(lebesgue);
    }
    let mut centres: Vec<f64> = (0..=family_size).map(|k| k as f64 / family_size as f64).collect();
    for &(a, b) in &merged {
        centres.push(a);
        centres.push(b);
    }
    let h = |c: f64, s: f64, t: f64| {
        let d = t - c;
        d.signum() * d.abs().powf(s)
    };
    let mut best = lebesgue;
    for k in -kmax..=kmax {
        if k == 0 {
            continue;
        }
        let s = (k as f64 * delta).exp();
        for &c in &centres {
            let total = h(c, s, 1.0) - h(c, s, 0.0);
            let covered: f64 = merged.iter().map(|&(a, b)| h(c, s, b) - h(c, s, a)).sum();
            if total > 0.0 {
                best = best.max(covered / total);
            }
        }
    }
    Ok(best.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub k: usize,
    pub empirical: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub level: usize,
    pub c_n: f64,
    pub samples: usize,
    pub unresolved: usize,
    /// Fraction of resolved samples already in `I_{n+1}`.
    pub landed_immediately: f64,
    pub median_word_length: f64,
    /// `P(|d| ≤ k)` against `k·c_n^ã`.
    pub lower_tail: Vec<TailRow>,
    /// `P(|d| ≥ k)` against `exp(-k·c_n^b̃)`.
    pub upper_tail: Vec<TailRow>,
    /// `(r, P(r_n ≤ r))` over resolved samples.
    pub return_time_cdf: Vec<(usize, f64)>,
    pub consistent: bool,
}

/// Empirical tails of `|d^(n)(x)|` and `r_n(x)` over an even grid of `I_n`.
pub fn distribution_diagnostics(
    m: &MapInstance,
    level: &NestLevel<f64>,
    sample: usize,
    consts: &ClassifierConstants,
    cap: usize,
) -> Result<DistributionReport, StatsError> {
    let y = level.central_half_width.ok_or(StatsError::CriticalNonReturning(level.n))?;
    let c = level.c.ok_or(StatsError::CriticalNonReturning(level.n))?;
    let p = level.half_width;
    let mut lens = Vec::with_capacity(sample);
    let mut rets = Vec::with_capacity(sample);
    let mut unresolved = 0usize;
    'outer: for i in 0..sample {
        let x = p * (-1.0 + 2.0 * (i as f64 + 0.5) / sample as f64);
        let Some((s0, _)) = first_return(m, x, p, cap) else {
            unresolved += 1;
            continue;
        };
        let mut z = x;
        let mut count = 0usize;
        while !(z.abs() < y) {
            match first_return(m, z, p, cap) {
                Some((_, nz)) => z = nz,
                None => {
                    unresolved += 1;
                    continue 'outer;
                }
            }
            count += 1;
        }
        lens.push(count);
        rets.push(s0.time as usize);
    }
    if lens.is_empty() {
        return Err(StatsError::InsufficientBranches("no sample point resolved".into()));
    }
    lens.sort_unstable();
    rets.sort_unstable();
    let nres = lens.len() as f64;
    let median_word_length =
        if lens.len() % 2 == 1 { lens[lens.len() / 2] as f64 } else { 0.5 * (lens[lens.len() / 2 - 1] + lens[lens.len() / 2]) as f64 };
    let inv = 1.0 / c;
    let ks: Vec<usize> = (-6..=6).map(|e| ((inv * 2f64.powi(e)).round() as usize).max(1)).collect();
    let le = |k: usize| lens.partition_point(|&l| l <= k) as f64 / nres;
    let ge = |k: usize| (lens.len() - lens.partition_point(|&l| l < k)) as f64 / nres;
    let lower_tail: Vec<TailRow> =
        ks.iter().map(|&k| TailRow { k, empirical: le(k), bound: k as f64 * c.powf(consts.a_tilde()) }).collect();
    let upper_tail: Vec<TailRow> =
        ks.iter().map(|&k| TailRow { k, empirical: ge(k), bound: (-(k as f64) * c.powf(consts.b_tilde)).exp() }).collect();
    let consistent = lower_tail.iter().chain(&upper_tail).all(|r| r.empirical <= r.bound.min(1.0) + 1.0 / nres);
    let mut return_time_cdf = Vec::new();
    let mut last = 0usize;
    for (i, &r) in rets.iter().enumerate() {
        if i + 1 == rets.len() || rets[i + 1] != r {
            return_time_cdf.push((r, (i + 1) as f64 / nres));
            last = r;
        }
    }
    let _ = last;
    Ok(DistributionReport {
        level: level.n,
        c_n: c,
        samples: sample,
        unresolved,
        landed_immediately: le(0),
        median_word_length,
        lower_tail,
        upper_tail,
        return_time_cdf,
        consistent,
    })
}

/// Constants of the branch taxonomy; `a = 1/b` and `ã = 1/b̃` are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConstants {
    pub gamma: f64,
    pub b: f64,
    pub b_tilde: f64,
    /// Base level; `None` picks the first level with `c_n < n0_threshold`.
    pub n0: Option<usize>,
    pub n0_threshold: f64,
    /// Sparsity coefficient `sparse_base · sparse_growth^n` (6·2ⁿ by default).
    pub sparse_base: f64,
    pub sparse_growth: f64,
    /// Carry the `γ_n = γ(n+1)/n` schedule in reports (never used in clauses).
    pub gamma_schedule: bool,
}

impl Default for ClassifierConstants {
    fn default() -> Self {
        ClassifierConstants {
            gamma: 2.0,
            b: 8.0,
            b_tilde: 2.0,
            n0: None,
            n0_threshold: 0.1,
            sparse_base: 6.0,
            sparse_growth: 2.0,
            gamma_schedule: false,
        }
    }
}

impl ClassifierConstants {
    pub fn a(&self) -> f64 {
        1.0 / self.b
    }

    pub fn a_tilde(&self) -> f64 {
        1.0 / self.b_tilde
    }

    pub fn sparse(&self, n: usize) -> f64 {
        self.sparse_base * self.sparse_growth.powi(n as i32)
    }

    pub fn gamma_n(&self, n: usize) -> f64 {
        self.gamma * (n as f64 + 1.0) / n as f64
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.b > self.b_tilde && self.b_tilde > 1.0) {
            return Err(StatsError::InvalidArgument("constants need b > b_tilde > 1".into()));
        }
        if !(self.gamma >= 1.0) || !(self.sparse_base > 0.0) || !(self.sparse_growth > 0.0) {
            return Err(StatsError::InvalidArgument("gamma >= 1 and positive sparsity coefficients required".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self, StatsError> {
        let mut c = ClassifierConstants::default();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| StatsError::InvalidArgument(format!("line {}: expected key = value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| StatsError::InvalidArgument(format!("line {}: bad number `{v}`", ln + 1)));
            match k {
                "gamma" => c.gamma = num()?,
                "b" => c.b = num()?,
                "b_tilde" => c.b_tilde = num()?,
                "n0" => c.n0 = if v == "auto" { None } else { Some(num()? as usize) },
                "n0_threshold" => c.n0_threshold = num()?,
                "sparse_base" => c.sparse_base = num()?,
                "sparse_growth" => c.sparse_growth = num()?,
                "gamma_schedule" => c.gamma_schedule = v == "true" || v == "1",
                _ => return Err(StatsError::InvalidArgument(format!("line {}: unknown key `{k}`", ln + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "gamma = {}\nb = {}\nb_tilde = {}\nn0 = {}\nn0_threshold = {}\nsparse_base = {}\nsparse_growth = {}\ngamma_schedule = {}\n",
            self.gamma,
            self.b,
            self.b_tilde,
            self.n0.map(|n| n.to_string()).unwrap_or_else(|| "auto".into()),
            self.n0_threshold,
            self.sparse_base,
            self.sparse_growth,
            self.gamma_schedule
        )
    }
}

/// Outcome of a single clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tri {
    Pass,
    Fail,
    /// The clause needs data that is not available (e.g. `c_{n-1}` at the first level).
    Unavailable,
}

impl Tri {
    fn from_bool(b: bool) -> Tri {
        if b {
            Tri::Pass
        } else {
            Tri::Fail
        }
    }

    fn all<I: IntoIterator<Item = Tri>>(it: I) -> Tri {
        let mut out = Tri::Pass;
        for t in it {
            match t {
                Tri::Fail => return Tri::Fail,
                Tri::Unavailable => out = Tri::Unavailable,
                Tri::Pass => {}
            }
        }
        out
    }

    pub fn passed(self) -> bool {
        self == Tri::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LandingLabel {
    Cool,
    Excellent,
    Standard,
    Fast,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReturnLabel {
    VeryGood,
    Bad,
    Good,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordVerdict {
    pub level: usize,
    pub word: Vec<i32>,
    pub label: LandingLabel,
    pub clauses: BTreeMap<&'static str, Tri>,
    pub witness: Option<&'static str>,
}

impl WordVerdict {
    pub fn standard(&self) -> Tri {
        Tri::all(["LS1", "LS2", "LS3"].map(|k| self.clauses[k]))
    }
    pub fn fast(&self) -> Tri {
        Tri::all(["LF1", "LS2"].map(|k| self.clauses[k]))
    }
    pub fn excellent(&self) -> Tri {
        Tri::all([self.standard(), self.clauses["LE1"], self.clauses["LE2"]])
    }
    pub fn cool(&self) -> Tri {
        Tri::all([self.excellent(), self.clauses["LC1"], self.clauses["LC2"], self.clauses["LC3"], self.clauses["LC4"]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchVerdict {
    pub level: usize,
    pub index: i32,
    pub label: ReturnLabel,
    pub very_good: bool,
    pub bad: bool,
    pub good: Tri,
    pub lambda: f64,
    /// Label of the landing word `d` with `R_{n-1}(I^j_n) = C^d_{n-1}`.
    pub landing: Option<LandingLabel>,
    pub clauses: BTreeMap<&'static str, Tri>,
    pub witness: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchTaxonomy {
    pub n0: usize,
    pub lambda_n0: f64,
    /// Critical landing words `d^(n)(R_n(0))`, one per level with central data.
    pub words: Vec<WordVerdict>,
    pub branches: Vec<BranchVerdict>,
}

struct LevelView<'a> {
    n: usize,
    c_n: Option<f64>,
    c_prev: Option<f64>,
    returns: Vec<usize>,
    vg: &'a [bool],
    bad: &'a [bool],
}

/// `#{i ≤ k : flag_i} < rate·k` for every `k` from `k_from` to `m`.
fn sparse_clause(flags: &[bool], k_from: f64, inclusive: bool, rate: f64) -> bool {
    let m = flags.len();
    if !(k_from <= m as f64) {
        return true;
    }
    let start = if inclusive { k_from.ceil().max(1.0) } else { (k_from.floor() + 1.0).max(1.0) } as usize;
    let mut count = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        count += f as usize;
        let k = i + 1;
        if k >= start && !((count as f64) < rate * k as f64) {
            return false;
        }
    }
    true
}

/// `flag_i` holds for every `i ≤ min(bound, m)`.
fn initial_clause(flags: &[bool], bound: f64) -> bool {
    flags.iter().enumerate().all(|(i, &f)| !((i + 1) as f64 <= bound) || f)
}

fn eval_word(word: &[usize], lv: &LevelView, consts: &ClassifierConstants) -> BTreeMap<&'static str, Tri> {
    let a = consts.a();
    let b = consts.b;
    let n = lv.n;
    let nf = n as f64;
    let m = word.len();
    let sparse = consts.sparse(n);
    let mut cl = BTreeMap::new();
    let un = Tri::Unavailable;
    let r: Vec<usize> = word.iter().map(|&p| lv.returns[p]).collect();
    let vg: Vec<bool> = word.iter().map(|&p| lv.vg[p]).collect();
    let bad: Vec<bool> = word.iter().map(|&p| lv.bad[p]).collect();
    let mf = m as f64;
    match lv.c_n {
        Some(c) => {
            cl.insert("LS1", Tri::from_bool(c.powf(-a / 2.0) < mf && mf < c.powf(-2.0 * b)));
            cl.insert("LF1", Tri::from_bool(mf < c.powf(-a / 2.0)));
        }
        None => {
            cl.insert("LS1", un);
            cl.insert("LF1", un);
        }
    }
    match (lv.c_prev, lv.c_n) {
        (Some(cp), cn) => {
            cl.insert("LS2", Tri::from_bool(r.iter().all(|&t| (t as f64) < cp.powf(-3.0 * b))));
            let short: Vec<bool> = r.iter().map(|&t| (t as f64) < cp.powf(-a / 2.0)).collect();
            cl.insert("LS3", Tri::from_bool(sparse_clause(&short, cp.powf(-2.0 * b), true, sparse * cp.powf(a / 2.0))));
            let not_vg: Vec<bool> = vg.iter().map(|v| !v).collect();
            cl.insert("LE1", Tri::from_bool(sparse_clause(&not_vg, cp.powf(-2.0 * b), false, sparse * cp.powf(a * a))));
            cl.insert(
                "LE2",
                match cn {
                    Some(c) => Tri::from_bool(sparse_clause(&bad, c.powf(-1.0 / nf), false, sparse * cp.powf(nf))),
                    None => un,
                },
            );
            cl.insert("LC1", Tri::from_bool(initial_clause(&vg, cp.powf(-a * a / 2.0))));
            cl.insert("LC2", Tri::from_bool(sparse_clause(&short, cp.powf(-a * a / 4.0), false, sparse * cp.powf(a / 3.0))));
            cl.insert("LC3", Tri::from_bool(sparse_clause(&bad, cp.powf(-nf / 3.0), true, sparse * cp.powf(nf / 6.0))));
            let not_bad: Vec<bool> = bad.iter().map(|v| !v).collect();
            cl.insert("LC4", Tri::from_bool(initial_clause(&not_bad, cp.powf(-nf / 2.0))));
        }
        (None, _) => {
            for k in ["LS2", "LS3", "LE1", "LE2", "LC1", "LC2", "LC3", "LC4"] {
                cl.insert(k, un);
            }
        }
    }
    cl
}

fn word_verdict(level: usize, word: Vec<i32>, clauses: BTreeMap<&'static str, Tri>) -> WordVerdict {
    let mut v = WordVerdict { level, word, label: LandingLabel::None, clauses, witness: None };
    let order = ["LS1", "LS2", "LS3", "LE1", "LE2", "LC1", "LC2", "LC3", "LC4"];
    v.witness = order.iter().copied().find(|k| !v.clauses[k].passed());
    v.label = if v.cool().passed() {
        LandingLabel::Cool
    } else if v.excellent().passed() {
        LandingLabel::Excellent
    } else if v.standard().passed() {
        LandingLabel::Standard
    } else if v.fast().passed() {
        LandingLabel::Fast
    } else {
        LandingLabel::None
    };
    v
}

/// `inf_{I^j_n} ln|Df^k|/k ≥ target` for every `k` in `[k_from, r]`, checked on a grid.
fn truncated_hyperbolicity(m: &MapInstance, lo: f64, hi: f64, r: usize, k_from: usize, target: f64, grid: usize) -> bool {
    let grid = grid.max(2);
    let k_from = k_from.max(1);
    if k_from > r {
        return true;
    }
    let mut worst = vec![f64::INFINITY; r + 1];
    for i in 0..=grid {
        let mut z = lo + (hi - lo) * i as f64 / grid as f64;
        let mut acc = 0.0;
        for k in 1..=r {
            let (v, d) = m.value_deriv(z);
            acc += d.abs().ln();
            z = v;
            worst[k] = worst[k].min(acc / k as f64);
        }
    }
    worst[k_from..=r].iter().all(|&w| w >= target)
}

/// Evaluates LS/LF/LE/LC on landing words and VG/B/G on return branches,
/// literally, from `VG(n₀, n₀) = ℤ∖{0}` and `B(n₀, n₀) = ∅`.
///
/// Levels must be consecutive and carry enumerated branches. Branches visited
/// by landing words but missing from a table are inserted, so the indices in
/// the result refer to the returned levels.
pub fn classify_branches(
    m: &MapInstance,
    levels: &[NestLevel<f64>],
    consts: &ClassifierConstants,
    grid: usize,
) -> Result<(BranchTaxonomy, Vec<NestLevel<f64>>), StatsError> {
    consts.validate()?;
    if levels.is_empty() {
        return Err(StatsError::InsufficientDepth("no levels".into()));
    }
    let mut levels = levels.to_vec();
    let n0 = match consts.n0 {
        Some(n0) => n0,
        None => levels.iter().find(|l| l.c.map(|c| c < consts.n0_threshold).unwrap_or(false)).map(|l| l.n).unwrap_or(levels[0].n),
    };
    let i0 =
        levels.iter().position(|l| l.n == n0).ok_or_else(|| StatsError::InsufficientDepth(format!("level n0 = {n0} was not built")))?;
    let cap = levels.iter().flat_map(|l| l.branches.iter().map(|b| b.return_time)).max().unwrap_or(1).max(4000);
    let steps_cap = 1_000_000;

    // words, deepest level first so insertions only flow towards shallower levels
    let mut critical: Vec<Option<Vec<usize>>> = vec![None; levels.len()];
    let mut branch_words: Vec<Vec<Option<Vec<usize>>>> = vec![Vec::new(); levels.len()];
    for li in (i0..levels.len()).rev() {
        if let Some(x) = levels[li].critical_return {
            if levels[li].central_half_width.is_some() {
                critical[li] = levels[li].landing_positions(m, x, steps_cap, cap).ok();
            }
        }
        if li > i0 {
            let (head, tail) = levels.split_at_mut(li);
            let prev = &mut head[li - 1];
            let cur = &tail[0];
            let v = prev.v.ok_or_else(|| StatsError::InsufficientDepth(format!("v_{} missing", prev.n)))?;
            branch_words[li] = cur
                .branches
                .iter()
                .map(|b| {
                    let z = m.iterate(0.5 * (b.lo + b.hi), v);
                    prev.landing_positions(m, z, steps_cap, cap).ok()
                })
                .collect();
        }
    }
    for l in levels.iter_mut() {
        l.refresh_indices();
    }

    let lambda_n0 = level_hyperbolicity(m, &levels[i0], grid)?;
    let mut tax = BranchTaxonomy { n0, lambda_n0, words: Vec::new(), branches: Vec::new() };
    let mut vg: Vec<bool> = vec![true; levels[i0].branches.len()];
    let mut bad: Vec<bool> = vec![false; levels[i0].branches.len()];
    let mut landing: Vec<Option<(LandingLabel, Option<&'static str>, Tri)>> = vec![None; levels[i0].branches.len()];
    for li in i0..levels.len() {
        let lvl = &levels[li];
        let n = lvl.n;
        let c_prev = if li > 0 { levels[li - 1].c } else { None };
        let view = LevelView { n, c_n: lvl.c, c_prev, returns: lvl.branches.iter().map(|b| b.return_time).collect(), vg: &vg, bad: &bad };
        // return branches of this level
        for (k, b) in lvl.branches.iter().enumerate() {
            let lambda = branch_hyperbolicity(m, lvl, b.index, grid)?;
            let mut cl = BTreeMap::new();
            let g1 = Tri::from_bool(lambda >= lambda_n0 * (1.0 + 2f64.powi(n0 as i32 - n as i32)) / 2.0);
            let g2 = match c_prev {
                Some(cp) if n >= 2 => {
                    let e = (n - 1) as f64;
                    let k_from = cp.powf(-3.0 / e);
                    let target = lambda_n0 * (1.0 + 2f64.powf(n0 as f64 - n as f64 + 0.5)) / 2.0 - cp.powf(2.0 / e);
                    if k_from > b.return_time as f64 {
                        Tri::Pass
                    } else {
                        Tri::from_bool(truncated_hyperbolicity(m, b.lo, b.hi, b.return_time, k_from.ceil() as usize, target, grid))
                    }
                }
                _ => Tri::Unavailable,
            };
            cl.insert("G1", g1);
            cl.insert("G2", g2);
            let good = Tri::all([g1, g2]);
            let (land, land_witness, vg_clause) = landing[k].unwrap_or((LandingLabel::Excellent, None, Tri::Pass));
            cl.insert("VG", if li == i0 { Tri::Pass } else { vg_clause });
            let label = if vg[k] {
                ReturnLabel::VeryGood
            } else if bad[k] {
                ReturnLabel::Bad
            } else if good.passed() {
                ReturnLabel::Good
            } else {
                ReturnLabel::Neither
            };
            let witness = if vg[k] {
                if good.passed() {
                    None
                } else {
                    Some(if g1.passed() { "G2" } else { "G1" })
                }
            } else {
                land_witness.or(Some("VG"))
            };
            tax.branches.push(BranchVerdict {
                level: n,
                index: b.index,
                label,
                very_good: vg[k],
                bad: bad[k],
                good,
                lambda,
                landing: if li == i0 { None } else { Some(land) },
                clauses: cl,
                witness,
            });
        }
        if let Some(w) = &critical[li] {
            let cl = eval_word(w, &view, consts);
            tax.words.push(word_verdict(n, w.iter().map(|&p| lvl.branches[p].index).collect(), cl));
        }
        // VG(n₀, n+1) and B(n₀, n+1) from the words of the next level's branches
        if li + 1 < levels.len() {
            let next = &levels[li + 1];
            let y = next.half_width;
            let cn = lvl.c;
            let nf = n as f64;
            let mut nvg = Vec::with_capacity(next.branches.len());
            let mut nbad = Vec::with_capacity(next.branches.len());
            let mut nland = Vec::with_capacity(next.branches.len());
            for (b, w) in next.branches.iter().zip(&branch_words[li + 1]) {
                let Some(w) = w else {
                    nvg.push(false);
                    nbad.push(false);
                    nland.push(Some((LandingLabel::None, Some("LS1"), Tri::Unavailable)));
                    continue;
                };
                let wv = word_verdict(n, Vec::new(), eval_word(w, &view, consts));
                let far = match cn {
                    Some(c) => Tri::from_bool(b.distance_to_zero() > c.powf(nf * nf) * 2.0 * y),
                    None => Tri::Unavailable,
                };
                let is_vg = wv.excellent().passed() && far.passed();
                let is_bad = !is_vg && wv.fast() == Tri::Fail;
                let witness = if is_vg {
                    None
                } else if !wv.excellent().passed() {
                    wv.witness
                } else {
                    Some("VG")
                };
                nvg.push(is_vg);
                nbad.push(is_bad);
                nland.push(Some((wv.label, witness, far)));
            }
            vg = nvg;
            bad = nbad;
            landing = nland;
        }
    }
    Ok((tax, levels))
}
