//! Restrictive intervals, the principal nest `I_1 ⊃ I_2 ⊃ …` and the
//! first-return branches of each level.
//!
//! A first-return branch is identified by its *signature*: the return time,
//! the side of 0 it lies on and the L/R itinerary of the intermediate
//! iterates. Points sharing a signature form an interval on which the return
//! map is monotone, so branch boundaries can be located by plain bisection on
//! "same signature" predicates.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::maps::{MapError, MapInstance};
use crate::numerics::{bisect_predicate, LogProduct, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NestError {
    #[error("no orientation-reversing fixed point of the return map (attracting or degenerate critical orbit)")]
    NoFixedPoint,
    #[error("critical point does not return to I_{level} within {budget} iterates")]
    CriticalNonReturning { level: usize, budget: usize },
    #[error("budget exhausted at level {level}: {what}")]
    BudgetExhausted { level: usize, what: String },
    #[error("level {0} has no central interval")]
    NoCentralInterval(usize),
    #[error("orbit escapes the enumerated branches after word {partial:?}")]
    EscapesEnumeratedBranches { partial: Vec<i32> },
    #[error("landing not reached within {0} returns")]
    MaxSteps(usize),
    #[error("x = {0} is not in the level interval")]
    NotInLevel(f64),
    #[error("x = {0} does not return to the level within the budget")]
    NonReturning(f64),
    #[error("no branch with index {0}")]
    NoSuchBranch(i32),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Search and enumeration limits for nest construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestBudget {
    /// Longest period considered when looking for restrictive intervals.
    pub max_period: usize,
    /// Deepest level built by [`build_nest`].
    pub max_levels: usize,
    /// Longest return time followed for a non-critical point.
    pub max_return_time: usize,
    /// Longest return time followed for the critical point.
    pub max_critical_return: usize,
    /// Relative branch length cut-off, as a fraction of `|I_n|`.
    pub min_branch_fraction: f64,
    /// Absolute branch length cut-off; overrides the relative one when set.
    pub min_branch_length: Option<f64>,
    pub max_branches: usize,
    /// Cap on grid points used by the enumeration.
    pub max_grid: usize,
    pub max_landing_steps: usize,
    /// Cap on map iterations spent following the landing of `R_n(0)`.
    pub max_landing_iterations: usize,
    /// Enumerate all branches above the length cut-off.
    pub enumerate: bool,
    /// Materialize the branches visited by the critical orbit (needed for τ_n and Ĩ_{n+1}).
    pub materialize_words: bool,
}

impl Default for NestBudget {
    fn default() -> Self {
        NestBudget {
            max_period: 64,
            max_levels: 6,
            max_return_time: 4000,
            max_critical_return: 200_000,
            min_branch_fraction: 1e-6,
            min_branch_length: None,
            max_branches: 100_000,
            max_grid: 4_000_000,
            max_landing_steps: 100_000,
            max_landing_iterations: 2_000_000,
            enumerate: true,
            materialize_words: true,
        }
    }
}

impl NestBudget {
    /// Critical-orbit data only: no enumeration, no word materialization.
    pub fn lite() -> Self {
        NestBudget { enumerate: false, materialize_words: false, ..Default::default() }
    }

    pub fn min_length_for(&self, half_width: f64) -> f64 {
        self.min_branch_length.unwrap_or(self.min_branch_fraction * 2.0 * half_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct Sig {
    pub(crate) time: u32,
    side: i8,
    h1: u64,
    h2: u64,
}

impl Sig {
    fn mirrored(self) -> Sig {
        Sig { side: -self.side, ..self }
    }

    fn key(self) -> (u32, i8, u64) {
        (self.time, self.side, self.h1 ^ self.h2.rotate_left(17))
    }
}

/// Combinatorial signature `(return time, side, itinerary hash)` of the first
/// return of `x` to `(-p, p)`.
pub fn return_signature<R: Real>(m: &MapInstance, x: R, p: R, cap: usize) -> Option<(u32, i8, u64)> {
    first_return(m, x, p, cap).map(|(s, _)| s.key())
}

/// First return of `x` to `(-p, p)`: signature and the returned point.
pub(crate) fn first_return<R: Real>(m: &MapInstance, x: R, p: R, cap: usize) -> Option<(Sig, R)> {
    let mut y = x;
    let mut h1: u64 = 0xcbf2_9ce4_8422_2325;
    let mut h2: u64 = 0x9e37_79b9_7f4a_7c15;
    for i in 1..=cap {
        y = m.value(y);
        if y.abs() < p {
            return Some((Sig { time: i as u32, side: x.signum_i8(), h1, h2 }, y));
        }
        let bit: u64 = if y > R::zero() { 2 } else { 1 };
        h1 = (h1 ^ bit).wrapping_mul(0x0000_0100_0000_01b3);
        h2 = (h2.rotate_left(7) ^ bit).wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    None
}

/// Half-width and period of a restrictive interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RestrictiveInterval<R> {
    pub half_width: R,
    /// Total period `m₀` (product of the renormalization periods).
    pub period: usize,
    /// Number of successive renormalizations found.
    pub depth: usize,
    /// The period budget ran out before the search could look deeper.
    pub max_period_exceeded: bool,
}

fn hull<R: Real>(a: R, b: R) -> (R, R) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Smallest symmetric periodic interval with period at most `max_period`.
///
/// Searches the renormalization tower one step at a time: for `g = f^m` on the
/// current interval `[-q, q]`, candidate periods are the closest-return times
/// of the critical orbit of `g`, and the candidate interval is bounded by the
/// largest solution of `g^k(x) = ±x` on the monotone lap of `g^k` around 0.
pub fn restrictive_interval<R: Real>(m: &MapInstance, max_period: usize) -> RestrictiveInterval<R> {
    renormalization_tower(m, max_period).1
}

/// Successive renormalization steps `(period of the step, half-width)` and the
/// resulting restrictive interval.
pub fn renormalization_tower<R: Real>(m: &MapInstance, max_period: usize) -> (Vec<(usize, R)>, RestrictiveInterval<R>) {
    let mut q: R = m.half_width_r();
    let mut period = 1usize;
    let mut steps = Vec::new();
    let max_period = max_period.max(1);
    loop {
        let depth = steps.len();
        if period * 2 > max_period {
            let deeper = depth > 0 && renormalization_step(m, q, period, 4).is_some();
            return (steps, RestrictiveInterval { half_width: q, period, depth, max_period_exceeded: deeper });
        }
        match renormalization_step(m, q, period, max_period / period) {
            Some((k, qn)) => {
                q = qn;
                period *= k;
                steps.push((k, qn));
            }
            None => return (steps, RestrictiveInterval { half_width: q, period, depth, max_period_exceeded: false }),
        }
    }
}

/// One renormalization step for `g = f^period` on `[-q, q]`, trying periods up to `kmax`.
fn renormalization_step<R: Real>(m: &MapInstance, q: R, period: usize, kmax: usize) -> Option<(usize, R)> {
    let g = |x: R, j: usize| m.iterate(x, period * j);
    let mut orbit = Vec::with_capacity(kmax + 1);
    let mut x = R::zero();
    orbit.push(x);
    for _ in 0..kmax {
        x = m.iterate(x, period);
        orbit.push(x);
    }
    let mut closest = orbit.get(1)?.abs();
    for k in 2..=kmax {
        let d = orbit[k].abs();
        if !(d < closest) {
            continue;
        }
        closest = d;
        if !(d < q) {
            continue;
        }
        if let Some(qn) = restrictive_candidate(&g, &orbit, q, k) {
            return Some((k, qn));
        }
    }
    None
}

fn restrictive_candidate<R: Real, G: Fn(R, usize) -> R>(g: &G, orbit: &[R], q: R, k: usize) -> Option<R> {
    let zero = R::zero();
    // monotone lap [0, y] of g^k
    let on_lap = |x: R| -> bool {
        let mut z = x;
        for j in 1..k {
            z = g(z, 1);
            let (lo, hi) = hull(orbit[j], z);
            if lo <= zero && zero <= hi {
                return false;
            }
        }
        true
    };
    let y = if on_lap(q) { q } else { bisect_predicate(on_lap, zero, q, zero).0 };
    if !(y > zero) {
        return None;
    }
    let gk = |x: R| g(x, k);
    let n = 256usize;
    let mut roots: Vec<R> = Vec::new();
    for sgn in [1.0, -1.0] {
        let h = |x: R| gk(x) - x.scale(sgn);
        let mut x0 = y.scale(1e-9);
        let mut h0 = h(x0);
        for i in 1..=n {
            let x1 = y.scale(i as f64 / n as f64);
            let h1 = h(x1);
            if h1 == zero {
                roots.push(x1);
            } else if h0.signum_i8() * h1.signum_i8() < 0 {
                let pos = h1 > zero;
                let (a, _) = bisect_predicate(|x| (h(x) > zero) == pos, x1, x0, zero);
                roots.push(a);
            }
            x0 = x1;
            h0 = h1;
        }
    }
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tol = 1e-9;
    roots.into_iter().find(|&qn| {
        let inner = qn.scale(1.0 - tol);
        let outer = qn.scale(1.0 + tol);
        let mut z = qn;
        for j in 1..k {
            z = g(z, 1);
            let (lo, hi) = hull(orbit[j], z);
            if hi > -inner && lo < inner {
                return false;
            }
        }
        let z = g(z, 1);
        let (lo, hi) = hull(orbit[k], z);
        lo >= -outer && hi <= outer
    })
}

/// `I_1 = [-p, p]` where `p` is the orientation-reversing fixed point of
/// `f^period` on the half of the restrictive interval where it decreases.
pub fn first_nest_interval<R: Real>(m: &MapInstance, t: &RestrictiveInterval<R>) -> Result<R, NestError> {
    let q = t.half_width;
    let k = t.period;
    let zero = R::zero();
    let (_, d) = m.iterate_with_derivative(q.scale(0.5), k);
    // work on the side where f^k decreases; by evenness use |x| on that side
    let side = if d.sign < 0 { 1.0 } else { -1.0 };
    let h = |x: R| m.iterate(x.scale(side), k) - x.scale(side);
    let h0 = h(zero);
    let hq = h(q);
    let s0 = h0.signum_i8() as f64 * side;
    let sq = hq.signum_i8() as f64 * side;
    if !(s0 > 0.0 && sq < 0.0) || d.sign == 0 {
        return Err(NestError::NoFixedPoint);
    }
    let pos = h0 > zero;
    let (a, b) = bisect_predicate(|x| (h(x) > zero) == pos, zero, q, zero);
    let p = R::midpoint(a, b);
    if !(p > zero) {
        return Err(NestError::NoFixedPoint);
    }
    let (_, dp) = m.iterate_with_derivative(p.scale(side), k);
    if dp.sign >= 0 {
        return Err(NestError::NoFixedPoint);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Reliability {
    Reliable,
    Unreliable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LevelStatus {
    /// Central data not computed yet.
    Open,
    /// Central data present.
    Resolved,
    CriticalNonReturning,
    BudgetExhausted,
}

/// A monotone first-return branch `I^j_n` of `R_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch<R> {
    pub index: i32,
    pub lo: R,
    pub hi: R,
    pub return_time: usize,
    pub endpoint_log_derivatives: [LogProduct; 2],
    /// `max(| |f^r(lo)| - p |, | |f^r(hi)| - p |)`.
    pub onto_error: f64,
    pub onto_verified: bool,
    #[serde(skip)]
    pub(crate) sig: Sig,
}

impl<R: Real> Branch<R> {
    pub fn length(&self) -> R {
        self.hi - self.lo
    }

    pub fn contains(&self, x: R) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Distance from the branch to 0.
    pub fn distance_to_zero(&self) -> R {
        if self.lo > R::zero() {
            self.lo
        } else {
            -self.hi
        }
    }

    fn mirror(&self) -> Branch<R> {
        Branch {
            index: -self.index,
            lo: -self.hi,
            hi: -self.lo,
            return_time: self.return_time,
            endpoint_log_derivatives: [self.endpoint_log_derivatives[1], self.endpoint_log_derivatives[0]],
            onto_error: self.onto_error,
            onto_verified: self.onto_verified,
            sig: self.sig.mirrored(),
        }
    }
}

/// Counters describing how complete a level's branch table is.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LevelFlags {
    pub enumerated: bool,
    pub enumeration_budget_exhausted: bool,
    pub onto_failures: usize,
    pub grid_points: usize,
    pub min_branch_length: f64,
}

/// One level of the principal nest.
#[derive(Debug, Clone, Serialize)]
pub struct NestLevel<R> {
    pub n: usize,
    /// `I_n = (-p_n, p_n)`.
    pub half_width: R,
    pub branches: Vec<Branch<R>>,
    /// `I_{n+1} = (-y, y)`.
    pub central_half_width: Option<R>,
    pub tau: Option<i32>,
    pub v: Option<usize>,
    pub s: Option<usize>,
    pub c: Option<f64>,
    /// `Ĩ_{n+1}`, symmetric.
    pub tilde_half_width: Option<R>,
    pub central: Option<bool>,
    /// `R_n(0)`.
    pub critical_return: Option<R>,
    /// `d^(n)(R_n(0))` as branch indices.
    pub critical_word: Option<Vec<i32>>,
    pub reliability: Reliability,
    pub status: LevelStatus,
    pub flags: LevelFlags,
    #[serde(skip)]
    pub(crate) sig_index: HashMap<Sig, usize>,
    #[serde(skip)]
    pub(crate) central_sig: Option<Sig>,
    #[serde(skip)]
    word_positions: Vec<usize>,
    #[serde(skip)]
    word_complete: bool,
}

impl<R: Real> NestLevel<R> {
    pub fn new(n: usize, half_width: R) -> Self {
        NestLevel {
            n,
            half_width,
            branches: Vec::new(),
            central_half_width: None,
            tau: None,
            v: None,
            s: None,
            c: None,
            tilde_half_width: None,
            central: None,
            critical_return: None,
            critical_word: None,
            reliability: Reliability::Reliable,
            status: LevelStatus::Open,
            flags: LevelFlags::default(),
            sig_index: HashMap::new(),
            central_sig: None,
            word_positions: Vec::new(),
            word_complete: false,
        }
    }

    /// Signature of the central return `0 ↦ R_n(0)`.
    pub fn central_signature(&self) -> Option<(u32, i8, u64)> {
        self.central_sig.map(Sig::key)
    }

    pub fn interval(&self) -> (R, R) {
        (-self.half_width, self.half_width)
    }

    pub fn central_interval(&self) -> Option<(R, R)> {
        self.central_half_width.map(|y| (-y, y))
    }

    pub fn tilde_interval(&self) -> Option<(R, R)> {
        self.tilde_half_width.map(|y| (-y, y))
    }

    pub fn branch(&self, j: i32) -> Option<&Branch<R>> {
        self.branches.iter().find(|b| b.index == j)
    }

    /// Branches sorted by position.
    pub fn sorted_branches(&self) -> Vec<&Branch<R>> {
        let mut v: Vec<&Branch<R>> = self.branches.iter().collect();
        v.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        v
    }

    /// Index of the branch containing `x`, if that branch is in the table.
    pub fn branch_index_of(&self, m: &MapInstance, x: R, cap: usize) -> Option<i32> {
        let (sig, _) = first_return(m, x, self.half_width, cap)?;
        self.sig_index.get(&sig).map(|&i| self.branches[i].index)
    }

    /// Copy with all reals converted to double precision.
    pub fn to_f64(&self) -> NestLevel<f64> {
        let cv = |b: &Branch<R>| Branch {
            index: b.index,
            lo: b.lo.to_f64(),
            hi: b.hi.to_f64(),
            return_time: b.return_time,
            endpoint_log_derivatives: b.endpoint_log_derivatives,
            onto_error: b.onto_error,
            onto_verified: b.onto_verified,
            sig: b.sig,
        };
        NestLevel {
            n: self.n,
            half_width: self.half_width.to_f64(),
            branches: self.branches.iter().map(cv).collect(),
            central_half_width: self.central_half_width.map(|y| y.to_f64()),
            tau: self.tau,
            v: self.v,
            s: self.s,
            c: self.c,
            tilde_half_width: self.tilde_half_width.map(|y| y.to_f64()),
            central: self.central,
            critical_return: self.critical_return.map(|y| y.to_f64()),
            critical_word: self.critical_word.clone(),
            reliability: self.reliability,
            status: self.status,
            flags: self.flags.clone(),
            sig_index: self.sig_index.clone(),
            central_sig: self.central_sig,
            word_positions: self.word_positions.clone(),
            word_complete: self.word_complete,
        }
    }

    fn insert(&mut self, b: Branch<R>) -> usize {
        if let Some(&i) = self.sig_index.get(&b.sig) {
            return i;
        }
        let i = self.branches.len();
        self.sig_index.insert(b.sig, i);
        self.branches.push(b);
        i
    }

    /// Assigns indices: sign = side of 0, magnitude = rank by decreasing distance from 0.
    fn reindex(&mut self) {
        let mut pos: Vec<usize> = (0..self.branches.len()).filter(|&i| self.branches[i].lo > R::zero()).collect();
        pos.sort_by(|&a, &b| self.branches[b].lo.partial_cmp(&self.branches[a].lo).unwrap());
        for (rank, &i) in pos.iter().enumerate() {
            self.branches[i].index = rank as i32 + 1;
        }
        let mut neg: Vec<usize> = (0..self.branches.len()).filter(|&i| self.branches[i].lo <= R::zero()).collect();
        neg.sort_by(|&a, &b| self.branches[a].hi.partial_cmp(&self.branches[b].hi).unwrap());
        for (rank, &i) in neg.iter().enumerate() {
            self.branches[i].index = -(rank as i32 + 1);
        }
        if self.word_complete {
            self.critical_word = Some(self.word_positions.iter().map(|&i| self.branches[i].index).collect());
        }
        if let (Some(first), Some(false)) = (self.word_positions.first(), self.central) {
            self.tau = Some(self.branches[*first].index);
        }
    }

    fn min_length(&self, budget: &NestBudget) -> f64 {
        budget.min_length_for(self.half_width.to_f64())
    }
}

/// `ln sup_j |Df^(r-j)(f^j(x))|` over `j = 0..r`: how much a rounding error
/// committed anywhere along the orbit of `x` is amplified by time `r`.
fn log_amplification<R: Real>(m: &MapInstance, x: R, r: usize) -> f64 {
    let mut logs = Vec::with_capacity(r);
    let mut z = x;
    for _ in 0..r {
        let (v, d) = m.value_deriv(z);
        logs.push(d.ln_abs());
        z = v;
    }
    let mut acc = 0.0f64;
    let mut sup = 0.0f64;
    for l in logs.iter().rev() {
        acc += l;
        sup = sup.max(acc);
    }
    sup
}

fn branch_tol(eps: f64, half_width: f64, log_sup: f64) -> f64 {
    1e3 * eps * log_sup.exp().max(1.0) * half_width.max(1.0)
}

/// The branch of the first return to `(-p, p)` containing `x`.
fn branch_containing<R: Real>(m: &MapInstance, p: R, x: R, sig: Sig) -> Branch<R> {
    let zero = R::zero();
    let pred = |z: R| first_return(m, z, p, sig.time as usize).map(|(s, _)| s) == Some(sig);
    // 0 and ±p both lie outside any non-central branch
    let (out_lo, out_hi) = if x > zero { (zero, p) } else { (-p, zero) };
    let (lo, _) = bisect_predicate(pred, x, out_lo, zero);
    let (hi, _) = bisect_predicate(pred, x, out_hi, zero);
    finish_branch(m, p, lo, hi, sig)
}

fn finish_branch<R: Real>(m: &MapInstance, p: R, lo: R, hi: R, sig: Sig) -> Branch<R> {
    let r = sig.time as usize;
    let (ylo, dlo) = m.iterate_with_derivative(lo, r);
    let (yhi, dhi) = m.iterate_with_derivative(hi, r);
    let e = |y: R| (y.abs() - p).abs().to_f64();
    let onto_error = e(ylo).max(e(yhi));
    let amp = log_amplification(m, lo, r).max(log_amplification(m, hi, r));
    let tol = branch_tol(R::eps(), m.half_width(), amp);
    let opposite = ylo.signum_i8() * yhi.signum_i8() < 0;
    Branch {
        index: 0,
        lo,
        hi,
        return_time: r,
        endpoint_log_derivatives: [dlo, dhi],
        onto_error,
        onto_verified: onto_error <= tol && opposite,
        sig,
    }
}

/// Enumerates the branches of the first return map to `I_n` whose length is at
/// least the budget's cut-off, by grid signatures refined with bisection.
pub fn decompose_return_branches<R: Real>(m: &MapInstance, level: &mut NestLevel<R>, budget: &NestBudget) {
    let p = level.half_width;
    let zero = R::zero();
    let min_len = level.min_length(budget);
    let mut npts = (p.to_f64() / (min_len / 2.0)).ceil() as usize;
    level.flags.min_branch_length = min_len;
    if npts > budget.max_grid {
        npts = budget.max_grid;
        level.flags.enumeration_budget_exhausted = true;
    }
    let npts = npts.max(2);
    level.flags.grid_points = npts;
    let cap = budget.max_return_time;
    let central = first_return(m, zero, p, budget.max_critical_return).map(|(s, _)| Sig { side: 1, ..s });
    let grid = |i: usize| p.scale(i as f64 / npts as f64);
    let sig_at = |x: R| first_return(m, x, p, cap).map(|(s, _)| s);

    let mut found: Vec<Branch<R>> = Vec::new();
    let mut prev: Option<Sig> = None;
    let mut run_start = 0usize;
    for i in 1..=npts {
        let x = grid(i);
        let s = if i == npts { None } else { sig_at(x) };
        if s != prev {
            if let Some(sg) = prev {
                if Some(sg) != central {
                    let pred = |z: R| sig_at(z) == Some(sg);
                    let lo = bisect_predicate(pred, grid(run_start), grid(run_start - 1), zero).0;
                    let hi = bisect_predicate(pred, grid(i - 1), x, zero).0;
                    if (hi - lo).to_f64() >= min_len {
                        found.push(finish_branch(m, p, lo, hi, sg));
                        if found.len() * 2 >= budget.max_branches {
                            level.flags.enumeration_budget_exhausted = true;
                            break;
                        }
                    }
                }
            }
            prev = s;
            run_start = i;
        }
    }
    for b in found {
        let mirror = b.mirror();
        level.insert(b);
        level.insert(mirror);
    }
    level.flags.enumerated = true;
    level.flags.onto_failures = level.branches.iter().filter(|b| !b.onto_verified).count();
    level.reindex();
}

/// Computes `v_n`, `I_{n+1}`, `R_n(0)`, `s_n`, `τ_n`, `c_n` and `Ĩ_{n+1}` for `level`.
pub fn resolve_central<R: Real>(
    m: &MapInstance,
    prev: Option<&NestLevel<R>>,
    level: &mut NestLevel<R>,
    budget: &NestBudget,
) -> Result<(), NestError> {
    let p = level.half_width;
    let zero = R::zero();
    let Some((sig0, r0)) = first_return(m, zero, p, budget.max_critical_return) else {
        level.status = LevelStatus::CriticalNonReturning;
        return Err(NestError::CriticalNonReturning { level: level.n, budget: budget.max_critical_return });
    };
    let csig = Sig { side: 1, ..sig0 };
    let v = sig0.time as usize;
    let in_central = |z: R| first_return(m, z, p, v).map(|(s, _)| s) == Some(csig);
    let y = if in_central(p) {
        p
    } else {
        let mut out = p;
        let mut inside = p.scale(0.5);
        // walk down until a point inside the central branch is found
        while !in_central(inside) {
            out = inside;
            inside = inside.scale(0.5);
            if !(inside > R::from_f64(1e-300)) {
                break;
            }
        }
        bisect_predicate(in_central, inside, out, zero).0
    };
    level.central_sig = Some(csig);
    level.v = Some(v);
    level.central_half_width = Some(y);
    level.critical_return = Some(r0);
    level.c = Some((y / p).to_f64());
    level.central = Some(r0.abs() < y);
    let eps = R::eps();
    // near the fold f(x) - f(0) ~ x², so the boundary of the central branch
    // is only resolved when y² clears the rounding of f(0)
    let hw = m.half_width();
    let yf = y.to_f64();
    if 2.0 * yf < 1e3 * eps * hw || yf * yf < 1e3 * eps * hw * hw {
        level.reliability = Reliability::Unreliable;
    }

    // landing of R_n(0) into I_{n+1}
    let mut x = r0;
    let mut steps = 0usize;
    let mut iterations = 0usize;
    let mut positions = Vec::new();
    let mut exhausted = false;
    while !(x.abs() < y) {
        if steps >= budget.max_landing_steps || iterations >= budget.max_landing_iterations {
            exhausted = true;
            break;
        }
        let cap = budget.max_critical_return.min(budget.max_landing_iterations - iterations);
        let Some((sig, next)) = first_return(m, x, p, cap) else {
            exhausted = true;
            break;
        };
        iterations += sig.time as usize;
        if budget.materialize_words {
            let pos = match level.sig_index.get(&sig) {
                Some(&i) => i,
                None => level.insert(branch_containing(m, p, x, sig)),
            };
            positions.push(pos);
        }
        x = next;
        steps += 1;
    }
    level.status = LevelStatus::Resolved;
    if exhausted {
        level.status = LevelStatus::BudgetExhausted;
        level.s = None;
    } else {
        level.s = Some(steps);
    }
    if level.central == Some(true) {
        level.tau = Some(0);
    }
    if budget.materialize_words {
        level.word_positions = positions;
        level.word_complete = !exhausted;
        level.reindex();
    }

    level.tilde_half_width = match prev {
        None => Some(p),
        Some(pl) => tilde_interval(m, pl, level),
    };
    Ok(())
}

/// `Ĩ_{n+1}`: component of 0 of `{x ∈ I_n : R_{n-1}(x) ∈ C^d_{n-1}}` where `d` is
/// the landing word of `R_{n-1}(0)`.
fn tilde_interval<R: Real>(m: &MapInstance, prev: &NestLevel<R>, level: &NestLevel<R>) -> Option<R> {
    let word = prev.critical_word.as_ref()?;
    let vprev = prev.v?;
    let y = level.central_half_width?;
    let p = level.half_width;
    if word.is_empty() {
        return Some(p);
    }
    let steps: Vec<(R, R, usize)> = word.iter().map(|&j| prev.branch(j).map(|b| (b.lo, b.hi, b.return_time))).collect::<Option<_>>()?;
    let pred = |x: R| {
        let mut z = m.iterate(x, vprev);
        for &(lo, hi, r) in &steps {
            if !(lo <= z && z <= hi) {
                return false;
            }
            z = m.iterate(z, r);
        }
        true
    };
    if pred(p) {
        return Some(p);
    }
    Some(bisect_predicate(pred, y.min_r(p.scale(0.5)), p, R::zero()).0.max_r(y))
}

/// Appends level `n+1` to a nest whose last level has (or can compute) a central branch.
pub fn extend_nest<R: Real>(m: &MapInstance, mut levels: Vec<NestLevel<R>>, budget: &NestBudget) -> Result<Vec<NestLevel<R>>, NestError> {
    let k = levels.len();
    if k == 0 {
        return Err(NestError::NoCentralInterval(0));
    }
    if levels[k - 1].central_half_width.is_none() {
        let (head, tail) = levels.split_at_mut(k - 1);
        resolve_central(m, head.last(), &mut tail[0], budget)?;
    }
    let last = &levels[k - 1];
    if last.reliability == Reliability::Unreliable {
        return Err(NestError::BudgetExhausted { level: last.n, what: "next interval below working precision".into() });
    }
    let y = last.central_half_width.ok_or(NestError::NoCentralInterval(last.n))?;
    let mut next = NestLevel::new(last.n + 1, y);
    if budget.enumerate {
        decompose_return_branches(m, &mut next, budget);
    }
    let _ = resolve_central(m, levels.last(), &mut next, budget);
    levels.push(next);
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NestStop {
    CriticalNonReturning,
    Unreliable,
    BudgetExhausted,
    LevelCap,
}

/// A principal nest built from the restrictive interval down.
#[derive(Debug, Clone, Serialize)]
pub struct Nest<R> {
    pub restrictive: RestrictiveInterval<R>,
    pub levels: Vec<NestLevel<R>>,
    pub stop: NestStop,
}

impl<R: Real> Nest<R> {
    /// Levels whose central data is present and reliable.
    pub fn reliable_levels(&self) -> impl Iterator<Item = &NestLevel<R>> {
        self.levels.iter().filter(|l| l.reliability == Reliability::Reliable && l.c.is_some())
    }

    pub fn scaling_factors(&self) -> Vec<f64> {
        self.reliable_levels().filter_map(|l| l.c).collect()
    }
}

pub fn build_nest<R: Real>(m: &MapInstance, budget: &NestBudget) -> Result<Nest<R>, NestError> {
    let restrictive = restrictive_interval::<R>(m, budget.max_period);
    let p1 = first_nest_interval(m, &restrictive)?;
    let mut first = NestLevel::new(1, p1);
    if budget.enumerate {
        decompose_return_branches(m, &mut first, budget);
    }
    let mut levels = vec![first];
    let stop = match resolve_central(m, None, &mut levels[0], budget) {
        Err(_) => NestStop::CriticalNonReturning,
        Ok(()) => loop {
            let last = levels.last().unwrap();
            match last.status {
                LevelStatus::CriticalNonReturning => break NestStop::CriticalNonReturning,
                LevelStatus::BudgetExhausted => break NestStop::BudgetExhausted,
                _ => {}
            }
            if last.reliability == Reliability::Unreliable {
                break NestStop::Unreliable;
            }
            if levels.len() >= budget.max_levels {
                break NestStop::LevelCap;
            }
            levels = extend_nest(m, levels, budget)?;
        },
    };
    Ok(Nest { restrictive, levels, stop })
}

impl<R: Real> NestLevel<R> {
    /// Landing word of `x` as positions in `branches`, inserting any branch
    /// the orbit visits that is not yet tabulated. Indices are not refreshed;
    /// call [`NestLevel::refresh_indices`] afterwards.
    pub fn landing_positions(&mut self, m: &MapInstance, x: R, max_steps: usize, cap: usize) -> Result<Vec<usize>, NestError> {
        let p = self.half_width;
        let y = self.central_half_width.ok_or(NestError::NoCentralInterval(self.n))?;
        let mut z = x;
        let mut out = Vec::new();
        while !(z.abs() < y) {
            if out.len() >= max_steps {
                return Err(NestError::MaxSteps(max_steps));
            }
            let (sig, next) = first_return(m, z, p, cap).ok_or(NestError::NonReturning(z.to_f64()))?;
            let pos = match self.sig_index.get(&sig) {
                Some(&i) => i,
                None => self.insert(branch_containing(m, p, z, sig)),
            };
            out.push(pos);
            z = next;
        }
        Ok(out)
    }

    /// Recomputes branch indices after insertions.
    pub fn refresh_indices(&mut self) {
        self.reindex();
    }
}

/// Landing word of `x` into `I_{n+1}` under `R_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandingWord<R> {
    pub word: Vec<i32>,
    /// `C^d_n`: the landing domain containing the queried point.
    pub landing_domain: Option<(R, R)>,
    pub landing_time: usize,
}

impl<R: Real> LandingWord<R> {
    /// `Σ r_n(j_i)` recomputed from the level's table.
    pub fn summed_return_times(&self, level: &NestLevel<R>) -> Option<usize> {
        self.word.iter().map(|&j| level.branch(j).map(|b| b.return_time)).sum()
    }
}

/// Word of successive non-central branch indices of the `R_n`-orbit of `x`.
pub fn landing_word<R: Real>(m: &MapInstance, level: &NestLevel<R>, x: R, max_steps: usize) -> Result<LandingWord<R>, NestError> {
    let p = level.half_width;
    let y = level.central_half_width.ok_or(NestError::NoCentralInterval(level.n))?;
    if !(x.abs() < p) {
        return Err(NestError::NotInLevel(x.to_f64()));
    }
    let cap = level.branches.iter().map(|b| b.return_time).max().unwrap_or(1);
    let mut z = x;
    let mut word = Vec::new();
    let mut time = 0usize;
    while !(z.abs() < y) {
        if word.len() >= max_steps {
            return Err(NestError::MaxSteps(max_steps));
        }
        let Some((sig, next)) = first_return(m, z, p, cap) else {
            return Err(NestError::EscapesEnumeratedBranches { partial: word });
        };
        let Some(&i) = level.sig_index.get(&sig) else {
            return Err(NestError::EscapesEnumeratedBranches { partial: word });
        };
        word.push(level.branches[i].index);
        time += level.branches[i].return_time;
        z = next;
    }
    let landing_domain = landing_domain(m, level, x, &word);
    Ok(LandingWord { word, landing_domain, landing_time: time })
}

fn landing_domain<R: Real>(m: &MapInstance, level: &NestLevel<R>, x: R, word: &[i32]) -> Option<(R, R)> {
    let y = level.central_half_width?;
    let Some(&j0) = word.first() else {
        return Some((-y, y));
    };
    let steps: Vec<&Branch<R>> = word.iter().map(|&j| level.branch(j)).collect::<Option<_>>()?;
    let pred = |z0: R| {
        let mut z = z0;
        for b in &steps {
            if !b.contains(z) {
                return false;
            }
            z = m.iterate(z, b.return_time);
        }
        z.abs() < y
    };
    let b0 = level.branch(j0)?;
    let lo = bisect_predicate(pred, x, b0.lo, R::zero()).0;
    let hi = bisect_predicate(pred, x, b0.hi, R::zero()).0;
    Some((lo, hi))
}
