//! Summability, the functional `ν_f`, Tsujii sums along parameter lines and
//! transversal polynomial vector fields.

use serde::Serialize;
use thiserror::Error;

use crate::maps::{MapError, MapFamily, MapInstance};
use crate::stats::sym_tol;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransversalityError {
    #[error("critical orbit returns to the critical point at step {step}")]
    ZeroDerivative { step: usize },
    #[error("no geometric decay of 1/|Df^k(f(0))| is observed (ratio {ratio:.4})")]
    NotSummable { ratio: f64 },
    #[error("no bump of degree <= {degree_cap} meets the bounds")]
    BumpInfeasible { degree_cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransversalityVerdict {
    Transverse,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalitySum {
    /// `partial_sums[j] = Σ_{i ≤ j} v(f^i(0)) / Df^i(f(0))`, `j = 0..=N`.
    pub partial_sums: Vec<f64>,
    pub tail_bound: f64,
    pub converged: bool,
    pub value: f64,
}

impl TransversalitySum {
    pub fn verdict(&self) -> TransversalityVerdict {
        if self.converged && self.value.abs() > self.tail_bound {
            TransversalityVerdict::Transverse
        } else {
            TransversalityVerdict::Undetermined
        }
    }

    pub fn term(&self, j: usize) -> f64 {
        if j == 0 {
            self.partial_sums[0]
        } else {
            self.partial_sums[j] - self.partial_sums[j - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summability {
    /// `S_N = Σ_{k=1..N} 1/|Df^k(f(0))|`.
    pub partial_sum: f64,
    pub geometric_tail: bool,
    /// Average per-step ratio of consecutive terms over the last N/2 terms.
    pub decay_ratio: f64,
    /// Majorant for `Σ_{k>N} 1/|Df^k(f(0))|`; infinite without decay.
    pub tail_bound: f64,
}

struct Orbit {
    /// `f^k(0)`, `k = 0..=N`.
    points: Vec<f64>,
    /// `Df^k(f(0))`, `k = 0..=N`, as (ln|·|, sign).
    derivs: Vec<(f64, f64)>,
}

fn critical_orbit(m: &MapInstance, n: usize) -> Result<Orbit, TransversalityError> {
    let tol = sym_tol(m);
    let limit = m.half_width() * (1.0 + 10.0 * f64::EPSILON);
    let mut points = vec![0.0];
    let mut derivs = vec![(0.0, 1.0)];
    let mut x = m.value(0.0f64);
    let (mut l, mut s) = (0.0f64, 1.0f64);
    for k in 1..=n {
        points.push(x);
        if x.abs() <= tol {
            return Err(TransversalityError::ZeroDerivative { step: k });
        }
        if !(x.abs() <= limit) {
            return Err(MapError::EscapedDomain { step: k, x }.into());
        }
        let (v, d) = m.value_deriv(x);
        l += d.abs().ln();
        s *= d.signum();
        derivs.push((l, s));
        x = v;
    }
    Ok(Orbit { points, derivs })
}

fn tail_from(derivs: &[(f64, f64)]) -> (f64, f64) {
    let n = derivs.len() - 1;
    let h = (n / 2).max(1);
    let ratio = ((derivs[n - h].0 - derivs[n].0) / h as f64).exp();
    let tail = if ratio < 1.0 { (-derivs[n].0).exp() * ratio / (1.0 - ratio) } else { f64::INFINITY };
    (ratio, tail)
}

pub fn summability_check(m: &MapInstance, n: usize) -> Result<Summability, TransversalityError> {
    if n < 10 {
        return Err(TransversalityError::InvalidArgument("summability needs N >= 10".into()));
    }
    let o = critical_orbit(m, n)?;
    let partial_sum = o.derivs[1..].iter().map(|(l, _)| (-l).exp()).sum();
    let (decay_ratio, tail_bound) = tail_from(&o.derivs);
    Ok(Summability { partial_sum, geometric_tail: decay_ratio <= 0.5, decay_ratio, tail_bound })
}

/// `ν_f(v) = Σ_{k ≥ 0} v(f^k(0)) / Df^k(f(0))` truncated at `N`.
///
/// `sup|v|` for the tail is taken over a 2001-point grid of the domain.
pub fn nu_functional<V: Fn(f64) -> f64>(m: &MapInstance, v: V, n: usize) -> Result<TransversalitySum, TransversalityError> {
    let o = critical_orbit(m, n)?;
    let (ratio, tail) = tail_from(&o.derivs);
    if !(ratio < 1.0) {
        return Err(TransversalityError::NotSummable { ratio });
    }
    let hw = m.half_width();
    let sup = (0..=2000).map(|i| v(hw * (-1.0 + i as f64 / 1000.0)).abs()).fold(0.0, f64::max);
    let mut partial_sums = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for (x, (l, s)) in o.points.iter().zip(&o.derivs) {
        acc += v(*x) * s * (-l).exp();
        partial_sums.push(acc);
    }
    let tail_bound = sup * tail;
    Ok(TransversalitySum { value: acc, partial_sums, tail_bound, converged: tail_bound.is_finite() })
}

/// Tsujii sum with `v = d/dp f_p` along `direction`, in the family's native coordinates.
pub fn tsujii_sum(fam: MapFamily, params: &[f64], direction: &[f64], n: usize) -> Result<TransversalitySum, TransversalityError> {
    let m = fam.instance(params)?;
    fam.velocity(params, direction, 0.0)?;
    let hw = m.half_width();
    nu_functional(&m, |x| fam.velocity(params, direction, x.clamp(-hw, hw)).unwrap_or(f64::NAN), n)
}

/// Even field `v(x) = (1 - s²)·P(s²)` with `s = x / half_width`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolynomialVectorField {
    pub half_width: f64,
    /// Coefficients of `P` in powers of `s²`.
    pub coefficients: Vec<f64>,
}

impl PolynomialVectorField {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x / self.half_width).powi(2);
        let p = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c);
        (1.0 - u) * p
    }

    /// Degree in `x`.
    pub fn degree(&self) -> usize {
        2 * self.coefficients.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalField {
    pub field: PolynomialVectorField,
    /// Neighbourhood `(-ε·hw, ε·hw)` the bump lives in.
    pub epsilon: f64,
    /// Summability constant `S` used for the outer bound.
    pub s: f64,
    pub nu: TransversalitySum,
}

fn binomial_power(c: f64, k: usize) -> Vec<f64> {
    // c·(1-u)^k in powers of u
    let mut out = vec![c];
    for _ in 0..k {
        let mut next = vec![0.0; out.len() + 1];
        for (i, a) in out.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a;
        }
        out = next;
    }
    out
}

/// A bump `v = 3/2·(1 - s²)^K` with `v(0) > 1`, `|v| < 2`, and `|v| < 1/(10S)`
/// outside `(-ε, ε)`, where `ε` keeps the recurrent part of `ν` below 2/3.
pub fn construct_transversal_field(m: &MapInstance, n: usize, degree_cap: usize) -> Result<TransversalField, TransversalityError> {
    let sm = summability_check(m, n)?;
    if !sm.tail_bound.is_finite() {
        return Err(TransversalityError::NotSummable { ratio: sm.decay_ratio });
    }
    let s = sm.partial_sum + sm.tail_bound;
    let o = critical_orbit(m, n)?;
    let hw = m.half_width();
    let near_sum = |eps: f64| -> f64 {
        o.points[1..].iter().zip(&o.derivs[1..]).filter(|(x, _)| x.abs() < eps * hw).map(|(_, (l, _))| (-l).exp()).sum::<f64>()
            + sm.tail_bound
    };
    let mut eps = 0.9;
    while near_sum(eps) >= 1.0 / 3.0 {
        eps *= 0.8;
        if eps < 1e-4 {
            return Err(TransversalityError::BumpInfeasible { degree_cap });
        }
    }
    let target = 1.0 / (10.0 * s);
    let k = ((target / 1.5).ln() / (1.0 - eps * eps).ln()).floor() as usize + 1;
    if 2 * k > degree_cap {
        return Err(TransversalityError::BumpInfeasible { degree_cap });
    }
    let field = PolynomialVectorField { half_width: hw, coefficients: binomial_power(1.5, k - 1) };
    let nu = nu_functional(m, |x| field.eval(x), n)?;
    if !(nu.value - nu.tail_bound > 0.0) {
        return Err(TransversalityError::BumpInfeasible { degree_cap });
    }
    Ok(TransversalField { field, epsilon: eps, s, nu })
}
