//! Kneading sequences, attracting cycles and straightening onto the quadratic family.
//!
//! Order convention: itineraries are compared lexicographically with
//! `L < C < R`, reversed after an odd number of `R` symbols in the common
//! prefix (the map has a maximum at 0, so `R` reverses orientation). With this
//! order the kneading sequence of `a - x²` is non-decreasing in `a`.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::maps::{MapError, MapFamily, MapInstance};
use crate::nest::renormalization_tower;
use crate::numerics::{Dd, Real};
use crate::stats::sym_tol;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KneadingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("attracting cycle looks neutral (multiplier {multiplier})")]
    NeutralSuspected { multiplier: f64 },
    #[error("both kneading sequences stop at a C symbol (position {position})")]
    TruncatedByC { position: usize },
    #[error("map failed the S-unimodal checks: {0}")]
    NotSUnimodal(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Symbol {
    L,
    C,
    R,
}

impl Symbol {
    fn rank(self) -> u8 {
        match self {
            Symbol::L => 0,
            Symbol::C => 1,
            Symbol::R => 2,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symbol::L => "L",
            Symbol::C => "C",
            Symbol::R => "R",
        })
    }
}

/// Itinerary of `f(0)`: `symbols[k-1]` is the side of `f^k(0)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KneadingSequence {
    pub symbols: Vec<Symbol>,
    pub depth: usize,
    /// `(start, period)` over 0-based indices into `symbols`.
    pub periodic_suffix: Option<(usize, usize)>,
    /// The sequence stopped at a `C`.
    pub truncated: bool,
}

impl KneadingSequence {
    /// Milnor–Thurston order over the common length.
    pub fn mt_cmp(&self, other: &KneadingSequence) -> Ordering {
        mt_cmp(&self.symbols, &other.symbols)
    }

    /// Number of leading symbols shared with `other`.
    pub fn agreement(&self, other: &KneadingSequence) -> usize {
        self.symbols.iter().zip(&other.symbols).take_while(|(a, b)| a == b).count()
    }
}

impl fmt::Display for KneadingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

pub fn mt_cmp(a: &[Symbol], b: &[Symbol]) -> Ordering {
    let mut odd = false;
    for (x, y) in a.iter().zip(b) {
        if x != y {
            let o = x.rank().cmp(&y.rank());
            return if odd { o.reverse() } else { o };
        }
        if *x == Symbol::C {
            return Ordering::Equal;
        }
        odd ^= *x == Symbol::R;
    }
    Ordering::Equal
}

fn periodic_suffix(s: &[Symbol]) -> Option<(usize, usize)> {
    let n = s.len();
    for p in 1..=n / 4 {
        // longest periodic tail with period p
        let mut start = n - p;
        while start > 0 && s[start - 1] == s[start - 1 + p] {
            start -= 1;
        }
        if n - start >= (n / 2).max(2 * p) {
            return Some((start, p));
        }
    }
    None
}

pub fn kneading_sequence(m: &MapInstance, depth: usize) -> KneadingSequence {
    let depth = depth.max(1);
    let tol = sym_tol(m);
    let mut symbols = Vec::with_capacity(depth);
    let mut x = 0.0f64;
    let mut truncated = false;
    for _ in 0..depth {
        x = m.value(x);
        let s = if x < -tol {
            Symbol::L
        } else if x > tol {
            Symbol::R
        } else {
            Symbol::C
        };
        symbols.push(s);
        if s == Symbol::C {
            truncated = true;
            break;
        }
    }
    let periodic_suffix = if truncated { None } else { periodic_suffix(&symbols) };
    KneadingSequence { symbols, depth, periodic_suffix, truncated }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularReport {
    pub period: usize,
    pub multiplier: f64,
    pub orbit: Vec<f64>,
    /// First iterate of the critical orbit inside the verified trapping neighbourhood.
    pub basin_witness: usize,
    pub trapping_radius: f64,
}

pub const CYCLE_TOL: f64 = 1e-10;
pub const MULT_TOL: f64 = 1e-6;

/// Newton on `f^p(x) - x`; returns the polished point, closure error and multiplier.
fn polish<R: Real>(m: &MapInstance, x0: f64, p: usize) -> (f64, f64, f64) {
    let mut x = R::from_f64(x0);
    for _ in 0..60 {
        let mut z = x;
        let mut d = R::one();
        for _ in 0..p {
            let (v, dv) = m.value_deriv(z);
            d = d * dv;
            z = v;
        }
        let g = z - x;
        let dg = d - R::one();
        if dg.to_f64() == 0.0 || g.to_f64() == 0.0 {
            break;
        }
        let step = g / dg;
        x = x - step;
        if step.abs().to_f64() <= R::eps() * x.abs().to_f64().max(1e-300) {
            break;
        }
    }
    let mut z = x;
    let mut d = R::one();
    for _ in 0..p {
        let (v, dv) = m.value_deriv(z);
        d = d * dv;
        z = v;
    }
    (x.to_f64(), (z - x).abs().to_f64(), d.to_f64())
}

/// Attracting cycle reached by the critical orbit, if one is found within budget.
pub fn detect_regular(m: &MapInstance, max_iter: usize, max_period: usize) -> Result<Option<RegularReport>, KneadingError> {
    if max_period == 0 || max_period > 1000 {
        return Err(KneadingError::InvalidArgument("max_period must lie in 1..=1000".into()));
    }
    let hw = m.half_width();
    let n = max_iter.max(2 * max_period + 2);
    let mut orbit = Vec::with_capacity(n + 1);
    let mut x = 0.0f64;
    orbit.push(x);
    for _ in 0..n {
        x = m.value(x);
        orbit.push(x);
    }
    let close = 1e-7 * hw;
    let Some(p) = (1..=max_period).find(|&p| (0..p).all(|i| (orbit[n - i] - orbit[n - i - p]).abs() <= close)) else {
        return Ok(None);
    };
    let (mut xs, mut closure, mut mu) = polish::<f64>(m, orbit[n], p);
    let scale = hw.max(1.0);
    if closure > CYCLE_TOL * scale / 10.0 || ((mu.abs() - 1.0).abs() < 10.0 * MULT_TOL) {
        (xs, closure, mu) = polish::<Dd>(m, orbit[n], p);
    }
    if closure > CYCLE_TOL * scale {
        return Ok(None);
    }
    if (mu.abs() - 1.0).abs() <= MULT_TOL {
        return Err(KneadingError::NeutralSuspected { multiplier: mu });
    }
    if mu.abs() > 1.0 {
        return Ok(None);
    }
    let mut cycle = Vec::with_capacity(p);
    let mut z = xs;
    for _ in 0..p {
        cycle.push(z);
        z = m.value(z);
    }
    // trapping neighbourhood of the cycle point xs for f^p
    let fp = |x: f64| m.iterate(x, p);
    let dfp = |x: f64| m.iterate_with_derivative(x, p).1.value().abs();
    let mut rho = 1e-2 * hw;
    let trapped = loop {
        let ok = (0..=20).all(|i| {
            let y = xs - rho + 2.0 * rho * i as f64 / 20.0;
            dfp(y) < 1.0 && (fp(y) - xs).abs() < rho
        });
        if ok {
            break true;
        }
        rho *= 0.5;
        if rho < 1e-12 * hw {
            break false;
        }
    };
    let basin_witness = if trapped {
        orbit.iter().position(|&y| (y - xs).abs() < rho).unwrap_or(n)
    } else {
        rho = 0.0;
        n
    };
    Ok(Some(RegularReport { period: p, multiplier: mu, orbit: cycle, basin_witness, trapping_radius: rho }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Renormalization {
    /// Total period of the restrictive interval.
    pub period: usize,
    pub half_width: f64,
    /// Periods of the successive renormalization steps.
    pub steps: Vec<usize>,
    pub max_period_exceeded: bool,
}

pub fn detect_renormalization(m: &MapInstance, max_period: usize) -> Option<Renormalization> {
    let (steps, t) = renormalization_tower::<f64>(m, max_period);
    if t.depth == 0 {
        return None;
    }
    Some(Renormalization {
        period: t.period,
        half_width: t.half_width,
        steps: steps.iter().map(|s| s.0).collect(),
        max_period_exceeded: t.max_period_exceeded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Conjugacy {
    AgreeToDepth,
    /// 1-based position of the first differing symbol.
    DisagreeAt(usize),
}

pub fn conjugacy_check(f: &MapInstance, g: &MapInstance, depth: usize) -> Result<Conjugacy, KneadingError> {
    for m in [f, g] {
        let r = m.verify_s_unimodal(2001);
        if !r.passed {
            return Err(KneadingError::NotSUnimodal(r.failed().join(", ")));
        }
    }
    let a = kneading_sequence(f, depth);
    let b = kneading_sequence(g, depth);
    for (k, (x, y)) in a.symbols.iter().zip(&b.symbols).enumerate() {
        if x != y {
            return Ok(Conjugacy::DisagreeAt(k + 1));
        }
        if *x == Symbol::C {
            return Err(KneadingError::TruncatedByC { position: k + 1 });
        }
    }
    Ok(Conjugacy::AgreeToDepth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Straightening {
    /// Parameter of `a - x²` in the hybrid class.
    pub a_star: f64,
    pub bracket: (f64, f64),
    /// Leading kneading symbols shared with `f`, capped at the requested depth.
    pub agreement_depth: usize,
    /// `f` is superattracting; `a_star` is the centre of its window.
    pub truncated_by_c: bool,
    /// Multiplier of `f`'s attracting cycle, when the multiplier was matched.
    pub multiplier: Option<f64>,
    pub period: Option<usize>,
}

/// Kneading depth used to decide bisection direction.
const COMPARE_DEPTH: usize = 200;

/// Bisection on `a ∈ [-1/4, 2]` in the kneading order. Ties between regular
/// maps are broken by period (kneading is blind to period doubling) and then
/// by multiplier, which decreases in `a` across a window.
pub fn straighten(f: &MapInstance, depth: usize, tol: f64) -> Result<Straightening, KneadingError> {
    if !(tol > 0.0) || depth == 0 {
        return Err(KneadingError::InvalidArgument("need tol > 0 and depth >= 1".into()));
    }
    let target = kneading_sequence(f, COMPARE_DEPTH.max(depth));
    let regular = detect_regular(f, 20_000, 1000).ok().flatten();
    let q = |a: f64| MapInstance::new(MapFamily::Quadratic, vec![a]);
    let (mut lo, mut hi) = (-0.25f64, 2.0f64);
    let mut matched = false;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let qm = q(mid)?;
        let k = kneading_sequence(&qm, target.symbols.len());
        let too_small = match k.mt_cmp(&target) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => {
                if k.truncated && target.truncated && k.symbols.len() == target.symbols.len() {
                    lo = mid;
                    hi = mid;
                    break;
                }
                let (Some(rf), Some(rq)) = (&regular, detect_regular(&qm, 20_000, 1000).ok().flatten()) else {
                    lo = mid;
                    hi = mid;
                    break;
                };
                if rq.period != rf.period {
                    // same itinerary across a period doubling
                    rq.period < rf.period
                } else {
                    matched = true;
                    rq.multiplier > rf.multiplier
                }
            }
        };
        if too_small {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a_star = 0.5 * (lo + hi);
    let ks = kneading_sequence(&q(a_star)?, depth);
    let kf = kneading_sequence(f, depth);
    Ok(Straightening {
        a_star,
        bracket: (lo, hi),
        agreement_depth: ks.agreement(&kf).min(depth),
        truncated_by_c: target.truncated,
        multiplier: if matched { regular.as_ref().map(|r| r.multiplier) } else { None },
        period: regular.as_ref().map(|r| r.period),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::t_from_a;

    fn raw(a: f64) -> MapInstance {
        MapFamily::Quadratic.instance(&[a]).unwrap()
    }

    fn nq(a: f64) -> MapInstance {
        MapFamily::NormalizedQuadratic.instance(&[t_from_a(a)]).unwrap()
    }

    #[test]
    fn basic_sequences() {
        let u = kneading_sequence(&nq(2.0), 40);
        assert_eq!(u.to_string(), format!("R{}", "L".repeat(39)));
        assert_eq!(u.periodic_suffix, Some((1, 1)));
        let k = kneading_sequence(&raw(1.0), 40);
        assert_eq!(k.to_string(), "RC");
        assert!(k.truncated);
        let z = kneading_sequence(&raw(0.0), 40);
        assert_eq!(z.to_string(), "C");
    }

    #[test]
    fn order_is_monotone_in_a() {
        let mut prev: Option<KneadingSequence> = None;
        for i in 0..=400 {
            let a = -0.25 + 2.25 * i as f64 / 400.0;
            let k = kneading_sequence(&raw(a), 60);
            if let Some(p) = &prev {
                if !p.truncated && !k.truncated {
                    assert_ne!(p.mt_cmp(&k), Ordering::Greater, "a = {a}");
                }
            }
            prev = Some(k);
        }
    }

    #[test]
    fn regular_cases() {
        let r = detect_regular(&raw(1.0), 1000, 16).unwrap().unwrap();
        assert_eq!(r.period, 2);
        assert!(r.multiplier.abs() < 1e-9);
        let r = detect_regular(&raw(0.0), 1000, 16).unwrap().unwrap();
        assert_eq!(r.period, 1);
        assert_eq!(r.multiplier, 0.0);
        assert_eq!(detect_regular(&nq(2.0), 1000, 16).unwrap(), None);
        let r = detect_regular(&raw(0.5), 2000, 16).unwrap().unwrap();
        let xs = (-1.0 + 3f64.sqrt()) / 2.0;
        assert!((r.multiplier + 2.0 * xs).abs() < 1e-12);
        assert!(r.basin_witness < 2000);
        assert!(detect_regular(&raw(0.5), 100, 1001).is_err());
    }

    #[test]
    fn renormalization_cases() {
        assert_eq!(detect_renormalization(&raw(1.0), 64).map(|r| r.period), Some(2));
        assert_eq!(detect_renormalization(&nq(2.0), 64), None);
        let r = detect_renormalization(&raw(1.38), 64).unwrap();
        assert_eq!(r.steps[..2], [2, 2]);
    }

    #[test]
    fn conjugacy_cases() {
        assert_eq!(conjugacy_check(&nq(2.0), &nq(2.0), 30), Ok(Conjugacy::AgreeToDepth));
        assert_eq!(conjugacy_check(&nq(2.0), &raw(1.0), 30), Ok(Conjugacy::DisagreeAt(2)));
        let p = MapFamily::PerturbedQuadratic.instance(&[2.0, 0.0]).unwrap();
        assert_eq!(conjugacy_check(&p, &nq(2.0), 30), Ok(Conjugacy::AgreeToDepth));
        assert_eq!(conjugacy_check(&raw(1.0), &raw(1.0), 30), Err(KneadingError::TruncatedByC { position: 2 }));
    }

    #[test]
    fn straighten_quadratics() {
        let s = straighten(&nq(2.0), 30, 1e-10).unwrap();
        assert!((s.a_star - 2.0).abs() < 1e-10);
        let p = MapFamily::PerturbedQuadratic.instance(&[1.8, 0.0]).unwrap();
        let s = straighten(&p, 30, 1e-10).unwrap();
        assert!((s.a_star - 1.8).abs() < 1e-9, "{}", s.a_star);
        assert!(s.agreement_depth >= 30);
        for a in [0.3, 1.0, 1.3, 1.72, 1.76, 1.9] {
            let s = straighten(&raw(a), 30, 1e-10).unwrap();
            assert!((s.a_star - a).abs() < 1e-9, "{a} -> {s:?}");
        }
    }

    #[test]
    fn straighten_matches_multiplier() {
        let p = MapFamily::PerturbedQuadratic.instance(&[0.5, 0.05]).unwrap();
        let rf = detect_regular(&p, 20_000, 100).unwrap().unwrap();
        let s = straighten(&p, 30, 1e-12).unwrap();
        let rq = detect_regular(&raw(s.a_star), 20_000, 100).unwrap().unwrap();
        assert_eq!(rq.period, rf.period);
        assert!((rq.multiplier - rf.multiplier).abs() < 1e-8);
    }
}
