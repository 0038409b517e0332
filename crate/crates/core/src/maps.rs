//! Even unimodal map families on a symmetric interval `[-β, β]`.
//!
//! Every built-in map is an even polynomial, stored as coefficients in
//! `u = x²` both in double and double-double form so the same instance can be
//! iterated under either backend.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Dd, LogProduct, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("x = {x} lies outside the domain [-{half_width}, {half_width}]")]
    OutOfDomain { x: f64, half_width: f64 },
    #[error("Schwarzian undefined at the critical point (x = {0:e})")]
    AtCriticalPoint(f64),
    #[error("critical orbit escaped the domain at step {step} (x = {x})")]
    EscapedDomain { step: usize, x: f64 },
    #[error("invalid parameters for {family}: {reason}")]
    InvalidParameters { family: String, reason: String },
    #[error("cannot parse family spec `{spec}`: {reason}")]
    BadSpec { spec: String, reason: String },
    #[error("direction vector must be nonzero with {expected} components")]
    BadDirection { expected: usize },
}

/// The map families understood by the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapFamily {
    /// `a - x²` on `[-β_a, β_a]`, parameter `a`.
    Quadratic,
    /// The affine rescaling of `a - x²` to `[-1, 1]`, parameter `t` with `a = 7/8 + 9t/8`.
    NormalizedQuadratic,
    /// Normalized quadratic plus `ε(1 - x²)²`, parameters `(a, ε)` with `a` raw.
    PerturbedQuadratic,
    /// `-1 + Σ c_k (1 - x²)^k` for `k = 1..=degree`, parameters `(c_1, …, c_degree)`.
    EvenPolynomial { degree: usize },
}

pub fn a_from_t(t: f64) -> f64 {
    7.0 / 8.0 + 9.0 / 8.0 * t
}

pub fn t_from_a(a: f64) -> f64 {
    (a - 7.0 / 8.0) * 8.0 / 9.0
}

/// Half-width `β_a = (1 + √(1 + 4a)) / 2` of the invariant interval of `a - x²`.
pub fn beta(a: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * a).sqrt()) / 2.0
}

fn beta_dd(a: f64) -> Dd {
    let s = Real::sqrt(Dd::from_f64(1.0) + Dd::from_f64(4.0) * Dd::from_f64(a));
    (Dd::ONE + s) * Dd::from_f64(0.5)
}

impl MapFamily {
    pub fn parameter_dim(&self) -> usize {
        match self {
            MapFamily::Quadratic | MapFamily::NormalizedQuadratic => 1,
            MapFamily::PerturbedQuadratic => 2,
            MapFamily::EvenPolynomial { degree } => *degree,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapFamily::Quadratic => "quadratic",
            MapFamily::NormalizedQuadratic => "nquadratic",
            MapFamily::PerturbedQuadratic => "pquadratic",
            MapFamily::EvenPolynomial { .. } => "evenpoly",
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            MapFamily::Quadratic => vec!["a".into()],
            MapFamily::NormalizedQuadratic => vec!["t".into()],
            MapFamily::PerturbedQuadratic => vec!["a".into(), "eps".into()],
            MapFamily::EvenPolynomial { degree } => (1..=*degree).map(|k| format!("c{k}")).collect(),
        }
    }

    /// The raw quadratic parameter, for families that have one.
    pub fn raw_a(&self, params: &[f64]) -> Option<f64> {
        match self {
            MapFamily::Quadratic | MapFamily::PerturbedQuadratic => params.first().copied(),
            MapFamily::NormalizedQuadratic => params.first().map(|&t| a_from_t(t)),
            MapFamily::EvenPolynomial { .. } => None,
        }
    }

    pub fn instance(&self, params: &[f64]) -> Result<MapInstance, MapError> {
        MapInstance::new(*self, params.to_vec())
    }

    /// Directional derivative `Σ dᵢ ∂f/∂pᵢ` at `x`, with `d` normalized to unit length.
    ///
    /// Exact for the quadratic families, central differences with step
    /// `ε^(1/3)` otherwise.
    pub fn velocity(&self, params: &[f64], direction: &[f64], x: f64) -> Result<f64, MapError> {
        let d = unit_direction(direction, self.parameter_dim())?;
        let m = self.instance(params)?;
        m.check_domain(x)?;
        let u = x * x;
        match self {
            MapFamily::Quadratic => Ok(d[0]),
            MapFamily::NormalizedQuadratic => {
                let a = a_from_t(params[0]);
                Ok(d[0] * 9.0 / 8.0 * dp_da(a, u))
            }
            _ => {
                let h = f64::EPSILON.cbrt();
                self.velocity_fd(params, &d, x, h)
            }
        }
    }

    /// Central-difference directional derivative with an explicit step.
    pub fn velocity_fd(&self, params: &[f64], d: &[f64], x: f64, h: f64) -> Result<f64, MapError> {
        let plus: Vec<f64> = params.iter().zip(d).map(|(p, di)| p + h * di).collect();
        let minus: Vec<f64> = params.iter().zip(d).map(|(p, di)| p - h * di).collect();
        let fp = MapInstance::unchecked(*self, plus).value(x);
        let fm = MapInstance::unchecked(*self, minus).value(x);
        Ok((fp - fm) / (2.0 * h))
    }
}

// ∂/∂a of a/β - βu at fixed u.
fn dp_da(a: f64, u: f64) -> f64 {
    let b = beta(a);
    let db = 1.0 / (2.0 * b - 1.0);
    1.0 / b - a * db / (b * b) - db * u
}

pub fn unit_direction(direction: &[f64], dim: usize) -> Result<Vec<f64>, MapError> {
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if direction.len() != dim || !(norm > 0.0) || !norm.is_finite() {
        return Err(MapError::BadDirection { expected: dim });
    }
    Ok(direction.iter().map(|d| d / norm).collect())
}

pub fn family_velocity(fam: MapFamily, params: &[f64], direction: &[f64], x: f64) -> Result<f64, MapError> {
    fam.velocity(params, direction, x)
}

impl fmt::Display for MapFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A family together with concrete parameter values, e.g. `pquadratic:a=1.8,eps=0.05`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: MapFamily,
    pub params: Vec<f64>,
}

impl FamilySpec {
    pub fn instance(&self) -> Result<MapInstance, MapError> {
        self.family.instance(&self.params)
    }

    /// Parses a bare family name such as `pquadratic` (no parameters).
    pub fn parse_family(name: &str) -> Result<MapFamily, MapError> {
        let bad = |reason: &str| MapError::BadSpec { spec: name.to_string(), reason: reason.into() };
        let name = name.trim();
        match name {
            "quadratic" => Ok(MapFamily::Quadratic),
            "nquadratic" => Ok(MapFamily::NormalizedQuadratic),
            "pquadratic" => Ok(MapFamily::PerturbedQuadratic),
            _ => {
                if let Some(d) = name.strip_prefix("evenpoly") {
                    let degree = d.trim_start_matches('/').parse::<usize>().map_err(|_| bad("use evenpoly/<degree>"))?;
                    if degree == 0 {
                        return Err(bad("degree must be positive"));
                    }
                    Ok(MapFamily::EvenPolynomial { degree })
                } else {
                    Err(bad("unknown family"))
                }
            }
        }
    }
}

impl FromStr for FamilySpec {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, MapError> {
        let bad = |reason: String| MapError::BadSpec { spec: s.to_string(), reason };
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let pairs: Vec<(String, f64)> = rest
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let (k, v) = p.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{p}`")))?;
                let v = v.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{v}`")))?;
                Ok((k.trim().to_string(), v))
            })
            .collect::<Result<_, MapError>>()?;
        let family =
            if name.trim() == "evenpoly" { MapFamily::EvenPolynomial { degree: pairs.len() } } else { FamilySpec::parse_family(name)? };
        let names = family.param_names();
        let mut params = vec![f64::NAN; names.len()];
        for (k, v) in pairs {
            let (key, v) = match (family, k.as_str()) {
                (MapFamily::NormalizedQuadratic, "a") => ("t".to_string(), t_from_a(v)),
                (MapFamily::PerturbedQuadratic, "e" | "epsilon" | "ε") => ("eps".to_string(), v),
                _ => (k, v),
            };
            let i = names.iter().position(|n| *n == key).ok_or_else(|| bad(format!("unknown parameter `{key}`")))?;
            params[i] = v;
        }
        if let MapFamily::PerturbedQuadratic = family {
            if params[1].is_nan() {
                params[1] = 0.0;
            }
        }
        if let Some(i) = params.iter().position(|p| p.is_nan()) {
            return Err(bad(format!("missing parameter `{}`", names[i])));
        }
        Ok(FamilySpec { family, params })
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.family.name())?;
        for (i, (n, v)) in self.family.param_names().iter().zip(&self.params).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

/// A single even map `f(x) = Σ b_k x^(2k)` on `[-half_width, half_width]`.
#[derive(Debug, Clone)]
pub struct MapInstance {
    pub family: MapFamily,
    pub params: Vec<f64>,
    half_width: f64,
    half_width_dd: Dd,
    coeffs: Vec<f64>,
    coeffs_dd: Vec<Dd>,
}

/// `(f, Df, D²f, D³f)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl MapInstance {
    pub fn new(family: MapFamily, params: Vec<f64>) -> Result<Self, MapError> {
        let invalid = |reason: String| MapError::InvalidParameters { family: family.name().into(), reason };
        if params.len() != family.parameter_dim() {
            return Err(invalid(format!("expected {} parameters, got {}", family.parameter_dim(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite".into()));
        }
        match family {
            MapFamily::Quadratic | MapFamily::PerturbedQuadratic => {
                if !(-0.25..=2.0).contains(&params[0]) {
                    return Err(invalid(format!("a = {} outside [-1/4, 2]", params[0])));
                }
            }
            MapFamily::NormalizedQuadratic => {
                if !(-1.0..=1.0).contains(&params[0]) {
                    return Err(invalid(format!("t = {} outside [-1, 1]", params[0])));
                }
            }
            MapFamily::EvenPolynomial { .. } => {}
        }
        Ok(Self::unchecked(family, params))
    }

    /// Builds the coefficient tables without range checks (used for finite differences).
    pub(crate) fn unchecked(family: MapFamily, params: Vec<f64>) -> Self {
        let (coeffs_dd, half_width_dd) = match family {
            MapFamily::Quadratic => {
                let a = params[0];
                (vec![Dd::from_f64(a), Dd::from_f64(-1.0)], beta_dd(a))
            }
            MapFamily::NormalizedQuadratic | MapFamily::PerturbedQuadratic => {
                let a = if family == MapFamily::NormalizedQuadratic { a_from_t(params[0]) } else { params[0] };
                let b = beta_dd(a);
                let mut c = vec![Dd::from_f64(a) / b, -b];
                if family == MapFamily::PerturbedQuadratic {
                    let e = Dd::from_f64(params[1]);
                    c[0] += e;
                    c[1] -= Dd::from_f64(2.0) * e;
                    c.push(e);
                }
                (c, Dd::ONE)
            }
            MapFamily::EvenPolynomial { degree } => {
                // -1 + Σ c_k (1-u)^k expanded in powers of u
                let mut c = vec![Dd::ZERO; degree + 1];
                c[0] = Dd::from_f64(-1.0);
                for (k, &ck) in params.iter().enumerate() {
                    let k = k + 1;
                    let mut binom = 1.0f64;
                    for j in 0..=k {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        c[j] += Dd::from_f64(ck * sign * binom);
                        binom = binom * (k - j) as f64 / (j + 1) as f64;
                    }
                }
                (c, Dd::ONE)
            }
        };
        let coeffs = coeffs_dd.iter().map(|c| c.to_f64()).collect();
        MapInstance { family, params, half_width: half_width_dd.to_f64(), half_width_dd, coeffs, coeffs_dd }
    }

    pub fn spec(&self) -> FamilySpec {
        FamilySpec { family: self.family, params: self.params.clone() }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn half_width_r<R: Real>(&self) -> R {
        let f = [self.half_width];
        let d = [self.half_width_dd];
        R::select(&f, &d)[0]
    }

    /// Coefficients of `f` as a polynomial in `u = x²`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn raw_a(&self) -> Option<f64> {
        self.family.raw_a(&self.params)
    }

    pub fn check_domain(&self, x: f64) -> Result<(), MapError> {
        if !(x.abs() <= self.half_width * (1.0 + 10.0 * f64::EPSILON)) {
            return Err(MapError::OutOfDomain { x, half_width: self.half_width });
        }
        Ok(())
    }

    #[inline]
    pub fn value<R: Real>(&self, x: R) -> R {
        let c = R::select(&self.coeffs, &self.coeffs_dd);
        let u = x * x;
        let mut p = c[c.len() - 1];
        for &ck in c[..c.len() - 1].iter().rev() {
            p = p * u + ck;
        }
        p
    }

    #[inline]
    pub fn deriv<R: Real>(&self, x: R) -> R {
        self.value_deriv(x).1
    }

    /// `(f(x), Df(x))` in one pass.
    #[inline]
    pub fn value_deriv<R: Real>(&self, x: R) -> (R, R) {
        let c = R::select(&self.coeffs, &self.coeffs_dd);
        let u = x * x;
        let mut p = c[c.len() - 1];
        let mut dp = R::zero();
        for &ck in c[..c.len() - 1].iter().rev() {
            dp = dp * u + p;
            p = p * u + ck;
        }
        (p, (x + x) * dp)
    }

    /// `f^n(x)`.
    pub fn iterate<R: Real>(&self, mut x: R, n: usize) -> R {
        for _ in 0..n {
            x = self.value(x);
        }
        x
    }

    /// `(f^n(x), Df^n(x))` with the derivative as a [`LogProduct`].
    pub fn iterate_with_derivative<R: Real>(&self, mut x: R, n: usize) -> (R, LogProduct) {
        let mut lp = LogProduct::ONE;
        for _ in 0..n {
            let (v, d) = self.value_deriv(x);
            lp.mul(d);
            x = v;
        }
        (x, lp)
    }

    /// Closed-form jet from the `u`-polynomial.
    pub fn evaluate_jet(&self, x: f64) -> Result<Jet, MapError> {
        self.check_domain(x)?;
        Ok(self.jet_unchecked(x))
    }

    fn jet_unchecked(&self, x: f64) -> Jet {
        let u = x * x;
        let (mut p, mut p1, mut p2, mut p3) = (0.0, 0.0, 0.0, 0.0);
        for (k, &b) in self.coeffs.iter().enumerate() {
            let k = k as i32;
            p += b * u.powi(k);
            if k >= 1 {
                p1 += b * k as f64 * u.powi(k - 1);
            }
            if k >= 2 {
                p2 += b * (k * (k - 1)) as f64 * u.powi(k - 2);
            }
            if k >= 3 {
                p3 += b * (k * (k - 1) * (k - 2)) as f64 * u.powi(k - 3);
            }
        }
        Jet { value: p, d1: 2.0 * x * p1, d2: 2.0 * p1 + 4.0 * u * p2, d3: 12.0 * x * p2 + 8.0 * x * u * p3 }
    }

    /// `Sf = D³f/Df - (3/2)(D²f/Df)²`.
    pub fn schwarzian(&self, x: f64) -> Result<f64, MapError> {
        if x.abs() < 1e-8 * self.half_width {
            return Err(MapError::AtCriticalPoint(x));
        }
        let j = self.evaluate_jet(x)?;
        let r = j.d2 / j.d1;
        Ok(j.d3 / j.d1 - 1.5 * r * r)
    }

    /// Critical orbit `0, f(0), …, f^N(0)` with `Df^k(f(0))` for `k < N`.
    pub fn iterate_critical_orbit(&self, n: usize) -> Result<OrbitSegment, MapError> {
        self.iterate_critical_orbit_r::<f64>(n)
    }

    pub fn iterate_critical_orbit_r<R: Real>(&self, n: usize) -> Result<OrbitSegment, MapError> {
        let n = n.max(1);
        let limit = self.half_width * (1.0 + 10.0 * R::eps());
        let mut points = Vec::with_capacity(n + 1);
        let mut log_derivatives = Vec::with_capacity(n);
        let mut x = R::zero();
        points.push(0.0);
        let mut lp = LogProduct::ONE;
        for step in 1..=n {
            let (v, d) = self.value_deriv(x);
            if step >= 2 {
                lp.mul(d);
            }
            log_derivatives.push(lp);
            x = v;
            let xf = x.to_f64();
            if !(xf.abs() <= limit) {
                return Err(MapError::EscapedDomain { step, x: xf });
            }
            points.push(xf);
        }
        Ok(OrbitSegment { points, log_derivatives })
    }

    /// Grid checks of the S-unimodal axioms.
    pub fn verify_s_unimodal(&self, grid_size: usize) -> SUnimodalReport {
        let grid_size = grid_size.max(100);
        let hw = self.half_width;
        let eps = f64::EPSILON;
        let scale = self.coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1.0);
        let tol = 10.0 * eps * scale;
        let xs: Vec<f64> = (0..grid_size).map(|i| -hw + 2.0 * hw * i as f64 / (grid_size - 1) as f64).collect();
        let mut checks = Vec::new();

        let worst_even = xs.iter().map(|&x| (self.value(-x) - self.value(x)).abs()).fold(0.0, f64::max);
        checks.push(Check::new("evenness", worst_even <= tol, format!("max |f(-x)-f(x)| = {worst_even:e}")));

        let fl = self.value(-hw);
        let fr = self.value(hw);
        let ok = (fl + hw).abs() <= tol * hw.max(1.0) && (fr + hw).abs() <= tol * hw.max(1.0);
        checks.push(Check::new("boundary", ok, format!("f(-β) = {fl}, f(β) = {fr}")));

        let dl = self.deriv(-hw);
        checks.push(Check::new("boundary_expansion", dl >= 1.0 - tol, format!("Df(-β) = {dl}")));

        let worst_out = xs.iter().map(|&x| self.value(x).abs() - hw).fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new("invariance", worst_out <= tol * hw.max(1.0), format!("max |f(x)| - β = {worst_out:e}")));

        let bad: Vec<f64> = xs
            .iter()
            .copied()
            .filter(|&x| x != 0.0)
            .filter(|&x| {
                let d = self.deriv(x);
                !(d * x < 0.0)
            })
            .collect();
        checks.push(Check::new(
            "unimodality",
            bad.is_empty(),
            match bad.first() {
                Some(x) => format!("{} grid points with wrong Df sign, first at x = {x}", bad.len()),
                None => "Df changes sign only at 0".into(),
            },
        ));

        let j0 = self.jet_unchecked(0.0);
        checks.push(Check::new(
            "nondegenerate_critical_point",
            j0.d1 == 0.0 && j0.d2.abs() > tol,
            format!("Df(0) = {}, D²f(0) = {}", j0.d1, j0.d2),
        ));

        let hole = 0.01 * hw;
        let worst_s = xs
            .iter()
            .filter(|x| x.abs() >= hole)
            .map(|&x| {
                let j = self.jet_unchecked(x);
                if j.d1 == 0.0 {
                    f64::INFINITY
                } else {
                    let r = j.d2 / j.d1;
                    j.d3 / j.d1 - 1.5 * r * r
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new("negative_schwarzian", worst_s < 0.0, format!("max Sf = {worst_s:e}")));

        let passed = checks.iter().all(|c| c.passed);
        SUnimodalReport { checks, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SUnimodalReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl SUnimodalReport {
    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Critical orbit points with derivative products along them.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegment {
    /// `f^k(0)` for `k = 0..=N`.
    pub points: Vec<f64>,
    /// `Df^k(f(0))` for `k = 0..N`.
    pub log_derivatives: Vec<LogProduct>,
}
