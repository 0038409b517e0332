//! Precision selection, a double-double real type, overflow-safe log products
//! and bracketing bisection.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted by [`Precision::from_env`].
pub const BITS_ENV: &str = "NESTLAB_BITS";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("bracket [{lo}, {hi}] does not certify a sign change")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("tolerance {tol:e} is not reachable at the working precision")]
    MaxIterations { tol: f64 },
    #[error("unsupported precision: {0} mantissa bits (supported range 53..=106)")]
    UnsupportedPrecision(u32),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

/// Arithmetic backend selected by a [`Precision`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    F64,
    DoubleDouble,
}

/// Working precision, expressed as a number of mantissa bits.
///
/// 53 bits runs on hardware doubles. Anything up to 106 bits runs on
/// [`Dd`]; results are rounded back to the requested width where endpoints
/// are stored, so the nominal precision is honoured even when the backend
/// carries more.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Precision {
    mantissa_bits: u32,
}

impl Default for Precision {
    fn default() -> Self {
        Self::DOUBLE
    }
}

impl Precision {
    pub const DOUBLE: Precision = Precision { mantissa_bits: 53 };
    pub const DOUBLE_DOUBLE: Precision = Precision { mantissa_bits: 106 };

    pub fn new(mantissa_bits: u32) -> Result<Self, NumericsError> {
        if (53..=106).contains(&mantissa_bits) {
            Ok(Self { mantissa_bits })
        } else {
            Err(NumericsError::UnsupportedPrecision(mantissa_bits))
        }
    }

    /// Reads [`BITS_ENV`], falling back to 53 bits when unset.
    pub fn from_env() -> Result<Self, NumericsError> {
        match std::env::var(BITS_ENV) {
            Ok(s) => {
                let bits = s.trim().parse::<u32>().map_err(|_| NumericsError::UnsupportedPrecision(0))?;
                Self::new(bits)
            }
            Err(_) => Ok(Self::DOUBLE),
        }
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    /// Unit roundoff `2^(1 - mantissa_bits)`.
    pub fn epsilon(&self) -> f64 {
        2f64.powi(1 - self.mantissa_bits as i32)
    }

    pub fn backend(&self) -> Backend {
        if self.mantissa_bits <= 53 {
            Backend::F64
        } else {
            Backend::DoubleDouble
        }
    }

    /// The same precision with twice the mantissa, capped at the widest backend.
    pub fn doubled(&self) -> Precision {
        Precision { mantissa_bits: (2 * self.mantissa_bits).min(106) }
    }

    /// Rounds `x` to this precision.
    pub fn round<R: Real>(&self, x: R) -> R {
        x.round_to_bits(self.mantissa_bits)
    }
}

/// Real scalar used by the generic map and nest code.
pub trait Real:
    Copy
    + fmt::Debug
    + fmt::Display
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// Mantissa bits carried by the type.
    const BITS: u32;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    /// `ln |x|`, returned in double precision.
    fn ln_abs(self) -> f64;
    /// Picks the coefficient table stored for this type.
    fn select<'a>(f: &'a [f64], dd: &'a [Dd]) -> &'a [Self];
    fn round_to_bits(self, bits: u32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn eps() -> f64 {
        2f64.powi(1 - Self::BITS as i32)
    }
    fn signum_i8(self) -> i8 {
        let z = Self::zero();
        if self > z {
            1
        } else if self < z {
            -1
        } else {
            0
        }
    }
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
    fn midpoint(a: Self, b: Self) -> Self {
        a + (b - a).scale(0.5)
    }
    fn max_r(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
    fn min_r(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    const BITS: u32 = 53;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln_abs(self) -> f64 {
        f64::abs(self).ln()
    }
    fn select<'a>(f: &'a [f64], _dd: &'a [Dd]) -> &'a [Self] {
        f
    }
    fn round_to_bits(self, _bits: u32) -> Self {
        self
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`, giving 106 mantissa bits.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.hi.is_finite()
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&(self.hi + self.lo), f)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + (-y)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, y.hi);
        let e = e + (self.hi * y.lo + self.lo * y.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::from_f64(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::from_f64(q2);
        let q3 = r.hi / y.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, y: Dd) {
        *self = *self + y;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, y: Dd) {
        *self = *self - y;
    }
}

impl MulAssign for Dd {
    fn mul_assign(&mut self, y: Dd) {
        *self = *self * y;
    }
}

impl Real for Dd {
    const BITS: u32 = 106;

    fn from_f64(x: f64) -> Self {
        Dd::from_f64(x)
    }
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let sd = Dd::from_f64(s);
        let corr = (self - sd * sd) / Dd::from_f64(2.0 * s);
        sd + corr
    }
    fn ln_abs(self) -> f64 {
        let a = Real::abs(self);
        if a.hi == 0.0 {
            return f64::NEG_INFINITY;
        }
        a.hi.ln() + a.lo / a.hi
    }
    fn select<'a>(_f: &'a [f64], dd: &'a [Dd]) -> &'a [Self] {
        dd
    }
    fn round_to_bits(self, bits: u32) -> Self {
        if bits >= 106 || self.lo == 0.0 || !self.hi.is_finite() || self.hi == 0.0 {
            return self;
        }
        if bits <= 53 {
            return Dd::from_f64(self.hi + self.lo);
        }
        // ulp of the requested width, measured against the leading limb
        let exp = self.hi.abs().log2().floor() as i32;
        let ulp = 2f64.powi(exp - (bits as i32 - 1));
        let lo = (self.lo / ulp).round() * ulp;
        Dd::new(self.hi, lo)
    }
}

/// A sign change of some function across `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket<R> {
    pub lo: R,
    pub hi: R,
    pub f_lo_sign: i8,
    pub f_hi_sign: i8,
}

impl<R: Real> Bracket<R> {
    /// Evaluates `g` at both ends and certifies the sign change.
    pub fn new<G: FnMut(R) -> R>(mut g: G, lo: R, hi: R) -> Result<Self, NumericsError> {
        let b = Bracket { lo, hi, f_lo_sign: g(lo).signum_i8(), f_hi_sign: g(hi).signum_i8() };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.lo < self.hi) || self.f_lo_sign == self.f_hi_sign {
            return Err(NumericsError::NoSignChange { lo: self.lo.to_f64(), hi: self.hi.to_f64() });
        }
        Ok(())
    }

    pub fn width(&self) -> R {
        self.hi - self.lo
    }
}

/// Output of [`bisect_root`]: the point estimate and the final bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<R> {
    pub x: R,
    pub bracket: Bracket<R>,
}

/// Bisection on a certified bracket until its width is at most `tol`.
///
/// An exact zero at the midpoint ends the search with a degenerate bracket
/// `[x, x]`. Running out of representable midpoints before reaching `tol`
/// is reported as [`NumericsError::MaxIterations`].
pub fn bisect_root<R: Real, G: FnMut(R) -> R>(mut g: G, b: Bracket<R>, tol: R) -> Result<Root<R>, NumericsError> {
    b.validate()?;
    if !(tol > R::zero()) {
        return Err(NumericsError::InvalidTolerance(tol.to_f64()));
    }
    let mut b = b;
    if b.f_lo_sign == 0 {
        return Ok(Root { x: b.lo, bracket: Bracket { hi: b.lo, ..b } });
    }
    if b.f_hi_sign == 0 {
        return Ok(Root { x: b.hi, bracket: Bracket { lo: b.hi, ..b } });
    }
    while b.width() > tol {
        let mid = R::midpoint(b.lo, b.hi);
        if !(mid > b.lo && mid < b.hi) {
            return Err(NumericsError::MaxIterations { tol: tol.to_f64() });
        }
        let s = g(mid).signum_i8();
        if s == 0 {
            return Ok(Root { x: mid, bracket: Bracket { lo: mid, hi: mid, f_lo_sign: 0, f_hi_sign: 0 } });
        }
        if s == b.f_lo_sign {
            b.lo = mid;
        } else {
            b.hi = mid;
        }
    }
    Ok(Root { x: R::midpoint(b.lo, b.hi), bracket: b })
}

/// Bisection on a predicate: `inside` satisfies `pred`, `outside` does not.
///
/// Returns the final `(inside, outside)` pair once they are within `tol` of
/// each other or adjacent at the working precision.
pub fn bisect_predicate<R: Real, P: FnMut(R) -> bool>(mut pred: P, mut inside: R, mut outside: R, tol: R) -> (R, R) {
    for _ in 0..2200 {
        if (outside - inside).abs() <= tol {
            break;
        }
        let mid = R::midpoint(inside, outside);
        if mid == inside || mid == outside {
            break;
        }
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    (inside, outside)
}

/// Golden-section search for the minimum of a unimodal function on `[a, b]`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut it = 0;
    while (b - a).abs() > tol && it < 200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        it += 1;
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Product of real factors kept as `sign · exp(log_abs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProduct {
    pub log_abs: f64,
    pub sign: i8,
    pub term_count: usize,
}

impl Default for LogProduct {
    fn default() -> Self {
        Self::ONE
    }
}

impl LogProduct {
    pub const ONE: LogProduct = LogProduct { log_abs: 0.0, sign: 1, term_count: 0 };

    pub fn mul<R: Real>(&mut self, x: R) {
        self.term_count += 1;
        if self.sign == 0 {
            return;
        }
        let s = x.signum_i8();
        if s == 0 {
            self.sign = 0;
            self.log_abs = f64::NEG_INFINITY;
        } else {
            self.sign *= s;
            self.log_abs += x.ln_abs();
        }
    }

    pub fn times<R: Real>(mut self, x: R) -> Self {
        self.mul(x);
        self
    }

    /// Product of two accumulated products.
    pub fn combine(&self, other: &LogProduct) -> LogProduct {
        if self.sign == 0 || other.sign == 0 {
            return LogProduct { log_abs: f64::NEG_INFINITY, sign: 0, term_count: self.term_count + other.term_count };
        }
        LogProduct { log_abs: self.log_abs + other.log_abs, sign: self.sign * other.sign, term_count: self.term_count + other.term_count }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    /// The product as a double; overflows to ±inf for huge products.
    pub fn value(&self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * self.log_abs.exp()
        }
    }
}

pub fn accumulate_log_derivative<R: Real, I: IntoIterator<Item = R>>(factors: I) -> LogProduct {
    let mut p = LogProduct::ONE;
    for x in factors {
        p.mul(x);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_two_by_bisection() {
        let g = |x: f64| x * x - 2.0;
        let r = bisect_root(g, Bracket::new(g, 1.0, 2.0).unwrap(), 1e-12).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() <= 1e-12);
        assert!(r.bracket.width() <= 1e-12);
        assert_ne!(g(r.bracket.lo).signum(), g(r.bracket.hi).signum());
    }

    #[test]
    fn ulam_reversing_fixed_point() {
        let g = |x: f64| 2.0 * x * x + x - 1.0;
        let r = bisect_root(g, Bracket::new(g, 0.0, 1.0).unwrap(), 1e-14).unwrap();
        assert!((r.x - 0.5).abs() <= 1e-14);
    }

    #[test]
    fn identity_root_is_exact() {
        let g = |x: f64| x;
        let r = bisect_root(g, Bracket::new(g, -1.0, 1.0).unwrap(), 1e-12).unwrap();
        assert_eq!(r.x, 0.0);
    }

    #[test]
    fn rejects_bad_brackets() {
        let g = |x: f64| x * x + 1.0;
        assert!(matches!(Bracket::new(g, -1.0, 1.0), Err(NumericsError::NoSignChange { .. })));
        let g = |x: f64| x * x - 2.0;
        let b = Bracket::new(g, 1.0, 2.0).unwrap();
        assert!(matches!(bisect_root(g, b, 1e-30), Err(NumericsError::MaxIterations { .. })));
        assert!(bisect_root(g, b, 0.0).is_err());
    }

    #[test]
    fn dd_bisection_beats_double() {
        let g = |x: Dd| x * x - Dd::from_f64(2.0);
        let b = Bracket::new(g, Dd::from_f64(1.0), Dd::from_f64(2.0)).unwrap();
        let r = bisect_root(g, b, Dd::from_f64(1e-30)).unwrap();
        let resid = r.x * r.x - Dd::from_f64(2.0);
        assert!(resid.to_f64().abs() < 1e-29);
    }

    #[test]
    fn log_products() {
        let p = accumulate_log_derivative([-4.0, 4.0, 4.0]);
        assert!((p.log_abs - 3.0 * 4f64.ln()).abs() < 1e-15);
        assert_eq!(p.sign, -1);
        assert_eq!(p.term_count, 3);
        let e = accumulate_log_derivative(Vec::<f64>::new());
        assert_eq!((e.log_abs, e.sign), (0.0, 1));
        let z = accumulate_log_derivative([2.0, 0.0, 5.0]);
        assert_eq!(z.sign, 0);
        assert_eq!(z.log_abs, f64::NEG_INFINITY);
    }

    #[test]
    fn dd_arithmetic() {
        let third = Dd::ONE / Dd::from_f64(3.0);
        let back = third * Dd::from_f64(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        let s = Real::sqrt(Dd::from_f64(2.0));
        assert!((s * s - Dd::from_f64(2.0)).to_f64().abs() < 1e-31);
        assert!(Dd::new(1.0, 1e-20) > Dd::ONE);
        assert!((Dd::from_f64(-3.0)).abs() == Dd::from_f64(3.0));
    }

    #[test]
    fn precision_rules() {
        assert_eq!(Precision::default().epsilon(), f64::EPSILON);
        assert_eq!(Precision::new(106).unwrap().backend(), Backend::DoubleDouble);
        assert!(Precision::new(52).is_err());
        assert!(Precision::new(200).is_err());
        let p = Precision::new(80).unwrap();
        let x = Dd::ONE / Dd::from_f64(3.0);
        let r = p.round(x);
        assert!((r - x).to_f64().abs() <= 2f64.powi(-80));
        assert_eq!(p.round(r), r);
    }

    #[test]
    fn golden_section() {
        let (x, fx) = golden_min(|x| (x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx - 1.0).abs() < 1e-12);
    }
}
