//! Precision contract and root finding shared by all other modules.
//!
//! Every quantity in the crate is a [`Real`]: an extended-precision float
//! with an explicit precision in bits. Arithmetic is correctly rounded at
//! the working precision (so within 1 ulp, including `exp`, `ln` and `pow`),
//! comparisons are exact on the stored representation, and identical inputs
//! at identical precision reproduce identical bit patterns.
//!
//! There is no global rounding state: the precision travels with each value,
//! and cancellation-sensitive steps take an explicit [`PrecisionContext`].
//! When a subtraction loses essentially all significant bits the operation
//! fails with [`Error::PrecisionExhausted`]; drivers such as
//! [`crate::renorm::run_trajectory`] respond by restarting the whole
//! computation at doubled precision, up to the context's ceiling.

use std::cmp::Ordering;
use std::fmt;

use rug::float::Round;
use rug::ops::Pow;
use rug::Float;

use crate::error::{Error, Result};

/// Minimum working precision, in bits.
pub const MIN_BITS: u32 = 64;

/// Extended-precision real number with explicit precision.
#[derive(Clone, PartialEq)]
pub struct Real(Float);

impl Real {
    fn from_float(f: Float) -> Real {
        debug_assert!(f.prec() >= MIN_BITS);
        Real(f)
    }

    pub fn zero(bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), 0))
    }

    pub fn one(bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), 1))
    }

    pub fn from_u64(v: u64, bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), v))
    }

    pub fn from_i64(v: i64, bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), v))
    }

    pub fn from_f64(v: f64, bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), v))
    }

    /// Exact ratio of two integers, rounded once at the target precision.
    pub fn from_ratio(num: i64, den: i64, bits: u32) -> Real {
        let bits = bits.max(MIN_BITS);
        let n = Float::with_val(bits, num);
        Real::from_float(Float::with_val(bits, n / den))
    }

    /// Parse a decimal literal at the given precision.
    pub fn parse(s: &str, bits: u32) -> Result<Real> {
        let bits = bits.max(MIN_BITS);
        let incomplete = Float::parse(s).map_err(|e| Error::Domain(format!("parse {s:?}: {e}")))?;
        Ok(Real::from_float(Float::with_val(bits, incomplete)))
    }

    /// Parse the hexadecimal form produced by [`Real::to_hex`].
    pub fn parse_hex(s: &str, bits: u32) -> Result<Real> {
        let bits = bits.max(MIN_BITS);
        let incomplete = Float::parse_radix(s, 16)
            .map_err(|e| Error::Domain(format!("parse hex {s:?}: {e}")))?;
        Ok(Real::from_float(Float::with_val(bits, incomplete)))
    }

    /// `2^exp` exactly.
    pub fn two_pow(exp: i32, bits: u32) -> Real {
        let mut f = Float::with_val(bits.max(MIN_BITS), 1);
        f <<= exp;
        Real::from_float(f)
    }

    pub fn precision_bits(&self) -> u32 {
        self.0.prec()
    }

    /// Re-round to a new precision. Increasing the precision is exact.
    pub fn with_precision(&self, bits: u32) -> Real {
        Real::from_float(Float::with_val(bits.max(MIN_BITS), &self.0))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_sign_positive() && !self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_sign_negative() && !self.0.is_zero()
    }

    pub fn abs(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), self.0.abs_ref()))
    }

    pub fn neg(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), -&self.0))
    }

    pub fn sqrt(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), self.0.sqrt_ref()))
    }

    pub fn exp(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), self.0.exp_ref()))
    }

    pub fn ln(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), self.0.ln_ref()))
    }

    pub fn recip(&self) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), self.0.recip_ref()))
    }

    pub fn pow(&self, exponent: &Real) -> Real {
        let prec = self.0.prec().max(exponent.0.prec());
        Real::from_float(Float::with_val(prec, (&self.0).pow(&exponent.0)))
    }

    pub fn powi(&self, exponent: i32) -> Real {
        Real::from_float(Float::with_val(self.0.prec(), (&self.0).pow(exponent)))
    }

    pub fn max(&self, other: &Real) -> Real {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn min(&self, other: &Real) -> Real {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// Subtraction with catastrophic-cancellation detection: fails when the
    /// result has lost all but `guard_bits` significant bits relative to the
    /// operands.
    pub fn sub_guarded(&self, rhs: &Real, ctx: &PrecisionContext) -> Result<Real> {
        let out = self - rhs;
        let scale = self.abs().max(&rhs.abs());
        if !scale.is_zero() {
            let floor = &scale * &ctx.cancellation_floor();
            if out.abs() < floor {
                return Err(Error::PrecisionExhausted {
                    bits: ctx.bits,
                    context: "subtraction cancelled below the guard threshold",
                });
            }
        }
        Ok(out)
    }

    /// Decimal string with the given number of significant digits.
    pub fn to_decimal(&self, digits: usize) -> String {
        let digits = digits.max(2);
        let (sign, mantissa, exp) = self.sign_mantissa_exp(10, Some(digits));
        format_scientific(sign, &mantissa, exp)
    }

    /// Full-precision hexadecimal string; round-trips exactly through
    /// [`Real::parse_hex`] at the same or higher precision.
    pub fn to_hex(&self) -> String {
        let (sign, mantissa, exp) = self.sign_mantissa_exp(16, None);
        format_radix_exp(sign, &mantissa, exp, "@")
    }

    fn sign_mantissa_exp(&self, radix: i32, digits: Option<usize>) -> (bool, String, Option<i32>) {
        let (neg, mantissa, exp) = self.0.to_sign_string_exp_round(radix, digits, Round::Nearest);
        (neg, mantissa, exp)
    }
}

fn format_scientific(neg: bool, mantissa: &str, exp: Option<i32>) -> String {
    // mantissa is a bare digit string; exponent counts digits before the point
    let sign = if neg { "-" } else { "" };
    if mantissa.chars().all(|c| c == '0') || mantissa == "@NaN@" || mantissa == "@Inf@" {
        if mantissa.starts_with('@') {
            return format!("{sign}{mantissa}");
        }
        return format!("{sign}0");
    }
    let e = exp.unwrap_or(0);
    let first = &mantissa[..1];
    let rest = mantissa[1..].trim_end_matches('0');
    let dec_exp = e - 1;
    if rest.is_empty() {
        format!("{sign}{first}e{dec_exp}")
    } else {
        format!("{sign}{first}.{rest}e{dec_exp}")
    }
}

fn format_radix_exp(neg: bool, mantissa: &str, exp: Option<i32>, sep: &str) -> String {
    let sign = if neg { "-" } else { "" };
    if mantissa.chars().all(|c| c == '0') {
        return format!("{sign}0");
    }
    if mantissa.starts_with('@') {
        return format!("{sign}{mantissa}");
    }
    let e = exp.unwrap_or(0) - 1;
    let first = &mantissa[..1];
    let rest = mantissa[1..].trim_end_matches('0');
    if rest.is_empty() {
        format!("{sign}{first}{sep}{e}")
    } else {
        format!("{sign}{first}.{rest}{sep}{e}")
    }
}

impl fmt::Debug for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} bits)", self.to_decimal(20), self.precision_bits())
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal(25))
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Real) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait<&Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                let prec = self.0.prec().max(rhs.0.prec());
                Real::from_float(Float::with_val(prec, std::ops::$trait::$method(&self.0, &rhs.0)))
            }
        }
        impl std::ops::$trait<Real> for Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                std::ops::$trait::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Real> for Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                std::ops::$trait::$method(&self, rhs)
            }
        }
        impl std::ops::$trait<Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                std::ops::$trait::$method(self, &rhs)
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl std::ops::Neg for &Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real::neg(self)
    }
}

impl std::ops::Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real::neg(&self)
    }
}

/// Working precision, cancellation guard and restart ceiling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecisionContext {
    /// Working precision in bits.
    pub bits: u32,
    /// Cancellation margin: results smaller than `2^-(bits-guard_bits)`
    /// relative to their operands are treated as fully cancelled.
    pub guard_bits: u32,
    /// Ceiling for precision restarts.
    pub max_bits: u32,
}

pub const DEFAULT_GUARD_BITS: u32 = 32;
pub const DEFAULT_MAX_BITS: u32 = 16384;

impl PrecisionContext {
    pub fn new(bits: u32) -> PrecisionContext {
        PrecisionContext::with_limits(bits, DEFAULT_GUARD_BITS, DEFAULT_MAX_BITS.max(bits))
            .expect("default limits are consistent")
    }

    pub fn with_limits(bits: u32, guard_bits: u32, max_bits: u32) -> Result<PrecisionContext> {
        if bits < MIN_BITS {
            return Err(Error::Domain(format!("precision {bits} below minimum {MIN_BITS}")));
        }
        if bits > max_bits {
            return Err(Error::Domain(format!("bits {bits} exceeds max_bits {max_bits}")));
        }
        if guard_bits >= bits {
            return Err(Error::Domain(format!("guard_bits {guard_bits} >= bits {bits}")));
        }
        Ok(PrecisionContext { bits, guard_bits, max_bits })
    }

    /// Default inversion tolerance `2^-(bits - guard_bits)`.
    pub fn tol(&self) -> Real {
        Real::two_pow(-((self.bits - self.guard_bits) as i32), self.bits)
    }

    /// Relative threshold below which a subtraction counts as cancelled.
    pub fn cancellation_floor(&self) -> Real {
        self.tol()
    }

    /// Same context at a different precision.
    pub fn with_bits(&self, bits: u32) -> Result<PrecisionContext> {
        PrecisionContext::with_limits(bits, self.guard_bits, self.max_bits)
    }

    /// Doubled precision, or `None` once the ceiling is reached.
    pub fn escalate(&self) -> Option<PrecisionContext> {
        if self.bits >= self.max_bits {
            return None;
        }
        let bits = (self.bits * 2).min(self.max_bits);
        Some(PrecisionContext { bits, ..*self })
    }
}

/// Invert a strictly monotone function by bisection.
///
/// Returns `x` with `|f(x) - target| <= tol * max(1, |target|)`. The bracket
/// endpoints must straddle the target. Deterministic for fixed precision.
pub fn monotone_invert<F>(mut f: F, target: &Real, bracket: (&Real, &Real), tol: &Real) -> Result<Real>
where
    F: FnMut(&Real) -> Result<Real>,
{
    monotone_invert_impl(&mut f, None::<&mut dyn FnMut(&Real) -> Result<Real>>, target, bracket, tol, None)
}

/// [`monotone_invert`] with a derivative for Newton polishing.
///
/// Bisection narrows the bracket until Newton steps are safe; Newton then
/// converges quadratically while every iterate is kept inside the bracket
/// (falling back to a bisection step whenever it would escape). The result
/// contract and determinism match [`monotone_invert`].
pub fn monotone_invert_with_deriv<F, D>(
    mut f: F,
    mut deriv: D,
    target: &Real,
    bracket: (&Real, &Real),
    tol: &Real,
) -> Result<Real>
where
    F: FnMut(&Real) -> Result<Real>,
    D: FnMut(&Real) -> Result<Real>,
{
    let mut d = |x: &Real| deriv(x);
    monotone_invert_impl(&mut f, Some(&mut d as &mut dyn FnMut(&Real) -> Result<Real>), target, bracket, tol, None)
}

/// Internal inverter for the renormalization cascade: seeded with a guess,
/// and accepts convergence in x (bracket collapsed to ulp scale) even when
/// the f-residual stalls above `tol` on evaluation noise, as deep
/// expression DAGs inevitably do. A result is still rejected when the
/// stalled residual is grossly inconsistent (beyond `2^-(bits/4)`), which
/// signals a malformed state rather than noise.
pub(crate) fn invert_monotone_xres<F, D>(
    mut f: F,
    mut deriv: D,
    target: &Real,
    bracket: (&Real, &Real),
    tol: &Real,
    guess: &Real,
) -> Result<Real>
where
    F: FnMut(&Real) -> Result<Real>,
    D: FnMut(&Real) -> Result<Real>,
{
    let mut d = |x: &Real| deriv(x);
    monotone_invert_xres_impl(
        &mut f,
        Some(&mut d as &mut dyn FnMut(&Real) -> Result<Real>),
        target,
        bracket,
        tol,
        Some(guess),
        true,
    )
}

fn monotone_invert_impl(
    f: &mut dyn FnMut(&Real) -> Result<Real>,
    deriv: Option<&mut dyn FnMut(&Real) -> Result<Real>>,
    target: &Real,
    bracket: (&Real, &Real),
    tol: &Real,
    guess: Option<&Real>,
) -> Result<Real> {
    monotone_invert_xres_impl(f, deriv, target, bracket, tol, guess, false)
}

#[allow(clippy::too_many_arguments)]
fn monotone_invert_xres_impl(
    f: &mut dyn FnMut(&Real) -> Result<Real>,
    mut deriv: Option<&mut dyn FnMut(&Real) -> Result<Real>>,
    target: &Real,
    bracket: (&Real, &Real),
    tol: &Real,
    guess: Option<&Real>,
    accept_x_resolution: bool,
) -> Result<Real> {
    let (mut lo, mut hi) = (bracket.0.clone(), bracket.1.clone());
    if lo >= hi {
        return Err(Error::DegenerateInterval { a: lo.to_decimal(20), b: hi.to_decimal(20) });
    }
    let bits = lo.precision_bits().max(hi.precision_bits()).max(target.precision_bits());
    let scale = Real::one(bits).max(&target.abs());
    let tol_abs = tol * &scale;

    let flo = f(&lo)?;
    if (&flo - target).abs() <= tol_abs {
        return Ok(lo);
    }
    let fhi = f(&hi)?;
    if (&fhi - target).abs() <= tol_abs {
        return Ok(hi);
    }
    let increasing = fhi > flo;
    // residual sign normalized so that "below target" is negative
    let sgn = |v: &Real| -> i8 {
        let below = if increasing { v < target } else { v > target };
        if below {
            -1
        } else {
            1
        }
    };
    if sgn(&flo) != -1 || sgn(&fhi) != 1 {
        return Err(Error::Bracket {
            target: target.to_decimal(20),
            lo: lo.to_decimal(20),
            hi: hi.to_decimal(20),
        });
    }

    let half = Real::from_ratio(1, 2, bits);
    let max_iter = bits as usize + 128;
    let mut x = match guess {
        Some(g) if *g > lo && *g < hi => g.clone(),
        _ => (&lo + &hi) * &half,
    };

    // safeguarded Newton: every accepted iterate tightens the bracket; a
    // Newton step is taken when it stays strictly inside, otherwise the
    // midpoint is used
    for _ in 0..max_iter {
        let fx = f(&x)?;
        let resid = &fx - target;
        if resid.abs() <= tol_abs {
            return Ok(x);
        }
        if sgn(&fx) == -1 {
            lo = x.clone();
        } else {
            hi = x.clone();
        }
        let mut next: Option<Real> = None;
        if let Some(d) = deriv.as_mut() {
            let dfx = d(&x)?;
            if !dfx.is_zero() {
                let candidate = &x - &(&resid / &dfx);
                if candidate > lo && candidate < hi && candidate != x {
                    next = Some(candidate);
                }
            }
        }
        if accept_x_resolution {
            let width = &hi - &lo;
            if width <= Real::two_pow(-(bits as i32 - 12), bits) {
                // converged in x; the residual is evaluation noise. A
                // grossly inconsistent residual still fails.
                let mid = (&lo + &hi) * &half;
                let sanity = Real::two_pow(-(bits as i32) / 4, bits) * &scale;
                let r = (&f(&mid)? - target).abs();
                if r <= sanity {
                    return Ok(mid);
                }
                break;
            }
        }
        x = match next {
            Some(n) => n,
            None => {
                let mid = (&lo + &hi) * &half;
                if mid <= lo || mid >= hi {
                    // bracket no longer representable at this precision
                    break;
                }
                mid
            }
        };
    }
    Err(Error::Tolerance { tol: tol.to_decimal(20), bits })
}

/// Working precision sufficient for a cascade of the given depth.
///
/// The smallest coordinate at depth `n` shrinks like
/// `exp(cu_hint * (e2 + e3) * lambda_u^n)`, so the number of bits needed to
/// keep a fixed margin of significant bits grows with `lambda_u^depth`.
/// This is a sizing heuristic, computed in double precision.
pub fn required_precision(depth: u32, ell: f64, cu_hint: f64) -> u32 {
    assert!(depth < 64, "depth {depth} out of the supported range");
    assert!(ell > 1.0 && ell < 2.0, "critical exponent must be in (1,2)");
    let inv = 1.0 / ell;
    let lambda_u = (inv + (inv * inv + 4.0 * inv).sqrt()) / 2.0;
    let e3 = (-lambda_u + ell - 1.0) / (ell * lambda_u * (1.0 + lambda_u));
    let e23 = 1.0 + e3;
    let bits = (cu_hint.abs() * e23 * lambda_u.powi(depth as i32 + 2) / std::f64::consts::LN_2)
        .ceil() as u32
        + 256;
    bits.max(MIN_BITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_is_reproducible() {
        let run = || {
            let a = Real::from_f64(1.5, 192).ln();
            let b = Real::from_ratio(7, 11, 192);
            let c = (&a * &b).exp().sqrt();
            c.to_hex()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hex_round_trips() {
        let x = Real::from_f64(0.1, 256).exp();
        let s = x.to_hex();
        let y = Real::parse_hex(&s, 256).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sub_guarded_detects_cancellation() {
        let ctx = PrecisionContext::new(128);
        let a = Real::one(128);
        let b = &a + &Real::two_pow(-120, 128);
        match a.sub_guarded(&b, &ctx) {
            Err(Error::PrecisionExhausted { .. }) => {}
            other => panic!("expected cancellation, got {other:?}"),
        }
        // a healthy subtraction passes
        let c = Real::from_f64(0.75, 128);
        assert!(a.sub_guarded(&c, &ctx).is_ok());
    }

    #[test]
    fn invert_square_root() {
        let bits = 192;
        let tol = Real::two_pow(-150, bits);
        let target = Real::from_f64(0.25, bits);
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        let root = monotone_invert(|x| Ok(x * x), &target, (&zero, &one), &tol).unwrap();
        assert!((&root - &Real::from_f64(0.5, bits)).abs() < Real::two_pow(-140, bits));
    }

    #[test]
    fn invert_returns_endpoint_when_target_hits_it() {
        let bits = 128;
        let tol = Real::two_pow(-90, bits);
        let lo = Real::from_f64(0.25, bits);
        let hi = Real::one(bits);
        let target = &lo * &lo;
        let x = monotone_invert(|x| Ok(x * x), &target, (&lo, &hi), &tol).unwrap();
        assert_eq!(x, lo);
    }

    #[test]
    fn invert_rejects_bad_bracket() {
        let bits = 128;
        let tol = Real::two_pow(-90, bits);
        let target = Real::from_f64(4.0, bits);
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        match monotone_invert(|x| Ok(x * x), &target, (&zero, &one), &tol) {
            Err(Error::Bracket { .. }) => {}
            other => panic!("expected bracket error, got {other:?}"),
        }
    }

    #[test]
    fn newton_polish_matches_bisection() {
        let bits = 512;
        let tol = Real::two_pow(-480, bits);
        let target = Real::from_f64(0.7, bits);
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        let two = Real::from_u64(2, bits);
        let three = Real::from_u64(3, bits);
        // f(x) = x^3 + 2x on [0,1], strictly increasing
        let f = |x: &Real| Ok(x * x * x + &two * x);
        let df = |x: &Real| Ok(&three * x * x + &two);
        let with = monotone_invert_with_deriv(f, df, &target, (&zero, &one), &tol).unwrap();
        let without = monotone_invert(f, &target, (&zero, &one), &tol).unwrap();
        let fx = (&with * &with * &with + &two * &with) - &target;
        assert!(fx.abs() <= &tol * &Real::one(bits));
        assert!((&with - &without).abs() < Real::two_pow(-400, bits));
    }

    #[test]
    fn required_precision_floor_and_monotonicity() {
        assert!(required_precision(0, 1.5, -1.0) >= 64);
        let a = required_precision(10, 1.5, -1.0);
        let b = required_precision(20, 1.5, -1.0);
        assert!(b > a);
        let c = required_precision(10, 1.5, -2.0);
        assert!(c >= a);
        // lambda_u = 1.21525, e2+e3 = 0.822875: ceil(0.8229 * 1.21525^12 / ln 2) = 13
        assert_eq!(required_precision(10, 1.5, -1.0), 13 + 256);
    }

    #[test]
    fn context_validation() {
        assert!(PrecisionContext::with_limits(32, 16, 1024).is_err());
        assert!(PrecisionContext::with_limits(128, 200, 1024).is_err());
        assert!(PrecisionContext::with_limits(2048, 32, 1024).is_err());
        let ctx = PrecisionContext::new(128);
        let esc = ctx.escalate().unwrap();
        assert_eq!(esc.bits, 256);
    }

    #[test]
    fn real_types_are_send_and_sync() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Real>();
        assert_send_sync::<PrecisionContext>();
    }
}
