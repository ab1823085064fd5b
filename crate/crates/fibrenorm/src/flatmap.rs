//! The normalized map model: points of the model space, the power-law piece
//! `q_s`, zooms, and exact diffeomorphism expressions with derivatives.
//!
//! Diffeomorphisms of `[0,1]` are kept as expression DAGs
//! ([`DiffeoExpr`]), never as sampled tables: renormalization only ever
//! zooms and composes existing pieces, and interpolation error would be
//! fatal at the double-exponentially small scales the cascade reaches.
//! Shared sub-expressions are reference-counted, so one level's
//! diffeomorphisms reuse the previous level's nodes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{PrecisionContext, Real, MIN_BITS};

/// The diffeomorphic part of `x^ell`, parametrized by `s` in `(0,1)`:
///
/// `q_s(x) = (((1-s)x + s)^ell - s^ell) / (1 - s^ell)`.
///
/// Fixes 0 and 1 and is strictly increasing on `[0,1]`.
pub fn qs_minus(s: &Real, ell: &Real, x: &Real) -> Result<Real> {
    check_unit_interval(x)?;
    let bits = s.precision_bits().max(x.precision_bits());
    let one = Real::one(bits);
    let s_pow = s.pow(ell);
    let base = (&one - s) * x + s;
    Ok((base.pow(ell) - &s_pow) / (&one - &s_pow))
}

/// Closed-form inverse of [`qs_minus`] in its value argument.
pub fn qs_minus_inverse(s: &Real, ell: &Real, w: &Real) -> Result<Real> {
    check_unit_interval(w)?;
    let bits = s.precision_bits().max(w.precision_bits());
    let one = Real::one(bits);
    let s_pow = s.pow(ell);
    let inner = w * (&one - &s_pow) + &s_pow;
    Ok((inner.pow(&ell.recip()) - s) / (&one - s))
}

/// Derivative of [`qs_minus`] in `x`.
pub fn qs_minus_deriv(s: &Real, ell: &Real, x: &Real) -> Result<Real> {
    check_unit_interval(x)?;
    let bits = s.precision_bits().max(x.precision_bits());
    let one = Real::one(bits);
    let s_pow = s.pow(ell);
    let base = (&one - s) * x + s;
    Ok(ell * (&one - s) * base.pow(&(ell - &one)) / (&one - &s_pow))
}

fn check_unit_interval(x: &Real) -> Result<()> {
    // allow a hair of rounding drift below 0 / above 1
    let bits = x.precision_bits();
    let slack = Real::two_pow(-(bits as i32) + 8, bits);
    let lo = -&slack;
    let hi = Real::one(bits) + &slack;
    if *x < lo || *x > hi {
        return Err(Error::Domain(format!("{} outside [0,1]", x.to_decimal(20))));
    }
    Ok(())
}

#[derive(Debug)]
enum Node {
    Identity,
    QsMinus {
        s: Real,
        ell: Real,
        s_pow_ell: Real,
        denom: Real,
    },
    /// Rescaled restriction of `inner` to the interval from `a` to `b`.
    /// When `b < a` the zoom also reverses orientation, which keeps the
    /// result an increasing diffeomorphism fixing 0 and 1.
    Zoom {
        inner: DiffeoExpr,
        a: Real,
        width: Real,
        phi_a: Real,
        span: Real,
    },
    Compose {
        outer: DiffeoExpr,
        inner: DiffeoExpr,
    },
}

/// Exact expression DAG for an orientation-preserving diffeomorphism of
/// `[0,1]` fixing the endpoints.
///
/// Evaluation and differentiation are pure and recurse along the DAG path;
/// zoom nodes cache their endpoint values so one evaluation costs one pass.
#[derive(Clone, Debug)]
pub struct DiffeoExpr(Arc<Node>);

impl DiffeoExpr {
    pub fn identity() -> DiffeoExpr {
        DiffeoExpr(Arc::new(Node::Identity))
    }

    pub fn qs_minus(s: &Real, ell: &Real) -> Result<DiffeoExpr> {
        let bits = s.precision_bits();
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        if *s <= zero || *s >= one {
            return Err(Error::Domain(format!("s = {} outside (0,1)", s.to_decimal(20))));
        }
        if !ell.is_positive() {
            return Err(Error::Domain("critical exponent must be positive".into()));
        }
        let s_pow_ell = s.pow(ell);
        let denom = &one - &s_pow_ell;
        Ok(DiffeoExpr(Arc::new(Node::QsMinus {
            s: s.clone(),
            ell: ell.clone(),
            s_pow_ell,
            denom,
        })))
    }

    /// Rescaled restriction of `phi` to `[a,b]`, `0 <= a < b <= 1`:
    /// `x -> (phi(a + (b-a)x) - phi(a)) / (phi(b) - phi(a))`.
    ///
    /// Fixes 0 and 1 exactly by construction.
    pub fn zoom(phi: &DiffeoExpr, a: &Real, b: &Real) -> Result<DiffeoExpr> {
        let bits = a.precision_bits().max(b.precision_bits());
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        if *a < zero || *b > one || a >= b {
            return Err(Error::Domain(format!(
                "zoom interval [{}, {}] not inside [0,1]",
                a.to_decimal(20),
                b.to_decimal(20)
            )));
        }
        DiffeoExpr::zoom_oriented(phi, a, b)
    }

    /// Zoom allowing a reversed interval (`b < a`), in which case the result
    /// is pre-composed with the orientation flip `x -> 1 - x` of the inner
    /// coordinate. Needed once per renormalization level.
    pub(crate) fn zoom_oriented(phi: &DiffeoExpr, a: &Real, b: &Real) -> Result<DiffeoExpr> {
        let bits = a.precision_bits().max(b.precision_bits()).max(phi.precision_bits());
        let floor = Real::two_pow(-(bits as i32 - 16), bits);
        let width = b - a;
        if width.abs() < floor {
            return Err(Error::DegenerateInterval { a: a.to_decimal(20), b: b.to_decimal(20) });
        }
        let phi_a = phi.eval(a)?;
        let phi_b = phi.eval(b)?;
        let span = &phi_b - &phi_a;
        if span.abs() < floor {
            return Err(Error::DegenerateInterval { a: a.to_decimal(20), b: b.to_decimal(20) });
        }
        Ok(DiffeoExpr(Arc::new(Node::Zoom { inner: phi.clone(), a: a.clone(), width, phi_a, span })))
    }

    pub fn compose(outer: &DiffeoExpr, inner: &DiffeoExpr) -> DiffeoExpr {
        DiffeoExpr(Arc::new(Node::Compose { outer: outer.clone(), inner: inner.clone() }))
    }

    /// Largest precision of any constant stored in the DAG.
    pub fn precision_bits(&self) -> u32 {
        match &*self.0 {
            Node::Identity => MIN_BITS,
            Node::QsMinus { s, .. } => s.precision_bits(),
            Node::Zoom { inner, a, .. } => inner.precision_bits().max(a.precision_bits()),
            Node::Compose { outer, inner } => outer.precision_bits().max(inner.precision_bits()),
        }
    }

    /// Number of node visits one evaluation costs. Grows like the return
    /// times along a renormalization cascade; used to size the rounding
    /// noise an evaluation accumulates.
    pub fn path_cost(&self) -> u64 {
        match &*self.0 {
            Node::Identity | Node::QsMinus { .. } => 1,
            Node::Zoom { inner, .. } => 1 + inner.path_cost(),
            Node::Compose { outer, inner } => 1 + outer.path_cost() + inner.path_cost(),
        }
    }

    /// Evaluate at `x` in `[0,1]`.
    pub fn eval(&self, x: &Real) -> Result<Real> {
        check_unit_interval(x)?;
        self.eval_raw(x)
    }

    fn eval_raw(&self, x: &Real) -> Result<Real> {
        match &*self.0 {
            Node::Identity => Ok(x.clone()),
            Node::QsMinus { s, ell, s_pow_ell, denom } => {
                let bits = s.precision_bits().max(x.precision_bits());
                let one = Real::one(bits);
                let base = (&one - s) * x + s;
                Ok((base.pow(ell) - s_pow_ell) / denom)
            }
            Node::Zoom { inner, a, width, phi_a, span } => {
                // endpoints map exactly: a + width*1 may drift off b by an ulp
                if x.is_zero() {
                    return Ok(Real::zero(x.precision_bits().max(a.precision_bits())));
                }
                let bits = x.precision_bits().max(a.precision_bits());
                if *x == Real::one(bits) {
                    return Ok(Real::one(bits));
                }
                let y = inner.eval_raw(&(a + width * x))?;
                Ok((y - phi_a) / span)
            }
            Node::Compose { outer, inner } => outer.eval_raw(&inner.eval_raw(x)?),
        }
    }

    /// Derivative at `x`, by the chain rule over the DAG.
    pub fn deriv(&self, x: &Real) -> Result<Real> {
        Ok(self.eval_with_deriv(x)?.1)
    }

    /// Value and derivative in one traversal.
    pub fn eval_with_deriv(&self, x: &Real) -> Result<(Real, Real)> {
        check_unit_interval(x)?;
        self.eval_with_deriv_raw(x)
    }

    fn eval_with_deriv_raw(&self, x: &Real) -> Result<(Real, Real)> {
        match &*self.0 {
            Node::Identity => Ok((x.clone(), Real::one(x.precision_bits()))),
            Node::QsMinus { s, ell, s_pow_ell, denom } => {
                let bits = s.precision_bits().max(x.precision_bits());
                let one = Real::one(bits);
                let one_minus_s = &one - s;
                let base = &one_minus_s * x + s;
                let pow_m1 = base.pow(&(ell - &one));
                let value = (&pow_m1 * &base - s_pow_ell) / denom;
                let deriv = ell * &one_minus_s * &pow_m1 / denom;
                Ok((value, deriv))
            }
            Node::Zoom { inner, a, width, phi_a, span } => {
                let (y, dy) = inner.eval_with_deriv_raw(&(a + width * x))?;
                let value = if x.is_zero() {
                    Real::zero(x.precision_bits().max(a.precision_bits()))
                } else if *x == Real::one(x.precision_bits().max(a.precision_bits())) {
                    Real::one(x.precision_bits().max(a.precision_bits()))
                } else {
                    (y - phi_a) / span
                };
                Ok((value, width * dy / span))
            }
            Node::Compose { outer, inner } => {
                let (y, dy_in) = inner.eval_with_deriv_raw(x)?;
                let (z, dy_out) = outer.eval_with_deriv_raw(&y)?;
                Ok((z, dy_out * dy_in))
            }
        }
    }

    /// Grid approximation of the distortion `sup log(Dphi(x)/Dphi(y))`.
    ///
    /// Nonnegative; nondecreasing under grid refinement up to tolerance.
    pub fn distortion(&self, grid_size: usize) -> Result<Real> {
        assert!(grid_size >= 2, "distortion needs at least 2 grid points");
        let bits = self.precision_bits();
        let step = Real::from_u64(grid_size as u64 - 1, bits).recip();
        let mut min_d: Option<Real> = None;
        let mut max_d: Option<Real> = None;
        for i in 0..grid_size {
            let x = Real::from_u64(i as u64, bits) * &step;
            let d = self.deriv(&x.min(&Real::one(bits)))?;
            min_d = Some(match min_d {
                Some(m) => m.min(&d),
                None => d.clone(),
            });
            max_d = Some(match max_d {
                Some(m) => m.max(&d),
                None => d,
            });
        }
        let (lo, hi) = (min_d.unwrap(), max_d.unwrap());
        Ok((hi / lo).ln())
    }

    /// Grid approximation of the sup-norm of the nonlinearity
    /// `eta = D log Dphi`, with the second derivative taken as a central
    /// finite difference of `log Dphi`.
    pub fn nonlinearity_norm(&self, grid_size: usize) -> Result<Real> {
        assert!(grid_size >= 3, "nonlinearity needs at least 3 grid points");
        let bits = self.precision_bits().max(128);
        let h = Real::two_pow(-(bits as i32) / 4, bits);
        let step = Real::from_u64(grid_size as u64 - 1, bits).recip();
        let one = Real::one(bits);
        let mut sup = Real::zero(bits);
        for i in 0..grid_size {
            let x = (Real::from_u64(i as u64, bits) * &step).max(&h).min(&(&one - &h));
            let d_plus = self.deriv(&(&x + &h))?.ln();
            let d_minus = self.deriv(&(&x - &h))?.ln();
            let eta = (d_plus - d_minus) / (Real::from_u64(2, bits) * &h);
            sup = sup.max(&eta.abs());
        }
        Ok(sup)
    }
}

/// A point of the model space: the marked coordinates of the simplex plus
/// the three diffeomorphisms of the branch decomposition.
#[derive(Clone, Debug)]
pub struct RenormPoint {
    pub x1: Real,
    pub x2: Real,
    pub x3: Real,
    pub x4: Real,
    pub s: Real,
    pub ell: Real,
    pub phi_minus: DiffeoExpr,
    pub phi_plus_l: DiffeoExpr,
    pub phi_plus_r: DiffeoExpr,
}

impl RenormPoint {
    /// Point with the given coordinates and diffeomorphisms; enforces the
    /// simplex constraints `x1 < 0 < x3 < x4 < 1`, `0 < x2 < 1`, `0 < s < 1`
    /// and the supported exponent range `1 < ell < 2`.
    ///
    /// Renormalizability (`x2 < x3`) is deliberately not required here; it
    /// is a dynamical predicate, not a constructor constraint.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ell: Real,
        x1: Real,
        x2: Real,
        x3: Real,
        x4: Real,
        s: Real,
        phi_minus: DiffeoExpr,
        phi_plus_l: DiffeoExpr,
        phi_plus_r: DiffeoExpr,
    ) -> Result<RenormPoint> {
        let bits = x1.precision_bits();
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::SimplexViolation(what.to_string()))
            }
        };
        check(x1 < zero, "x1 < 0")?;
        check(x3 > zero, "x3 > 0")?;
        check(x3 < x4, "x3 < x4")?;
        check(x4 < one, "x4 < 1")?;
        check(x2 > zero && x2 < one, "0 < x2 < 1")?;
        check(s > zero && s < one, "0 < s < 1")?;
        check(ell > one && ell < Real::from_u64(2, bits), "1 < ell < 2")?;
        Ok(RenormPoint { x1, x2, x3, x4, s, ell, phi_minus, phi_plus_l, phi_plus_r })
    }

    /// Point with identity diffeomorphisms (the standard flat family in
    /// model coordinates).
    pub fn standard(ell: Real, x1: Real, x2: Real, x3: Real, x4: Real, s: Real) -> Result<RenormPoint> {
        RenormPoint::new(
            ell,
            x1,
            x2,
            x3,
            x4,
            s,
            DiffeoExpr::identity(),
            DiffeoExpr::identity(),
            DiffeoExpr::identity(),
        )
    }

    pub fn precision_bits(&self) -> u32 {
        self.x1
            .precision_bits()
            .max(self.s.precision_bits())
            .max(self.phi_minus.precision_bits())
            .max(self.phi_plus_l.precision_bits())
            .max(self.phi_plus_r.precision_bits())
    }

    /// Re-round the coordinates (and rebuild trivial DAGs) at a new
    /// precision. Only meaningful on base points whose diffeomorphisms are
    /// shallow; trajectory restarts always re-run from the base point.
    pub fn with_precision(&self, bits: u32) -> Result<RenormPoint> {
        RenormPoint::new(
            self.ell.with_precision(bits),
            self.x1.with_precision(bits),
            self.x2.with_precision(bits),
            self.x3.with_precision(bits),
            self.x4.with_precision(bits),
            self.s.with_precision(bits),
            rebuild(&self.phi_minus, bits)?,
            rebuild(&self.phi_plus_l, bits)?,
            rebuild(&self.phi_plus_r, bits)?,
        )
    }

    /// The piecewise map on the fundamental interval `[x1, 1]`.
    ///
    /// Branches: power-law rise on `[x1, 0)` through `q_s` and `phi^-`,
    /// descent to `x1` on `[0, x3]` through `phi^{+l}`, the flat interval
    /// `(x3, x4)` collapsing to 0, and the final rise to `x2` on `[x4, 1]`
    /// through `phi^{+r}`.
    pub fn eval_map(&self, x: &Real) -> Result<Real> {
        self.branch_values(x).map(|(v, _)| v)
    }

    /// Derivative of [`RenormPoint::eval_map`] (0 on the flat interval).
    pub fn eval_map_deriv(&self, x: &Real) -> Result<Real> {
        self.branch_values(x).map(|(_, d)| d)
    }

    fn branch_values(&self, x: &Real) -> Result<(Real, Real)> {
        let bits = self.precision_bits().max(x.precision_bits());
        let zero = Real::zero(bits);
        let one = Real::one(bits);
        let slack = Real::two_pow(-(bits as i32) + 8, bits);
        if *x < &self.x1 - &slack || *x > &one + &slack {
            return Err(Error::Domain(format!(
                "{} outside the fundamental interval [{}, 1]",
                x.to_decimal(20),
                self.x1.to_decimal(20)
            )));
        }
        if *x < zero {
            // rising branch through the power law
            let u = &one - x / &self.x1;
            let (phi, dphi) = self.phi_minus.eval_with_deriv(&u.max(&zero).min(&one))?;
            let q = qs_minus(&self.s, &self.ell, &phi)?;
            let dq = qs_minus_deriv(&self.s, &self.ell, &phi)?;
            let one_minus_x2 = &one - &self.x2;
            let value = &one_minus_x2 * &q + &self.x2;
            let deriv = one_minus_x2 * dq * dphi / -&self.x1;
            Ok((value, deriv))
        } else if *x <= self.x3 {
            let v = (&self.x3 - x) / &self.x3;
            let (phi, dphi) = self.phi_plus_l.eval_with_deriv(&v.max(&zero).min(&one))?;
            let pow_m1 = phi.pow(&(&self.ell - &one));
            let value = &self.x1 * &pow_m1 * &phi;
            let deriv = -&self.x1 * &self.ell * pow_m1 * dphi / &self.x3;
            Ok((value, deriv))
        } else if *x < self.x4 {
            Ok((zero.clone(), zero))
        } else {
            let w = (x - &self.x4) / (&one - &self.x4);
            let (phi, dphi) = self.phi_plus_r.eval_with_deriv(&w.max(&zero).min(&one))?;
            let pow_m1 = phi.pow(&(&self.ell - &one));
            let value = &self.x2 * &pow_m1 * &phi;
            let deriv = &self.x2 * &self.ell * pow_m1 * dphi / (&one - &self.x4);
            Ok((value, deriv))
        }
    }

    /// Derivative of the map at `x1` times `|x1| / (1 - x2)`; the product
    /// collapses analytically to `Dq_s(0) * Dphi^-(0)`.
    pub fn boundary_derivative_ratio(&self) -> Result<Real> {
        let bits = self.precision_bits();
        let zero = Real::zero(bits);
        let dq0 = qs_minus_deriv(&self.s, &self.ell, &zero)?;
        let dphi0 = self.phi_minus.deriv(&zero)?;
        Ok(dq0 * dphi0)
    }
}

fn rebuild(phi: &DiffeoExpr, bits: u32) -> Result<DiffeoExpr> {
    match &*phi.0 {
        Node::Identity => Ok(DiffeoExpr::identity()),
        Node::QsMinus { s, ell, .. } => {
            DiffeoExpr::qs_minus(&s.with_precision(bits), &ell.with_precision(bits))
        }
        Node::Zoom { inner, a, width, .. } => {
            let inner = rebuild(inner, bits)?;
            let a = a.with_precision(bits);
            let b = &a + &width.with_precision(bits);
            DiffeoExpr::zoom_oriented(&inner, &a, &b)
        }
        Node::Compose { outer, inner } => {
            Ok(DiffeoExpr::compose(&rebuild(outer, bits)?, &rebuild(inner, bits)?))
        }
    }
}

/// Convenience free functions mirroring the operation names used elsewhere.
pub fn diffeo_eval(phi: &DiffeoExpr, x: &Real) -> Result<Real> {
    phi.eval(x)
}

pub fn diffeo_deriv(phi: &DiffeoExpr, x: &Real) -> Result<Real> {
    phi.deriv(x)
}

pub fn diffeo_distortion(phi: &DiffeoExpr, grid_size: usize) -> Result<Real> {
    phi.distortion(grid_size)
}

pub fn nonlinearity_norm(phi: &DiffeoExpr, grid_size: usize) -> Result<Real> {
    phi.nonlinearity_norm(grid_size)
}

pub fn zoom(phi: &DiffeoExpr, a: &Real, b: &Real) -> Result<DiffeoExpr> {
    DiffeoExpr::zoom(phi, a, b)
}

pub fn eval_map(point: &RenormPoint, x: &Real) -> Result<Real> {
    point.eval_map(x)
}

pub fn standard_point(ell: f64, x1: f64, x2: f64, x3: f64, x4: f64, s: f64, bits: u32) -> Result<RenormPoint> {
    RenormPoint::standard(
        Real::from_f64(ell, bits),
        Real::from_f64(x1, bits),
        Real::from_f64(x2, bits),
        Real::from_f64(x3, bits),
        Real::from_f64(x4, bits),
        Real::from_f64(s, bits),
    )
}

/// Guard used by cancellation-sensitive callers.
pub(crate) fn guarded_gap(a: &Real, b: &Real, ctx: &PrecisionContext) -> Result<Real> {
    a.sub_guarded(b, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BITS: u32 = 256;

    fn r(v: f64) -> Real {
        Real::from_f64(v, BITS)
    }

    fn tol(pow: i32) -> Real {
        Real::two_pow(pow, BITS)
    }

    #[test]
    fn qs_hand_value_and_endpoints() {
        // s = 1/2, ell = 2, x = 1/2 gives 5/12 by direct expansion
        let q = qs_minus(&r(0.5), &r(2.0), &r(0.5)).unwrap();
        assert!((&q - &Real::from_ratio(5, 12, BITS)).abs() < tol(-250));
        for ell in [1.2, 1.5, 1.9] {
            for s in [0.1, 0.5, 0.9] {
                let q0 = qs_minus(&r(s), &r(ell), &r(0.0)).unwrap();
                let q1 = qs_minus(&r(s), &r(ell), &r(1.0)).unwrap();
                assert!(q0.is_zero());
                assert_eq!(q1, Real::one(BITS));
            }
        }
    }

    #[test]
    fn qs_inverse_round_trips() {
        let (s, ell) = (r(0.37), r(1.6));
        for x in [0.05, 0.33, 0.71, 0.98] {
            let w = qs_minus(&s, &ell, &r(x)).unwrap();
            let back = qs_minus_inverse(&s, &ell, &w).unwrap();
            assert!((&back - &r(x)).abs() < tol(-240));
        }
        // the explicit inverse agrees with numeric inversion
        let target = qs_minus(&s, &ell, &r(0.5)).unwrap();
        let num = crate::numerics::monotone_invert(
            |x| qs_minus(&s, &ell, x),
            &target,
            (&r(0.0), &r(1.0)),
            &tol(-230),
        )
        .unwrap();
        assert!((&num - &r(0.5)).abs() < tol(-200));
    }

    #[test]
    fn qs_rejects_out_of_domain() {
        assert!(matches!(qs_minus(&r(0.5), &r(1.5), &r(1.5)), Err(Error::Domain(_))));
        assert!(matches!(qs_minus(&r(0.5), &r(1.5), &r(-0.2)), Err(Error::Domain(_))));
    }

    #[test]
    fn deriv_at_zero_matches_hand_formula() {
        // Dq(0) = ell (1-s) s^(ell-1) / (1 - s^ell); 0.820377... at s=1/2, ell=3/2
        let (s, ell) = (r(0.5), r(1.5));
        let phi = DiffeoExpr::qs_minus(&s, &ell).unwrap();
        let d = phi.deriv(&r(0.0)).unwrap();
        let one = Real::one(BITS);
        let expect = &ell * (&one - &s) * s.pow(&(&ell - &one)) / (&one - &s.pow(&ell));
        assert!((&d - &expect).abs() < tol(-240));
        assert!((d.to_f64() - 0.820377).abs() < 1e-6);
    }

    #[test]
    fn dag_derivative_matches_finite_differences() {
        // chain-rule derivative of a composed DAG against a central
        // difference oracle, at interior points
        let (s, ell) = (r(0.42), r(1.5));
        let q = DiffeoExpr::qs_minus(&s, &ell).unwrap();
        let z = DiffeoExpr::zoom(&q, &r(0.2), &r(0.8)).unwrap();
        let phi = DiffeoExpr::compose(&z, &q);
        let h = Real::two_pow(-(BITS as i32) / 3, BITS);
        let two_h = Real::from_u64(2, BITS) * &h;
        for i in 1..20u64 {
            let x = Real::from_u64(i, BITS) / Real::from_u64(20, BITS);
            let d = phi.deriv(&x).unwrap();
            let fd = (phi.eval(&(&x + &h)).unwrap() - phi.eval(&(&x - &h)).unwrap()) / &two_h;
            let rel = ((&d - &fd) / &d).abs();
            assert!(rel < tol(-(BITS as i32) / 4), "rel err {} at x={}", rel.to_decimal(8), i);
        }
    }

    #[test]
    fn zoom_identities() {
        let (s, ell) = (r(0.5), r(1.5));
        let q = DiffeoExpr::qs_minus(&s, &ell).unwrap();
        // zoom over the full interval is the map itself
        let full = DiffeoExpr::zoom(&q, &r(0.0), &r(1.0)).unwrap();
        for x in [0.1, 0.5, 0.9] {
            let a = q.eval(&r(x)).unwrap();
            let b = full.eval(&r(x)).unwrap();
            assert!((&a - &b).abs() < tol(-250));
        }
        // zoom of the identity is the identity, with distortion exactly 0
        let z = DiffeoExpr::zoom(&DiffeoExpr::identity(), &r(0.3), &r(0.7)).unwrap();
        for x in [0.0, 0.25, 1.0] {
            assert!((&z.eval(&r(x)).unwrap() - &r(x)).abs() < tol(-250));
        }
        assert!(z.distortion(17).unwrap().is_zero());
        // endpoints are fixed exactly by construction
        let deep = DiffeoExpr::zoom(&q, &r(0.37), &r(0.62)).unwrap();
        assert!(deep.eval(&r(0.0)).unwrap().is_zero());
        assert_eq!(deep.eval(&r(1.0)).unwrap(), Real::one(BITS));
    }

    #[test]
    fn reversed_zoom_is_increasing_and_fixes_endpoints() {
        let q = DiffeoExpr::qs_minus(&r(0.5), &r(1.5)).unwrap();
        let z = DiffeoExpr::zoom_oriented(&q, &r(0.8), &r(0.2)).unwrap();
        assert!(z.eval(&r(0.0)).unwrap().is_zero());
        assert_eq!(z.eval(&r(1.0)).unwrap(), Real::one(BITS));
        let mut prev = z.eval(&r(0.0)).unwrap();
        for i in 1..=32u64 {
            let x = Real::from_u64(i, BITS) / Real::from_u64(32, BITS);
            let v = z.eval(&x).unwrap();
            assert!(v > prev);
            assert!(z.deriv(&x).unwrap().is_positive());
            prev = v;
        }
    }

    #[test]
    fn zoom_rejects_bad_intervals() {
        let id = DiffeoExpr::identity();
        assert!(DiffeoExpr::zoom(&id, &r(0.5), &r(0.5)).is_err());
        assert!(DiffeoExpr::zoom(&id, &r(0.7), &r(0.3)).is_err());
        assert!(DiffeoExpr::zoom(&id, &r(-0.1), &r(0.3)).is_err());
        let a = r(0.5);
        let b = &a + &Real::two_pow(-250, BITS);
        assert!(matches!(
            DiffeoExpr::zoom(&id, &a, &b),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn nonlinearity_identity_zero_and_qs_analytic() {
        let id = DiffeoExpr::identity();
        assert!(id.nonlinearity_norm(9).unwrap().is_zero());
        // eta(x) = (ell-1)(1-s) / ((1-s)x + s); sup on [0,1] is at x = 0
        let (s, ell) = (r(0.5), r(1.5));
        let q = DiffeoExpr::qs_minus(&s, &ell).unwrap();
        let norm = q.nonlinearity_norm(64).unwrap();
        let one = Real::one(BITS);
        let eta0 = (&ell - &one) * (&one - &s) / &s;
        let rel = ((&norm - &eta0) / &eta0).abs();
        assert!(rel < Real::from_f64(1e-6, BITS), "rel err {}", rel.to_decimal(8));
    }

    #[test]
    fn nonlinearity_scales_under_zoom() {
        // |eta of zoom(phi, I)| at x equals |I| * eta_phi(a + |I| x)
        let q = DiffeoExpr::qs_minus(&r(0.3), &r(1.7)).unwrap();
        let (a, b) = (r(0.25), r(0.65));
        let z = DiffeoExpr::zoom(&q, &a, &b).unwrap();
        let width = &b - &a;
        let one = Real::one(BITS);
        for x in [0.1, 0.4, 0.9] {
            let xx = r(x);
            let eta_z = {
                let h = Real::two_pow(-80, BITS);
                (z.deriv(&(&xx + &h)).unwrap().ln() - z.deriv(&(&xx - &h)).unwrap().ln())
                    / (Real::from_u64(2, BITS) * &h)
            };
            let inner_x = &a + &width * &xx;
            let eta_q = {
                let h = Real::two_pow(-80, BITS);
                (q.deriv(&(&inner_x + &h)).unwrap().ln() - q.deriv(&(&inner_x - &h)).unwrap().ln())
                    / (Real::from_u64(2, BITS) * &h)
            };
            let rel = ((&eta_z - &(&width * &eta_q)) / &eta_z).abs();
            assert!(rel < Real::from_f64(1e-10, BITS) * (&one + &eta_z.abs()));
        }
    }

    #[test]
    fn distortion_of_qs_on_two_point_grid() {
        // log(Dq(1)/Dq(0)) = log 2 at s = 1/2, ell = 2
        let q = DiffeoExpr::qs_minus(&r(0.5), &r(2.0)).unwrap();
        let d = q.distortion(2).unwrap();
        let log2 = Real::from_u64(2, BITS).ln();
        assert!((&d - &log2).abs() < tol(-240));
        // refinement can only grow it (sup over more pairs)
        let d8 = q.distortion(8).unwrap();
        let d64 = q.distortion(64).unwrap();
        assert!(d8 <= d64 || (&d8 - &d64).abs() < tol(-200));
        assert!((&d - &d64).abs() < tol(-200)); // derivative is monotone here
    }

    #[test]
    fn standard_point_validates_simplex() {
        assert!(standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).is_ok());
        assert!(matches!(
            standard_point(1.5, -0.4, 1.2, 0.2, 0.9, 0.5, BITS),
            Err(Error::SimplexViolation(_))
        ));
        assert!(matches!(
            standard_point(1.5, -0.4, 0.08, 0.9, 0.2, 0.5, BITS),
            Err(Error::SimplexViolation(_))
        ));
        assert!(matches!(
            standard_point(1.5, 0.4, 0.08, 0.2, 0.9, 0.5, BITS),
            Err(Error::SimplexViolation(_))
        ));
        // x2 < x3 is not a constructor constraint
        assert!(standard_point(1.5, -0.4, 0.5, 0.2, 0.9, 0.5, BITS).is_ok());
    }

    #[test]
    fn eval_map_branch_identities() {
        let p = standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).unwrap();
        // flat branch is exactly 0
        assert!(p.eval_map(&r(0.55)).unwrap().is_zero());
        // boundary values of the closed forms
        assert!(p.eval_map(&r(0.2)).unwrap().is_zero()); // x = x3
        assert!(p.eval_map(&r(0.9)).unwrap().is_zero()); // x = x4
        assert_eq!(p.eval_map(&r(1.0)).unwrap(), p.x2); // x = 1
        assert_eq!(p.eval_map(&p.x1.clone()).unwrap(), p.x2); // x = x1
        // left limit of the rising branch at 0^- is 1
        let eps = Real::two_pow(-60, BITS);
        let near = p.eval_map(&-&eps).unwrap();
        assert!((&near - &Real::one(BITS)).abs() < Real::two_pow(-55, BITS));
        // f2(0) = x1
        assert_eq!(p.eval_map(&r(0.0)).unwrap(), p.x1);
        // outside the fundamental interval
        assert!(matches!(p.eval_map(&r(-0.5)), Err(Error::Domain(_))));
        assert!(matches!(p.eval_map(&r(1.1)), Err(Error::Domain(_))));
    }

    #[test]
    fn eval_map_continuity_with_nontrivial_diffeos() {
        let q = DiffeoExpr::qs_minus(&r(0.4), &r(1.5)).unwrap();
        let p = RenormPoint::new(
            r(1.5),
            r(-0.4),
            r(0.08),
            r(0.2),
            r(0.9),
            r(0.5),
            q.clone(),
            DiffeoExpr::zoom(&q, &r(0.1), &r(0.9)).unwrap(),
            q.clone(),
        )
        .unwrap();
        let eps = Real::two_pow(-120, BITS);
        let t = Real::two_pow(-100, BITS);
        // x3 and x4: branch values meet the flat value 0
        for b in [p.x3.clone(), p.x4.clone()] {
            let before = p.eval_map(&(&b - &eps)).unwrap();
            let after = p.eval_map(&(&b + &eps)).unwrap();
            assert!(before.abs() < t);
            assert!(after.abs() < t);
        }
        // the circle cut: f(0^-) -> 1 while f(0) = x1, identified on the circle
        let left = p.eval_map(&-&eps).unwrap();
        assert!((&left - &Real::one(BITS)).abs() < t);
        assert_eq!(p.eval_map(&r(0.0)).unwrap(), p.x1);
    }

    #[test]
    fn boundary_derivative_matches_numeric_map_derivative() {
        let p = standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).unwrap();
        let ratio = p.boundary_derivative_ratio().unwrap();
        let one = Real::one(BITS);
        let df_x1 = p.eval_map_deriv(&p.x1.clone()).unwrap();
        let reconstructed = &p.x1.abs() * &df_x1 / (&one - &p.x2);
        assert!((&ratio - &reconstructed).abs() < tol(-240));
    }

    #[test]
    fn diffeo_is_strictly_increasing_on_grid() {
        let q = DiffeoExpr::qs_minus(&r(0.35), &r(1.8)).unwrap();
        let z = DiffeoExpr::zoom(&q, &r(0.05), &r(0.95)).unwrap();
        let phi = DiffeoExpr::compose(&q, &z);
        let mut prev = phi.eval(&r(0.0)).unwrap();
        assert!(prev.is_zero());
        for i in 1..=64u64 {
            let x = Real::from_u64(i, BITS) / Real::from_u64(64, BITS);
            let v = phi.eval(&x).unwrap();
            assert!(v > prev, "not increasing at grid point {i}");
            prev = v;
        }
        assert!((&prev - &Real::one(BITS)).abs() < tol(-240));
    }
}
