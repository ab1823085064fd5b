//! The formulaic renormalization operator, ratio coordinates, and
//! trajectory generation with adaptive precision.
//!
//! One renormalization step takes the first-return map to `[x1, x2]`,
//! rescaled and flipped by `x -> x/x1`, and re-expresses it as a new point
//! of the model space. Worked out branch by branch this is closed-form in
//! the coordinates except for two monotone inversions:
//!
//! * `x1' = x2/x1`, `s' = phi^{+l}(1 - x2/x3)`, `x2' = s'^ell`;
//! * `x3'` and `x4'` solve `(1-x2) q_s(phi^-(1 - x')) + x2 = x4` (resp.
//!   `x3`), inverted as the closed-form inverse of `q_s` followed by a
//!   bracketed inversion of `phi^-`;
//! * the three new diffeomorphisms are zooms and compositions over the
//!   existing expression DAG; the `phi^{+r}` slot picks up the one
//!   orientation flip per level (a reversed zoom interval).
//!
//! The ratio coordinates `S1..S5` and their logs `w = (y2..y5)` turn the
//! cascade into an asymptotically affine iteration `w' = L w + w* + eps`;
//! trajectories record the residuals `eps_n` at every level.

use crate::error::{Error, Result};
use crate::flatmap::{qs_minus_inverse, DiffeoExpr, RenormPoint};
use crate::numerics::{PrecisionContext, Real};
use crate::spectral::{build_l, mat_apply, vec_sub, w_star, Vec4};

/// Failure mode of the renormalizability predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureSide {
    /// `x2` collapsed below the tolerance floor (degenerate).
    Short,
    /// `x2 >= x3`.
    Long,
}

/// Outcome of [`is_renormalizable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Renormalizability {
    Yes,
    No(FailureSide),
}

/// A point is renormalizable iff `0 < x2 < x3`; `x2` below the working
/// tolerance counts as the degenerate short side.
pub fn is_renormalizable(point: &RenormPoint, ctx: &PrecisionContext) -> Renormalizability {
    let floor = ctx.tol();
    if point.x2 < floor {
        Renormalizability::No(FailureSide::Short)
    } else if point.x2 >= point.x3 {
        Renormalizability::No(FailureSide::Long)
    } else {
        Renormalizability::Yes
    }
}

/// One renormalization step.
///
/// Requires [`is_renormalizable`]; the output satisfies the simplex
/// constraints or the step errors — never a silently invalid point.
pub fn renorm_step(point: &RenormPoint, ctx: &PrecisionContext) -> Result<RenormPoint> {
    match is_renormalizable(point, ctx) {
        Renormalizability::Yes => {}
        Renormalizability::No(side) => {
            return Err(Error::NotRenormalizable(format!(
                "x2 = {}, x3 = {} ({side:?})",
                point.x2.to_decimal(20),
                point.x3.to_decimal(20)
            )));
        }
    }
    let bits = point.precision_bits();
    let one = Real::one(bits);
    let zero = Real::zero(bits);

    // relative gap (x3 - x2)/x3; the subtraction is the cancellation hotspot
    let gap = point.x3.sub_guarded(&point.x2, ctx)?;
    let a = &gap / &point.x3;

    let s_new = point.phi_plus_l.eval(&a)?;
    let x1_new = &point.x2 / &point.x1;
    let x2_new = s_new.pow(&point.ell);

    // x3', x4' from the rising branch: q_s(phi^-(1 - x')) = (x4 - x2)/(1 - x2)
    // resp. (x3 - x2)/(1 - x2); invert q_s in closed form, phi^- numerically.
    let one_minus_x2 = &one - &point.x2;
    let t3 = (&point.x4 - &point.x2) / &one_minus_x2;
    let t4 = &gap / &one_minus_x2;
    // The inverter accepts convergence in x at ulp scale even when the
    // f-residual stalls on DAG evaluation noise; the nominal tolerance
    // below is the target for the healthy case.
    let tol = ctx.tol();
    let invert_phi_minus = |target: &Real| -> Result<Real> {
        let pre = qs_minus_inverse(&point.s, &point.ell, target)?;
        crate::numerics::invert_monotone_xres(
            |x| point.phi_minus.eval(x),
            |x| point.phi_minus.deriv(x),
            &pre,
            (&zero, &one),
            &tol,
            &pre,
        )
        .map_err(|e| match e {
            Error::Bracket { .. } => {
                Error::InversionBracket(format!("phi^- inversion at target {}", pre.to_decimal(20)))
            }
            // an unreachable tolerance at this precision is a precision
            // problem; let the drivers restart with more bits
            Error::Tolerance { .. } => Error::PrecisionExhausted {
                bits,
                context: "inversion tolerance unreachable at working precision",
            },
            other => other,
        })
    };
    let u3 = invert_phi_minus(&t3)?;
    let u4 = invert_phi_minus(&t4)?;
    let x3_new = &one - &u3;
    let x4_new = &one - &u4;

    // new diffeomorphisms over the existing DAG
    let qs_node = DiffeoExpr::qs_minus(&point.s, &point.ell)?;
    let psi = DiffeoExpr::compose(&qs_node, &point.phi_minus);
    let phi_minus_new = DiffeoExpr::zoom_oriented(&point.phi_plus_l, &a, &one)?;
    let phi_plus_l_new =
        DiffeoExpr::compose(&point.phi_plus_r, &DiffeoExpr::zoom_oriented(&psi, &u3, &one)?);
    let phi_plus_r_new = DiffeoExpr::compose(
        &DiffeoExpr::zoom_oriented(&point.phi_plus_l, &zero, &a)?,
        // reversed interval: the orientation flip of the return map
        &DiffeoExpr::zoom_oriented(&psi, &u4, &zero)?,
    );

    RenormPoint::new(
        point.ell.clone(),
        x1_new,
        x2_new,
        x3_new,
        x4_new,
        s_new,
        phi_minus_new,
        phi_plus_l_new,
        phi_plus_r_new,
    )
}

/// The five ratio coordinates of a renormalizable point:
/// `S1 = (x3-x2)/x3`, `S2 = (1-x4)/(1-x2)`, `S3 = x3/(1-x4)`,
/// `S4 = x2/(-x1)`, and `S5 = |x1| Df(x1) / (1-x2)`, which collapses
/// analytically to `Dq_s(0) * Dphi^-(0)`.
pub fn s_coords(point: &RenormPoint, ctx: &PrecisionContext) -> Result<[Real; 5]> {
    let bits = point.precision_bits();
    let one = Real::one(bits);
    if point.x2 >= point.x3 {
        return Err(Error::Domain("S1 requires 0 < x2 < x3".into()));
    }
    let gap = point.x3.sub_guarded(&point.x2, ctx)?;
    let s1 = &gap / &point.x3;
    let one_minus_x4 = &one - &point.x4;
    let one_minus_x2 = &one - &point.x2;
    let s2 = &one_minus_x4 / &one_minus_x2;
    let s3 = &point.x3 / &one_minus_x4;
    let s4 = &point.x2 / &-&point.x1;
    let s5 = point.boundary_derivative_ratio()?;
    Ok([s1, s2, s3, s4, s5])
}

/// Inverse of the coordinate change on the marked points:
/// `(S1..S4) -> (x1..x4)` in closed form.
pub fn xtos(s1: &Real, s2: &Real, s3: &Real, s4: &Real) -> Result<(Real, Real, Real, Real)> {
    let bits = s1.precision_bits();
    let one = Real::one(bits);
    let zero = Real::zero(bits);
    if *s1 <= zero || *s1 >= one {
        return Err(Error::SimplexViolation(format!("S1 = {} outside (0,1)", s1.to_decimal(20))));
    }
    for (name, v) in [("S2", s2), ("S3", s3), ("S4", s4)] {
        if *v <= zero {
            return Err(Error::SimplexViolation(format!(
                "{name} = {} not positive",
                v.to_decimal(20)
            )));
        }
    }
    let g = s3 * (&one - s1) * s2;
    let d = &one + &g;
    let x2 = &g / &d;
    let x1 = -&(&x2 / s4);
    let x3 = s2 * s3 / &d;
    let x4 = &one - &(s2 / &d);
    if x3 >= x4 {
        return Err(Error::SimplexViolation(
            "inconsistent ratios: S2 (1 + S1 S3) >= 1 forces x3 >= x4".into(),
        ));
    }
    Ok((x1, x2, x3, x4))
}

/// Closed-form Jacobian of [`xtos`] with respect to `(S1, y2, y3, y4, y5)`
/// where `y_i = log S_i`; rows are `x1..x4`.
///
/// Derived from the closed forms; note that d(x2)/d(y3) equals d(x2)/d(y2)
/// by the S2 <-> S3 symmetry of x2, and d(x3)/d(S1) is positive — both
/// confirmed by the finite-difference oracle.
pub fn xtos_jacobian(s1: &Real, s2: &Real, s3: &Real, s4: &Real) -> [[Real; 5]; 4] {
    let bits = s1.precision_bits();
    let one = Real::one(bits);
    let zero = Real::zero(bits);
    let g = s3 * (&one - s1) * s2;
    let d = &one + &g;
    let d2 = &d * &d;
    let s2s3 = s2 * s3;
    // x2 = G/D
    let dx2_ds1 = -&(&s2s3 / &d2);
    let dx2_dy2 = &g / &d2;
    let dx2_dy3 = dx2_dy2.clone();
    // x1 = -x2/S4
    let dx1_ds1 = &s2s3 / &(&d2 * s4);
    let dx1_dy2 = -&(&dx2_dy2 / s4);
    let dx1_dy3 = dx1_dy2.clone();
    let dx1_dy4 = &g / &(&d * s4);
    // x3 = S2 S3 / D
    let dx3_ds1 = &(&s2s3 * &s2s3) / &d2;
    let dx3_dy2 = &s2s3 / &d2;
    let dx3_dy3 = dx3_dy2.clone();
    // x4 = 1 - S2/D
    let dx4_ds1 = -&(&(&(s2 * s2) * s3) / &d2);
    let dx4_dy2 = -&(s2 / &d2);
    let dx4_dy3 = &(s2 * &g) / &d2;
    [
        [dx1_ds1, dx1_dy2, dx1_dy3, dx1_dy4, zero.clone()],
        [dx2_ds1, dx2_dy2, dx2_dy3, zero.clone(), zero.clone()],
        [dx3_ds1, dx3_dy2, dx3_dy3, zero.clone(), zero.clone()],
        [dx4_ds1, dx4_dy2, dx4_dy3, zero.clone(), zero],
    ]
}

/// Per-level data of a renormalization cascade.
#[derive(Clone, Debug)]
pub struct RenormState {
    pub n: usize,
    /// The model point, when the cascade was run in-process. Absent for
    /// trajectories reconstructed from serialized coordinate data.
    pub point: Option<RenormPoint>,
    /// Critical exponent (duplicated from the point so that coordinate-only
    /// states remain self-contained).
    pub ell: Real,
    pub x: [Real; 4],
    pub s_param: Real,
    /// `S1..S5`.
    pub s: [Real; 5],
    /// `w = (log S2, log S3, log S4, log S5)`.
    pub w: Vec4,
    /// Scaling ratio `alpha_n = x3/x4`.
    pub alpha: Real,
    /// Cumulative chart scale `Lambda_n = prod_{k<n} |x_{1,k}|`.
    pub lambda: Real,
}

/// A renormalization trajectory: one state per level, plus the residuals of
/// the affine model `eps_n = w_{n+1} - L w_n - w*`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<RenormState>,
    pub residuals: Vec<Vec4>,
    pub precision_used: u32,
    /// First non-renormalizable level, when the requested depth was not
    /// reached.
    pub failure: Option<(usize, FailureSide)>,
}

impl Trajectory {
    /// Number of renormalization steps recorded (states minus one).
    pub fn depth(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn state(&self, n: usize) -> &RenormState {
        &self.states[n]
    }

    pub fn alpha(&self, n: usize) -> &Real {
        &self.states[n].alpha
    }

    pub fn ell(&self) -> &Real {
        &self.states[0].ell
    }

    /// Sup-norm of the residual at level `n`.
    pub fn residual_norm(&self, n: usize) -> Real {
        crate::spectral::vec_norm(&self.residuals[n])
    }
}

fn make_state(n: usize, point: RenormPoint, lambda: Real, ctx: &PrecisionContext) -> Result<RenormState> {
    let s = s_coords(&point, ctx)?;
    let w = [s[1].ln(), s[2].ln(), s[3].ln(), s[4].ln()];
    let alpha = &point.x3 / &point.x4;
    let x = [point.x1.clone(), point.x2.clone(), point.x3.clone(), point.x4.clone()];
    let s_param = point.s.clone();
    let ell = point.ell.clone();
    Ok(RenormState { n, point: Some(point), ell, x, s_param, s, w, alpha, lambda })
}

/// Iterate [`renorm_step`] up to `depth` (or the first failure), recording
/// coordinates, `w`-vectors, scaling ratios and model residuals. Restarts
/// the whole cascade at doubled precision whenever catastrophic cancellation
/// is detected, up to `ctx.max_bits`.
pub fn run_trajectory(base: &RenormPoint, depth: usize, ctx: &PrecisionContext) -> Result<Trajectory> {
    let mut c = ctx.clone();
    loop {
        match attempt_trajectory(base, depth, &c) {
            Ok(t) => return Ok(t),
            Err(Error::PrecisionExhausted { .. }) => match c.escalate() {
                Some(next) => c = next,
                None => return Err(Error::PrecisionCeiling { max_bits: c.max_bits }),
            },
            Err(e) => return Err(e),
        }
    }
}

fn attempt_trajectory(base: &RenormPoint, depth: usize, ctx: &PrecisionContext) -> Result<Trajectory> {
    let point = base.with_precision(ctx.bits)?;
    let bits = ctx.bits;
    let l = build_l(&point.ell);
    let ws = w_star(&point.ell);

    let mut states: Vec<RenormState> = Vec::with_capacity(depth + 1);
    let mut failure = None;
    let mut lambda = Real::one(bits);
    let mut current = point;

    for n in 0..=depth {
        match is_renormalizable(&current, ctx) {
            Renormalizability::Yes => {}
            Renormalizability::No(side) => {
                failure = Some((n, side));
                break;
            }
        }
        states.push(make_state(n, current.clone(), lambda.clone(), ctx)?);
        if n == depth {
            break;
        }
        lambda = &lambda * &current.x1.abs();
        current = renorm_step(&current, ctx)?;
    }

    let mut residuals = Vec::new();
    for n in 0..states.len().saturating_sub(1) {
        let lw = mat_apply(&l, &states[n].w);
        let predicted = crate::spectral::vec_add(&lw, &ws);
        residuals.push(vec_sub(&states[n + 1].w, &predicted));
    }

    Ok(Trajectory { states, residuals, precision_used: bits, failure })
}

/// Per-level elimination residual `r_n = ell S1_n^ell / S2_n - 1`.
pub fn check_s1_elimination(traj: &Trajectory) -> Vec<Real> {
    traj.states
        .iter()
        .map(|st| {
            let one = Real::one(st.s[0].precision_bits());
            &st.ell * &st.s[0].pow(&st.ell) / &st.s[1] - &one
        })
        .collect()
}

/// One row of the interval-order diagnostics.
#[derive(Clone, Debug)]
pub struct OrderIntRow {
    pub n: usize,
    /// `x_{2,n+1} / alpha_{n+1}`.
    pub x2_next: Real,
    /// `x_{3,n+1} / alpha_{n+1}`.
    pub x3_next: Real,
    /// `(1 - x_{4,n+1}) / alpha_n`.
    pub x4_gap: Real,
    /// `S_{1,n} / alpha_{n+1}`.
    pub s1: Real,
}

/// Ratios of the interval-order quantities to their expected scaling powers;
/// bounded sequences mean the bounds hold with a uniform constant.
pub fn check_orderint(traj: &Trajectory) -> Vec<OrderIntRow> {
    let mut rows = Vec::new();
    for n in 0..traj.states.len().saturating_sub(1) {
        let bits = traj.states[n].alpha.precision_bits();
        let one = Real::one(bits);
        let next = &traj.states[n + 1];
        let alpha_next = &next.alpha;
        let alpha_n = &traj.states[n].alpha;
        rows.push(OrderIntRow {
            n,
            x2_next: &next.x[1] / alpha_next,
            x3_next: &next.x[2] / alpha_next,
            x4_gap: &(&one - &next.x[3]) / alpha_n,
            s1: &traj.states[n].s[0] / alpha_next,
        });
    }
    rows
}

/// Multiplicative errors of the five-ratio recursion at each level: entry
/// `i` is `|LHS/RHS - 1|` for the recursion of `S_{i+1}`, expected to decay
/// like `sqrt(alpha)`.
pub fn ss_recursion_errors(traj: &Trajectory) -> Vec<[Real; 5]> {
    let mut out = Vec::new();
    for n in 0..traj.states.len().saturating_sub(1) {
        let st = &traj.states[n];
        let next = &traj.states[n + 1];
        let bits = st.s[0].precision_bits();
        let one = Real::one(bits);
        let ell = &st.ell;
        let s1l = st.s[0].pow(ell);
        let e1 = &(&(&one - &next.s[0]) * &st.s[1]) / &(ell * &s1l) - &one;
        let e2 = &(&next.s[1] * &st.s[4]) / &(&(&st.s[0] * &st.s[1]) * &st.s[2]) - &one;
        let e3 = &(&(&next.s[2] * ell) * &(&st.s[0] * &st.s[2])) / &st.s[4] - &one;
        let e4 = &(&next.s[3] * &st.s[3]) / &s1l - &one;
        let e5 = &next.s[4] / &(ell * &st.s[0].pow(&(ell - &one))) - &one;
        out.push([e1.abs(), e2.abs(), e3.abs(), e4.abs(), e5.abs()]);
    }
    out
}
