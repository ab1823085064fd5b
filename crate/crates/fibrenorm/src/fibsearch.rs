//! Bisection location of the Fibonacci parameter inside a one-parameter
//! family of model points.
//!
//! The `n`-times-renormalizable parameters form nested intervals, so the
//! golden-mean parameter can be bracketed by bisection on renormalization
//! depth. The orientation bookkeeping needs one dynamical fact: every
//! failure of the cascade manifests as `x2 >= x3`, and the parity of the
//! failing level flips across the located parameter (each renormalization
//! reverses orientation). A numeric "short" failure at level `m` (the next
//! `x2` collapsing below the tolerance floor) is the same geometric event
//! as a long failure at level `m + 1` and is canonicalized accordingly.
//! Endpoints with equal orientation signatures are a user bracket error.

use crate::error::{Error, Result};
use crate::flatmap::RenormPoint;
use crate::numerics::{PrecisionContext, Real};
use crate::renorm::{
    is_renormalizable, renorm_step, run_trajectory, FailureSide, Renormalizability, Trajectory,
};

/// Which coordinate of the base point the family varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyCoord {
    X1,
    X2,
    X3,
    X4,
    S,
}

impl FamilyCoord {
    pub fn parse(name: &str) -> Result<FamilyCoord> {
        match name {
            "x1" => Ok(FamilyCoord::X1),
            "x2" => Ok(FamilyCoord::X2),
            "x3" => Ok(FamilyCoord::X3),
            "x4" => Ok(FamilyCoord::X4),
            "s" => Ok(FamilyCoord::S),
            other => Err(Error::Domain(format!("unknown family coordinate {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyCoord::X1 => "x1",
            FamilyCoord::X2 => "x2",
            FamilyCoord::X3 => "x3",
            FamilyCoord::X4 => "x4",
            FamilyCoord::S => "s",
        }
    }
}

/// A one-parameter family of model points: one coordinate of a base point
/// varies over a bracket. The default dial is `x2`, the critical value
/// height, whose influence on the return combinatorics is monotone.
#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub base: RenormPoint,
    pub varying: FamilyCoord,
    pub bracket: (Real, Real),
}

impl FamilySpec {
    pub fn new(base: RenormPoint, varying: FamilyCoord, bracket: (Real, Real)) -> Result<FamilySpec> {
        if bracket.0 >= bracket.1 {
            return Err(Error::DegenerateInterval {
                a: bracket.0.to_decimal(20),
                b: bracket.1.to_decimal(20),
            });
        }
        let spec = FamilySpec { base, varying, bracket };
        // both endpoints must be valid points of the simplex
        let bits = spec.base.precision_bits();
        spec.point_at(&spec.bracket.0.clone(), bits)?;
        spec.point_at(&spec.bracket.1.clone(), bits)?;
        Ok(spec)
    }

    /// The family member at parameter `t`, realized at `bits` precision.
    pub fn point_at(&self, t: &Real, bits: u32) -> Result<RenormPoint> {
        let b = self.base.with_precision(bits)?;
        let t = t.with_precision(bits);
        let (x1, x2, x3, x4, s) = match self.varying {
            FamilyCoord::X1 => (t, b.x2, b.x3, b.x4, b.s),
            FamilyCoord::X2 => (b.x1, t, b.x3, b.x4, b.s),
            FamilyCoord::X3 => (b.x1, b.x2, t, b.x4, b.s),
            FamilyCoord::X4 => (b.x1, b.x2, b.x3, t, b.s),
            FamilyCoord::S => (b.x1, b.x2, b.x3, b.x4, t),
        };
        RenormPoint::new(b.ell, x1, x2, x3, x4, s, b.phi_minus, b.phi_plus_l, b.phi_plus_r)
    }
}

/// Outcome of a depth probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthOutcome {
    /// Renormalizable through the requested cap.
    Reached,
    /// Failed with this side.
    Failed(FailureSide),
}

/// Largest `n <= max_n` such that the first `n` renormalizations go
/// through, together with the failure mode at level `n` (or `Reached`).
pub fn renorm_depth(
    point: &RenormPoint,
    max_n: usize,
    ctx: &PrecisionContext,
) -> Result<(usize, DepthOutcome)> {
    let mut current = point.clone();
    for n in 0..max_n {
        match is_renormalizable(&current, ctx) {
            Renormalizability::Yes => {}
            Renormalizability::No(side) => return Ok((n, DepthOutcome::Failed(side))),
        }
        current = renorm_step(&current, ctx)?;
    }
    match is_renormalizable(&current, ctx) {
        Renormalizability::Yes => Ok((max_n, DepthOutcome::Reached)),
        Renormalizability::No(side) => Ok((max_n, DepthOutcome::Failed(side))),
    }
}

/// Orientation of a failure: which side of the located parameter it lies
/// on. Long failures alternate parity across the manifold; a short failure
/// at level `m` is the long failure at `m + 1` in disguise.
fn orientation(level: usize, side: FailureSide) -> bool {
    match side {
        FailureSide::Long => level % 2 == 0,
        FailureSide::Short => (level + 1) % 2 == 0,
    }
}

/// Tuning knobs for [`bisect_fibonacci`].
#[derive(Clone, Debug)]
pub struct SearchOptions {
    /// Keep bisecting until the bracket width drops below this; `None`
    /// stops at the first parameter reaching the target depth.
    pub width_goal: Option<Real>,
    /// Hard cap on bisection steps.
    pub max_steps: usize,
    /// How far beyond `target_depth` the probe cap may grow while the
    /// bracket is being narrowed.
    pub auto_deepen: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { width_goal: None, max_steps: 400, auto_deepen: 6 }
    }
}

/// Result of a bisection search.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub parameter: Real,
    pub bracket: (Real, Real),
    pub bracket_width: Real,
    pub achieved_depth: usize,
    pub trajectory: Trajectory,
    pub bisection_steps: usize,
    pub precision_used: u32,
}

/// Bisect the family on renormalization depth until `target_depth` is
/// reached (and, when a width goal is set, until the bracket is that
/// narrow). The endpoints must fail with opposite orientations.
///
/// Probes are depth-capped at `best + 2` to reject shallow candidates
/// cheaply; the cap grows past `target_depth` while the width goal is
/// unmet, so the bracket keeps shrinking around ever-deeper parameters.
/// Precision restarts (doubling up to `ctx.max_bits`) happen per probe.
pub fn bisect_fibonacci(
    family: &FamilySpec,
    target_depth: usize,
    ctx: &PrecisionContext,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let mut c = ctx.clone();
    let bits = c.bits;
    let (mut lo, mut hi) =
        (family.bracket.0.with_precision(bits), family.bracket.1.with_precision(bits));
    // a trajectory of `target_depth` steps needs `target_depth + 1`
    // renormalizable levels
    let need = target_depth + 1;
    let max_auto = need + opts.auto_deepen;

    // a probe with per-candidate precision escalation
    let probe = |t: &Real, cap: usize, c: &mut PrecisionContext| -> Result<(usize, DepthOutcome)> {
        loop {
            let point = family.point_at(t, c.bits)?;
            match renorm_depth(&point, cap, c) {
                Ok(r) => return Ok(r),
                Err(Error::PrecisionExhausted { .. }) => match c.escalate() {
                    Some(next) => *c = next,
                    None => return Err(Error::PrecisionCeiling { max_bits: c.max_bits }),
                },
                Err(e) => return Err(e),
            }
        }
    };
    // deepen the probe cap until the candidate fails or the auto cap is hit
    let deep_probe = |t: &Real,
                      start_cap: usize,
                      c: &mut PrecisionContext|
     -> Result<(usize, Option<FailureSide>)> {
        let mut cap = start_cap.max(1);
        loop {
            let (d, outcome) = probe(t, cap, c)?;
            match outcome {
                DepthOutcome::Failed(side) => return Ok((d, Some(side))),
                DepthOutcome::Reached if cap >= max_auto => return Ok((d, None)),
                DepthOutcome::Reached => cap = (cap + 4).min(max_auto),
            }
        }
    };

    let (d_lo, side_lo) = deep_probe(&lo, need, &mut c)?;
    let (d_hi, side_hi) = deep_probe(&hi, need, &mut c)?;
    let (side_lo, side_hi) = match (side_lo, side_hi) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::SameSideBracket(
                "a bracket endpoint is itself renormalizable past the probe cap".into(),
            ))
        }
    };
    let orient_lo = orientation(d_lo, side_lo);
    let orient_hi = orientation(d_hi, side_hi);
    if orient_lo == orient_hi {
        return Err(Error::SameSideBracket(format!(
            "both endpoints fail with orientation {orient_lo} (depths {d_lo}, {d_hi})"
        )));
    }

    let mut best_depth = d_lo.max(d_hi);
    let mut best_param: Option<Real> = None;
    let mut steps = 0usize;
    let half = Real::from_ratio(1, 2, bits);

    loop {
        let width = &hi - &lo;
        let deep_enough = best_depth >= need && best_param.is_some();
        let narrow_enough = match &opts.width_goal {
            None => true,
            Some(goal) => width <= goal.with_precision(bits),
        };
        if (deep_enough && narrow_enough) || steps >= opts.max_steps {
            break;
        }
        steps += 1;
        let mid = (&lo + &hi) * &half;
        // depth-first while hunting for the target (cheap rejection of
        // shallow candidates); full-depth probes once the target is met and
        // only the width goal remains, so re-runs pinch the same parameter
        let cap = if best_depth < need { (best_depth + 2).min(need) } else { max_auto };
        let (d, side) = deep_probe(&mid, cap, &mut c)?;
        if d > best_depth || (d >= need && best_param.is_none()) {
            best_depth = d;
            best_param = Some(mid.clone());
        }
        match side {
            None => {
                // indistinguishable from the manifold at the deepest cap
                best_depth = d;
                best_param = Some(mid);
                break;
            }
            Some(side) => {
                if orientation(d, side) == orient_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }

    let parameter = best_param.unwrap_or_else(|| (&lo + &hi) * &half);
    let trajectory = run_trajectory(&family.point_at(&parameter, c.bits)?, target_depth, &c)?;
    let achieved_depth = trajectory.depth();
    Ok(SearchResult {
        parameter,
        bracket_width: &hi - &lo,
        bracket: (lo, hi),
        achieved_depth,
        trajectory,
        bisection_steps: steps,
        precision_used: c.bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatmap::standard_point;

    const BITS: u32 = 320;

    fn family() -> FamilySpec {
        let base = standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).unwrap();
        FamilySpec::new(
            base,
            FamilyCoord::X2,
            (Real::from_f64(0.01, BITS), Real::from_f64(0.19, BITS)),
        )
        .unwrap()
    }

    #[test]
    fn depth_of_immediately_failing_point() {
        let ctx = PrecisionContext::new(BITS);
        let p = standard_point(1.5, -0.4, 0.3, 0.2, 0.9, 0.5, BITS).unwrap();
        let (d, out) = renorm_depth(&p, 10, &ctx).unwrap();
        assert_eq!(d, 0);
        assert_eq!(out, DepthOutcome::Failed(FailureSide::Long));
    }

    #[test]
    fn locates_a_deep_parameter() {
        let ctx = PrecisionContext::new(BITS);
        let res = bisect_fibonacci(&family(), 8, &ctx, &SearchOptions::default()).unwrap();
        assert!(res.achieved_depth >= 8, "achieved {}", res.achieved_depth);
        assert!(res.trajectory.failure.is_none());
        assert!(res.bracket.0 <= res.parameter && res.parameter <= res.bracket.1);
        // alphas decrease along the located trajectory
        for n in 1..res.trajectory.states.len() {
            assert!(res.trajectory.alpha(n) < res.trajectory.alpha(n - 1));
        }
    }

    #[test]
    fn bracket_width_halves_per_step() {
        let ctx = PrecisionContext::new(BITS);
        let fam = family();
        let opts =
            SearchOptions { width_goal: Some(Real::two_pow(-40, BITS)), ..SearchOptions::default() };
        let res = bisect_fibonacci(&fam, 6, &ctx, &opts).unwrap();
        assert!(res.bracket_width <= Real::two_pow(-40, BITS));
        // re-running with a perturbed bracket containing the parameter
        // converges to the same value within the combined final widths
        let shift = Real::from_f64(0.003, BITS);
        let fam2 = FamilySpec::new(
            fam.base.clone(),
            FamilyCoord::X2,
            (&fam.bracket.0 + &shift, fam.bracket.1.clone()),
        )
        .unwrap();
        let res2 = bisect_fibonacci(&fam2, 6, &ctx, &opts).unwrap();
        let gap = (&res.parameter - &res2.parameter).abs();
        let bound = &res.bracket_width + &res2.bracket_width;
        assert!(gap <= bound, "gap {} vs bound {}", gap.to_decimal(10), bound.to_decimal(10));
    }

    #[test]
    fn failure_orientations_flip_across_the_located_parameter() {
        let ctx = PrecisionContext::new(BITS);
        let fam = family();
        let res = bisect_fibonacci(&fam, 8, &ctx, &SearchOptions::default()).unwrap();
        let mut lo_orients = Vec::new();
        let mut hi_orients = Vec::new();
        for k in [3i32, 5, 7] {
            let delta = Real::from_f64(10f64.powi(-k), BITS);
            let below = &res.parameter - &delta;
            let above = &res.parameter + &delta;
            for (param, bucket) in
                [(below, &mut lo_orients), (above, &mut hi_orients)]
            {
                let p = fam.point_at(&param, BITS).unwrap();
                let (d, out) = renorm_depth(&p, 40, &ctx).unwrap();
                if let DepthOutcome::Failed(side) = out {
                    bucket.push(orientation(d, side));
                }
            }
        }
        assert!(!lo_orients.is_empty() && !hi_orients.is_empty());
        assert!(lo_orients.windows(2).all(|w| w[0] == w[1]), "left side consistent");
        assert!(hi_orients.windows(2).all(|w| w[0] == w[1]), "right side consistent");
        assert_ne!(lo_orients[0], hi_orients[0], "sides are opposite");
    }

    #[test]
    fn same_side_bracket_is_rejected() {
        let ctx = PrecisionContext::new(BITS);
        let base = standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).unwrap();
        // both endpoints on the same side of the located parameter
        let fam = FamilySpec::new(
            base,
            FamilyCoord::X2,
            (Real::from_f64(0.18, BITS), Real::from_f64(0.19, BITS)),
        )
        .unwrap();
        match bisect_fibonacci(&fam, 8, &ctx, &SearchOptions::default()) {
            Err(Error::SameSideBracket(_)) => {}
            other => panic!("expected SameSideBracket, got {other:?}"),
        }
    }

    #[test]
    fn family_validation() {
        let base = standard_point(1.5, -0.4, 0.08, 0.2, 0.9, 0.5, BITS).unwrap();
        // endpoint outside the simplex
        assert!(FamilySpec::new(
            base.clone(),
            FamilyCoord::X2,
            (Real::from_f64(0.01, BITS), Real::from_f64(1.5, BITS)),
        )
        .is_err());
        // reversed bracket
        assert!(FamilySpec::new(
            base,
            FamilyCoord::X2,
            (Real::from_f64(0.19, BITS), Real::from_f64(0.01, BITS)),
        )
        .is_err());
        assert_eq!(FamilyCoord::parse("x2").unwrap(), FamilyCoord::X2);
        assert!(FamilyCoord::parse("x9").is_err());
    }
}
