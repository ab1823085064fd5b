//! Direct iteration of the model map: rotation-number diagnostics,
//! Fibonacci return times, the dynamical first-return oracle, and central
//! partition-interval lengths.
//!
//! The formulaic operator in [`crate::renorm`] is the production path;
//! everything here exists to check it against the dynamics it encodes.
//! The circle is represented as the fundamental interval `[x1, 1]` with the
//! endpoints identified; the lift adds `1 - x1` per wrap. Only length
//! ratios enter any downstream result, so the circle's total length need
//! not be 1.

use crate::error::{Error, Result};
use crate::flatmap::RenormPoint;
use crate::numerics::{PrecisionContext, Real};
use crate::renorm::Trajectory;

/// Closest-return times `q_0..q_N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReturnTimes {
    pub q: Vec<u64>,
}

/// Fibonacci return times: `q_0 = q_1 = 1`, `q_{n+1} = q_n + q_{n-1}`.
pub fn fibonacci_qn(n: usize) -> ReturnTimes {
    let mut q = Vec::with_capacity(n + 1);
    q.push(1u64);
    if n >= 1 {
        q.push(1);
    }
    for k in 2..=n {
        q.push(q[k - 1] + q[k - 2]);
    }
    ReturnTimes { q }
}

/// The golden mean `(sqrt(5) - 1)/2`, the value of the all-ones continued
/// fraction.
pub fn golden_mean(bits: u32) -> Real {
    (Real::from_u64(5, bits).sqrt() - Real::one(bits)) / Real::from_u64(2, bits)
}

/// Lift-average rotation number estimate over the given number of
/// iterations; error is `O(1/iterations)`. Diagnostic only.
pub fn rotation_number_estimate(point: &RenormPoint, iterations: usize) -> Result<Real> {
    assert!(iterations >= 1, "at least one iteration required");
    let bits = point.precision_bits();
    let one = Real::one(bits);
    let zero = Real::zero(bits);
    let turn = &one - &point.x1;
    let mut x = zero.clone();
    let mut lifted = zero.clone();
    for _ in 0..iterations {
        let next = point.eval_map(&x)?;
        // branches with domain in [0, 1] pass the circle cut at 0 ~ wrap
        let wrap = if x >= zero { turn.clone() } else { zero.clone() };
        lifted = &lifted + &(&(&next - &x) + &wrap);
        x = next;
    }
    Ok(&lifted / &(&turn * &Real::from_u64(iterations as u64, bits)))
}

/// First-return samples of the map to its base interval `[x1, x2]`.
///
/// For each grid point, iterates the map until the orbit re-enters
/// `[x1, x2]`, then returns the rescaled-and-flipped value `G(x)/x1`
/// together with the return time. Fails with [`Error::NonReturn`] if no
/// return happens within `max_iter` steps, which signals a
/// non-renormalizable point or precision loss.
pub fn first_return_samples(
    point: &RenormPoint,
    grid: &[Real],
    max_iter: usize,
) -> Result<Vec<(usize, Real)>> {
    let mut out = Vec::with_capacity(grid.len());
    for x in grid {
        if *x < point.x1 || *x > point.x2 {
            return Err(Error::Domain(format!(
                "grid point {} outside the base interval",
                x.to_decimal(20)
            )));
        }
        let mut v = point.eval_map(x)?;
        let mut time = 1usize;
        loop {
            if v >= point.x1 && v <= point.x2 {
                break;
            }
            if time >= max_iter {
                return Err(Error::NonReturn { max_iter });
            }
            v = point.eval_map(&v)?;
            time += 1;
        }
        out.push((time, &v / &point.x1));
    }
    Ok(out)
}

/// Observed return times of the base map to the level-`n` central interval.
///
/// The level-`n` base interval is the chart image of `[x_{1,n}, x_{2,n}]`
/// under the signed chart scale `prod_{k<n} x_{1,k}`. Working out the
/// branch costs recursively (descending branch of level `n+1` costs one
/// descending plus one rising pass of level `n`, rising costs one
/// descending), first-return times to the level-`n` interval land in
/// `{q_{n+1}, q_{n+2}}`. This checks the level-labelling convention
/// directly against the dynamics.
pub fn level_return_times(traj: &Trajectory, level: usize, samples: usize) -> Result<Vec<usize>> {
    let base = traj
        .states
        .first()
        .and_then(|s| s.point.clone())
        .ok_or_else(|| Error::Domain("trajectory carries no base point".into()))?;
    if level >= traj.states.len() {
        return Err(Error::Domain(format!("level {level} beyond trajectory depth")));
    }
    let bits = base.precision_bits();
    // signed chart scale
    let mut scale = Real::one(bits);
    for k in 0..level {
        scale = &scale * &traj.states[k].x[0];
    }
    let e1 = &scale * &traj.states[level].x[0];
    let e2 = &scale * &traj.states[level].x[1];
    let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };

    let q = fibonacci_qn(level + 2).q;
    let cap = 4 * (*q.last().unwrap() as usize) + 8;
    // stratified samples: the chart interval splits at 0 into the rising
    // part [x_{1,n}, 0) and the descending part (0, x_{2,n}], and at deep
    // levels the descending part is a vanishing fraction of the whole
    let mut chart_points = Vec::with_capacity(samples);
    let halves = [(&traj.states[level].x[0], samples / 2), (&traj.states[level].x[1], samples - samples / 2)];
    for (endpoint, count) in halves {
        for i in 1..=count {
            let frac = Real::from_u64(i as u64, bits) / Real::from_u64(count as u64 + 1, bits);
            chart_points.push(endpoint * &frac);
        }
    }
    let mut times = Vec::with_capacity(samples);
    for y in &chart_points {
        let x0 = &scale * y;
        let mut x = base.eval_map(&x0)?;
        let mut t = 1usize;
        while !(x >= lo && x <= hi) {
            if t >= cap {
                return Err(Error::NonReturn { max_iter: cap });
            }
            x = base.eval_map(&x)?;
            t += 1;
        }
        times.push(t);
    }
    Ok(times)
}

/// Absolute lengths of the central partition intervals at one level.
#[derive(Clone, Debug)]
pub struct PartitionLevel {
    pub n: usize,
    /// `Lambda_n |x_{1,n}|` — the interval between the critical value and
    /// its closest return from the left.
    pub len_a: Real,
    /// `Lambda_n x_{3,n}`.
    pub len_b: Real,
    /// `Lambda_n (x_{4,n} - x_{3,n})` — the flat-interval gap.
    pub len_c: Real,
    /// `Lambda_n (1 - x_{4,n})`.
    pub len_d: Real,
    /// Chart scale `Lambda_n`.
    pub lambda: Real,
}

/// Central-interval lengths per level, from the chart scales recorded in
/// the trajectory. `Lambda_0 = 1` (empty product).
pub fn partition_lengths(traj: &Trajectory) -> Vec<PartitionLevel> {
    traj.states
        .iter()
        .map(|st| {
            let bits = st.x[0].precision_bits();
            let one = Real::one(bits);
            PartitionLevel {
                n: st.n,
                len_a: &st.lambda * &st.x[0].abs(),
                len_b: &st.lambda * &st.x[2],
                len_c: &st.lambda * &(&st.x[3] - &st.x[2]),
                len_d: &st.lambda * &(&one - &st.x[3]),
                lambda: st.lambda.clone(),
            }
        })
        .collect()
}

/// Grid distortion of `f^iterate` on `[a, b]`: the composed derivative is
/// accumulated along the orbit by the chain rule, and the orbit must avoid
/// the flat interval before the last step.
pub fn measure_distortion(
    point: &RenormPoint,
    iterate: usize,
    interval: (&Real, &Real),
    grid_size: usize,
) -> Result<Real> {
    assert!(grid_size >= 2);
    let (a, b) = interval;
    let bits = point.precision_bits();
    if a >= b {
        return Err(Error::DegenerateInterval { a: a.to_decimal(20), b: b.to_decimal(20) });
    }
    if iterate == 0 {
        return Ok(Real::zero(bits));
    }
    let width = b - a;
    let steps = Real::from_u64(grid_size as u64 - 1, bits);
    let mut min_d: Option<Real> = None;
    let mut max_d: Option<Real> = None;
    for i in 0..grid_size {
        let frac = Real::from_u64(i as u64, bits) / &steps;
        let mut x = a + &(&width * &frac);
        let mut log_deriv = Real::zero(bits);
        for step in 0..iterate {
            if x >= point.x3 && x <= point.x4 {
                return Err(Error::FlatHit { step });
            }
            let d = point.eval_map_deriv(&x)?;
            if !d.is_positive() {
                return Err(Error::FlatHit { step });
            }
            log_deriv = &log_deriv + &d.ln();
            x = point.eval_map(&x)?;
        }
        min_d = Some(min_d.map_or(log_deriv.clone(), |m: Real| m.min(&log_deriv)));
        max_d = Some(max_d.map_or(log_deriv.clone(), |m: Real| m.max(&log_deriv)));
    }
    Ok(&max_d.unwrap() - &min_d.unwrap())
}

/// Cross-ratio distortion `B(g, T, J)` of a monotone map from the four
/// ordered points `a < b < c < d` (so `T = [a,d]`, `J = [b,c]`, wings
/// `L = [a,b]`, `R = [c,d]`) and their images.
pub fn cross_ratio(points: &[Real; 4], images: &[Real; 4]) -> Result<Real> {
    for w in points.windows(2).chain(images.windows(2)) {
        if w[0] >= w[1] {
            return Err(Error::DegenerateInterval {
                a: w[0].to_decimal(20),
                b: w[1].to_decimal(20),
            });
        }
    }
    let [a, b, c, d] = points;
    let [ga, gb, gc, gd] = images;
    let t = d - a;
    let j = c - b;
    let l = b - a;
    let r = d - c;
    let gt = gd - ga;
    let gj = gc - gb;
    let gl = gb - ga;
    let gr = gd - gc;
    Ok(&(&(&gt * &gj) / &(&t * &j)) * &(&(&l * &r) / &(&gl * &gr)))
}

/// `cross_ratio` of a map given as a closure, evaluated at the four points.
pub fn cross_ratio_of<F>(points: &[Real; 4], mut g: F) -> Result<Real>
where
    F: FnMut(&Real) -> Result<Real>,
{
    let images = [g(&points[0])?, g(&points[1])?, g(&points[2])?, g(&points[3])?];
    cross_ratio(points, &images)
}

/// Distortion of the three renormalized diffeomorphisms at every level of a
/// trajectory, for decay diagnostics against `sqrt(alpha_{n-2})`.
pub fn diffeo_distortions(traj: &Trajectory, grid_size: usize) -> Result<Vec<[Real; 3]>> {
    let mut out = Vec::new();
    for st in &traj.states {
        let p = st
            .point
            .as_ref()
            .ok_or_else(|| Error::Domain("trajectory carries no points".into()))?;
        out.push([
            p.phi_minus.distortion(grid_size)?,
            p.phi_plus_l.distortion(grid_size)?,
            p.phi_plus_r.distortion(grid_size)?,
        ]);
    }
    Ok(out)
}

/// Convenience: how deep the first-return oracle and the formulaic operator
/// agree, in sup over a fresh grid per level. Returns the worst absolute
/// mismatch seen at each level `1..=levels`.
pub fn oracle_agreement(
    base: &RenormPoint,
    levels: usize,
    grid_points: usize,
    ctx: &PrecisionContext,
) -> Result<Vec<Real>> {
    let mut current = base.clone();
    let bits = base.precision_bits();
    let one = Real::one(bits);
    let mut worst = Vec::with_capacity(levels);
    for _ in 0..levels {
        let next = crate::renorm::renorm_step(&current, ctx)?;
        // grid in the new chart, clear of the new branch boundaries
        let mut grid = Vec::new();
        let span = &one - &next.x1;
        let margin = Real::from_ratio(1, 64, bits) * &span;
        let mut i = 0u64;
        while grid.len() < grid_points {
            i += 1;
            let frac = Real::from_u64(i, bits) / Real::from_u64(2 * grid_points as u64, bits);
            let y = &next.x1 + &(&span * &frac);
            if y.abs() < margin
                || (&y - &next.x3).abs() < margin
                || (&y - &next.x4).abs() < margin
                || (&y - &one).abs() < margin
                || (&y - &next.x1).abs() < margin
            {
                continue;
            }
            grid.push(y);
            if i > 4 * grid_points as u64 {
                break;
            }
        }
        // dynamical route in the current chart
        let base_grid: Vec<Real> = grid.iter().map(|y| &current.x1 * y).collect();
        let returned = first_return_samples(&current, &base_grid, 8)?;
        let mut level_worst = Real::zero(bits);
        for (y, (_, g_dyn)) in grid.iter().zip(returned.iter()) {
            let formulaic = next.eval_map(y)?;
            level_worst = level_worst.max(&(&formulaic - g_dyn).abs());
        }
        worst.push(level_worst);
        current = next;
    }
    Ok(worst)
}
