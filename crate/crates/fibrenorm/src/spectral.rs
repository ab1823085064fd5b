//! The linear model of the cascade: the 4x4 matrix `L`, the affine term
//! `w*`, the fixed point `w_fix`, and closed-form eigendata.
//!
//! In the log-ratio coordinates `w = (y2, y3, y4, y5)` the renormalization
//! step is asymptotically affine, `w_{n+1} = L w_n + w* + error`, and the
//! spectrum of `L` drives everything downstream: the invariant extraction
//! expands trajectories in the eigenbasis, and the regularity exponents are
//! rational expressions in the unstable eigenvalue and eigenvector.
//!
//! Eigen-solves here are closed forms, never iterative: the characteristic
//! polynomial factors as `lambda (lambda + 1)(lambda^2 - lambda/ell - 1/ell)`,
//! so everything is a quadratic formula away.

use crate::error::{Error, Result};
use crate::numerics::Real;

pub type Vec4 = [Real; 4];
pub type Mat4 = [[Real; 4]; 4];

/// Eigen-structure of the linearized step for one critical exponent.
#[derive(Clone, Debug)]
pub struct EigenData {
    pub ell: Real,
    pub l_matrix: Mat4,
    pub w_star: Vec4,
    pub w_fix: Vec4,
    pub lambda_u: Real,
    pub lambda_s: Real,
    /// Components indexed 2..5 (the `y2..y5` coordinates).
    pub e_u: Vec4,
    pub e_s: Vec4,
    pub e_minus: Vec4,
    pub e_zero: Vec4,
}

/// The linear part of the step in `(y2, y3, y4, y5)`:
///
/// rows `[1 + 1/ell, 1, 0, -1; -1/ell, -1, 0, 1; 1, 0, -1, 0; 1 - 1/ell, 0, 0, 0]`.
pub fn build_l(ell: &Real) -> Mat4 {
    let bits = ell.precision_bits();
    let zero = || Real::zero(bits);
    let one = || Real::one(bits);
    let inv = ell.recip();
    [
        [&one() + &inv, one(), zero(), -&one()],
        [-&inv, -&one(), zero(), one()],
        [one(), zero(), -&one(), zero()],
        [&one() - &inv, zero(), zero(), zero()],
    ]
}

/// The affine term `w* = log(ell) * (-1/ell, 1 - 1/ell, -1, 1/ell)`.
pub fn w_star(ell: &Real) -> Vec4 {
    let bits = ell.precision_bits();
    let log_ell = ell.ln();
    let inv = ell.recip();
    let one = Real::one(bits);
    [
        -&inv * &log_ell,
        (&one - &inv) * &log_ell,
        -&log_ell,
        &inv * &log_ell,
    ]
}

/// Fixed point of `w -> L w + w*`, solved by exact elimination of
/// `(I - L) w = w*` (1 is not an eigenvalue of `L`).
pub fn fixed_point(ell: &Real) -> Vec4 {
    let l = build_l(ell);
    let bits = ell.precision_bits();
    let one = Real::one(bits);
    let mut a: Mat4 = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let diag = if i == j { one.clone() } else { Real::zero(bits) };
            &diag - &l[i][j]
        })
    });
    let mut b = w_star(ell);
    solve4(&mut a, &mut b).expect("I - L is invertible for ell in (1,2)")
}

/// Gaussian elimination with partial pivoting on a 4x4 system; consumes the
/// inputs. Fails only for (numerically) singular systems.
fn solve4(a: &mut Mat4, b: &mut Vec4) -> Result<Vec4> {
    let bits = a[0][0].precision_bits();
    let floor = Real::two_pow(-(bits as i32 - 8), bits);
    for col in 0..4 {
        let mut pivot = col;
        for row in col + 1..4 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < floor {
            return Err(Error::SingularBasis);
        }
        if pivot != col {
            a.swap(pivot, col);
            b.swap(pivot, col);
        }
        for row in col + 1..4 {
            let factor = &a[row][col] / &a[col][col];
            for k in col..4 {
                a[row][k] = &a[row][k] - &(&factor * &a[col][k]);
            }
            b[row] = &b[row] - &(&factor * &b[col]);
        }
    }
    let zero = Real::zero(bits);
    let mut x: Vec4 = std::array::from_fn(|_| zero.clone());
    for row in (0..4).rev() {
        let mut acc = b[row].clone();
        for k in row + 1..4 {
            acc = &acc - &(&a[row][k] * &x[k]);
        }
        x[row] = &acc / &a[row][row];
    }
    Ok(x)
}

/// Matrix-vector product.
pub fn mat_apply(m: &Mat4, v: &Vec4) -> Vec4 {
    std::array::from_fn(|i| {
        let mut acc = &m[i][0] * &v[0];
        for j in 1..4 {
            acc = &acc + &(&m[i][j] * &v[j]);
        }
        acc
    })
}

pub fn vec_sub(a: &Vec4, b: &Vec4) -> Vec4 {
    std::array::from_fn(|i| &a[i] - &b[i])
}

pub fn vec_add(a: &Vec4, b: &Vec4) -> Vec4 {
    std::array::from_fn(|i| &a[i] + &b[i])
}

pub fn vec_scale(a: &Vec4, c: &Real) -> Vec4 {
    std::array::from_fn(|i| &a[i] * c)
}

/// Sup norm of a 4-vector.
pub fn vec_norm(a: &Vec4) -> Real {
    let mut n = a[0].abs();
    for v in &a[1..] {
        n = n.max(&v.abs());
    }
    n
}

/// Closed-form eigenvalues and eigenvectors for `1 < ell < 2`.
///
/// `lambda_{u,s} = (1/ell +- sqrt(1/ell^2 + 4/ell)) / 2`;
/// `E_u = (1, (-lambda_u + ell - 1)/(ell lambda_u (1 + lambda_u)),
/// 1/(1 + lambda_u), (ell - 1)/(ell lambda_u))`, same shape for `E_s`;
/// `E_- = (0, 0, -1, 0)`; `E_0 = (0, 1, 0, 1)` spans the kernel.
pub fn eigen_closed_form(ell: &Real) -> EigenData {
    let bits = ell.precision_bits();
    let one = Real::one(bits);
    let two = Real::from_u64(2, bits);
    let four = Real::from_u64(4, bits);
    let inv = ell.recip();
    let disc = (&inv * &inv + &four * &inv).sqrt();
    let lambda_u = (&inv + &disc) / &two;
    let lambda_s = (&inv - &disc) / &two;

    let evec = |lambda: &Real| -> Vec4 {
        [
            one.clone(),
            (&(ell - &one) - lambda) / (ell * lambda * (&one + lambda)),
            (&one + lambda).recip(),
            (ell - &one) / (ell * lambda),
        ]
    };

    let zero = Real::zero(bits);
    EigenData {
        ell: ell.clone(),
        l_matrix: build_l(ell),
        w_star: w_star(ell),
        w_fix: fixed_point(ell),
        e_u: evec(&lambda_u),
        e_s: evec(&lambda_s),
        e_minus: [zero.clone(), zero.clone(), -&one, zero.clone()],
        e_zero: [zero.clone(), one.clone(), zero.clone(), one.clone()],
        lambda_u,
        lambda_s,
    }
}

/// Coefficients of `v` in the eigenbasis `(E_u, E_s, E_-, E_0)`.
pub fn project_eigenbasis(v: &Vec4, ed: &EigenData) -> Result<[Real; 4]> {
    let mut basis: Mat4 = std::array::from_fn(|i| {
        [ed.e_u[i].clone(), ed.e_s[i].clone(), ed.e_minus[i].clone(), ed.e_zero[i].clone()]
    });
    let mut rhs = v.clone();
    solve4(&mut basis, &mut rhs)
}

/// Which published form of the regularity exponent `beta` to evaluate.
///
/// The source states three inequivalent denominators; all three are
/// computed and reported side by side, none is canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaVariant {
    /// `(1 + e3_u)(lambda_u - 1) / (2 lambda_u^2)` (classification theorem).
    TheoremLm,
    /// `(1 + e3_u)(lambda_u - 1) / (2 lambda_u^4)` (C^{1+beta} proposition).
    Prop1Beta,
    /// `(1 + e3_u)(lambda_u - 1) / lambda_u^3` (Holder proposition).
    Holder,
}

pub fn beta_exponent(ell: &Real, variant: BetaVariant) -> Real {
    let ed = eigen_closed_form(ell);
    beta_exponent_from(&ed, variant)
}

pub fn beta_exponent_from(ed: &EigenData, variant: BetaVariant) -> Real {
    let bits = ed.ell.precision_bits();
    let one = Real::one(bits);
    let two = Real::from_u64(2, bits);
    let numer = (&one + &ed.e_u[1]) * (&ed.lambda_u - &one);
    let denom = match variant {
        BetaVariant::TheoremLm => &two * &ed.lambda_u.powi(2),
        BetaVariant::Prop1Beta => &two * &ed.lambda_u.powi(4),
        BetaVariant::Holder => ed.lambda_u.powi(3),
    };
    numer / denom
}
