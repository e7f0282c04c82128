//! Small linear-algebra and special-function foundation.
//!
//! Vectors and fixed-size matrices come from `nalgebra`; this module adds the
//! pieces the rest of the crate leans on: a validated SPD matrix with a cached
//! Cholesky factor, a unit quaternion with shortest-arc slerp, and the
//! chi-square distribution (CDF plus its percent point function).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;

const SYMMETRY_TOL: f64 = 1e-12;

/// Rejects vectors carrying NaN or infinite components.
pub fn finite3(v: Vec3, what: &str) -> Result<Vec3> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::domain(format!("{what} has non-finite components")))
    }
}

pub fn finite6(v: Vec6, what: &str) -> Result<Vec6> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(v)
    } else {
        Err(Error::domain(format!("{what} has non-finite components")))
    }
}

/// Unit quaternion stored as `w, x, y, z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuat {
    /// Normalizes the given components. Fails on zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::domain(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn neg(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (a, b) = (self, rhs);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        // product of unit quaternions is unit up to rounding
        Self::new(w, x, y, z).unwrap_or_default()
    }

    /// Exponential map from a rotation vector (axis * angle, rad).
    pub fn from_rotation_vector(r: &Vec3) -> Self {
        let angle = r.norm();
        if angle < 1e-12 {
            return Self::new(1.0, 0.5 * r.x, 0.5 * r.y, 0.5 * r.z).unwrap_or_default();
        }
        let axis = r / angle;
        let (s, c) = (0.5 * angle).sin_cos();
        Self {
            w: c,
            x: axis.x * s,
            y: axis.y * s,
            z: axis.z * s,
        }
    }

    /// Logarithm map onto the rotation vector with angle in [0, pi].
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = if self.w < 0.0 { self.neg() } else { *self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }
}

/// Great-circle interpolation between two unit quaternions on the shorter arc.
///
/// `s` is clamped to `[0, 1]`. Antipodal inputs are rejected.
pub fn slerp(q0: &UnitQuat, q1: &UnitQuat, s: f64) -> Result<UnitQuat> {
    let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
    let mut d = q0.dot(q1);
    if d < -1.0 + 1e-9 {
        return Err(Error::DegenerateArc { dot: d });
    }
    let q1 = if d < 0.0 {
        d = -d;
        q1.neg()
    } else {
        *q1
    };
    if s == 0.0 {
        return Ok(*q0);
    }
    if s == 1.0 {
        return Ok(q1);
    }
    let (a, b) = if d > 1.0 - 1e-12 {
        (1.0 - s, s)
    } else {
        let theta = d.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        (
            ((1.0 - s) * theta).sin() / sin_theta,
            (s * theta).sin() / sin_theta,
        )
    };
    UnitQuat::new(
        a * q0.w + b * q1.w,
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
    )
}

/// Symmetric positive-definite matrix with its Cholesky factor cached.
#[derive(Clone, Debug)]
pub struct SpdMat {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for SpdMat {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl SpdMat {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::NotSpd(format!(
                "matrix is {}x{}, not square",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = mat.amax().max(1.0);
        let n = mat.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (mat[(i, j)] - mat[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSpd(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        mat[(i, j)],
                        mat[(j, i)]
                    )));
                }
            }
        }
        let chol = Cholesky::new(mat.clone())
            .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        Ok(Self { mat, chol })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.mat.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        Self::new(&self.mat * k)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::domain(format!(
                "rhs has length {}, matrix is {}x{}",
                b.len(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(self.chol.solve(b))
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::domain("rhs row count does not match matrix"));
        }
        Ok(self.chol.solve(b))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `vᵀ A⁻¹ v`.
    pub fn inv_quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.solve(v)?))
    }
}

/// Solves `A x = b` through the cached Cholesky factor of `A`.
pub fn spd_solve(a: &SpdMat, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.solve(b)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp().min(1.0)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

// Modified Lentz evaluation of Q(a, x) for x >= a + 1.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    ((-x + a * x.ln() - ln_gamma(a)).exp() * h).clamp(0.0, 1.0)
}

/// Chi-square CDF with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(0.5 * k as f64, 0.5 * x)
}

/// Chi-square percent point function (inverse CDF) by bisection.
pub fn chi2_ppf(p: f64, k: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    if k < 1 {
        return Err(Error::domain(
            "chi-square needs at least one degree of freedom",
        ));
    }
    let mut lo = 0.0_f64;
    let mut hi = (k as f64).max(1.0);
    while chi2_cdf(hi, k) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, k) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
