//! Contact-position beliefs and the region of anticipated contact.
//!
//! Each expected contact carries a Gaussian belief over its position. The
//! belief is corrected with a linear Kalman filter whenever the contact is
//! observed, and its confidence ellipsoid marks where along the target
//! trajectory the robot should already be in the transition phase.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chi2_ppf, finite3, SpdMat, Vec3};
use crate::trajectory::Trajectory;

/// Default confidence of the anticipated-contact region.
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct ContactBelief {
    mean: Vec3,
    cov: SpdMat,
    /// self-activation of the contact point
    a: Matrix3<f64>,
    /// effect of the robot's action on the contact point, 3 x n
    b: DMatrix<f64>,
    /// process noise, symmetric positive semi-definite
    q: Matrix3<f64>,
    r: SpdMat,
    h: Matrix3<f64>,
    confidence: f64,
    lambda: f64,
}

fn to_dmat(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn check_psd(q: &Matrix3<f64>, what: &str) -> Result<()> {
    if q.iter().any(|v| !v.is_finite()) || (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
        return Err(Error::NotSpd(format!(
            "{what} must be finite and symmetric"
        )));
    }
    let min_eig = SymmetricEigen::new(*q).eigenvalues.min();
    if min_eig < -1e-12 * q.amax().max(1.0) {
        return Err(Error::NotSpd(format!(
            "{what} has negative eigenvalue {min_eig}"
        )));
    }
    Ok(())
}

impl ContactBelief {
    /// Stationary-object belief: `A = I`, `B = 0`, `H = I`.
    pub fn stationary(
        mean: Vec3,
        cov: SpdMat,
        q: Matrix3<f64>,
        r: SpdMat,
        confidence: f64,
    ) -> Result<Self> {
        Self::new(
            mean,
            cov,
            Matrix3::identity(),
            DMatrix::zeros(3, 0),
            q,
            r,
            Matrix3::identity(),
            confidence,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mean: Vec3,
        cov: SpdMat,
        a: Matrix3<f64>,
        b: DMatrix<f64>,
        q: Matrix3<f64>,
        r: SpdMat,
        h: Matrix3<f64>,
        confidence: f64,
    ) -> Result<Self> {
        finite3(mean, "belief mean")?;
        if cov.dim() != 3 || r.dim() != 3 {
            return Err(Error::domain(
                "belief covariance and measurement noise must be 3x3",
            ));
        }
        if b.nrows() != 3 {
            return Err(Error::domain("control matrix B must have 3 rows"));
        }
        check_psd(&q, "process noise Q")?;
        let lambda = chi2_ppf(confidence, 3)?;
        Ok(Self {
            mean,
            cov,
            a,
            b,
            q,
            r,
            h,
            confidence,
            lambda,
        })
    }

    pub fn mean(&self) -> Vec3 {
        self.mean
    }
    pub fn cov(&self) -> &SpdMat {
        &self.cov
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn confidence(&self) -> f64 {
        self.confidence
    }
    pub fn measurement_noise(&self) -> &SpdMat {
        &self.r
    }

    pub fn with_cov(&self, cov: SpdMat) -> Result<Self> {
        if cov.dim() != 3 {
            return Err(Error::domain("belief covariance must be 3x3"));
        }
        Ok(Self {
            cov,
            ..self.clone()
        })
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &Vec3) -> f64 {
        let d = DVector::from_column_slice((x - self.mean).as_slice());
        self.cov
            .inv_quadratic_form(&d)
            .expect("dimensions checked on construction")
    }

    pub fn snapshot(&self, contact_id: &str, trial: usize) -> BeliefSnapshot {
        BeliefSnapshot {
            trial,
            contact_id: contact_id.to_string(),
            mu: [self.mean.x, self.mean.y, self.mean.z],
            sigma: std::array::from_fn(|k| self.cov.matrix()[(k / 3, k % 3)]),
            lambda: self.lambda,
        }
    }
}

/// Time update: `μ ← Aμ + Bu`, `Σ ← AΣAᵀ + Q`.
pub fn kf_predict(b: &ContactBelief, u: &DVector<f64>) -> Result<ContactBelief> {
    if u.len() != b.b.ncols() {
        return Err(Error::domain(format!(
            "control vector has length {}, B has {} columns",
            u.len(),
            b.b.ncols()
        )));
    }
    let bu = &b.b * u;
    let mean = b.a * b.mean + Vec3::new(bu[0], bu[1], bu[2]);
    let a = to_dmat(&b.a);
    let cov = symmetrize(&a * b.cov.matrix() * a.transpose() + to_dmat(&b.q));
    Ok(ContactBelief {
        mean,
        cov: SpdMat::new(cov)?,
        ..b.clone()
    })
}

/// Measurement update with an observed contact position `y`.
pub fn kf_update(b: &ContactBelief, y: &Vec3) -> Result<ContactBelief> {
    finite3(*y, "measurement")?;
    let h = to_dmat(&b.h);
    let sigma = b.cov.matrix();
    let innovation = DVector::from_column_slice((y - b.h * b.mean).as_slice());
    let s = SpdMat::new(symmetrize(&h * sigma * h.transpose() + b.r.matrix()))
        .map_err(|e| Error::Numerical(format!("innovation covariance: {e}")))?;
    // K = Σ Hᵀ S⁻¹  computed as (S⁻¹ H Σ)ᵀ since S and Σ are symmetric
    let gain = s.solve_matrix(&(&h * sigma))?.transpose();
    let dmu = &gain * innovation;
    let mean = b.mean + Vec3::new(dmu[0], dmu[1], dmu[2]);
    let cov = symmetrize(sigma - &gain * s.matrix() * gain.transpose());
    let cov =
        SpdMat::new(cov).map_err(|e| Error::Numerical(format!("posterior covariance: {e}")))?;
    Ok(ContactBelief {
        mean,
        cov,
        ..b.clone()
    })
}

/// Whether `x` lies inside the confidence ellipsoid.
pub fn contains(b: &ContactBelief, x: &Vec3) -> bool {
    b.mahalanobis_sq(x) <= b.lambda
}

/// First trajectory sample at or after `from_index` inside the region.
pub fn region_entry_point(
    traj: &Trajectory,
    b: &ContactBelief,
    from_index: usize,
) -> Option<(usize, Vec3)> {
    region_entry_point_within(traj, b, from_index, traj.len().saturating_sub(1))
}

/// Like [`region_entry_point`] but only considers indices up to `to_index`.
pub fn region_entry_point_within(
    traj: &Trajectory,
    b: &ContactBelief,
    from_index: usize,
    to_index: usize,
) -> Option<(usize, Vec3)> {
    let last = to_index.min(traj.len().saturating_sub(1));
    (from_index..=last)
        .map(|i| (i, traj.points()[i].pose.position))
        .find(|(_, p)| contains(b, p))
}

/// Serialized belief state, one JSON object per line in the trial report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    pub trial: usize,
    pub contact_id: String,
    pub mu: [f64; 3],
    pub sigma: [f64; 9],
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredContact {
    pub id: String,
    pub belief: ContactBelief,
    /// trajectory segment in which the contact is expected
    pub segment: usize,
}

/// Ordered set of expected contacts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactRegistry {
    contacts: Vec<RegisteredContact>,
}

impl ContactRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        belief: ContactBelief,
        segment: usize,
    ) -> Result<()> {
        let id = id.into();
        if self.contacts.iter().any(|c| c.id == id) {
            return Err(Error::domain(format!("duplicate contact id `{id}`")));
        }
        if let Some(prev) = self.contacts.last() {
            if segment < prev.segment {
                return Err(Error::domain(format!(
                    "contact `{id}` expected in segment {segment}, before `{}` in segment {}",
                    prev.id, prev.segment
                )));
            }
        }
        self.contacts.push(RegisteredContact {
            id,
            belief,
            segment,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegisteredContact> {
        self.contacts.iter()
    }

    pub fn get(&self, i: usize) -> Option<&RegisteredContact> {
        self.contacts.get(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.contacts.iter().position(|c| c.id == id)
    }

    pub fn set_belief(&mut self, i: usize, belief: ContactBelief) {
        self.contacts[i].belief = belief;
    }
}
