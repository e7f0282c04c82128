//! Approach velocity versus impact force.
//!
//! Impact force grows linearly with the approach velocity, so a least-squares
//! line fitted to a handful of impacts can be inverted to choose the approach
//! velocity for a target force. Without a model, the velocity is corrected
//! trial by trial from the force error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_V_MIN: f64 = 0.005;
pub const DEFAULT_V_MAX: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSample {
    pub contact_id: String,
    /// m/s
    pub approach_velocity: f64,
    /// N
    pub peak_force: f64,
}

impl ImpactSample {
    pub fn new(
        contact_id: impl Into<String>,
        approach_velocity: f64,
        peak_force: f64,
    ) -> Result<Self> {
        if !(approach_velocity > 0.0) || !approach_velocity.is_finite() {
            return Err(Error::domain(format!(
                "approach velocity {approach_velocity} must be positive"
            )));
        }
        if !(peak_force >= 0.0) || !peak_force.is_finite() {
            return Err(Error::domain(format!(
                "peak force {peak_force} must be non-negative"
            )));
        }
        Ok(Self {
            contact_id: contact_id.into(),
            approach_velocity,
            peak_force,
        })
    }
}

/// `F ≈ slope · v + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, v: f64) -> f64 {
        self.slope * v + self.intercept
    }
}

/// Ordinary least squares over `(velocity, force)` pairs.
pub fn fit_linear_pairs(pairs: &[(f64, f64)]) -> Result<LinearFit> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 samples, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 1e-15 * mx.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateFit("all velocities are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n: pairs.len(),
    })
}

pub fn fit_linear(samples: &[ImpactSample]) -> Result<LinearFit> {
    let pairs: Vec<_> = samples
        .iter()
        .map(|s| (s.approach_velocity, s.peak_force))
        .collect();
    fit_linear_pairs(&pairs)
}

/// Approach velocity expected to produce `desired_force`, clamped to `[v_min, v_max]`.
pub fn velocity_for_force(
    fit: &LinearFit,
    desired_force: f64,
    v_min: f64,
    v_max: f64,
) -> Result<f64> {
    if !(fit.slope > 0.0) {
        return Err(Error::UnusableModel { slope: fit.slope });
    }
    Ok(((desired_force - fit.intercept) / fit.slope).clamp(v_min, v_max))
}

/// `v' = v + β (F_d − F_m)`, clamped to `[v_min, v_max]`.
pub fn gradient_update(
    v: f64,
    desired_force: f64,
    measured_force: f64,
    beta: f64,
    v_min: f64,
    v_max: f64,
) -> f64 {
    (v + beta * (desired_force - measured_force)).clamp(v_min, v_max)
}

/// Per-contact velocity/force model and learning state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactModel {
    pub contact_id: String,
    pub fit: Option<LinearFit>,
    pub samples: Vec<ImpactSample>,
    pub approach_velocity: f64,
    /// m/(s·N)
    pub beta: f64,
    pub desired_force: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl ImpactModel {
    pub fn new(
        contact_id: impl Into<String>,
        approach_velocity: f64,
        desired_force: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::domain(format!(
                "learning rate {beta} must be non-negative"
            )));
        }
        Ok(Self {
            contact_id: contact_id.into(),
            fit: None,
            samples: Vec::new(),
            approach_velocity: approach_velocity.clamp(DEFAULT_V_MIN, DEFAULT_V_MAX),
            beta,
            desired_force,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        })
    }

    pub fn with_limits(mut self, v_min: f64, v_max: f64) -> Self {
        self.v_min = v_min;
        self.v_max = v_max;
        self.approach_velocity = self.approach_velocity.clamp(v_min, v_max);
        self
    }

    /// Records a sample and refits once two distinct velocities are present.
    pub fn record(&mut self, sample: ImpactSample) {
        self.samples.push(sample);
        if let Ok(fit) = fit_linear(&self.samples) {
            self.fit = Some(fit);
        }
    }

    /// Gradient step on the approach velocity from one measured impact.
    pub fn learn_from(&mut self, measured_force: f64) -> f64 {
        if self.beta > 0.0 {
            self.approach_velocity = gradient_update(
                self.approach_velocity,
                self.desired_force,
                measured_force,
                self.beta,
                self.v_min,
                self.v_max,
            );
        }
        self.approach_velocity
    }

    /// Sets the approach velocity from the fitted line.
    pub fn apply_fit(&mut self, desired_force: f64) -> Result<f64> {
        let fit = self
            .fit
            .ok_or_else(|| Error::DegenerateFit("no fit available yet".into()))?;
        self.desired_force = desired_force;
        self.approach_velocity = velocity_for_force(&fit, desired_force, self.v_min, self.v_max)?;
        Ok(self.approach_velocity)
    }
}
