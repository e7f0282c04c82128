//! Scenario configuration: TOML schema, overrides and validation.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::anticipation::DEFAULT_CONFIDENCE;
use crate::control::{self, ControllerConfig, Gains};
use crate::error::{Error, Result};
use crate::numerics::SpdMat;
use crate::sim::{self, Environment, Gantry, Geometry};
use crate::trajectory::{self, Trajectory};

use super::scenario::{self, ContactSpec, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Repeated task execution with belief refinement.
    Anticipation,
    /// Approach-velocity sweep, line fit and inverse-model validation.
    Sweep,
    /// Approach-velocity learning toward a desired impact force.
    Convergence,
    /// Multi-contact task with belief and velocity learning.
    FullTask,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Anticipation => "anticipation",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::FullTask => "full_task",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub trajectory: TrajectorySource,
    #[serde(default)]
    pub arm: ArmConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub belief: BeliefConfig,
    /// Replaces the generator's contacts when present.
    #[serde(default)]
    pub contacts: Option<Vec<ContactSpec>>,
    /// Replaces the generator's world when present.
    #[serde(default)]
    pub environment: Option<Vec<Geometry>>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn one() -> usize {
    1
}

fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySource {
    #[serde(default)]
    pub generator: Option<Generator>,
    /// CSV trajectory, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    /// Mass known to the controller, kg.
    pub mass: f64,
    pub inertia: f64,
    /// Extra mass carried by the plant but not modelled, kg.
    pub payload: f64,
    pub gravity: f64,
    /// Joint speed treated as divergence.
    pub max_speed: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            mass: 2.0,
            inertia: 0.02,
            payload: 0.1,
            gravity: sim::GRAVITY,
            max_speed: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub sigma: f64,
    pub cutoff_hz: f64,
    pub threshold: f64,
    pub hold_ticks: usize,
    pub peak_window: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            sigma: sim::DEFAULT_SIGMA_F,
            cutoff_hz: sim::DEFAULT_CUTOFF_HZ,
            threshold: sim::DEFAULT_F_TH,
            hold_ticks: sim::DEFAULT_HOLD_TICKS,
            peak_window: sim::DEFAULT_PEAK_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendAnchor {
    /// Blending finishes at the region boundary point.
    CompleteAtBoundary,
    /// Blending starts at the region boundary point.
    StartAtBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub kp_linear: f64,
    pub kp_angular: f64,
    pub transition_scale: f64,
    pub blend_duration: f64,
    pub stabilization_window: f64,
    pub feedforward_rate: f64,
    pub blend_anchor: BlendAnchor,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kp_linear: control::DEFAULT_KP_LINEAR,
            kp_angular: control::DEFAULT_KP_ANGULAR,
            transition_scale: control::DEFAULT_TRANSITION_SCALE,
            blend_duration: control::DEFAULT_BLEND_DURATION,
            stabilization_window: control::DEFAULT_STABILIZATION,
            feedforward_rate: 0.01,
            blend_anchor: BlendAnchor::CompleteAtBoundary,
        }
    }
}

/// Prior for every contact. Matrices are 3 diagonal entries or 9 row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeliefConfig {
    pub sigma0: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub confidence: f64,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        Self {
            sigma0: vec![0.175; 3],
            r: vec![1e-4; 3],
            q: vec![0.0; 3],
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub velocities: Vec<f64>,
    pub repeats: usize,
    /// Desired forces checked against the fitted inverse model.
    pub validation_forces: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            velocities: (1..=8).map(|i| 0.02 * i as f64).collect(),
            repeats: 4,
            validation_forces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Bound on the commanded path acceleration, m/s².
    pub a_max: f64,
    /// Distance to the final target that counts as done, m.
    pub completion_tolerance: f64,
    /// Time allowed after the trajectory ends to reach the final target, s.
    pub settle_time: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            a_max: 3.0,
            completion_tolerance: 0.005,
            settle_time: 3.0,
        }
    }
}

fn matrix3(values: &[f64], key: &str) -> Result<Matrix3<f64>> {
    match values.len() {
        3 => Ok(Matrix3::from_diagonal(
            &nalgebra::Vector3::from_column_slice(values),
        )),
        9 => Ok(Matrix3::from_row_slice(values)),
        n => Err(Error::config(
            key,
            format!("expected 3 or 9 entries, got {n}"),
        )),
    }
}

fn spd3(values: &[f64], key: &str) -> Result<SpdMat> {
    let m = matrix3(values, key)?;
    SpdMat::new(DMatrix::from_iterator(3, 3, m.iter().copied()))
        .map_err(|e| Error::config(key, e.to_string()))
}

impl BeliefConfig {
    pub fn sigma0(&self) -> Result<SpdMat> {
        spd3(&self.sigma0, "belief.sigma0")
    }

    pub fn r(&self) -> Result<SpdMat> {
        spd3(&self.r, "belief.r")
    }

    pub fn q(&self) -> Result<Matrix3<f64>> {
        matrix3(&self.q, "belief.q")
    }
}

impl ArmConfig {
    /// Model used by the controller.
    pub fn nominal(&self) -> Result<Gantry> {
        Gantry::new(self.mass, self.inertia, self.gravity)
    }

    /// Model simulated as the plant.
    pub fn plant(&self) -> Result<Gantry> {
        Gantry::new(self.mass + self.payload, self.inertia, self.gravity)
    }

    pub fn inertia6(&self) -> [f64; 6] {
        let (m, i) = (self.mass, self.inertia);
        [m, m, m, i, i, i]
    }
}

impl ControllerSection {
    pub fn gains(&self, arm: &ArmConfig) -> Result<(Gains, Gains)> {
        let (l, a) = (self.kp_linear, self.kp_angular);
        let default = Gains::critically_damped([l, l, l, a, a, a], arm.inertia6())?;
        let transition = default.scaled(self.transition_scale, arm.inertia6())?;
        Ok((default, transition))
    }

    pub fn config(&self) -> ControllerConfig {
        ControllerConfig {
            blend_duration: self.blend_duration,
            stabilization_window: self.stabilization_window,
            feedforward_rate: self.feedforward_rate,
        }
    }
}

impl ScenarioConfig {
    /// Checks every field that deserialization alone cannot.
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt <= sim::MAX_DT) {
            return Err(Error::config(
                "dt",
                format!("must lie in (0, {}]", sim::MAX_DT),
            ));
        }
        match (&self.trajectory.generator, &self.trajectory.file) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "trajectory",
                    "set either `generator` or `file`, not both",
                ))
            }
            (None, None) => return Err(Error::config("trajectory", "set `generator` or `file`")),
            (None, Some(f)) if !f.exists() => {
                return Err(Error::config(
                    "trajectory.file",
                    format!("{} does not exist", f.display()),
                ))
            }
            _ => {}
        }
        let a = &self.arm;
        if !(a.mass > 0.0) || !(a.inertia > 0.0) || !(a.payload >= 0.0) || !(a.max_speed > 0.0) {
            return Err(Error::config(
                "arm",
                "mass, inertia and max_speed must be positive; payload non-negative",
            ));
        }
        let s = &self.sensor;
        if !(s.sigma >= 0.0)
            || !(s.cutoff_hz > 0.0)
            || !(s.threshold > 0.0)
            || s.hold_ticks == 0
            || !(s.peak_window > 0.0)
        {
            return Err(Error::config(
                "sensor",
                "sigma >= 0, cutoff_hz > 0, threshold > 0, hold_ticks >= 1, peak_window > 0",
            ));
        }
        let c = &self.controller;
        if !(c.blend_duration > 0.0) {
            return Err(Error::config(
                "controller.blend_duration",
                "must be positive",
            ));
        }
        if !(c.transition_scale > 0.0) {
            return Err(Error::config(
                "controller.transition_scale",
                "must be positive",
            ));
        }
        if !(c.stabilization_window >= 0.0) {
            return Err(Error::config(
                "controller.stabilization_window",
                "must be non-negative",
            ));
        }
        if !(c.feedforward_rate >= 0.0 && c.feedforward_rate <= 1.0) {
            return Err(Error::config(
                "controller.feedforward_rate",
                "must lie in [0, 1]",
            ));
        }
        c.gains(a)
            .map_err(|e| Error::config("controller", e.to_string()))?;
        self.belief.sigma0()?;
        self.belief.r()?;
        let q = self.belief.q()?;
        if q.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::config("belief.q", "must be positive semi-definite"));
        }
        if !(self.belief.confidence > 0.0 && self.belief.confidence < 1.0) {
            return Err(Error::config("belief.confidence", "must lie in (0, 1)"));
        }
        if let Some(env) = &self.environment {
            for (i, g) in env.iter().enumerate() {
                g.validate()
                    .map_err(|e| Error::config(format!("environment[{i}]"), e.to_string()))?;
            }
        }
        if let Some(contacts) = &self.contacts {
            for (i, ct) in contacts.iter().enumerate() {
                if !(ct.approach_velocity > 0.0) {
                    return Err(Error::config(
                        format!("contacts[{i}].approach_velocity"),
                        "must be positive",
                    ));
                }
                if !(ct.beta >= 0.0) {
                    return Err(Error::config(
                        format!("contacts[{i}].beta"),
                        "must be non-negative",
                    ));
                }
            }
        }
        if self.sweep.velocities.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("sweep.velocities", "must be positive"));
        }
        if self.experiment == ExperimentKind::Sweep
            && (self.sweep.velocities.len() < 2 || self.sweep.repeats == 0)
        {
            return Err(Error::config(
                "sweep",
                "needs at least two velocities and one repeat",
            ));
        }
        Ok(())
    }
}

/// Parses `path`, resolving a relative trajectory file against its directory.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    parse_config_with(path, &[])
}

/// [`parse_config`] with `key=value` overrides applied before validation.
pub fn parse_config_with(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str_unvalidated(&text, overrides)?;
    if let Some(f) = &cfg.trajectory.file {
        if f.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.trajectory.file = Some(base.join(f));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let cfg = parse_config_str_unvalidated(text, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_config_str_unvalidated(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<root>", e.message().to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let value = toml::Value::Table(table);
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." { "<root>".into() } else { path },
            e.inner().to_string(),
        )
    })
}

/// Sets a dotted key; the value is read as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Fully resolved inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trajectory: Trajectory,
    pub environment: Environment,
    pub contacts: Vec<ContactSpec>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let (trajectory, env, contacts) =
            match (&config.trajectory.generator, &config.trajectory.file) {
                (Some(g), _) => {
                    let b = scenario::build(*g, config.dt)?;
                    (b.trajectory, Some(b.environment), Some(b.contacts))
                }
                (None, Some(f)) => (trajectory::read_csv_file(f)?, None, None),
                (None, None) => unreachable!("validated"),
            };
        if (trajectory.dt() - config.dt).abs() > trajectory::DT_TOL {
            return Err(Error::config(
                "dt",
                format!("trajectory is sampled at {} s", trajectory.dt()),
            ));
        }
        let environment = match &config.environment {
            Some(g) => Environment::new(g.clone())?,
            None => env.unwrap_or_default(),
        };
        let contacts = match &config.contacts {
            Some(c) => c.clone(),
            None => contacts.unwrap_or_default(),
        };
        for (i, c) in contacts.iter().enumerate() {
            if c.segment >= trajectory.segments().len() {
                return Err(Error::config(
                    format!("contacts[{i}].segment"),
                    "beyond the last trajectory segment",
                ));
            }
            if i > 0 && c.segment <= contacts[i - 1].segment {
                return Err(Error::config(
                    format!("contacts[{i}].segment"),
                    "contacts must follow trajectory order",
                ));
            }
        }
        Ok(Self {
            config,
            trajectory,
            environment,
            contacts,
        })
    }
}
