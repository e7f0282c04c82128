//! Multi-trial experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticipation::BeliefSnapshot;
use crate::error::{Error, Result};
use crate::impact::{fit_linear, velocity_for_force, ImpactSample, LinearFit};

use super::config::{ExperimentKind, Scenario};
use super::trial::{run_trial, Carry, TrialReport, TrialRun};

/// One row of the impact log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub trial: usize,
    pub contact_id: String,
    pub approach_velocity: f64,
    pub peak_force: f64,
    pub desired_force: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub desired_force: f64,
    pub approach_velocity: f64,
    pub measured_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub fit: LinearFit,
    pub samples: usize,
    pub validation: Vec<ValidationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub name: String,
    pub seed: u64,
    pub trial_count: usize,
    pub trials: Vec<TrialReport>,
    pub sweep: Option<SweepSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: Summary,
    pub runs: Vec<TrialRun>,
    pub impacts: Vec<ImpactRow>,
    pub beliefs: Vec<BeliefSnapshot>,
}

impl ExperimentResult {
    pub fn reports(&self) -> impl Iterator<Item = &TrialReport> {
        self.runs.iter().map(|r| &r.report)
    }
}

/// Trial RNG: one ChaCha stream per trial off the configured seed.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

struct Recorder {
    runs: Vec<TrialRun>,
    impacts: Vec<ImpactRow>,
    beliefs: Vec<BeliefSnapshot>,
}

impl Recorder {
    fn new(carry: &Carry) -> Self {
        let beliefs = carry
            .registry
            .iter()
            .map(|c| c.belief.snapshot(&c.id, 0))
            .collect();
        Self {
            runs: Vec::new(),
            impacts: Vec::new(),
            beliefs,
        }
    }

    fn push(&mut self, run: TrialRun, after: &Carry) {
        let trial = run.report.trial;
        for c in &run.report.contacts {
            if let Some(peak) = c.impact_peak {
                self.impacts.push(ImpactRow {
                    trial,
                    contact_id: c.contact_id.clone(),
                    approach_velocity: c.approach_velocity,
                    peak_force: peak,
                    desired_force: c.desired_force,
                    error: peak - c.desired_force,
                });
            }
        }
        self.beliefs.extend(
            after
                .registry
                .iter()
                .map(|c| c.belief.snapshot(&c.id, trial)),
        );
        self.runs.push(run);
    }
}

/// Runs trials back to back, threading beliefs and velocities.
fn run_sequence(sc: &Scenario, rec: &mut Recorder, mut carry: Carry) -> Result<Carry> {
    for trial in 1..=sc.config.trials {
        let (run, next) = run_trial(sc, &carry, trial, trial_rng(sc.config.seed, trial))?;
        rec.push(run, &next);
        carry = next;
    }
    Ok(carry)
}

/// Velocity sweep from a fixed prior, then a line fit and a check of the
/// inverse model at a few desired forces.
fn run_sweep(sc: &Scenario, rec: &mut Recorder, initial: &Carry) -> Result<SweepSummary> {
    if initial.models.is_empty() {
        return Err(Error::config("contacts", "a sweep needs one contact"));
    }
    let mut trial = 0;
    let mut samples: Vec<ImpactSample> = Vec::new();
    let run_at = |v: f64, trial: usize| -> Result<(TrialRun, Carry)> {
        let mut carry = initial.clone();
        for m in &mut carry.models {
            m.approach_velocity = v;
            m.beta = 0.0;
        }
        run_trial(sc, &carry, trial, trial_rng(sc.config.seed, trial))
    };
    for &v in &sc.config.sweep.velocities {
        for _ in 0..sc.config.sweep.repeats {
            trial += 1;
            let (run, after) = run_at(v, trial)?;
            if let Some(peak) = run.report.contacts[0].impact_peak {
                samples.push(ImpactSample::new(
                    initial.models[0].contact_id.clone(),
                    v,
                    peak.max(0.0),
                )?);
            }
            rec.push(run, &after);
        }
    }
    let fit = fit_linear(&samples)?;
    let m = &initial.models[0];
    let forces = if sc.config.sweep.validation_forces.is_empty() {
        [0.05, 0.09, 0.13].iter().map(|v| fit.predict(*v)).collect()
    } else {
        sc.config.sweep.validation_forces.clone()
    };
    let mut validation = Vec::new();
    for f in forces {
        trial += 1;
        let v = velocity_for_force(&fit, f, m.v_min, m.v_max)?;
        let (run, after) = run_at(v, trial)?;
        validation.push(ValidationRow {
            desired_force: f,
            approach_velocity: v,
            measured_force: run.report.contacts[0].impact_peak,
        });
        rec.push(run, &after);
    }
    Ok(SweepSummary {
        fit,
        samples: samples.len(),
        validation,
    })
}

pub fn run_experiment(sc: &Scenario) -> Result<ExperimentResult> {
    let initial = Carry::initial(sc)?;
    let mut rec = Recorder::new(&initial);
    let sweep = match sc.config.experiment {
        ExperimentKind::Sweep => Some(run_sweep(sc, &mut rec, &initial)?),
        _ => {
            run_sequence(sc, &mut rec, initial)?;
            None
        }
    };
    let trials: Vec<TrialReport> = rec.runs.iter().map(|r| r.report.clone()).collect();
    Ok(ExperimentResult {
        summary: Summary {
            experiment: sc.config.experiment.as_str().into(),
            name: sc.config.name.clone(),
            seed: sc.config.seed,
            trial_count: trials.len(),
            trials,
            sweep,
        },
        runs: rec.runs,
        impacts: rec.impacts,
        beliefs: rec.beliefs,
    })
}
