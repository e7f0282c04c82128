//! One execution of the task: plan, simulate, learn.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticipation::{kf_update, region_entry_point_within, ContactBelief, ContactRegistry};
use crate::control::{
    feedforward_update, phase_step, Anomaly, ControllerState, Phase, ScheduledContact,
};
use crate::error::{Error, Result};
use crate::impact::{ImpactModel, ImpactSample};
use crate::numerics::{Vec3, Vec6};
use crate::sim::{ft_read, impact_peak, sim_step, ContactDetector, FtReading, FtSensor};
use crate::trajectory::{retime_with, RetimeRequest, Trajectory};

use super::config::{BlendAnchor, Scenario};

/// State threaded from one trial to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub registry: ContactRegistry,
    pub models: Vec<ImpactModel>,
}

impl Carry {
    /// Priors and initial approach velocities from the scenario.
    pub fn initial(sc: &Scenario) -> Result<Self> {
        let b = &sc.config.belief;
        let mut registry = ContactRegistry::new();
        let mut models = Vec::new();
        for c in &sc.contacts {
            let belief = ContactBelief::stationary(
                Vec3::from(c.mu0),
                b.sigma0()?,
                b.q()?,
                b.r()?,
                b.confidence,
            )?;
            registry.push(c.id.clone(), belief, c.segment)?;
            models.push(ImpactModel::new(
                c.id.clone(),
                c.approach_velocity,
                c.desired_force,
                c.beta,
            )?);
        }
        Ok(Self { registry, models })
    }
}

/// Retimed trajectory and controller schedule for one trial.
#[derive(Debug, Clone)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub schedule: Vec<ScheduledContact>,
    pub boundary_points: Vec<Option<Vec3>>,
    pub warnings: Vec<String>,
}

/// Slows the trajectory into every anticipated contact region.
pub fn plan_trial(sc: &Scenario, carry: &Carry) -> Result<Plan> {
    let cfg = &sc.config;
    let t_blend = cfg.controller.blend_duration;
    let mut traj = sc.trajectory.clone();
    let mut schedule = Vec::new();
    let mut boundary_points = Vec::new();
    let mut warnings = Vec::new();
    let mut prev_segment: Option<usize> = None;
    for (k, c) in carry.registry.iter().enumerate() {
        let from = prev_segment.map_or(0, |s| traj.segments()[s].end);
        let to = traj.segments()[c.segment].end;
        let entry = region_entry_point_within(&traj, &c.belief, from, to);
        let mut sched = ScheduledContact {
            contact_id: c.id.clone(),
            blend_start_index: usize::MAX,
            p_c_index: usize::MAX,
            deadline_index: 0,
            blend_duration: t_blend,
        };
        match entry {
            Some((idx, p)) => {
                let r = retime_with(
                    &traj,
                    &RetimeRequest {
                        p_c_index: idx,
                        contact_segment: c.segment,
                        approach_speed: carry.models[k].approach_velocity,
                        duration: t_blend,
                        edge_duration: t_blend.min(0.25),
                    },
                )?;
                warnings.extend(r.warnings.iter().map(|w| format!("{}: {w}", c.id)));
                sched.p_c_index = r.p_c_index;
                sched.blend_duration = r.effective_duration;
                sched.blend_start_index = match cfg.controller.blend_anchor {
                    BlendAnchor::CompleteAtBoundary => r.transition_start_index,
                    BlendAnchor::StartAtBoundary => r.p_c_index,
                };
                boundary_points.push(Some(p));
                traj = r.trajectory;
            }
            None => boundary_points.push(None),
        }
        schedule.push(sched);
        prev_segment = Some(c.segment);
    }
    let n_seg = traj.segments().len();
    for (sched, c) in schedule.iter_mut().zip(carry.registry.iter()) {
        sched.deadline_index = traj.segments()[(c.segment + 1).min(n_seg - 1)].end;
    }
    Ok(Plan {
        trajectory: traj,
        schedule,
        boundary_points,
        warnings,
    })
}

/// Per-tick record for the state and controller logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Filtered sensor force.
    pub force: Vec3,
    pub phase: Phase,
    pub alpha: f64,
    pub kp_trace: f64,
    pub hff_norm: f64,
    /// Speed of the commanded trajectory sample.
    pub target_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactOutcome {
    pub contact_id: String,
    /// Belief mean used for planning this trial.
    pub predicted_mu: [f64; 3],
    pub sigma_diag: [f64; 3],
    pub sigma_diag_after: [f64; 3],
    pub boundary_point: Option<[f64; 3]>,
    pub measured_position: Option<[f64; 3]>,
    /// Distance from the predicted mean to the measured contact, m.
    pub position_error: Option<f64>,
    pub detection_time: Option<f64>,
    pub impact_peak: Option<f64>,
    pub approach_velocity: f64,
    pub next_approach_velocity: f64,
    pub desired_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub mean_tracking_error: f64,
    pub completion_time: f64,
    pub completed: bool,
    pub transition_time: f64,
    /// Duration of the trajectory before retiming, s.
    pub nominal_duration: f64,
    pub planned_duration: f64,
    pub kf_updates: usize,
    /// Largest tick-to-tick change of the commanded speed outside impact
    /// windows, m/s².
    pub max_command_accel: f64,
    pub contacts: Vec<ContactOutcome>,
    pub anomalies: Vec<Anomaly>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub report: TrialReport,
    pub ticks: Vec<TickRecord>,
    /// Tick ranges treated as impact windows.
    pub impact_windows: Vec<(usize, usize)>,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn diag3(b: &ContactBelief) -> [f64; 3] {
    let d = b.cov().diagonal();
    [d[0], d[1], d[2]]
}

/// Path polyline thinned to about one vertex per millimetre.
pub fn path_polyline(traj: &Trajectory) -> Vec<Vec3> {
    let pts = traj.positions();
    let mut out = vec![pts[0]];
    for p in &pts[1..] {
        if (p - out.last().unwrap()).norm() >= 1e-3 {
            out.push(*p);
        }
    }
    let last = *pts.last().unwrap();
    if (last - out.last().unwrap()).norm() > 0.0 {
        out.push(last);
    }
    out
}

/// Euclidean distance from `p` to the nearest point on the polyline.
pub fn distance_to_polyline(poly: &[Vec3], p: &Vec3) -> f64 {
    masked_distance(poly, p, &Vec3::repeat(1.0))
}

/// Distance to the polyline measured only along the axes where `keep` is 1.
pub fn masked_distance(poly: &[Vec3], p: &Vec3, keep: &Vec3) -> f64 {
    let p = p.component_mul(keep);
    (p - nearest_on_polyline(poly, &p, keep).component_mul(keep)).norm()
}

/// Nearest point on the polyline to `p` in the metric restricted to `keep`.
fn nearest_on_polyline(poly: &[Vec3], p: &Vec3, keep: &Vec3) -> Vec3 {
    if poly.len() == 1 {
        return poly[0];
    }
    let p = p.component_mul(keep);
    poly.windows(2)
        .map(|w| {
            let a = w[0].component_mul(keep);
            let d = (w[1] - w[0]).component_mul(keep);
            let len2 = d.norm_squared();
            let s = if len2 > 0.0 {
                ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = w[0] + (w[1] - w[0]) * s;
            ((p - q.component_mul(keep)).norm(), q)
        })
        .fold((f64::INFINITY, poly[0]), |best, c| {
            if c.0 < best.0 {
                c
            } else {
                best
            }
        })
        .1
}

/// Contact location on the nominal segment closest to the end effector at
/// detection. Force-controlled axes carry no position reference, so the raw
/// end-effector position can sit off the path along them.
pub fn contact_location(traj: &Trajectory, segment: usize, p: &Vec3) -> Vec3 {
    let seg = traj.segments()[segment];
    let pts: Vec<Vec3> = traj.points()[seg.start..=seg.end]
        .iter()
        .map(|q| q.pose.position)
        .collect();
    nearest_on_polyline(&pts, p, &Vec3::repeat(1.0))
}

/// Runs trial `trial` (1-based) and returns its report and the updated carry.
pub fn run_trial(
    sc: &Scenario,
    carry: &Carry,
    trial: usize,
    rng: ChaCha8Rng,
) -> Result<(TrialRun, Carry)> {
    simulate(sc, carry, trial, rng).map_err(|e| Error::Trial {
        trial,
        source: Box::new(e),
    })
}

fn simulate(
    sc: &Scenario,
    carry: &Carry,
    trial: usize,
    rng: ChaCha8Rng,
) -> Result<(TrialRun, Carry)> {
    let cfg = &sc.config;
    let dt = cfg.dt;
    let plan = plan_trial(sc, carry)?;
    let traj = &plan.trajectory;
    let nominal = cfg.arm.nominal()?;
    let plant = cfg.arm.plant()?;
    let (default_gains, transition_gains) = cfg.controller.gains(&cfg.arm)?;
    let ccfg = cfg.controller.config();
    let mut ctrl = ControllerState::new(
        default_gains,
        transition_gains,
        cfg.controller.blend_duration,
    )?;
    let mut sensor = FtSensor::new(cfg.sensor.sigma, cfg.sensor.cutoff_hz, rng)?;
    let mut detector = ContactDetector::new(cfg.sensor.threshold, cfg.sensor.hold_ticks);
    let n_contacts = carry.registry.len();
    let dirs: Vec<Vec3> = carry
        .registry
        .iter()
        .map(|c| sc.trajectory.segment_direction(c.segment))
        .collect();
    let segs: Vec<usize> = carry.registry.iter().map(|c| c.segment).collect();

    let mut state = plant.state_at(&traj.point(0).pose);
    let last = traj.len() - 1;
    let settle = (cfg.metrics.settle_time / dt).round() as usize;
    let final_point = *traj.point(last);
    let poly = path_polyline(&sc.trajectory);

    let mut ticks = Vec::with_capacity(traj.len() + settle);
    let mut readings: Vec<FtReading> = Vec::with_capacity(traj.len() + settle);
    let mut measured: Vec<Option<(Vec3, usize)>> = vec![None; n_contacts];
    let mut anomalies = Vec::new();
    let mut tracking_sum = 0.0;
    let mut completion = None;
    let mut transition_ticks = 0usize;
    let mut watched = usize::MAX;
    let mut segment = usize::MAX;

    for i in 0..=last + settle {
        let target = traj.point(i);
        let reading = ft_read(&plant, &state, &sc.environment, &mut sensor, dt);
        readings.push(reading);

        let k = ctrl.next_contact;
        if k != watched {
            detector.reset();
            watched = k;
        }
        let flag = k < n_contacts && detector.update(&reading, &dirs[k]);
        if flag && measured[k].is_none() {
            let at = contact_location(&sc.trajectory, segs[k], &state.position());
            measured[k] = Some((at, i));
        }
        let (next, anomaly) = phase_step(&ctrl, &plan.schedule, &ccfg, i, flag, dt)?;
        ctrl = next;
        anomalies.extend(anomaly);

        let seg = traj.segment_of(i.min(last));
        if seg != segment {
            ctrl.h_ff = Vec6::zeros();
            segment = seg;
        }
        if ctrl.phase == Phase::Default && i < last {
            let speed = target.twist.norm();
            if speed > 1e-6 {
                let dir = target.twist / speed;
                ctrl.h_ff = feedforward_update(
                    &ctrl.h_ff,
                    &ctrl.h_ff,
                    &(-reading.filtered),
                    ccfg.feedforward_rate,
                    &dir,
                );
            }
        }
        if ctrl.phase == Phase::Transition {
            transition_ticks += 1;
        }

        let pos = state.position();
        let keep = Vec3::from_fn(|a, _| if target.mode.is_force(a) { 0.0 } else { 1.0 });
        tracking_sum += masked_distance(&poly, &pos, &keep);
        ticks.push(TickRecord {
            t: i as f64 * dt,
            position: pos,
            velocity: state.velocity(),
            force: reading.force(),
            phase: ctrl.phase,
            alpha: ctrl.alpha(),
            kp_trace: ctrl.kp_trace(),
            hff_norm: ctrl.h_ff.norm(),
            target_speed: target.speed(),
        });

        if i >= last {
            let err = (0..3)
                .filter(|&a| !final_point.mode.is_force(a))
                .map(|a| (final_point.pose.position[a] - pos[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            let windows_done = measured
                .iter()
                .flatten()
                .all(|(_, d)| i + 1 >= d + peak_ticks(cfg.sensor.peak_window, dt));
            if err <= cfg.metrics.completion_tolerance && windows_done {
                completion = Some(i as f64 * dt);
                break;
            }
        }

        let cmd = ctrl.command(&nominal, &state.q, &state.qd, target)?;
        state = sim_step(
            &plant,
            &sc.environment,
            &state,
            &cmd.u,
            dt,
            cfg.arm.max_speed,
        )?;
    }

    // Learning from this trial's contacts.
    let mut next = carry.clone();
    let mut outcomes = Vec::with_capacity(n_contacts);
    let mut windows = Vec::new();
    let mut kf_updates = 0;
    let hold = cfg.sensor.hold_ticks;
    for (k, c) in carry.registry.iter().enumerate() {
        let model = &carry.models[k];
        let mut outcome = ContactOutcome {
            contact_id: c.id.clone(),
            predicted_mu: arr(&c.belief.mean()),
            sigma_diag: diag3(&c.belief),
            sigma_diag_after: diag3(&c.belief),
            boundary_point: plan.boundary_points[k].as_ref().map(arr),
            measured_position: None,
            position_error: None,
            detection_time: None,
            impact_peak: None,
            approach_velocity: model.approach_velocity,
            next_approach_velocity: model.approach_velocity,
            desired_force: model.desired_force,
        };
        if let Some((p, tick)) = measured[k] {
            let posterior = kf_update(&c.belief, &p)?;
            kf_updates += 1;
            outcome.sigma_diag_after = diag3(&posterior);
            next.registry.set_belief(k, posterior);
            outcome.measured_position = Some(arr(&p));
            outcome.position_error = Some((c.belief.mean() - p).norm());
            outcome.detection_time = Some(tick as f64 * dt);

            let from = (tick + 1).saturating_sub(hold);
            let to = (from + peak_ticks(cfg.sensor.peak_window, dt)).min(readings.len());
            windows.push((from, to));
            let peak = impact_peak(&readings[from..to], &(-dirs[k]))?;
            outcome.impact_peak = Some(peak);
            let m = &mut next.models[k];
            m.record(ImpactSample::new(
                c.id.clone(),
                model.approach_velocity,
                peak.max(0.0),
            )?);
            outcome.next_approach_velocity = m.learn_from(peak);
        }
        outcomes.push(outcome);
    }

    let in_window = |i: usize| windows.iter().any(|&(a, b)| i + 1 >= a && i < b + 1);
    let max_command_accel = ticks
        .windows(2)
        .enumerate()
        .filter(|(i, _)| !in_window(*i))
        .map(|(_, w)| (w[1].target_speed - w[0].target_speed).abs() / dt)
        .fold(0.0, f64::max);

    let completed = completion.is_some();
    let completion_time = completion.unwrap_or((ticks.len() - 1) as f64 * dt);
    let report = TrialReport {
        trial,
        mean_tracking_error: tracking_sum / ticks.len() as f64,
        completion_time,
        completed,
        transition_time: transition_ticks as f64 * dt,
        nominal_duration: sc.trajectory.duration(),
        planned_duration: traj.duration(),
        kf_updates,
        max_command_accel,
        contacts: outcomes,
        anomalies,
        warnings: plan.warnings,
    };
    Ok((
        TrialRun {
            report,
            ticks,
            impact_windows: windows,
        },
        next,
    ))
}

fn peak_ticks(window: f64, dt: f64) -> usize {
    ((window / dt).round() as usize).max(1)
}
