//! Hybrid force-motion impedance control with a low-gain transition phase.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{SpdMat, Vec6};
use crate::sim::ArmModel;
use crate::trajectory::{Pose, TrajectoryPoint};

pub const MAX_CONDITION: f64 = 1e8;
pub const DEFAULT_KP_LINEAR: f64 = 500.0;
pub const DEFAULT_KP_ANGULAR: f64 = 50.0;
pub const DEFAULT_TRANSITION_SCALE: f64 = 0.2;
pub const DEFAULT_BLEND_DURATION: f64 = 1.0;
pub const DEFAULT_STABILIZATION: f64 = 0.1;

/// Stiffness and damping, both 6×6 SPD.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub kp: SpdMat,
    pub kd: SpdMat,
}

impl Gains {
    pub fn new(kp: SpdMat, kd: SpdMat) -> Result<Self> {
        if kp.dim() != 6 || kd.dim() != 6 {
            return Err(Error::domain("gains must be 6x6"));
        }
        Ok(Self { kp, kd })
    }

    pub fn diagonal(kp: [f64; 6], kd: [f64; 6]) -> Result<Self> {
        Self::new(SpdMat::from_diagonal(&kp)?, SpdMat::from_diagonal(&kd)?)
    }

    /// `Kd = 2·sqrt(Kp·m)` per axis.
    pub fn critically_damped(kp: [f64; 6], inertia: [f64; 6]) -> Result<Self> {
        let mut kd = [0.0; 6];
        for i in 0..6 {
            kd[i] = 2.0 * (kp[i] * inertia[i]).sqrt();
        }
        Self::diagonal(kp, kd)
    }

    /// Default gains for a gantry of the given mass and rotational inertia.
    pub fn default_for(mass: f64, inertia: f64) -> Result<Self> {
        let l = DEFAULT_KP_LINEAR;
        let a = DEFAULT_KP_ANGULAR;
        Self::critically_damped(
            [l, l, l, a, a, a],
            [mass, mass, mass, inertia, inertia, inertia],
        )
    }

    /// Stiffness scaled by `factor`, damping re-derived as critical.
    pub fn scaled(&self, factor: f64, inertia: [f64; 6]) -> Result<Self> {
        let kp = self.kp.diagonal();
        let mut scaled = [0.0; 6];
        for i in 0..6 {
            scaled[i] = kp[i] * factor;
        }
        Self::critically_damped(scaled, inertia)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub h_c: Vec6,
    pub u: DVector<f64>,
}

/// Model terms of the operational-space dynamics at one state.
#[derive(Debug, Clone)]
pub struct TaskDynamics {
    pub lambda: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

pub fn task_dynamics(
    model: &dyn ArmModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<TaskDynamics> {
    let j = model.jacobian(q);
    let sv = j.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let j_inv = j
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { condition })?;
    let m = SpdMat::new(model.mass_matrix(q))?;
    let m_inv_jt = m.solve_matrix(&j.transpose())?;
    let lambda = (&j * m_inv_jt)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("task inertia is singular".into()))?;
    let j_inv_t = j_inv.transpose();
    let gamma =
        &j_inv_t * model.coriolis(q, qd) * &j_inv - &lambda * model.jacobian_dot(q, qd) * &j_inv;
    let eta = &j_inv_t * model.gravity(q);
    Ok(TaskDynamics {
        lambda,
        gamma,
        eta,
        jacobian: j,
    })
}

/// Pose error `target − current`; rotation as a rotation vector.
pub fn pose_error(target: &Pose, current: &Pose) -> Vec6 {
    let mut e = Vec6::zeros();
    e.fixed_rows_mut::<3>(0)
        .copy_from(&(target.position - current.position));
    let mut qd = target.orientation;
    if qd.dot(&current.orientation) < 0.0 {
        qd = qd.neg();
    }
    let r = qd
        .mul(&current.orientation.conjugate())
        .to_rotation_vector();
    e.fixed_rows_mut::<3>(3).copy_from(&r);
    e
}

fn sub_block(m: &DMatrix<f64>, axes: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(axes.len(), axes.len(), |r, c| m[(axes[r], axes[c])])
}

/// Impedance law `h_c = Λẍ_d + Γẋ_d + η + KpΔx + KdΔẋ + h_ff`, `u = Jᵀh_c`.
///
/// On force-controlled axes the feed-forward motion and pose-error terms are
/// masked out; the desired wrench is applied and Kd damps the axis velocity.
pub fn impedance_command(
    model: &dyn ArmModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    target: &TrajectoryPoint,
    gains: &Gains,
    h_ff: &Vec6,
) -> Result<ControlCommand> {
    let dynamics = task_dynamics(model, q, qd)?;
    Ok(impedance_with(model, &dynamics, q, qd, target, gains, h_ff))
}

/// [`impedance_command`] with precomputed model terms.
pub fn impedance_with(
    model: &dyn ArmModel,
    dynamics: &TaskDynamics,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    target: &TrajectoryPoint,
    gains: &Gains,
    h_ff: &Vec6,
) -> ControlCommand {
    let axes = model.task_axes();
    let pose = model.forward_kinematics(q);
    let twist = model.ee_twist(q, qd);
    let s = target.mode.motion_selector();
    let free = Vec6::repeat(1.0) - s;

    let dx = pose_error(&target.pose, &pose).component_mul(&s);
    let dxd = (target.twist - twist).component_mul(&s) - twist.component_mul(&free);
    let acc = target.accel.component_mul(&s);
    let vel = target.twist.component_mul(&s);
    let force = target.desired_wrench.component_mul(&free);

    let kp = sub_block(gains.kp.matrix(), axes);
    let kd = sub_block(gains.kd.matrix(), axes);
    let h = &dynamics.lambda * model.project(&acc)
        + &dynamics.gamma * model.project(&vel)
        + &dynamics.eta
        + kp * model.project(&dx)
        + kd * model.project(&dxd)
        + model.project(&force)
        + model.project(h_ff);
    let u = dynamics.jacobian.transpose() * &h;
    ControlCommand {
        h_c: model.embed(&h),
        u,
    }
}

/// `u = (1−α)u1 + αu2` with `α = t/T`.
pub fn blend_commands(
    u1: &ControlCommand,
    u2: &ControlCommand,
    t: f64,
    duration: f64,
) -> Result<ControlCommand> {
    if !(duration > 0.0) {
        return Err(Error::domain(format!(
            "blend duration {duration} must be positive"
        )));
    }
    if u1.u.len() != u2.u.len() {
        return Err(Error::domain("commands have different joint counts"));
    }
    let a = (t / duration).clamp(0.0, 1.0);
    Ok(ControlCommand {
        h_c: u1.h_c * (1.0 - a) + u2.h_c * a,
        u: &u1.u * (1.0 - a) + &u2.u * a,
    })
}

/// `h_ff + rate·(measured − predicted)` on axes where the measured load
/// resists the motion direction. `measured` is the wrench the robot has to
/// supply, i.e. the negated contact wrench.
pub fn feedforward_update(
    h_ff: &Vec6,
    predicted: &Vec6,
    measured: &Vec6,
    rate: f64,
    motion_dir: &Vec6,
) -> Vec6 {
    let rate = rate.clamp(0.0, 1.0);
    let mut out = *h_ff;
    for i in 0..6 {
        if motion_dir[i] != 0.0 && measured[i] * motion_dir[i] > 0.0 {
            out[i] += rate * (measured[i] - predicted[i]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Default,
    BlendingIn,
    Transition,
    BlendingOut,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Default => "default",
            Phase::BlendingIn => "blending_in",
            Phase::Transition => "transition",
            Phase::BlendingOut => "blending_out",
        }
    }
}

/// Precomputed timing of one anticipated contact on the retimed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledContact {
    pub contact_id: String,
    /// Tick at which blending into the transition controller starts.
    pub blend_start_index: usize,
    pub p_c_index: usize,
    /// Past this tick without contact the prediction is declared missed.
    pub deadline_index: usize,
    /// Blend-in duration; the velocity transition and the controller blend
    /// share it so that both finish at p_c.
    pub blend_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Contact sensed while the default controller was active.
    UnexpectedContact,
    /// No contact by the deadline.
    MissedContact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub index: usize,
    pub contact_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Blend-out duration, and the blend-in fallback.
    pub blend_duration: f64,
    pub stabilization_window: f64,
    pub feedforward_rate: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            blend_duration: DEFAULT_BLEND_DURATION,
            stabilization_window: DEFAULT_STABILIZATION,
            feedforward_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub phase: Phase,
    pub default_gains: Gains,
    pub transition_gains: Gains,
    pub h_ff: Vec6,
    pub blend_clock: f64,
    pub blend_duration: f64,
    /// Index into the schedule of the contact being handled or awaited next.
    pub next_contact: usize,
    /// Seconds the contact flag has been continuously raised.
    pub contact_timer: f64,
}

impl ControllerState {
    pub fn new(default_gains: Gains, transition_gains: Gains, blend_duration: f64) -> Result<Self> {
        if !(blend_duration > 0.0) {
            return Err(Error::domain("blend duration must be positive"));
        }
        Ok(Self {
            phase: Phase::Default,
            default_gains,
            transition_gains,
            h_ff: Vec6::zeros(),
            blend_clock: 0.0,
            blend_duration,
            next_contact: 0,
            contact_timer: 0.0,
        })
    }

    /// Weight of the transition controller in the blended command.
    pub fn alpha(&self) -> f64 {
        match self.phase {
            Phase::Default => 0.0,
            Phase::Transition => 1.0,
            Phase::BlendingIn => (self.blend_clock / self.blend_duration).clamp(0.0, 1.0),
            Phase::BlendingOut => 1.0 - (self.blend_clock / self.blend_duration).clamp(0.0, 1.0),
        }
    }

    /// Trace of the stiffness currently in effect.
    pub fn kp_trace(&self) -> f64 {
        let a = self.alpha();
        (1.0 - a) * self.default_gains.kp.trace() + a * self.transition_gains.kp.trace()
    }

    /// Blended command of the default and transition controllers.
    pub fn command(
        &self,
        model: &dyn ArmModel,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        target: &TrajectoryPoint,
    ) -> Result<ControlCommand> {
        let dynamics = task_dynamics(model, q, qd)?;
        let a = self.alpha();
        let u1 = impedance_with(
            model,
            &dynamics,
            q,
            qd,
            target,
            &self.default_gains,
            &self.h_ff,
        );
        if a == 0.0 {
            return Ok(u1);
        }
        let u2 = impedance_with(
            model,
            &dynamics,
            q,
            qd,
            target,
            &self.transition_gains,
            &self.h_ff,
        );
        blend_commands(&u1, &u2, a, 1.0)
    }
}

/// Advances the phase machine by one tick at trajectory index `index`.
pub fn phase_step(
    state: &ControllerState,
    schedule: &[ScheduledContact],
    cfg: &ControllerConfig,
    index: usize,
    contact_flag: bool,
    dt: f64,
) -> Result<(ControllerState, Option<Anomaly>)> {
    if !(dt > 0.0) {
        return Err(Error::domain("dt must be positive"));
    }
    let mut s = state.clone();
    let mut anomaly = None;
    let pending = schedule.get(s.next_contact);
    let id = pending.map(|c| c.contact_id.clone());
    s.contact_timer = if contact_flag {
        s.contact_timer + dt
    } else {
        0.0
    };

    match s.phase {
        Phase::Default => {
            if contact_flag && pending.is_some() {
                s.phase = Phase::Transition;
                s.blend_clock = 0.0;
                anomaly = Some(Anomaly {
                    kind: AnomalyKind::UnexpectedContact,
                    index,
                    contact_id: id,
                });
            } else if let Some(c) = pending.filter(|c| index >= c.blend_start_index) {
                s.phase = Phase::BlendingIn;
                s.blend_clock = 0.0;
                s.blend_duration = c.blend_duration.max(dt);
            }
        }
        Phase::BlendingIn => {
            s.blend_clock = (s.blend_clock + dt).min(s.blend_duration);
            if s.blend_clock >= s.blend_duration - 1e-12 {
                s.phase = Phase::Transition;
                s.blend_clock = 0.0;
            }
        }
        Phase::Transition => {
            let missed = pending.is_none_or(|c| index > c.deadline_index);
            if s.contact_timer >= cfg.stabilization_window - 1e-12 || missed {
                if missed && s.contact_timer == 0.0 {
                    anomaly = Some(Anomaly {
                        kind: AnomalyKind::MissedContact,
                        index,
                        contact_id: id,
                    });
                }
                s.phase = Phase::BlendingOut;
                s.blend_clock = 0.0;
                s.blend_duration = cfg.blend_duration;
                s.next_contact += 1;
            }
        }
        Phase::BlendingOut => {
            s.blend_clock = (s.blend_clock + dt).min(s.blend_duration);
            if let Some(c) = pending.filter(|c| index >= c.blend_start_index) {
                // reverse from the current weight instead of jumping
                let a = s.alpha();
                s.phase = Phase::BlendingIn;
                s.blend_duration = c.blend_duration.max(dt);
                s.blend_clock = a * s.blend_duration;
            } else if s.blend_clock >= s.blend_duration - 1e-12 {
                s.phase = Phase::Default;
                s.blend_clock = 0.0;
            }
        }
    }
    Ok((s, anomaly))
}
