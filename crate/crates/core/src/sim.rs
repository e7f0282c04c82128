//! Rigid-body plant: arm models, penalty contact, force-torque sensing.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{UnitQuat, Vec3, Vec6};
use crate::trajectory::Pose;

pub const GRAVITY: f64 = 9.81;
pub const MAX_DT: f64 = 5e-3;
pub const FRICTION_EPS: f64 = 1e-3;
pub const DEFAULT_SIGMA_F: f64 = 0.5;
pub const DEFAULT_CUTOFF_HZ: f64 = 30.0;
pub const DEFAULT_F_TH: f64 = 2.0;
pub const DEFAULT_HOLD_TICKS: usize = 5;
pub const DEFAULT_PEAK_WINDOW: f64 = 0.15;

/// Joint-space dynamics `M(q) q̈ + C(q, q̇) q̇ + g(q) = u + Jᵀ h_ext` with a
/// square task Jacobian over the axes returned by [`ArmModel::task_axes`].
pub trait ArmModel: Send + Sync {
    fn dof(&self) -> usize;
    /// Indices into the 6-D task space (x, y, z, rx, ry, rz) this arm controls.
    fn task_axes(&self) -> &[usize];
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64>;
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_dot(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64>;
    fn forward_kinematics(&self, q: &DVector<f64>) -> Pose;
    /// Viscous joint damping torque coefficient.
    fn joint_damping(&self) -> f64 {
        0.0
    }

    /// Full 6-D twist of the end effector; uncontrolled axes are zero.
    fn ee_twist(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Vec6 {
        let v = self.jacobian(q) * qd;
        self.embed(&v)
    }

    fn project(&self, w: &Vec6) -> DVector<f64> {
        DVector::from_iterator(
            self.task_axes().len(),
            self.task_axes().iter().map(|&i| w[i]),
        )
    }

    fn embed(&self, v: &DVector<f64>) -> Vec6 {
        let mut out = Vec6::zeros();
        for (k, &i) in self.task_axes().iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    fn potential_energy(&self, q: &DVector<f64>) -> f64;
}

/// Cartesian gantry: q = (position, rotation vector), J = I.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gantry {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub inertia: f64,
    /// m/s², acting along −z
    pub gravity: f64,
}

impl Gantry {
    pub fn new(mass: f64, inertia: f64, gravity: f64) -> Result<Self> {
        if !(mass > 0.0) || !(inertia > 0.0) {
            return Err(Error::domain("gantry mass and inertia must be positive"));
        }
        Ok(Self {
            mass,
            inertia,
            gravity,
        })
    }

    pub fn state_at(&self, pose: &Pose) -> SimState {
        let mut q = DVector::zeros(6);
        q.fixed_rows_mut::<3>(0).copy_from(&pose.position);
        q.fixed_rows_mut::<3>(3)
            .copy_from(&pose.orientation.to_rotation_vector());
        SimState::new(self, q, DVector::zeros(6))
    }
}

impl Default for Gantry {
    fn default() -> Self {
        Self {
            mass: 2.0,
            inertia: 0.02,
            gravity: GRAVITY,
        }
    }
}

const ALL_AXES: [usize; 6] = [0, 1, 2, 3, 4, 5];
const PLANAR_AXES: [usize; 3] = [0, 1, 5];

impl ArmModel for Gantry {
    fn dof(&self) -> usize {
        6
    }
    fn task_axes(&self) -> &[usize] {
        &ALL_AXES
    }
    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let m = self.mass;
        let i = self.inertia;
        DMatrix::from_diagonal(&DVector::from_vec(vec![m, m, m, i, i, i]))
    }
    fn coriolis(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(6, 6)
    }
    fn gravity(&self, _q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(6);
        g[2] = self.mass * self.gravity;
        g
    }
    fn jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(6, 6)
    }
    fn jacobian_dot(&self, _q: &DVector<f64>, _qd: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(6, 6)
    }
    fn forward_kinematics(&self, q: &DVector<f64>) -> Pose {
        let p = Vec3::new(q[0], q[1], q[2]);
        let r = Vec3::new(q[3], q[4], q[5]);
        Pose::new(p, UnitQuat::from_rotation_vector(&r))
    }
    fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        self.mass * self.gravity * q[2]
    }
}

/// Planar three-link arm in the x–y plane with point masses at the link ends.
/// Gravity acts along −y; the task is (x, y, φ) with φ the end-link angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planar3Link {
    pub lengths: [f64; 3],
    pub masses: [f64; 3],
    pub damping: f64,
    pub gravity: f64,
}

impl Default for Planar3Link {
    fn default() -> Self {
        Self {
            lengths: [0.4, 0.3, 0.2],
            masses: [1.5, 1.0, 0.5],
            damping: 0.0,
            gravity: GRAVITY,
        }
    }
}

impl Planar3Link {
    pub fn new(lengths: [f64; 3], masses: [f64; 3], damping: f64, gravity: f64) -> Result<Self> {
        if lengths.iter().chain(masses.iter()).any(|v| !(*v > 0.0)) || damping < 0.0 {
            return Err(Error::domain("link lengths and masses must be positive"));
        }
        Ok(Self {
            lengths,
            masses,
            damping,
            gravity,
        })
    }

    fn angles(q: &DVector<f64>) -> [f64; 3] {
        [q[0], q[0] + q[1], q[0] + q[1] + q[2]]
    }

    /// Position of the mass at the end of link `i`.
    pub fn point(&self, q: &DVector<f64>, i: usize) -> (f64, f64) {
        let th = Self::angles(q);
        (0..=i).fold((0.0, 0.0), |(x, y), k| {
            (
                x + self.lengths[k] * th[k].cos(),
                y + self.lengths[k] * th[k].sin(),
            )
        })
    }

    /// 2×3 Jacobian of point `i`.
    fn point_jacobian(&self, q: &DVector<f64>, i: usize) -> DMatrix<f64> {
        let th = Self::angles(q);
        let mut j = DMatrix::zeros(2, 3);
        for col in 0..=i {
            for k in col..=i {
                j[(0, col)] -= self.lengths[k] * th[k].sin();
                j[(1, col)] += self.lengths[k] * th[k].cos();
            }
        }
        j
    }

    /// ∂J_i/∂q_l for point `i`.
    fn point_jacobian_dq(&self, q: &DVector<f64>, i: usize, l: usize) -> DMatrix<f64> {
        let th = Self::angles(q);
        let mut d = DMatrix::zeros(2, 3);
        for col in 0..=i {
            for k in col.max(l)..=i {
                d[(0, col)] -= self.lengths[k] * th[k].cos();
                d[(1, col)] -= self.lengths[k] * th[k].sin();
            }
        }
        d
    }

    fn mass_matrix_dq(&self, q: &DVector<f64>, l: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3, 3);
        for i in 0..3 {
            let j = self.point_jacobian(q, i);
            let dj = self.point_jacobian_dq(q, i, l);
            out += (dj.transpose() * &j + j.transpose() * dj) * self.masses[i];
        }
        out
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * qd.dot(&(self.mass_matrix(q) * qd))
    }
}

impl ArmModel for Planar3Link {
    fn dof(&self) -> usize {
        3
    }
    fn task_axes(&self) -> &[usize] {
        &PLANAR_AXES
    }
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3, 3);
        for i in 0..3 {
            let j = self.point_jacobian(q, i);
            m += j.transpose() * j * self.masses[i];
        }
        m
    }
    fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let dm: Vec<_> = (0..3).map(|l| self.mass_matrix_dq(q, l)).collect();
        let mut c = DMatrix::zeros(3, 3);
        for k in 0..3 {
            for j in 0..3 {
                c[(k, j)] = (0..3)
                    .map(|i| 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]) * qd[i])
                    .sum();
            }
        }
        c
    }
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(3);
        for i in 0..3 {
            let j = self.point_jacobian(q, i);
            for col in 0..3 {
                g[col] += self.masses[i] * self.gravity * j[(1, col)];
            }
        }
        g
    }
    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let jp = self.point_jacobian(q, 2);
        let mut j = DMatrix::zeros(3, 3);
        j.rows_mut(0, 2).copy_from(&jp);
        j.row_mut(2).fill(1.0);
        j
    }
    fn jacobian_dot(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let mut jd = DMatrix::zeros(3, 3);
        for l in 0..3 {
            let d = self.point_jacobian_dq(q, 2, l) * qd[l];
            let mut top = jd.rows_mut(0, 2);
            top += d;
        }
        jd
    }
    fn forward_kinematics(&self, q: &DVector<f64>) -> Pose {
        let (x, y) = self.point(q, 2);
        let phi = Self::angles(q)[2];
        Pose::new(
            Vec3::new(x, y, 0.0),
            UnitQuat::from_rotation_vector(&Vec3::new(0.0, 0.0, phi)),
        )
    }
    fn joint_damping(&self) -> f64 {
        self.damping
    }
    fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        (0..3)
            .map(|i| self.masses[i] * self.gravity * self.point(q, i).1)
            .sum()
    }
}

/// Contact geometry; normals point out of the obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
    Aabb { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    /// Penetration depth (positive inside) and outward normal, if penetrating.
    pub fn penetration(&self, p: &Vec3) -> Option<(f64, Vec3)> {
        match self {
            Shape::HalfSpace { point, normal } => {
                let n = Vec3::from(*normal).normalize();
                let d = (Vec3::from(*point) - p).dot(&n);
                (d > 0.0).then_some((d, n))
            }
            Shape::Aabb { min, max } => {
                let mut best: Option<(f64, Vec3)> = None;
                for a in 0..3 {
                    let lo = p[a] - min[a];
                    let hi = max[a] - p[a];
                    if lo <= 0.0 || hi <= 0.0 {
                        return None;
                    }
                    let mut n = Vec3::zeros();
                    let depth = if lo < hi {
                        n[a] = -1.0;
                        lo
                    } else {
                        n[a] = 1.0;
                        hi
                    };
                    if best.is_none_or(|(b, _)| depth < b) {
                        best = Some((depth, n));
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub shape: Shape,
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
    pub friction: f64,
}

impl Geometry {
    pub fn new(shape: Shape, stiffness: f64, damping: f64, friction: f64) -> Result<Self> {
        let g = Self {
            shape,
            stiffness,
            damping,
            friction,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !(self.damping >= 0.0) || !(self.friction >= 0.0) {
            return Err(Error::domain(
                "contact requires k_c > 0, c_c >= 0, mu_f >= 0",
            ));
        }
        if let Shape::HalfSpace { normal, .. } = &self.shape {
            if !(Vec3::from(*normal).norm() > 0.0) {
                return Err(Error::domain("half-space normal must be non-zero"));
            }
        }
        if let Shape::Aabb { min, max } = &self.shape {
            if (0..3).any(|a| !(max[a] > min[a])) {
                return Err(Error::domain("box max must exceed min on every axis"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub geometries: Vec<Geometry>,
}

impl Environment {
    pub fn new(geometries: Vec<Geometry>) -> Result<Self> {
        for g in &geometries {
            g.validate()?;
        }
        Ok(Self { geometries })
    }
}

/// Friction and normal force split of one contact, for audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForce {
    pub normal: Vec3,
    pub friction: Vec3,
}

/// Per-geometry forces at point `p` moving with velocity `v`.
pub fn contact_forces(p: &Vec3, v: &Vec3, env: &Environment) -> Vec<ContactForce> {
    env.geometries
        .iter()
        .filter_map(|g| geometry_force(g, p, v))
        .collect()
}

fn geometry_force(g: &Geometry, p: &Vec3, v: &Vec3) -> Option<ContactForce> {
    let (depth, n) = g.shape.penetration(p)?;
    let vn = v.dot(&n);
    let fn_mag = (g.stiffness * depth - g.damping * vn).max(0.0);
    let vt = v - n * vn;
    let speed_t = vt.norm();
    let friction = if speed_t > 0.0 && fn_mag > 0.0 {
        -vt / speed_t * (g.friction * fn_mag * (speed_t / FRICTION_EPS).tanh())
    } else {
        Vec3::zeros()
    };
    Some(ContactForce {
        normal: n * fn_mag,
        friction,
    })
}

/// Wrench exerted by the environment on the end effector.
pub fn contact_wrench(model: &dyn ArmModel, state: &SimState, env: &Environment) -> Vec6 {
    let p = model.forward_kinematics(&state.q).position;
    let v = model
        .ee_twist(&state.q, &state.qd)
        .fixed_rows::<3>(0)
        .into_owned();
    let f: Vec3 = contact_forces(&p, &v, env)
        .iter()
        .map(|c| c.normal + c.friction)
        .sum();
    let mut w = Vec6::zeros();
    w.fixed_rows_mut::<3>(0).copy_from(&f);
    w
}

/// Contact wrench applied over the next step. A contact entered during the
/// previous step was active for part of that step but pushed nothing, so
/// its first force is scaled up by the missed fraction. Without this the
/// impulse at entry depends on where inside a tick the surface is crossed.
fn stepped_contact_wrench(
    model: &dyn ArmModel,
    state: &SimState,
    env: &Environment,
    dt: f64,
) -> Vec6 {
    entry_scaled_wrench(model, state, env, dt, 1.0)
}

/// Contact wrench averaged over the step that just ended, as an
/// integrating force sensor reports it. On the entry tick only the part of
/// the step spent in contact counts.
pub fn sensed_contact_wrench(
    model: &dyn ArmModel,
    state: &SimState,
    env: &Environment,
    dt: f64,
) -> Vec6 {
    entry_scaled_wrench(model, state, env, dt, 0.0)
}

fn entry_scaled_wrench(
    model: &dyn ArmModel,
    state: &SimState,
    env: &Environment,
    dt: f64,
    base: f64,
) -> Vec6 {
    let p = model.forward_kinematics(&state.q).position;
    let v = model
        .ee_twist(&state.q, &state.qd)
        .fixed_rows::<3>(0)
        .into_owned();
    let mut f = Vec3::zeros();
    for g in &env.geometries {
        let Some((depth, n)) = g.shape.penetration(&p) else {
            continue;
        };
        let travel = -v.dot(&n) * dt;
        let scale = if travel > depth {
            base + depth / travel
        } else {
            1.0
        };
        if let Some(c) = geometry_force(g, &p, &v) {
            f += (c.normal + c.friction) * scale;
        }
    }
    let mut w = Vec6::zeros();
    w.fixed_rows_mut::<3>(0).copy_from(&f);
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// End-effector pose, kept equal to FK(q).
    pub pose: Pose,
    pub twist: Vec6,
    pub t: f64,
    pub tick: u64,
}

impl SimState {
    pub fn new(model: &dyn ArmModel, q: DVector<f64>, qd: DVector<f64>) -> Self {
        let pose = model.forward_kinematics(&q);
        let twist = model.ee_twist(&q, &qd);
        Self {
            q,
            qd,
            pose,
            twist,
            t: 0.0,
            tick: 0,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.pose.position
    }

    pub fn velocity(&self) -> Vec3 {
        self.twist.fixed_rows::<3>(0).into_owned()
    }
}

/// Semi-implicit Euler step of the plant under joint torque `u`.
pub fn sim_step(
    model: &dyn ArmModel,
    env: &Environment,
    state: &SimState,
    u: &DVector<f64>,
    dt: f64,
    max_speed: f64,
) -> Result<SimState> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::domain(format!("dt {dt} outside (0, {MAX_DT}]")));
    }
    if u.len() != model.dof() {
        return Err(Error::domain(format!(
            "torque has {} entries, arm has {}",
            u.len(),
            model.dof()
        )));
    }
    let q = &state.q;
    let qd = &state.qd;
    let h_ext = stepped_contact_wrench(model, state, env, dt);
    let tau_ext = model.jacobian(q).transpose() * model.project(&h_ext);
    let rhs =
        u - model.coriolis(q, qd) * qd - model.gravity(q) - qd * model.joint_damping() + tau_ext;
    let m = model.mass_matrix(q);
    let qdd = m
        .cholesky()
        .ok_or_else(|| Error::NotSpd("mass matrix".into()))?
        .solve(&rhs);
    let qd_next = qd + qdd * dt;
    let q_next = q + &qd_next * dt;
    let tick = state.tick + 1;
    let speed = qd_next.norm();
    if !speed.is_finite() || speed > max_speed {
        return Err(Error::Divergence { tick, speed });
    }
    let mut next = SimState::new(model, q_next, qd_next);
    next.t = tick as f64 * dt;
    next.tick = tick;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtReading {
    pub raw: Vec6,
    pub filtered: Vec6,
}

impl FtReading {
    pub fn force(&self) -> Vec3 {
        self.filtered.fixed_rows::<3>(0).into_owned()
    }
}

/// Wrist force-torque sensor: Gaussian noise then single-pole low-pass.
#[derive(Debug, Clone)]
pub struct FtSensor {
    pub sigma: f64,
    pub cutoff_hz: f64,
    filtered: Option<Vec6>,
    rng: ChaCha8Rng,
}

impl FtSensor {
    pub fn new(sigma: f64, cutoff_hz: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(sigma >= 0.0) || !(cutoff_hz > 0.0) {
            return Err(Error::domain("sensor needs sigma >= 0 and cutoff > 0"));
        }
        Ok(Self {
            sigma,
            cutoff_hz,
            filtered: None,
            rng,
        })
    }

    pub fn alpha(&self, dt: f64) -> f64 {
        let rc = 1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz);
        dt / (dt + rc)
    }

    /// Filters an already-noisy sample.
    pub fn filter(&mut self, raw: Vec6, dt: f64) -> Vec6 {
        let a = self.alpha(dt);
        let f = match self.filtered {
            Some(prev) => prev + (raw - prev) * a,
            None => raw * a,
        };
        self.filtered = Some(f);
        f
    }

    pub fn read(&mut self, wrench: &Vec6, dt: f64) -> FtReading {
        let mut raw = *wrench;
        if self.sigma > 0.0 {
            for i in 0..6 {
                let z: f64 = self.rng.sample(StandardNormal);
                raw[i] += self.sigma * z;
            }
        }
        let filtered = self.filter(raw, dt);
        FtReading { raw, filtered }
    }
}

/// Samples the sensor at the current plant state.
pub fn ft_read(
    model: &dyn ArmModel,
    state: &SimState,
    env: &Environment,
    sensor: &mut FtSensor,
    dt: f64,
) -> FtReading {
    sensor.read(&sensed_contact_wrench(model, state, env, dt), dt)
}

fn opposing(reading: &FtReading, motion_dir: &Vec3) -> f64 {
    -reading.force().dot(motion_dir)
}

/// True when the last `hold` readings all push back against `motion_dir` by
/// more than `threshold`.
pub fn detect_contact(
    window: &[FtReading],
    motion_dir: &Vec3,
    threshold: f64,
    hold: usize,
) -> bool {
    hold > 0
        && window.len() >= hold
        && window[window.len() - hold..]
            .iter()
            .all(|r| opposing(r, motion_dir) > threshold)
}

/// Streaming form of [`detect_contact`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContactDetector {
    pub threshold: f64,
    pub hold: usize,
    count: usize,
}

impl ContactDetector {
    pub fn new(threshold: f64, hold: usize) -> Self {
        Self {
            threshold,
            hold: hold.max(1),
            count: 0,
        }
    }

    pub fn update(&mut self, reading: &FtReading, motion_dir: &Vec3) -> bool {
        if opposing(reading, motion_dir) > self.threshold {
            self.count += 1;
        } else {
            self.count = 0;
        }
        self.count >= self.hold
    }

    pub fn reset(&mut self) {
        self.count = 0;
    }
}

/// Largest filtered force along `normal` in the window.
pub fn impact_peak(window: &[FtReading], normal: &Vec3) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::domain("impact window is empty"));
    }
    Ok(window
        .iter()
        .map(|r| r.force().dot(normal))
        .fold(f64::NEG_INFINITY, f64::max))
}
