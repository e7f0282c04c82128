//! Target trajectories, the C∞ speed-transition profile and retiming.
//!
//! A [`Trajectory`] is a uniformly sampled sequence of task-space targets cut
//! into segments. Generated trajectories use rest-to-rest minimum-jerk moves
//! and dwells. [`retime`] rewrites the timeline around an anticipated contact
//! so the path speed settles smoothly onto an approach speed at the region
//! boundary, while the traversed path stays the same.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{slerp, UnitQuat, Vec3, Vec6};

/// Spacing tolerance for the control period.
pub const DT_TOL: f64 = 1e-9;
/// Default jerk bound used when validating input trajectories (m/s³).
pub const DEFAULT_J_MAX: f64 = 50.0;
/// Speeds below this are treated as rest (m/s).
pub const REST_SPEED: f64 = 1e-9;

pub const CSV_HEADER: [&str; 21] = [
    "t",
    "px",
    "py",
    "pz",
    "qw",
    "qx",
    "qy",
    "qz",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz",
    "fx",
    "fy",
    "fz",
    "tx",
    "ty",
    "tz",
    "mode_mask",
];

/// End-effector position and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_position(position: Vec3) -> Self {
        Self::new(position, UnitQuat::identity())
    }
}

/// Per-axis control mode for the six task-space axes. A set bit marks a
/// force-controlled axis (bit 0 = x ... bit 5 = rotation about z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ControlModeMask(u8);

impl ControlModeMask {
    pub const ALL_MOTION: Self = Self(0);

    pub fn new(bits: u8) -> Result<Self> {
        if bits & 0b11_1111 == 0b11_1111 || bits > 0b11_1111 {
            return Err(Error::domain(format!(
                "mode mask {bits:#08b} leaves no motion-controlled axis"
            )));
        }
        Ok(Self(bits))
    }

    /// Mask with the listed axes force-controlled.
    pub fn force_axes(axes: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &a in axes {
            if a >= 6 {
                return Err(Error::domain(format!("axis {a} out of range")));
            }
            bits |= 1 << a;
        }
        Self::new(bits)
    }

    pub fn bits(&self) -> u8 {
        self.0
    }

    pub fn is_force(&self, axis: usize) -> bool {
        self.0 & (1 << axis) != 0
    }

    /// 1.0 on motion-controlled axes, 0.0 on force-controlled axes.
    pub fn motion_selector(&self) -> Vec6 {
        Vec6::from_fn(|i, _| if self.is_force(i) { 0.0 } else { 1.0 })
    }
}

impl TryFrom<u8> for ControlModeMask {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ControlModeMask> for u8 {
    fn from(m: ControlModeMask) -> u8 {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pose: Pose,
    pub twist: Vec6,
    pub accel: Vec6,
    pub desired_wrench: Vec6,
    pub mode: ControlModeMask,
}

impl TrajectoryPoint {
    pub fn at_rest(t: f64, pose: Pose) -> Self {
        Self {
            t,
            pose,
            twist: Vec6::zeros(),
            accel: Vec6::zeros(),
            desired_wrench: Vec6::zeros(),
            mode: ControlModeMask::ALL_MOTION,
        }
    }

    pub fn speed(&self) -> f64 {
        self.twist.fixed_rows::<3>(0).norm()
    }
}

/// Inclusive index range; neighbouring segments share their boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
    dt: f64,
    segments: Vec<Segment>,
}

impl Trajectory {
    /// Builds a trajectory, checking spacing and segment layout.
    pub fn new(mut points: Vec<TrajectoryPoint>, dt: f64, segments: Vec<Segment>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("trajectory has no points"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!(
                "control period {dt} must be positive"
            )));
        }
        check_timeline(&points, dt)
            .map_err(|(row, msg)| Error::domain(format!("point {row}: {msg}")))?;
        let last = points.len() - 1;
        if segments.is_empty()
            || segments[0].start != 0
            || segments.last().map(|s| s.end) != Some(last)
            || segments.iter().any(|s| s.end < s.start)
            || segments.windows(2).any(|w| w[0].end != w[1].start)
        {
            return Err(Error::domain("segments must tile the trajectory"));
        }
        // keep consecutive quaternions on one hemisphere so slerp never sees
        // antipodal neighbours
        for i in 1..points.len() {
            let prev = points[i - 1].pose.orientation;
            if points[i].pose.orientation.dot(&prev) < 0.0 {
                points[i].pose.orientation = points[i].pose.orientation.neg();
            }
        }
        Ok(Self {
            points,
            dt,
            segments,
        })
    }

    /// Builds a trajectory and infers segments from rest points and mode changes.
    pub fn from_points(points: Vec<TrajectoryPoint>, dt: f64) -> Result<Self> {
        let segments = infer_segments(&points);
        Self::new(points, dt, segments)
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &TrajectoryPoint {
        &self.points[i.min(self.points.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration(&self) -> f64 {
        self.points.last().unwrap().t - self.points[0].t
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.pose.position).collect()
    }

    /// Index of the segment holding point `i`, preferring the segment that
    /// starts at a shared boundary.
    pub fn segment_of(&self, i: usize) -> usize {
        let n = self.segments.len();
        self.segments
            .iter()
            .position(|s| s.start <= i && i < s.end)
            .unwrap_or(n - 1)
    }

    /// Cumulative arc length of the position path.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in self.points.windows(2) {
            acc += (w[1].pose.position - w[0].pose.position).norm();
            s.push(acc);
        }
        s
    }

    pub fn segment_length(&self, k: usize) -> f64 {
        let seg = self.segments[k];
        self.points[seg.start..=seg.end]
            .windows(2)
            .map(|w| (w[1].pose.position - w[0].pose.position).norm())
            .sum()
    }

    /// Unit direction from the start to the end of segment `k`, zero for dwells.
    pub fn segment_direction(&self, k: usize) -> Vec3 {
        let seg = self.segments[k];
        let d = self.points[seg.end].pose.position - self.points[seg.start].pose.position;
        let n = d.norm();
        if n < 1e-12 {
            Vec3::zeros()
        } else {
            d / n
        }
    }

    /// Largest finite-difference jerk magnitude inside any single segment.
    pub fn max_segment_jerk(&self) -> f64 {
        let dt3 = self.dt.powi(3);
        let mut worst = 0.0_f64;
        for seg in &self.segments {
            if seg.end < seg.start + 3 {
                continue;
            }
            for i in seg.start..=(seg.end - 3) {
                let p = |k: usize| self.points[k].pose.position;
                let d3 = p(i + 3) - 3.0 * p(i + 2) + 3.0 * p(i + 1) - p(i);
                worst = worst.max(d3.norm() / dt3);
            }
        }
        worst
    }

    pub fn validate_jerk(&self, j_max: f64) -> Result<()> {
        let j = self.max_segment_jerk();
        if j > j_max {
            return Err(Error::domain(format!(
                "segment jerk {j:.3} m/s^3 exceeds bound {j_max}"
            )));
        }
        Ok(())
    }

    /// Position, orientation and sample data at a fractional index.
    fn sample_fractional(&self, u: f64) -> (Pose, &TrajectoryPoint) {
        let last = self.points.len() - 1;
        let u = u.clamp(0.0, last as f64);
        let i = (u.floor() as usize).min(last);
        let f = u - i as f64;
        if i == last || f <= 0.0 {
            return (self.points[i].pose, &self.points[i]);
        }
        let a = &self.points[i];
        let b = &self.points[i + 1];
        let position = a.pose.position + (b.pose.position - a.pose.position) * f;
        let orientation =
            slerp(&a.pose.orientation, &b.pose.orientation, f).unwrap_or(a.pose.orientation);
        let src = if f > 0.5 { b } else { a };
        (Pose::new(position, orientation), src)
    }
}

fn check_timeline(points: &[TrajectoryPoint], dt: f64) -> std::result::Result<(), (usize, String)> {
    for (i, p) in points.iter().enumerate() {
        if !p.t.is_finite() || p.t < 0.0 {
            return Err((i, format!("time {} must be finite and non-negative", p.t)));
        }
    }
    for i in 1..points.len() {
        let step = points[i].t - points[i - 1].t;
        if step <= 0.0 {
            return Err((i, format!("time {} does not increase", points[i].t)));
        }
        if (step - dt).abs() > DT_TOL {
            return Err((
                i,
                format!("spacing {step} differs from control period {dt}"),
            ));
        }
    }
    Ok(())
}

fn infer_segments(points: &[TrajectoryPoint]) -> Vec<Segment> {
    let last = points.len().saturating_sub(1);
    let mut bounds = vec![0usize];
    for i in 1..last {
        let resting = points[i].speed() <= REST_SPEED;
        let prev_resting = points[i - 1].speed() <= REST_SPEED;
        let next_resting = points[i + 1].speed() <= REST_SPEED;
        let mode_change = points[i].mode != points[i - 1].mode;
        if (mode_change || (resting && (!prev_resting || !next_resting)))
            && *bounds.last().unwrap() != i
        {
            bounds.push(i);
        }
    }
    if *bounds.last().unwrap() != last || bounds.len() == 1 {
        bounds.push(last);
    }
    bounds
        .windows(2)
        .map(|w| Segment {
            start: w[0],
            end: w[1],
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Speed transition profile
// ---------------------------------------------------------------------------

/// Blend weight `e^{-1/τ} / (e^{-1/τ} + e^{-1/(1-τ)})` on (0, 1), clamped outside.
pub fn bump_weight(tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        // ratio form avoids 0/0 when both exponentials underflow
        1.0 / (1.0 + (1.0 / tau - 1.0 / (1.0 - tau)).exp())
    }
}

/// Speed transition from `v1` to `v2` evaluated at normalized time `tau`.
pub fn bump_blend(v1: f64, v2: f64, tau: f64) -> Result<f64> {
    if !v1.is_finite() || !v2.is_finite() || tau.is_nan() {
        return Err(Error::domain("bump_blend needs finite speeds"));
    }
    if v1 < 0.0 || v2 < 0.0 {
        return Err(Error::domain("bump_blend needs non-negative speeds"));
    }
    if tau <= 0.0 {
        return Ok(v1);
    }
    if tau >= 1.0 {
        return Ok(v2);
    }
    let v = v1 + (v2 - v1) * bump_weight(tau);
    Ok(v.clamp(v1.min(v2), v1.max(v2)))
}

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];
const GL_PANELS: usize = 32;

/// `∫₀^τ w(u) du` by composite 8-point Gauss-Legendre.
pub fn bump_weight_integral(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let upper = tau.min(1.0);
    let h = upper / GL_PANELS as f64;
    let mut acc = 0.0;
    for p in 0..GL_PANELS {
        let mid = (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            acc += w * (bump_weight(mid - half * x) + bump_weight(mid + half * x));
        }
    }
    acc *= 0.5 * h;
    if tau > 1.0 {
        acc += tau - 1.0;
    }
    acc
}

/// Distance covered during a full transition of duration `duration`.
pub fn profile_displacement(v1: f64, v2: f64, duration: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!(
            "transition duration {duration} must be positive"
        )));
    }
    if !v1.is_finite() || !v2.is_finite() {
        return Err(Error::domain("profile_displacement needs finite speeds"));
    }
    Ok(duration * (v1 + (v2 - v1) * bump_weight_integral(1.0)))
}

/// One piece of a retimed speed schedule.
#[derive(Debug, Clone, Copy)]
struct Ramp {
    t0: f64,
    duration: f64,
    s0: f64,
    v_from: f64,
    v_to: f64,
    segment: usize,
    /// dwell pieces advance through original samples by time instead of arc
    dwell_start: Option<usize>,
}

impl Ramp {
    fn end_time(&self) -> f64 {
        self.t0 + self.duration
    }

    fn end_arc(&self) -> f64 {
        self.s0 + self.displacement(self.duration)
    }

    fn displacement(&self, elapsed: f64) -> f64 {
        if self.dwell_start.is_some() || self.duration <= 0.0 {
            return 0.0;
        }
        let tau = (elapsed / self.duration).clamp(0.0, 1.0);
        self.duration * (self.v_from * tau + (self.v_to - self.v_from) * bump_weight_integral(tau))
    }

    fn speed(&self, elapsed: f64) -> f64 {
        if self.dwell_start.is_some() {
            return 0.0;
        }
        if self.duration <= 0.0 {
            return self.v_to;
        }
        let tau = elapsed / self.duration;
        self.v_from + (self.v_to - self.v_from) * bump_weight(tau)
    }
}

/// Options for [`retime_with`].
#[derive(Debug, Clone, Copy)]
pub struct RetimeRequest {
    /// Index of the region boundary point `p_c` in the input trajectory.
    pub p_c_index: usize,
    /// Segment holding the expected contact; slowing lasts through its end.
    pub contact_segment: usize,
    pub approach_speed: f64,
    pub duration: f64,
    /// Lift-off and set-down duration at rest points inside the slowed stretch.
    pub edge_duration: f64,
}

#[derive(Debug, Clone)]
pub struct Retimed {
    pub trajectory: Trajectory,
    /// First index of the speed transition in the new timeline.
    pub transition_start_index: usize,
    /// Index of `p_c` in the new timeline.
    pub p_c_index: usize,
    /// Transition duration actually used (may be shorter than requested).
    pub effective_duration: f64,
    pub speed_at_p_c: f64,
    /// Original speed where the transition starts.
    pub start_speed: f64,
    pub warnings: Vec<String>,
}

/// Retimes so the path speed reaches `v2` at `p_c_index` after a transition
/// of duration `duration`; slowing lasts to the end of `p_c`'s segment.
pub fn retime(traj: &Trajectory, p_c_index: usize, v2: f64, duration: f64) -> Result<Retimed> {
    let seg = traj.segment_of(p_c_index.min(traj.len() - 1));
    retime_with(
        traj,
        &RetimeRequest {
            p_c_index,
            contact_segment: seg,
            approach_speed: v2,
            duration,
            edge_duration: duration.min(0.25),
        },
    )
}

pub fn retime_with(traj: &Trajectory, req: &RetimeRequest) -> Result<Retimed> {
    let v2 = req.approach_speed;
    if !(v2 > 0.0) || !v2.is_finite() {
        return Err(Error::domain(format!(
            "approach speed {v2} must be positive"
        )));
    }
    if !(req.duration > 0.0) || !(req.edge_duration > 0.0) {
        return Err(Error::domain("transition durations must be positive"));
    }
    if req.p_c_index >= traj.len() {
        return Err(Error::domain(format!(
            "p_c index {} out of range",
            req.p_c_index
        )));
    }
    if req.contact_segment >= traj.segments.len() {
        return Err(Error::domain("contact segment out of range"));
    }
    let mut warnings = Vec::new();
    let arc = traj.arc_lengths();
    let dt = traj.dt;
    let t0 = traj.points[0].t;
    let seg_len = |k: usize| arc[traj.segments[k].end] - arc[traj.segments[k].start];

    // p_c inside a dwell: the slowing starts with the next moving segment
    let mut seg_c = traj.segment_of(req.p_c_index);
    let mut ic = req.p_c_index;
    while seg_len(seg_c) <= 1e-12 && seg_c < req.contact_segment {
        seg_c += 1;
        ic = traj.segments[seg_c].start;
    }
    let kc = req.contact_segment.max(seg_c);
    let seg = traj.segments[seg_c];
    let s_c = arc[ic];
    let s_seg = arc[seg.start];

    // Original speed and time as functions of arc length inside seg_c.
    let locate = |s: f64| -> f64 {
        // fractional index with arc[i] <= s, inside seg_c
        let (mut lo, mut hi) = (seg.start, seg.end);
        if s <= arc[lo] {
            return lo as f64;
        }
        if s >= arc[hi] {
            return hi as f64;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if arc[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = arc[hi] - arc[lo];
        lo as f64
            + if span > 0.0 {
                (s - arc[lo]) / span
            } else {
                0.0
            }
    };
    let speed_at = |u: f64| -> f64 {
        let i = u.floor() as usize;
        let f = u - i as f64;
        let a = traj.points[i].speed();
        if f <= 0.0 || i + 1 >= traj.len() {
            return a;
        }
        a + (traj.points[i + 1].speed() - a) * f
    };
    let gap = |s: f64| (s_c - s) - 0.5 * (speed_at(locate(s)) + v2) * req.duration;

    let mut pieces: Vec<Ramp> = Vec::new();
    let start_u;
    let v1;
    let effective;
    let mut pinned_first = true;

    // Latest sample (scanning backwards from p_c) with room for the transition.
    let mut found = None;
    let mut j = ic;
    loop {
        if gap(arc[j]) >= 0.0 {
            found = Some(j);
            break;
        }
        if j == seg.start {
            break;
        }
        j -= 1;
    }
    match found {
        Some(j) => {
            let (mut lo, mut hi) = (arc[j], arc[(j + 1).min(ic)]);
            if hi > lo && gap(hi) < 0.0 {
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if gap(mid) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            let s_start = lo;
            start_u = locate(s_start);
            v1 = speed_at(start_u);
            effective = if v1 + v2 > 0.0 {
                2.0 * (s_c - s_start) / (v1 + v2)
            } else {
                req.duration
            };
        }
        None => {
            start_u = seg.start as f64;
            v1 = speed_at(start_u);
            let fit = 2.0 * (s_c - s_seg) / (v1 + v2);
            if fit >= req.edge_duration.min(req.duration) {
                effective = fit;
                warnings.push(format!(
                    "transition shortened from {:.3} s to {:.3} s to fit before p_c",
                    req.duration, fit
                ));
            } else {
                effective = req.edge_duration.min(req.duration);
                pinned_first = false;
                warnings.push(format!(
                    "no room before p_c; speed ramps over {effective:.3} s from the segment start and reaches {v2} m/s after p_c"
                ));
            }
        }
    }

    let t_start = t0 + start_u * dt;
    let s_start = if start_u.fract() == 0.0 {
        arc[start_u as usize]
    } else {
        let i = start_u.floor() as usize;
        arc[i] + (arc[i + 1] - arc[i]) * start_u.fract()
    };

    // Plan seg_c from the transition start, then each later segment through kc.
    let mut t = t_start;
    for k in seg_c..=kc {
        let sg = traj.segments[k];
        let len_k = seg_len(k);
        if len_k <= 1e-12 {
            let d = (sg.end - sg.start) as f64 * dt;
            pieces.push(Ramp {
                t0: t,
                duration: d,
                s0: arc[sg.start],
                v_from: 0.0,
                v_to: 0.0,
                segment: k,
                dwell_start: Some(sg.start),
            });
            t += d;
            continue;
        }
        let (s0, v_in, t_in, pinned) = if k == seg_c {
            (s_start, v1, effective, pinned_first)
        } else {
            (
                arc[sg.start],
                traj.points[sg.start].speed(),
                req.edge_duration,
                false,
            )
        };
        let v_out = traj.points[sg.end].speed();
        let length = arc[sg.end] - s0;
        let mut d_in = 0.5 * (v_in + v2) * t_in;
        let mut t_in = t_in;
        let mut t_out = req.edge_duration;
        let mut d_out = 0.5 * (v2 + v_out) * t_out;
        if d_in + d_out > length {
            if pinned {
                let room = (length - d_in).max(0.0);
                t_out = if v2 + v_out > 0.0 {
                    2.0 * room / (v2 + v_out)
                } else {
                    0.0
                };
                d_out = room;
            } else {
                let f = length / (d_in + d_out);
                t_in *= f;
                t_out *= f;
                d_in *= f;
                d_out *= f;
            }
        }
        let cruise = (length - d_in - d_out).max(0.0);
        let mut s = s0;
        for (dur, from, to) in [(t_in, v_in, v2), (cruise / v2, v2, v2), (t_out, v2, v_out)] {
            if dur <= 0.0 {
                continue;
            }
            let r = Ramp {
                t0: t,
                duration: dur,
                s0: s,
                v_from: from,
                v_to: to,
                segment: k,
                dwell_start: None,
            };
            s = r.end_arc();
            t = r.end_time();
            pieces.push(r);
        }
    }
    let t_region_end = t;

    // Sample the new timeline.
    let n_orig = traj.len();
    let k_start = ((t_start - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let k_end = ((t_region_end - t0) / dt - 1e-9).ceil() as usize;
    let r0 = traj.segments[kc].end;
    let new_len = k_end + (n_orig - r0);
    let mut points = Vec::with_capacity(new_len);
    points.extend_from_slice(&traj.points[..k_start.min(n_orig)]);

    let seg_locate = |k: usize, s: f64| -> f64 {
        let sg = traj.segments[k];
        let (mut lo, mut hi) = (sg.start, sg.end);
        if s <= arc[lo] {
            return lo as f64;
        }
        if s >= arc[hi] {
            return hi as f64;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if arc[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = arc[hi] - arc[lo];
        lo as f64
            + if span > 0.0 {
                (s - arc[lo]) / span
            } else {
                0.0
            }
    };

    let mut piece_idx = 0;
    let mut region_speeds = Vec::with_capacity(k_end.saturating_sub(k_start));
    let mut seg_first_index = vec![None; kc + 1];
    for k in k_start..k_end {
        let tk = t0 + k as f64 * dt;
        while piece_idx + 1 < pieces.len() && tk >= pieces[piece_idx].end_time() - 1e-12 {
            piece_idx += 1;
        }
        let p = &pieces[piece_idx];
        let elapsed = (tk - p.t0).clamp(0.0, p.duration);
        let (u, speed) = if let Some(ds) = p.dwell_start {
            let sg = traj.segments[p.segment];
            ((ds as f64 + elapsed / dt).min(sg.end as f64), 0.0)
        } else if tk >= t_region_end {
            (r0 as f64, 0.0)
        } else {
            (
                seg_locate(p.segment, p.s0 + p.displacement(elapsed)),
                p.speed(elapsed),
            )
        };
        if seg_first_index[p.segment].is_none() {
            seg_first_index[p.segment] = Some(k);
        }
        let (pose, src) = traj.sample_fractional(u);
        let i = u.floor() as usize;
        let dir = if i + 1 < n_orig {
            let d = traj.points[i + 1].pose.position - traj.points[i].pose.position;
            if d.norm() > 1e-15 {
                d / d.norm()
            } else {
                Vec3::zeros()
            }
        } else {
            Vec3::zeros()
        };
        let mut twist = Vec6::zeros();
        twist.fixed_rows_mut::<3>(0).copy_from(&(dir * speed));
        region_speeds.push(speed);
        points.push(TrajectoryPoint {
            t: tk,
            pose,
            twist,
            accel: Vec6::zeros(),
            desired_wrench: src.desired_wrench,
            mode: src.mode,
        });
    }
    let shift = k_end as isize - r0 as isize;
    for (j, p) in traj.points[r0..].iter().enumerate() {
        let mut q = *p;
        q.t = t0 + (k_end + j) as f64 * dt;
        points.push(q);
    }

    // Angular rates and accelerations inside the region by finite differences.
    let region = k_start..k_end.min(points.len());
    for k in region.clone() {
        if k + 1 < points.len() && k > 0 {
            let qa = points[k - 1].pose.orientation;
            let qb = points[k + 1].pose.orientation;
            let w = qb.mul(&qa.conjugate()).to_rotation_vector() / (2.0 * dt);
            points[k].twist.fixed_rows_mut::<3>(3).copy_from(&w);
        }
    }
    for k in region {
        if k + 1 < points.len() && k > 0 {
            let a = (points[k + 1].twist - points[k - 1].twist) / (2.0 * dt);
            points[k].accel = a;
        }
    }

    // Segment boundaries in the new timeline.
    let mut segments = Vec::with_capacity(traj.segments.len());
    for (k, sg) in traj.segments.iter().enumerate() {
        let map = |idx: usize, k: usize| -> usize {
            if k < seg_c || (k == seg_c && idx == sg.start) {
                idx
            } else if k > kc || (k == kc && idx == sg.end) {
                (idx as isize + shift) as usize
            } else {
                seg_first_index[k].unwrap_or(k_start)
            }
        };
        let start = if k == 0 { 0 } else { map(sg.start, k) };
        segments.push(Segment { start, end: 0 });
    }
    let last = points.len() - 1;
    for k in 0..segments.len() {
        segments[k].end = if k + 1 < segments.len() {
            segments[k + 1].start
        } else {
            last
        };
    }
    // Boundary indices must be non-decreasing; dwell pieces shorter than a tick
    // can collapse onto one index.
    for k in 1..segments.len() {
        if segments[k].start < segments[k - 1].start {
            segments[k].start = segments[k - 1].start;
            segments[k - 1].end = segments[k].start;
        }
    }

    let t_pc = t_start + if pinned_first { effective } else { 0.0 };
    let p_c_new = if pinned_first {
        (((t_pc - t0) / dt).round() as usize).min(last)
    } else {
        // first sample at or past p_c's arc length
        let mut idx = k_start;
        let mut a = arc_of(&points, idx);
        while idx < last && a + 1e-12 < s_c {
            a += (points[idx + 1].pose.position - points[idx].pose.position).norm();
            idx += 1;
        }
        idx
    };
    let speed_at_p_c = if pinned_first {
        v2
    } else {
        region_speeds
            .get(p_c_new.saturating_sub(k_start))
            .copied()
            .unwrap_or(v2)
    };

    let trajectory = Trajectory::new(points, dt, segments)?;
    Ok(Retimed {
        trajectory,
        transition_start_index: k_start,
        p_c_index: p_c_new,
        effective_duration: effective,
        speed_at_p_c,
        start_speed: v1,
        warnings,
    })
}

fn arc_of(points: &[TrajectoryPoint], idx: usize) -> f64 {
    points[..=idx]
        .windows(2)
        .map(|w| (w[1].pose.position - w[0].pose.position).norm())
        .sum()
}

// ---------------------------------------------------------------------------
// Builder for rest-to-rest minimum-jerk trajectories
// ---------------------------------------------------------------------------

/// Appends minimum-jerk moves and dwells sampled at a fixed period.
#[derive(Debug, Clone)]
pub struct TrajectoryBuilder {
    dt: f64,
    points: Vec<TrajectoryPoint>,
    segments: Vec<Segment>,
}

impl TrajectoryBuilder {
    pub fn new(start: Pose, dt: f64) -> Self {
        Self {
            dt,
            points: vec![TrajectoryPoint::at_rest(0.0, start)],
            segments: Vec::new(),
        }
    }

    fn last(&self) -> TrajectoryPoint {
        *self.points.last().unwrap()
    }

    fn steps(&self, duration: f64) -> usize {
        ((duration / self.dt).round() as usize).max(1)
    }

    /// Minimum-jerk move to `target` over `duration`, with the given mode and
    /// desired wrench applied to every sample of the move.
    pub fn move_to(
        mut self,
        target: Vec3,
        duration: f64,
        mode: ControlModeMask,
        wrench: Vec6,
    ) -> Self {
        let from = self.last();
        let n = self.steps(duration);
        let total = n as f64 * self.dt;
        let start_idx = self.points.len() - 1;
        let delta = target - from.pose.position;
        // boundary point adopts the new segment's mode
        if let Some(p) = self.points.last_mut() {
            p.mode = mode;
            p.desired_wrench = wrench;
        }
        for k in 1..=n {
            let tau = k as f64 / n as f64;
            let (s, ds, dds) = min_jerk(tau);
            let mut twist = Vec6::zeros();
            let mut accel = Vec6::zeros();
            twist
                .fixed_rows_mut::<3>(0)
                .copy_from(&(delta * (ds / total)));
            accel
                .fixed_rows_mut::<3>(0)
                .copy_from(&(delta * (dds / (total * total))));
            self.points.push(TrajectoryPoint {
                t: from.t + k as f64 * self.dt,
                pose: Pose::new(from.pose.position + delta * s, from.pose.orientation),
                twist,
                accel,
                desired_wrench: wrench,
                mode,
            });
        }
        self.segments.push(Segment {
            start: start_idx,
            end: self.points.len() - 1,
        });
        self
    }

    pub fn dwell(mut self, duration: f64, mode: ControlModeMask, wrench: Vec6) -> Self {
        let from = self.last();
        let n = self.steps(duration);
        let start_idx = self.points.len() - 1;
        if let Some(p) = self.points.last_mut() {
            p.mode = mode;
            p.desired_wrench = wrench;
        }
        for k in 1..=n {
            self.points.push(TrajectoryPoint {
                t: from.t + k as f64 * self.dt,
                pose: from.pose,
                twist: Vec6::zeros(),
                accel: Vec6::zeros(),
                desired_wrench: wrench,
                mode,
            });
        }
        self.segments.push(Segment {
            start: start_idx,
            end: self.points.len() - 1,
        });
        self
    }

    pub fn build(self) -> Result<Trajectory> {
        if self.segments.is_empty() {
            return Err(Error::domain("trajectory builder has no segments"));
        }
        Trajectory::new(self.points, self.dt, self.segments)
    }
}

/// Minimum-jerk position, velocity and acceleration shape on τ ∈ [0, 1].
pub fn min_jerk(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    (
        t3 * (10.0 - 15.0 * t + 6.0 * t2),
        30.0 * t2 * (1.0 - t) * (1.0 - t),
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
    )
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

/// Writes the trajectory as CSV with the fixed column layout.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Numerical(format!("csv write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for p in traj.points() {
        let q = p.pose.orientation.components();
        let mut row: Vec<String> = Vec::with_capacity(21);
        row.push(p.t.to_string());
        row.extend(p.pose.position.iter().map(|v| v.to_string()));
        row.extend(q.iter().map(|v| v.to_string()));
        row.extend(p.twist.iter().map(|v| v.to_string()));
        row.extend(p.desired_wrench.iter().map(|v| v.to_string()));
        row.push(p.mode.bits().to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Numerical(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Reads a trajectory CSV. Rows are numbered from 1 at the first data row.
/// Accelerations are rebuilt from the twist column by finite differences.
pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            row: 0,
            msg: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            let v: f64 = rec[j].trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("column `{}` is not a number: {:?}", CSV_HEADER[j], &rec[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("column `{}` is not finite", CSV_HEADER[j]),
                });
            }
            Ok(v)
        };
        let orientation =
            UnitQuat::new(num(4)?, num(5)?, num(6)?, num(7)?).map_err(|e| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
        let bits: u8 = rec[20].trim().parse().map_err(|_| Error::Parse {
            row,
            msg: format!("mode_mask is not a 6-bit integer: {:?}", &rec[20]),
        })?;
        let mode = ControlModeMask::new(bits).map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        points.push(TrajectoryPoint {
            t: num(0)?,
            pose: Pose::new(Vec3::new(num(1)?, num(2)?, num(3)?), orientation),
            twist: Vec6::from_fn(|k, _| num(8 + k).unwrap_or(f64::NAN)),
            accel: Vec6::zeros(),
            desired_wrench: Vec6::from_fn(|k, _| num(14 + k).unwrap_or(f64::NAN)),
            mode,
        });
        if points.last().unwrap().twist.iter().any(|v| v.is_nan())
            || points
                .last()
                .unwrap()
                .desired_wrench
                .iter()
                .any(|v| v.is_nan())
        {
            return Err(Error::Parse {
                row,
                msg: "twist or wrench column is not a finite number".into(),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::Parse {
            row: 1,
            msg: "file has no data rows".into(),
        });
    }
    let dt = if points.len() > 1 {
        points[1].t - points[0].t
    } else {
        1e-3
    };
    if points.len() > 1 && !(dt > 0.0) {
        return Err(Error::Parse {
            row: 2,
            msg: "time does not increase".into(),
        });
    }
    check_timeline(&points, dt).map_err(|(i, msg)| Error::Parse { row: i + 1, msg })?;
    for i in 0..points.len() {
        let a = if i == 0 || i + 1 == points.len() {
            Vec6::zeros()
        } else {
            (points[i + 1].twist - points[i - 1].twist) / (2.0 * dt)
        };
        points[i].accel = a;
    }
    Trajectory::from_points(points, dt)
}

pub fn read_csv_file(path: &Path) -> Result<Trajectory> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f))
}

pub fn write_csv_file(traj: &Trajectory, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(traj, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight_line(speed: f64, duration: f64, dt: f64) -> Trajectory {
        let n = (duration / dt).round() as usize;
        let dir = Vec3::new(0.0, 0.0, -1.0);
        let points: Vec<_> = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                let mut twist = Vec6::zeros();
                twist.fixed_rows_mut::<3>(0).copy_from(&(dir * speed));
                TrajectoryPoint {
                    t,
                    pose: Pose::from_position(Vec3::new(0.1, 0.0, 0.5) + dir * speed * t),
                    twist,
                    accel: Vec6::zeros(),
                    desired_wrench: Vec6::zeros(),
                    mode: ControlModeMask::ALL_MOTION,
                }
            })
            .collect();
        Trajectory::new(points, dt, vec![Segment { start: 0, end: n }]).unwrap()
    }

    #[test]
    fn bump_blend_clamps_and_midpoint() {
        assert_eq!(bump_blend(1.2, 0.5, 0.0).unwrap(), 1.2);
        assert_eq!(bump_blend(1.2, 0.5, -3.0).unwrap(), 1.2);
        assert_eq!(bump_blend(1.2, 0.5, 1.0).unwrap(), 0.5);
        assert_eq!(bump_blend(1.2, 0.5, 7.0).unwrap(), 0.5);
        assert!((bump_blend(1.2, 0.5, 0.5).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn bump_blend_rejects_non_finite() {
        assert!(bump_blend(f64::NAN, 0.5, 0.3).is_err());
        assert!(bump_blend(1.0, f64::INFINITY, 0.3).is_err());
        assert!(bump_blend(-1.0, 0.5, 0.3).is_err());
    }

    #[test]
    fn bump_blend_stays_between_speeds() {
        for i in 0..=1000 {
            let tau = -0.5 + 2.0 * i as f64 / 1000.0;
            let v = bump_blend(0.3, 0.9, tau).unwrap();
            assert!((0.3..=0.9).contains(&v));
        }
    }

    #[test]
    fn displacement_matches_symmetric_mean() {
        for (v1, v2, t) in [
            (1.2, 0.5, 1.0),
            (0.1, 0.05, 1.0),
            (0.0, 0.3, 2.5),
            (0.7, 0.7, 0.3),
        ] {
            let d = profile_displacement(v1, v2, t).unwrap();
            let oracle = 0.5 * (v1 + v2) * t;
            assert!(
                (d - oracle).abs() <= 1e-8 * oracle.max(1e-12),
                "{d} vs {oracle}"
            );
        }
        assert!((profile_displacement(1.2, 0.5, 1.0).unwrap() - 0.85).abs() < 1e-8);
        assert!(profile_displacement(1.0, 1.0, 0.0).is_err());
        assert!(profile_displacement(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn retime_with_current_speed_is_identity() {
        let traj = straight_line(0.1, 3.0, 1e-3);
        let r = retime(&traj, 2000, 0.1, 1.0).unwrap();
        assert_eq!(r.trajectory.len(), traj.len());
        for (a, b) in traj.points().iter().zip(r.trajectory.points()) {
            assert!((a.t - b.t).abs() < 1e-9);
            assert!((a.pose.position - b.pose.position).norm() < 1e-9);
        }
    }

    #[test]
    fn retime_places_transition_start_by_displacement() {
        let traj = straight_line(0.1, 3.0, 1e-3);
        let arc = traj.arc_lengths();
        let p_c = 2500;
        let r = retime(&traj, p_c, 0.05, 1.0).unwrap();
        assert!(r.warnings.is_empty());
        assert!((r.effective_duration - 1.0).abs() < 1e-9);
        let start_arc = arc[p_c] - 0.075;
        // start sample is the first grid point at or after the continuous start
        let new_arc = r.trajectory.arc_lengths();
        let k = r.transition_start_index;
        assert!(new_arc[k] >= start_arc - 1e-9 && new_arc[k] - start_arc < 0.1 * 1e-3 + 1e-9);
        assert!((r.speed_at_p_c - 0.05).abs() < 1e-12);
        let pc_speed = r.trajectory.point(r.p_c_index).speed();
        assert!((pc_speed - 0.05).abs() < 1e-4, "{pc_speed}");
        // longer than the original by the slower tail
        assert!(r.trajectory.duration() > traj.duration());
    }

    #[test]
    fn retime_shrinks_transition_when_room_is_short() {
        let traj = straight_line(0.1, 3.0, 1e-3);
        let r = retime(&traj, 500, 0.05, 1.0).unwrap();
        // 0.05 m of path before p_c, need 0.075
        assert!(!r.warnings.is_empty());
        assert!((r.effective_duration - 2.0 * 0.05 / 0.15).abs() < 1e-6);
    }

    #[test]
    fn retime_preserves_path_geometry() {
        let traj = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.3)), 1e-3)
            .move_to(
                Vec3::new(0.1, 0.0, 0.1),
                1.5,
                ControlModeMask::ALL_MOTION,
                Vec6::zeros(),
            )
            .move_to(
                Vec3::new(0.2, 0.0, 0.25),
                1.5,
                ControlModeMask::ALL_MOTION,
                Vec6::zeros(),
            )
            .move_to(
                Vec3::new(0.2, 0.0, -0.02),
                2.0,
                ControlModeMask::ALL_MOTION,
                Vec6::zeros(),
            )
            .dwell(1.0, ControlModeMask::ALL_MOTION, Vec6::zeros())
            .build()
            .unwrap();
        let req = RetimeRequest {
            p_c_index: 200,
            contact_segment: 2,
            approach_speed: 0.05,
            duration: 1.0,
            edge_duration: 0.25,
        };
        let r = retime_with(&traj, &req).unwrap();
        let orig = traj.positions();
        let new = r.trajectory.positions();
        let resolution = 0.05 * 1e-3 + 1e-3 * 0.3;
        let dist = |p: &Vec3, set: &[Vec3]| {
            set.windows(2)
                .map(|w| point_segment_distance(p, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        };
        let h1 = new.iter().map(|p| dist(p, &orig)).fold(0.0, f64::max);
        let h2 = orig.iter().map(|p| dist(p, &new)).fold(0.0, f64::max);
        assert!(h1 <= resolution && h2 <= resolution, "{h1} {h2}");
        // end of the trajectory is unchanged apart from the time shift
        assert_eq!(
            r.trajectory.points().last().unwrap().pose.position,
            traj.points().last().unwrap().pose.position
        );
        assert_eq!(r.trajectory.segments().len(), traj.segments().len());
    }

    fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
        let ab = b - a;
        let l2 = ab.norm_squared();
        if l2 == 0.0 {
            return (p - a).norm();
        }
        let t = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
        (p - (a + ab * t)).norm()
    }

    #[test]
    fn builder_respects_jerk_bound() {
        let traj = TrajectoryBuilder::new(Pose::default(), 1e-3)
            .move_to(
                Vec3::new(0.3, 0.0, 0.0),
                2.0,
                ControlModeMask::ALL_MOTION,
                Vec6::zeros(),
            )
            .build()
            .unwrap();
        // min-jerk peak jerk is 60 d / T^3
        let j = traj.max_segment_jerk();
        assert!((j - 60.0 * 0.3 / 8.0).abs() < 0.05, "{j}");
        traj.validate_jerk(DEFAULT_J_MAX).unwrap();
        assert!(traj.validate_jerk(1.0).is_err());
    }

    #[test]
    fn mode_mask_needs_a_motion_axis() {
        assert!(ControlModeMask::new(0b11_1111).is_err());
        assert!(ControlModeMask::new(0b100_0000).is_err());
        let m = ControlModeMask::force_axes(&[2]).unwrap();
        assert!(m.is_force(2) && !m.is_force(0));
        assert_eq!(m.motion_selector()[2], 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let traj = TrajectoryBuilder::new(Pose::default(), 0.01)
            .move_to(
                Vec3::new(0.0, 0.0, 0.02),
                0.02,
                ControlModeMask::force_axes(&[1]).unwrap(),
                Vec6::new(0.0, -4.0, 0.0, 0.0, 0.0, 0.0),
            )
            .build()
            .unwrap();
        assert_eq!(traj.len(), 3);
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in traj.points().iter().zip(back.points()) {
            assert!((a.t - b.t).abs() <= 1e-12);
            assert!((a.pose.position - b.pose.position).norm() <= 1e-12);
            assert!((a.twist - b.twist).norm() <= 1e-12);
            assert!((a.desired_wrench - b.desired_wrench).norm() <= 1e-12);
            assert_eq!(a.mode, b.mode);
        }
    }

    #[test]
    fn csv_rejects_empty_and_irregular() {
        let header = CSV_HEADER.join(",");
        assert!(matches!(read_csv("".as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(
            read_csv(format!("{header}\n").as_bytes()),
            Err(Error::Parse { .. })
        ));
        let row = |t: f64| format!("{t},0,0,0,1,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0");
        let body = [row(0.0), row(0.001), row(0.002), row(0.0035), row(0.0045)].join("\n");
        match read_csv(format!("{header}\n{body}\n").as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let body = [row(0.0), row(0.001), row(0.0005)].join("\n");
        match read_csv(format!("{header}\n{body}\n").as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn prop_bump_monotone(v1 in 0.0f64..2.0, v2 in 0.0f64..2.0, a in 0.05f64..0.94, da in 0.0005f64..0.001) {
            prop_assume!((v1 - v2).abs() > 1e-3);
            let x = bump_blend(v1, v2, a).unwrap();
            let y = bump_blend(v1, v2, a + da).unwrap();
            if v2 > v1 { prop_assert!(y > x) } else { prop_assert!(y < x) }
        }

        #[test]
        fn prop_displacement_symmetric(v1 in 0.0f64..2.0, v2 in 0.0f64..2.0, t in 0.01f64..5.0) {
            let a = profile_displacement(v1, v2, t).unwrap();
            let b = profile_displacement(v2, v1, t).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
