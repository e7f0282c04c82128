//! Acceptance criteria. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contactflux::anticipation::{kf_update, ContactBelief};
use contactflux::control::{impedance_command, Gains, Phase};
use contactflux::harness::{
    emit_logs, parse_config_with, run_experiment, ExperimentResult, Scenario,
};
use contactflux::impact::{
    fit_linear_pairs, velocity_for_force, ImpactModel, DEFAULT_V_MAX, DEFAULT_V_MIN,
};
use contactflux::numerics::{chi2_ppf, SpdMat, UnitQuat, Vec3, Vec6};
use contactflux::sim::{ArmModel, Planar3Link};
use contactflux::trajectory::{bump_blend, profile_displacement, TrajectoryPoint};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn run(name: &str, overrides: &[&str]) -> Result<ExperimentResult, String> {
    let set: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = parse_config_with(&config(name), &set).map_err(|e| e.to_string())?;
    let sc = Scenario::new(cfg).map_err(|e| e.to_string())?;
    run_experiment(&sc).map_err(|e| e.to_string())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Covariance contraction over three zig-zag trials, with every posterior
/// compared against the closed-form product of Gaussians.
fn covariance_contraction() -> Outcome {
    let res = run("e1_zigzag.toml", &[])?;
    let cfg = parse_config_with(&config("e1_zigzag.toml"), &[]).map_err(|e| e.to_string())?;
    let s0 = cfg.belief.sigma0[0];
    let r = cfg.belief.r[0];
    let mut inv = 1.0 / s0;
    let mut worst: f64 = 0.0;
    let mut last = [f64::NAN; 3];
    for rep in res.reports() {
        let c = &rep.contacts[0];
        if c.measured_position.is_some() {
            inv += 1.0 / r;
        }
        let expected = 1.0 / inv;
        for d in c.sigma_diag_after {
            worst = worst.max((d - expected).abs());
        }
        last = c.sigma_diag_after;
    }
    let bound = last.iter().all(|d| *d <= 0.07);
    check(
        res.summary.trial_count == 3 && bound && worst <= 1e-6,
        format!(
            "sigma diag after 3 trials {:.3e} (bound 0.07), filter algebra error {worst:.1e}",
            last[0]
        ),
    )
}

/// Transition phase near the first valley in trial 1 and not in trial 3;
/// tracking error and completion time strictly decrease.
fn transition_avoidance() -> Outcome {
    let res = run("e1_zigzag.toml", &[])?;
    let valley = Vec3::new(0.1, 0.0, 0.10);
    let near_valley = |trial: usize| -> (bool, bool) {
        let ticks: Vec<_> = res.runs[trial]
            .ticks
            .iter()
            .filter(|t| (t.position - valley).norm() < 0.02)
            .collect();
        let transition = ticks.iter().any(|t| t.phase == Phase::Transition);
        let quiet = ticks
            .iter()
            .all(|t| t.phase == Phase::Default && t.alpha == 0.0);
        (transition, quiet && !ticks.is_empty())
    };
    let (t1_transition, _) = near_valley(0);
    let (_, t3_quiet) = near_valley(2);
    let r: Vec<_> = res.reports().collect();
    let tracking = [
        r[0].mean_tracking_error,
        r[1].mean_tracking_error,
        r[2].mean_tracking_error,
    ];
    let completion = [
        r[0].completion_time,
        r[1].completion_time,
        r[2].completion_time,
    ];
    let strict = tracking[0] > tracking[1]
        && tracking[1] > tracking[2]
        && completion[0] > completion[1]
        && completion[1] > completion[2];
    let nominal = r[2].nominal_duration;
    let within = (completion[2] - nominal).abs() <= 0.05 * nominal;
    check(
        t1_transition && t3_quiet && strict && within,
        format!(
            "valley transition t1={t1_transition} t3_default={t3_quiet}; tracking {:.2e}>{:.2e}>{:.2e} m; \
             completion {:.3}>{:.3}>{:.3} s (nominal {nominal:.3})",
            tracking[0], tracking[1], tracking[2], completion[0], completion[1], completion[2]
        ),
    )
}

/// Peak force is linear in approach velocity, with and without sensor noise.
fn velocity_force_linearity() -> Outcome {
    let clean = run("e2_sweep.toml", &[])?;
    let noisy = run("e2_sweep.toml", &["sensor.sigma=0.5"])?;
    let r2 = |r: &ExperimentResult| {
        r.summary
            .sweep
            .as_ref()
            .map_or(f64::NAN, |s| s.fit.r_squared)
    };
    let n = clean.summary.sweep.as_ref().map_or(0, |s| s.samples);
    let (a, b) = (r2(&clean), r2(&noisy));
    check(
        n == 32 && a >= 0.95 && b >= 0.85,
        format!("R² noiseless {a:.4} (>= 0.95), noisy {b:.4} (>= 0.85), {n} samples"),
    )
}

/// In-sim inverse model hits commanded forces; the reference table fit.
fn inverse_model_accuracy() -> Outcome {
    let res = run("e2_sweep.toml", &[])?;
    let sigma_f = 0.0;
    let sweep = res.summary.sweep.as_ref().ok_or("no sweep summary")?;
    let mut worst: f64 = 0.0;
    let mut ok = !sweep.validation.is_empty();
    for v in &sweep.validation {
        let Some(m) = v.measured_force else {
            ok = false;
            continue;
        };
        let tol = (0.1 * v.desired_force).max(2.0 * sigma_f);
        worst = worst.max((m - v.desired_force).abs() / tol);
        ok &= (m - v.desired_force).abs() <= tol;
    }
    let table = [(0.047, 10.0), (0.063, 12.0), (0.086, 15.0), (0.11, 18.0)];
    let fit = fit_linear_pairs(&table).map_err(|e| e.to_string())?;
    let v15 =
        velocity_for_force(&fit, 15.0, DEFAULT_V_MIN, DEFAULT_V_MAX).map_err(|e| e.to_string())?;
    let table_ok = (fit.slope - 127.4).abs() <= 0.005 * 127.4
        && (fit.intercept - 4.01).abs() <= 0.005 * 4.01
        && (v15 - 0.086).abs() <= 0.001;
    check(
        ok && table_ok,
        format!(
            "{} commanded forces, worst |error|/tolerance {worst:.2}; table fit a={:.2} b={:.3} v(15)={v15:.4}",
            sweep.validation.len(),
            fit.slope,
            fit.intercept
        ),
    )
}

/// Gradient learning of the approach velocity, in sim and on a linear plant.
fn gradient_convergence() -> Outcome {
    let res = run("e3_convergence.toml", &[])?;
    let errors: Vec<f64> = res.impacts.iter().map(|r| r.error.abs()).collect();
    let fd = res.impacts.first().map_or(f64::NAN, |r| r.desired_force);
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = errors.last().copied().unwrap_or(f64::NAN);
    let sim_ok = errors.len() == 10 && monotone && last <= 0.05 * fd;

    let (a, b, beta, target) = (127.4, 4.01, 0.003, 10.0);
    let mut model = ImpactModel::new("plant", 0.1, target, beta).map_err(|e| e.to_string())?;
    let factor = (1.0 - beta * a).abs();
    let mut prev = a * model.approach_velocity + b - target;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let measured = a * model.approach_velocity + b;
        model.learn_from(measured);
        let err = a * model.approach_velocity + b - target;
        worst = worst.max((err.abs() - factor * prev.abs()).abs());
        prev = err;
    }
    check(
        sim_ok && worst <= 1e-9,
        format!(
            "sim |F-F_d| {:.3} -> {last:.4} N over {} trials (monotone {monotone}, bound {:.2}); \
             linear plant factor deviation {worst:.1e}",
            errors.first().copied().unwrap_or(f64::NAN),
            errors.len(),
            0.05 * fd
        ),
    )
}

/// Endpoint values, midpoint, flat derivatives at the joins, displacement.
fn smooth_profile() -> Outcome {
    let (v1, v2) = (1.2, 0.5);
    let ends = bump_blend(v1, v2, 0.0).unwrap() == v1 && bump_blend(v1, v2, 1.0).unwrap() == v2;
    let mid = bump_blend(v1, v2, 0.5).unwrap();
    let mid_ok = (mid - 0.85).abs() <= 1e-15;

    // Central finite differences of order 1..4 on the clamped profile,
    // evaluated just inside and just outside both joins.
    let f = |t: f64| bump_blend(v1, v2, t).unwrap();
    let h = 1e-3;
    let deriv = |t: f64, k: usize| -> f64 {
        let coeffs: &[f64] = match k {
            1 => &[-0.5, 0.0, 0.5],
            2 => &[1.0, -2.0, 1.0],
            3 => &[-0.5, 1.0, 0.0, -1.0, 0.5],
            _ => &[1.0, -4.0, 6.0, -4.0, 1.0],
        };
        let half = (coeffs.len() / 2) as f64;
        coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * f(t + (i as f64 - half) * h))
            .sum::<f64>()
            / h.powi(k as i32)
    };
    let mut join_jump: f64 = 0.0;
    for k in 1..=4 {
        for join in [0.0, 1.0] {
            for side in [-0.02, 0.02] {
                join_jump = join_jump.max(deriv(join + side, k).abs());
            }
        }
    }
    // Continuity: the largest jump between neighbouring samples of each
    // derivative halves when the grid is refined. A discontinuity would not.
    let max_step = |k: usize, n: usize| -> f64 {
        let samples: Vec<f64> = (0..=n)
            .map(|i| deriv(-0.1 + 1.2 * i as f64 / n as f64, k))
            .collect();
        samples
            .windows(2)
            .fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()))
    };
    let mut interior_step: f64 = 0.0;
    for k in 1..=4 {
        interior_step = interior_step.max(max_step(k, 800) / max_step(k, 400));
    }

    let t = 0.8;
    let disp = profile_displacement(v1, v2, t).unwrap();
    let n = 20_000;
    let simpson: f64 = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(i as f64 / n as f64)
        })
        .sum::<f64>()
        * t
        / (3.0 * n as f64);
    let disp_err = (disp - (v1 + v2) * t / 2.0)
        .abs()
        .max((simpson - (v1 + v2) * t / 2.0).abs());
    check(
        ends && mid_ok && join_jump < 1e-3 && interior_step < 0.6 && disp_err <= 1e-8,
        format!(
            "endpoints exact {ends}, midpoint {mid}, derivative at joins {join_jump:.1e}, \
             refinement step ratio {interior_step:.3}, displacement error {disp_err:.1e}"
        ),
    )
}

/// Filter update against a product of Gaussians, impedance law against a
/// direct evaluation on the planar arm, and the chi-square quantile.
fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut kf_err: f64 = 0.0;
    for _ in 0..50 {
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let sigma = a * a.transpose() + Matrix3::identity() * 0.05;
        let b = Matrix3::from_fn(|_, _| rng.gen_range(-0.1..0.1));
        let r = b * b.transpose() + Matrix3::identity() * 1e-3;
        let mu = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let y = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let dm = |m: &Matrix3<f64>| DMatrix::from_column_slice(3, 3, m.as_slice());
        let belief = ContactBelief::stationary(
            mu,
            SpdMat::new(dm(&sigma)).unwrap(),
            Matrix3::zeros(),
            SpdMat::new(dm(&r)).unwrap(),
            0.95,
        )
        .unwrap();
        let post = kf_update(&belief, &y).unwrap();
        let si = sigma.try_inverse().unwrap();
        let ri = r.try_inverse().unwrap();
        let cov = (si + ri).try_inverse().unwrap();
        let mean = cov * (si * mu + ri * y);
        let got = Matrix3::from_column_slice(post.cov().matrix().as_slice());
        kf_err = kf_err
            .max((got - cov).amax())
            .max((post.mean() - mean).amax());
    }

    let arm = Planar3Link::default();
    let mut imp_err: f64 = 0.0;
    let mut checked = 0;
    while checked < 50 {
        let q = DVector::from_fn(3, |_, _| rng.gen_range(-2.5..2.5));
        if arm.jacobian(&q).determinant().abs() < 1e-2 {
            continue;
        }
        let qd = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let here = arm.forward_kinematics(&q);
        let mut target = TrajectoryPoint::at_rest(0.0, here);
        target.pose.position +=
            Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0);
        let dphi: f64 = rng.gen_range(-0.2..0.2);
        target.pose.orientation =
            UnitQuat::from_rotation_vector(&Vec3::new(0.0, 0.0, dphi)).mul(&here.orientation);
        target.twist = Vec6::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            0.0,
            0.0,
            0.0,
            rng.gen_range(-0.5..0.5),
        );
        target.accel = Vec6::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            0.0,
            0.0,
            0.0,
            rng.gen_range(-1.0..1.0),
        );
        let kp = [400.0, 300.0, 20.0];
        let kd = [40.0, 35.0, 3.0];
        let gains = Gains::diagonal(
            [kp[0], kp[1], 1.0, 1.0, 1.0, kp[2]],
            [kd[0], kd[1], 1.0, 1.0, 1.0, kd[2]],
        )
        .unwrap();
        let ff = [0.5, -0.3, 0.1];
        let h_ff = Vec6::new(ff[0], ff[1], 0.0, 0.0, 0.0, ff[2]);
        let cmd = impedance_command(&arm, &q, &qd, &target, &gains, &h_ff).unwrap();
        let reference = planar_reference(&arm, &q, &qd, &target, &kp, &kd, &ff);
        let got = DVector::from_column_slice(&[cmd.h_c[0], cmd.h_c[1], cmd.h_c[5]]);
        imp_err = imp_err.max((&got - &reference).norm() / reference.norm().max(1.0));
        checked += 1;
    }

    let lambda = chi2_ppf(0.95, 3).map_err(|e| e.to_string())?;
    check(
        kf_err <= 1e-10 && imp_err <= 1e-9 && (lambda - 7.8147).abs() <= 1e-3,
        format!("filter vs Gaussian product {kf_err:.1e}, impedance relative {imp_err:.1e}, chi2 quantile {lambda:.5}"),
    )
}

/// Impedance wrench on the planar arm from explicit inverses.
fn planar_reference(
    arm: &Planar3Link,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    target: &TrajectoryPoint,
    kp: &[f64; 3],
    kd: &[f64; 3],
    h_ff: &[f64; 3],
) -> DVector<f64> {
    let j = arm.jacobian(q);
    let ji = j.clone().try_inverse().unwrap();
    let mi = arm.mass_matrix(q).try_inverse().unwrap();
    let lambda = (&j * mi * j.transpose()).try_inverse().unwrap();
    let gamma =
        ji.transpose() * arm.coriolis(q, qd) * &ji - &lambda * arm.jacobian_dot(q, qd) * &ji;
    let eta = ji.transpose() * arm.gravity(q);
    let x = arm.forward_kinematics(q);
    let phi = 2.0 * x.orientation.z().atan2(x.orientation.w());
    let phi_d = 2.0
        * target
            .pose
            .orientation
            .z()
            .atan2(target.pose.orientation.w());
    let pi = std::f64::consts::PI;
    let dphi = (phi_d - phi + pi).rem_euclid(2.0 * pi) - pi;
    let dx = DVector::from_column_slice(&[
        target.pose.position.x - x.position.x,
        target.pose.position.y - x.position.y,
        dphi,
    ]);
    let xd = &j * qd;
    let vd = DVector::from_column_slice(&[target.twist[0], target.twist[1], target.twist[5]]);
    let ad = DVector::from_column_slice(&[target.accel[0], target.accel[1], target.accel[5]]);
    let kp = DMatrix::from_diagonal(&DVector::from_column_slice(kp));
    let kd = DMatrix::from_diagonal(&DVector::from_column_slice(kd));
    lambda * ad + gamma * &vd + eta + kp * dx + kd * (vd - xd) + DVector::from_column_slice(h_ff)
}

/// Three-contact task: smooth commanded speed, faster completion, and
/// contact location errors shrinking at least fivefold.
fn end_to_end_smoothness() -> Outcome {
    let res = run("e4_three_contact.toml", &[])?;
    let cfg =
        parse_config_with(&config("e4_three_contact.toml"), &[]).map_err(|e| e.to_string())?;
    let a_max = cfg.metrics.a_max;
    let r: Vec<_> = res.reports().collect();
    let accel = r.iter().map(|t| t.max_command_accel).fold(0.0, f64::max);
    let first = r.first().ok_or("no trials")?;
    let last = r.last().ok_or("no trials")?;
    let faster = r.len() == 5 && last.completion_time < first.completion_time;
    let mut ratios = Vec::new();
    for (a, b) in first.contacts.iter().zip(&last.contacts) {
        let ratio = match (a.position_error, b.position_error) {
            (Some(e1), Some(e5)) if e5 > 0.0 => e1 / e5,
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 0.0,
        };
        ratios.push((a.contact_id.clone(), ratio));
    }
    let reduced = ratios.len() == 3 && ratios.iter().all(|(_, r)| *r >= 5.0);
    let detail: Vec<String> = ratios
        .iter()
        .map(|(id, r)| format!("{id} {r:.1}x"))
        .collect();
    check(
        accel < a_max && faster && reduced,
        format!(
            "max commanded accel {accel:.3} m/s² (a_max {a_max}); completion {:.3} -> {:.3} s; error reduction {}",
            first.completion_time,
            last.completion_time,
            detail.join(", ")
        ),
    )
}

/// Same seed, same bytes, for every experiment config.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for name in [
        "e1_zigzag.toml",
        "e2_sweep.toml",
        "e3_convergence.toml",
        "e4_three_contact.toml",
    ] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}-{rep}"));
            let res = run(name, &[])?;
            emit_logs(&res, &out).map_err(|e| e.to_string())?;
            outputs.push(out);
        }
        for file in [
            "state.csv",
            "controller.csv",
            "impact.csv",
            "beliefs.jsonl",
            "summary.json",
        ] {
            let a = std::fs::read(outputs[0].join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(outputs[1].join(file)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{name}: {file} differs between runs"));
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} log files byte-identical across repeated runs"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("covariance contraction", covariance_contraction),
        ("transition avoidance", transition_avoidance),
        ("velocity-force linearity", velocity_force_linearity),
        ("inverse-model accuracy", inverse_model_accuracy),
        ("gradient convergence", gradient_convergence),
        ("smooth profile properties", smooth_profile),
        ("oracle equivalences", oracle_equivalences),
        ("end-to-end smoothness", end_to_end_smoothness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
