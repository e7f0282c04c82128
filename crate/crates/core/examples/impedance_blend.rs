//! Stiff default and compliant transition impedance commands on a gantry,
//! blended smoothly, with one axis switched to force control.

use contactflux::control::{blend_commands, impedance_command, Gains};
use contactflux::numerics::{Vec3, Vec6};
use contactflux::sim::Gantry;
use contactflux::trajectory::{ControlModeMask, Pose, TrajectoryPoint};
use nalgebra::DVector;

fn main() -> contactflux::Result<()> {
    let arm = Gantry::default();
    let stiff = Gains::default_for(arm.mass, arm.inertia)?;
    let inertia = [
        arm.mass,
        arm.mass,
        arm.mass,
        arm.inertia,
        arm.inertia,
        arm.inertia,
    ];
    let soft = stiff.scaled(0.2, inertia)?;

    let here = Pose::from_position(Vec3::new(0.0, 0.0, 0.02));
    let state = arm.state_at(&here);
    let mut qd = DVector::zeros(6);
    qd[2] = -0.05;
    let mut target = TrajectoryPoint::at_rest(0.0, Pose::from_position(Vec3::new(0.01, 0.0, 0.0)));
    target.twist = Vec6::new(0.0, 0.0, -0.1, 0.0, 0.0, 0.0);

    let u1 = impedance_command(&arm, &state.q, &qd, &target, &stiff, &Vec6::zeros())?;
    let u2 = impedance_command(&arm, &state.q, &qd, &target, &soft, &Vec6::zeros())?;
    println!(
        "default    force ({:8.3}, {:8.3}, {:8.3}) N",
        u1.h_c[0], u1.h_c[1], u1.h_c[2]
    );
    println!(
        "transition force ({:8.3}, {:8.3}, {:8.3}) N",
        u2.h_c[0], u2.h_c[1], u2.h_c[2]
    );
    let duration = 1.0;
    for i in 0..=4 {
        let t = duration * i as f64 / 4.0;
        let u = blend_commands(&u1, &u2, t, duration)?;
        println!("t {t:.2} s  blended z force {:8.3} N", u.h_c[2]);
    }

    // Press down with 5 N along z while x and y stay position controlled.
    let mut press = target;
    press.mode = ControlModeMask::force_axes(&[2])?;
    press.desired_wrench = Vec6::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0);
    let u = impedance_command(&arm, &state.q, &qd, &press, &stiff, &Vec6::zeros())?;
    println!(
        "hybrid     force ({:8.3}, {:8.3}, {:8.3}) N",
        u.h_c[0], u.h_c[1], u.h_c[2]
    );
    Ok(())
}
