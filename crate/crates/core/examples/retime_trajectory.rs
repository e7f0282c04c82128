//! Slows a straight descent so it reaches a low approach speed at a given
//! point, then holds that speed to the end of the segment.

use contactflux::numerics::{Vec3, Vec6};
use contactflux::trajectory::{retime, ControlModeMask, Pose, TrajectoryBuilder};

fn main() -> contactflux::Result<()> {
    let dt = 1e-3;
    let traj = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.2)), dt)
        .move_to(
            Vec3::new(0.0, 0.0, -0.02),
            2.0,
            ControlModeMask::ALL_MOTION,
            Vec6::zeros(),
        )
        .build()?;
    let p_c = traj.len() / 2;
    let out = retime(&traj, p_c, 0.04, 0.3)?;
    let new = &out.trajectory;
    println!(
        "duration {:.3} s -> {:.3} s",
        traj.duration(),
        new.duration()
    );
    println!(
        "transition starts at t = {:.3} s from {:.4} m/s, reaches {:.4} m/s at p_c (t = {:.3} s)",
        new.point(out.transition_start_index).t,
        out.start_speed,
        out.speed_at_p_c,
        new.point(out.p_c_index).t
    );
    for w in &out.warnings {
        println!("warning: {w}");
    }
    for i in (0..new.len()).step_by(new.len() / 12) {
        let p = new.point(i);
        println!(
            "t {:>6.3}  z {:>8.5}  speed {:>7.4}",
            p.t,
            p.pose.position.z,
            p.speed()
        );
    }
    Ok(())
}
