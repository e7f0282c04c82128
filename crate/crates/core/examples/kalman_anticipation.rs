//! Contact-location belief: where the path first enters the anticipated
//! region, and how measurements shrink the region over repeated trials.

use contactflux::anticipation::{kf_update, region_entry_point, ContactBelief};
use contactflux::numerics::{SpdMat, Vec3, Vec6};
use contactflux::trajectory::{ControlModeMask, Pose, TrajectoryBuilder};
use nalgebra::Matrix3;

fn main() -> contactflux::Result<()> {
    let traj = TrajectoryBuilder::new(Pose::from_position(Vec3::new(0.0, 0.0, 0.25)), 1e-3)
        .move_to(
            Vec3::new(0.3, 0.0, -0.03),
            3.0,
            ControlModeMask::ALL_MOTION,
            Vec6::zeros(),
        )
        .build()?;
    let mut belief = ContactBelief::stationary(
        Vec3::new(0.3, 0.0, 0.12),
        SpdMat::from_diagonal(&[0.175; 3])?,
        Matrix3::zeros(),
        SpdMat::from_diagonal(&[1e-4; 3])?,
        0.95,
    )?;
    // The true surface is the plane z = 0 along this line.
    let contact = Vec3::new(0.3 * 0.25 / 0.28, 0.0, 0.0);
    for trial in 1..=3 {
        match region_entry_point(&traj, &belief, 0) {
            Some((i, p)) => println!(
                "trial {trial}: region entered at t = {:.3} s, p_c = ({:.3}, {:.3}, {:.3})",
                traj.point(i).t,
                p.x,
                p.y,
                p.z
            ),
            None => println!("trial {trial}: path never enters the region"),
        }
        belief = kf_update(&belief, &contact)?;
        println!(
            "         posterior mean ({:.4}, {:.4}, {:.4}), variance {:.3e}",
            belief.mean().x,
            belief.mean().y,
            belief.mean().z,
            belief.cov().diagonal()[0]
        );
    }
    Ok(())
}
