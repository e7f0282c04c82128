//! Drops a gantry end effector onto a table at several speeds and reports
//! the filtered impact peak from the wrist force sensor.

use contactflux::impact::fit_linear_pairs;
use contactflux::numerics::Vec3;
use contactflux::sim::{
    ft_read, impact_peak, sim_step, ArmModel, Environment, FtSensor, Gantry, Geometry, Shape,
    DEFAULT_CUTOFF_HZ,
};
use contactflux::trajectory::Pose;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> contactflux::Result<()> {
    let arm = Gantry::default();
    let env = Environment::new(vec![Geometry {
        shape: Shape::HalfSpace {
            point: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
        },
        stiffness: 3e4,
        damping: 150.0,
        friction: 0.1,
    }])?;
    let dt = 1e-3;
    let mut pairs = Vec::new();
    for v in [0.02, 0.05, 0.08, 0.11, 0.14] {
        let mut state = arm.state_at(&Pose::from_position(Vec3::new(0.0, 0.0, 0.005)));
        let mut sensor = FtSensor::new(0.0, DEFAULT_CUTOFF_HZ, ChaCha8Rng::seed_from_u64(1))?;
        let mut readings = Vec::new();
        for _ in 0..1000 {
            readings.push(ft_read(&arm, &state, &env, &mut sensor, dt));
            // Gravity compensation plus a velocity servo toward -v along z.
            let mut u = arm.gravity(&state.q);
            u[2] += 40.0 * (-v - state.qd[2]);
            let u = DVector::from_column_slice(u.as_slice());
            state = sim_step(&arm, &env, &state, &u, dt, 10.0)?;
        }
        let peak = impact_peak(&readings, &Vec3::z())?;
        println!("approach {v:.2} m/s -> peak {peak:6.2} N");
        pairs.push((v, peak));
    }
    let fit = fit_linear_pairs(&pairs)?;
    println!(
        "fit F = {:.1} v + {:.2}, R² {:.4}",
        fit.slope, fit.intercept, fit.r_squared
    );
    Ok(())
}
