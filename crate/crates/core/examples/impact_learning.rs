//! Linear impact model: fit peak force against approach velocity, invert it
//! for a desired force, and refine the velocity from measured impacts.

use contactflux::impact::{
    fit_linear_pairs, velocity_for_force, ImpactModel, DEFAULT_V_MAX, DEFAULT_V_MIN,
};

fn main() -> contactflux::Result<()> {
    let measured = [(0.047, 10.0), (0.063, 12.0), (0.086, 15.0), (0.11, 18.0)];
    let fit = fit_linear_pairs(&measured)?;
    println!(
        "F = {:.2} v + {:.3} (R² {:.4}, {} samples)",
        fit.slope, fit.intercept, fit.r_squared, fit.n
    );
    for f in [10.0, 12.0, 15.0, 18.0] {
        println!(
            "F_d {f:>5.1} N -> v {:.4} m/s",
            velocity_for_force(&fit, f, DEFAULT_V_MIN, DEFAULT_V_MAX)?
        );
    }

    // Gradient refinement against a plant whose true response differs.
    let plant = |v: f64| 184.0 * v;
    let mut model = ImpactModel::new("table", 0.1, 10.0, 0.003)?;
    for trial in 1..=8 {
        let v = model.approach_velocity;
        let f = plant(v);
        let next = model.learn_from(f);
        println!("trial {trial}: v {v:.4} m/s, peak {f:6.2} N, next v {next:.4} m/s");
    }
    Ok(())
}
