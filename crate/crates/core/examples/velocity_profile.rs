//! Smooth speed transition between two speeds and its displacement.

use contactflux::trajectory::{bump_blend, bump_weight, profile_displacement};

fn main() -> contactflux::Result<()> {
    let (v1, v2, duration) = (1.2, 0.5, 0.8);
    println!("tau     weight    speed");
    for i in 0..=10 {
        let tau = i as f64 / 10.0;
        println!(
            "{tau:.1}  {:>9.6}  {:>8.5}",
            bump_weight(tau),
            bump_blend(v1, v2, tau)?
        );
    }
    let d = profile_displacement(v1, v2, duration)?;
    println!(
        "distance covered over {duration} s: {d:.6} m (mean speed {:.4} m/s)",
        d / duration
    );
    Ok(())
}
