//! Chi-square quantiles and the confidence ellipsoid they define.

use contactflux::anticipation::{contains, ContactBelief};
use contactflux::numerics::{chi2_cdf, chi2_ppf, SpdMat, Vec3};
use nalgebra::Matrix3;

fn main() -> contactflux::Result<()> {
    println!("p      k=1      k=2      k=3");
    for p in [0.5, 0.9, 0.95, 0.99] {
        let row: Vec<String> = (1..=3)
            .map(|k| chi2_ppf(p, k).map(|x| format!("{x:8.4}")))
            .collect::<contactflux::Result<_>>()?;
        println!("{p:<5} {}", row.join(" "));
    }
    let lambda = chi2_ppf(0.95, 3)?;
    println!("round trip cdf(ppf(0.95)) = {:.12}", chi2_cdf(lambda, 3));

    let belief = ContactBelief::stationary(
        Vec3::new(0.3, 0.0, 0.0),
        SpdMat::from_diagonal(&[0.01, 0.01, 0.0025])?,
        Matrix3::zeros(),
        SpdMat::from_diagonal(&[1e-4; 3])?,
        0.95,
    )?;
    for z in [0.0, 0.1, 0.14, 0.2] {
        let x = Vec3::new(0.3, 0.0, z);
        println!(
            "point z = {z:.2}: squared distance {:.3}, inside region: {}",
            belief.mahalanobis_sq(&x),
            contains(&belief, &x)
        );
    }
    Ok(())
}
