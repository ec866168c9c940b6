//! Von Mises feature maps: embedding norms and how the truncated series
//! approaches the kernel as the number of frequencies grows.

use emk::featuremap::FeatureMapSpec;

fn main() -> emk::Result<()> {
    for kappa in [2.0, 8.0, 32.0] {
        let reference = FeatureMapSpec::new(kappa, 64)?;
        print!("kappa {kappa:>4}:");
        for s in [1, 2, 3, 4, 8] {
            let approx = FeatureMapSpec::new(kappa, s)?;
            let err = (0..=720)
                .map(|k| -std::f64::consts::PI + k as f64 * std::f64::consts::PI / 360.0)
                .map(|delta| (approx.kernel_value(delta) - reference.kernel_value(delta)).abs())
                .fold(0.0, f64::max);
            print!("  s={s} err={err:.3e}");
        }
        println!();
    }

    let spec = FeatureMapSpec::new(8.0, 2)?;
    println!("coefficients (kappa 8, s 2): {:?}", spec.coefficients());
    let (a, b) = (0.3, 1.1);
    println!(
        "f(a).f(b) = {:.12}, k(a - b) = {:.12}, |f(a)| = {:.12}",
        spec.embed(a).dot(&spec.embed(b)),
        spec.kernel_value(a - b),
        spec.embed(a).dot(&spec.embed(a)).sqrt()
    );
    Ok(())
}
