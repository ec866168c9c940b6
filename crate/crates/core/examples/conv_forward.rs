//! Forward a synthetic patch through an orthogonally initialized HardNet-style
//! network at both supported patch sizes.

use emk::feature_backend::{hardnet_architecture, output_sides, ConvNet, Patch};
use ndarray::Array2;

fn main() -> emk::Result<()> {
    let arch = hardnet_architecture();
    let net = ConvNet::random_orthogonal(&arch, 11)?;
    println!("conv parameters: {}", net.parameter_count());
    for side in [32, 64] {
        println!("{side}x{side} spatial sides per layer: {:?}", output_sides(&arch, side));
        let pixels = Array2::from_shape_fn((side, side), |(y, x)| {
            0.5 + 0.5 * ((x as f64 / 3.0).sin() * (y as f64 / 5.0).cos())
        });
        let phi = net.forward(&Patch::new(pixels)?)?;
        let active = phi.matrix().iter().filter(|&&v| v > 0.0).count();
        println!("  tensor n={} d={}, {active} positive activations", phi.n(), phi.d());
    }
    Ok(())
}
