mod common;

use approx::assert_relative_eq;
use emk::feature_backend::{
    hardnet_architecture, output_sides, random_orthogonal_init, BatchNorm, ConvLayer, ConvLayerSpec, ConvNet, Patch,
    BN_EPSILON,
};
use emk::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_layer(rng: &mut ChaCha8Rng, spec: ConvLayerSpec) -> ConvLayer {
    let c = spec.out_channels;
    let weight = (0..spec.parameter_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let bn = BatchNorm {
        scale: (0..c).map(|_| rng.random_range(0.5..1.5)).collect(),
        shift: (0..c).map(|_| rng.random_range(-0.2..0.2)).collect(),
        mean: (0..c).map(|_| rng.random_range(-0.1..0.1)).collect(),
        var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        eps: BN_EPSILON,
    };
    ConvLayer::new(spec, weight, bn).unwrap()
}

#[test]
fn forward_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let arch = [ConvLayerSpec::new(1, 3, 1), ConvLayerSpec::new(3, 4, 2), ConvLayerSpec::new(4, 5, 2)];
    let layers: Vec<ConvLayer> = arch.iter().map(|&s| random_layer(&mut rng, s)).collect();
    let net = ConvNet::new(layers.clone()).unwrap();
    for side in [8, 9, 12] {
        let pixels = Array2::from_shape_fn((side, side), |_| rng.random_range(0.0..1.0));
        let mut act = vec![(0..side).map(|y| (0..side).map(|x| pixels[[y, x]]).collect()).collect::<Vec<Vec<f64>>>()];
        for l in &layers {
            act = common::conv_bn_relu(
                &act,
                &l.weight,
                l.spec.out_channels,
                l.spec.stride,
                &l.bn.scale,
                &l.bn.shift,
                &l.bn.mean,
                &l.bn.var,
                l.bn.eps,
            );
        }
        let phi = net.forward(&Patch::new(pixels).unwrap()).unwrap();
        let n = act[0].len();
        assert_eq!((phi.n(), phi.d()), (n, 5));
        for i in 0..n {
            for j in 0..n {
                for c in 0..5 {
                    assert_relative_eq!(phi.matrix()[[i * n + j, c]], act[c][i][j], epsilon = 1e-12);
                }
            }
        }
    }
}

#[test]
fn hardnet_shapes_and_counts() {
    let arch = hardnet_architecture();
    let counts: Vec<usize> = arch.iter().map(|l| l.parameter_count()).collect();
    assert_eq!(counts, vec![288, 9216, 18432, 36864, 73728, 147456]);
    assert_eq!(counts.iter().sum::<usize>(), 285_984);
    assert_eq!(output_sides(&arch, 32).last(), Some(&8));
    assert_eq!(output_sides(&arch, 64).last(), Some(&16));
    let net = ConvNet::zeros(&arch).unwrap();
    assert_eq!(net.output_side(32), 8);
    assert_eq!(net.output_channels(), 128);
    let phi = net.forward(&Patch::new(Array2::from_elem((64, 64), 0.5)).unwrap()).unwrap();
    assert_eq!((phi.n(), phi.d()), (16, 128));
}

#[test]
fn orthogonal_init_has_orthonormal_rows_or_columns() {
    for (rows, cols) in [(3, 7), (16, 16), (9, 4), (128, 288)] {
        let w = random_orthogonal_init(rows, cols, 5).unwrap();
        assert_eq!(w.dim(), (rows, cols));
        let gram = if rows <= cols { w.dot(&w.t()) } else { w.t().dot(&w) };
        let k = rows.min(cols);
        for a in 0..k {
            for b in 0..k {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((gram[[a, b]] - expected).abs() < 1e-10, "{rows}x{cols} gram[{a},{b}]");
            }
        }
        assert_eq!(w, random_orthogonal_init(rows, cols, 5).unwrap());
        assert_ne!(w, random_orthogonal_init(rows, cols, 6).unwrap());
    }
    assert!(random_orthogonal_init(0, 3, 1).is_err());
}

#[test]
fn malformed_networks_and_patches_are_rejected() {
    let spec = ConvLayerSpec::new(1, 2, 1);
    assert!(matches!(ConvLayer::new(spec, vec![0.0; 17], BatchNorm::identity(2)), Err(Error::Format(_))));
    assert!(ConvLayer::new(spec, vec![0.0; 18], BatchNorm::identity(3)).is_err());
    let a = ConvLayer::new(spec, vec![0.0; 18], BatchNorm::identity(2)).unwrap();
    let b = ConvLayer::new(ConvLayerSpec::new(3, 1, 1), vec![0.0; 27], BatchNorm::identity(1)).unwrap();
    assert!(ConvNet::new(vec![a, b]).is_err());
    assert!(Patch::new(Array2::zeros((4, 5))).is_err());
    let net = ConvNet::zeros(&hardnet_architecture()).unwrap();
    let patch = Patch::new(Array2::zeros((32, 32))).unwrap();
    assert!(matches!(net.forward_expecting(&patch, 16), Err(Error::Config(_))));
}
