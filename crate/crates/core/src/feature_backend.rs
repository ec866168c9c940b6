//! Forward-only inference of the fully convolutional feature extractor.
//!
//! Each layer is a bias-free 3x3 convolution with padding 1, followed by
//! batch normalization in inference mode and ReLU. Weights use the
//! `[out][in][3][3]` layout.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::FeatureTensor;
use crate::error::{invalid, Error, Result};

pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self { in_channels, out_channels, stride }
    }

    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels * 9
    }

    /// `floor((side + 2 - 3) / stride) + 1`
    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 - 3) / self.stride + 1
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid("conv layer needs non-zero channel counts"));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(invalid(format!("unsupported stride {}", self.stride)));
        }
        Ok(())
    }
}

/// Six layers, 1 -> 32 -> 32 -> 64 -> 64 -> 128 -> 128, strides (1,1,2,1,2,1).
/// A 32x32 patch yields an 8x8 grid, a 64x64 patch a 16x16 grid.
pub fn hardnet_architecture() -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec::new(1, 32, 1),
        ConvLayerSpec::new(32, 32, 1),
        ConvLayerSpec::new(32, 64, 2),
        ConvLayerSpec::new(64, 64, 1),
        ConvLayerSpec::new(64, 128, 2),
        ConvLayerSpec::new(128, 128, 1),
    ]
}

/// Spatial side after every layer.
pub fn output_sides(architecture: &[ConvLayerSpec], input: usize) -> Vec<usize> {
    architecture
        .iter()
        .scan(input, |side, l| {
            *side = l.output_side(*side);
            Some(*side)
        })
        .collect()
}

/// Running statistics and affine parameters of one batch-norm stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: BN_EPSILON,
        }
    }

    fn channels(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvLayerSpec,
    /// `[out][in][3][3]`, row-major.
    pub weight: Vec<f64>,
    pub bn: BatchNorm,
}

impl ConvLayer {
    pub fn new(spec: ConvLayerSpec, weight: Vec<f64>, bn: BatchNorm) -> Result<Self> {
        spec.validate()?;
        if weight.len() != spec.parameter_count() {
            return Err(Error::Format(format!(
                "conv weight has {} values, layer {}->{} needs {}",
                weight.len(),
                spec.in_channels,
                spec.out_channels,
                spec.parameter_count()
            )));
        }
        let c = spec.out_channels;
        if bn.channels() != c || bn.shift.len() != c || bn.mean.len() != c || bn.var.len() != c {
            return Err(Error::Format(format!("batch norm stats do not have {c} channels")));
        }
        if bn.var.iter().any(|&v| v + bn.eps <= 0.0) {
            return Err(Error::Format("batch norm variance must be positive".into()));
        }
        Ok(Self { spec, weight, bn })
    }

    /// Channel-major `[c][y][x]` input of side `side`; returns output and its side.
    fn apply(&self, input: &[f64], side: usize) -> (Vec<f64>, usize) {
        let ConvLayerSpec { in_channels, out_channels, stride } = self.spec;
        let out_side = self.spec.output_side(side);
        let plane = out_side * out_side;
        let mut out = vec![0.0; out_channels * plane];
        out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
            for ic in 0..in_channels {
                let src = &input[ic * side * side..(ic + 1) * side * side];
                let w = &self.weight[(o * in_channels + ic) * 9..(o * in_channels + ic + 1) * 9];
                for y in 0..out_side {
                    for x in 0..out_side {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            let sy = (y * stride + ky) as isize - 1;
                            if sy < 0 || sy >= side as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = (x * stride + kx) as isize - 1;
                                if sx < 0 || sx >= side as isize {
                                    continue;
                                }
                                acc += w[ky * 3 + kx] * src[sy as usize * side + sx as usize];
                            }
                        }
                        dst[y * out_side + x] += acc;
                    }
                }
            }
            let bn = &self.bn;
            let inv = bn.scale[o] / (bn.var[o] + bn.eps).sqrt();
            for v in dst.iter_mut() {
                *v = ((*v - bn.mean[o]) * inv + bn.shift[o]).max(0.0);
            }
        });
        (out, out_side)
    }
}

/// A grayscale square patch with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    pixels: Array2<f64>,
}

impl Patch {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h != w || h == 0 {
            return Err(invalid(format!("patch must be square and non-empty, got {h}x{w}")));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("patch has non-finite pixels".into()));
        }
        Ok(Self { side: h, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }
}

/// The convolutional part: architecture plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    layers: Vec<ConvLayer>,
}

impl ConvNet {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network has no layers"));
        }
        if layers[0].spec.in_channels != 1 {
            return Err(invalid("first layer must take a single grayscale channel"));
        }
        for pair in layers.windows(2) {
            if pair[0].spec.out_channels != pair[1].spec.in_channels {
                return Err(Error::Format(format!(
                    "layer chain breaks: {} outputs feed {} inputs",
                    pair[0].spec.out_channels, pair[1].spec.in_channels
                )));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero convolutions with identity batch norm.
    pub fn zeros(architecture: &[ConvLayerSpec]) -> Result<Self> {
        let layers = architecture
            .iter()
            .map(|&spec| {
                ConvLayer::new(spec, vec![0.0; spec.parameter_count()], BatchNorm::identity(spec.out_channels))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Orthogonal convolution weights (each filter bank viewed as
    /// `out x in*9`) and identity batch norm.
    pub fn random_orthogonal(architecture: &[ConvLayerSpec], seed: u64) -> Result<Self> {
        let layers = architecture
            .iter()
            .enumerate()
            .map(|(k, &spec)| {
                let m = random_orthogonal_init(
                    spec.out_channels,
                    spec.in_channels * 9,
                    seed.wrapping_add(k as u64),
                )?;
                ConvLayer::new(spec, m.iter().copied().collect(), BatchNorm::identity(spec.out_channels))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn architecture(&self) -> Vec<ConvLayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map(|l| l.spec.out_channels).unwrap_or(0)
    }

    pub fn output_side(&self, patch_side: usize) -> usize {
        *output_sides(&self.architecture(), patch_side).last().unwrap_or(&patch_side)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.parameter_count()).sum()
    }

    pub fn forward(&self, patch: &Patch) -> Result<FeatureTensor> {
        let mut side = patch.side();
        let mut act: Vec<f64> = patch.pixels().iter().copied().collect();
        for layer in &self.layers {
            let (next, next_side) = layer.apply(&act, side);
            act = next;
            side = next_side;
        }
        let d = self.output_channels();
        let plane = side * side;
        let data = Array2::from_shape_fn((plane, d), |(p, c)| act[c * plane + p]);
        FeatureTensor::new(side, d, data)
    }

    /// Runs [`Self::forward`] after checking the patch lands on grid side `n`.
    pub fn forward_expecting(&self, patch: &Patch, n: usize) -> Result<FeatureTensor> {
        let got = self.output_side(patch.side());
        if got != n {
            return Err(Error::Config(format!(
                "a {0}x{0} patch gives a {1}x{1} grid, model expects {2}x{2}",
                patch.side(),
                got,
                n
            )));
        }
        self.forward(patch)
    }
}

/// A `rows x cols` matrix with orthonormal rows (when `rows <= cols`) or
/// orthonormal columns (otherwise), from the QR factorization of a seeded
/// Gaussian matrix with the sign of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal_init(rows: usize, cols: usize, seed: u64) -> Result<Array2<f64>> {
    if rows == 0 || cols == 0 {
        return Err(invalid("orthogonal init needs a non-empty shape"));
    }
    let (tall, short) = if rows <= cols { (cols, rows) } else { (rows, cols) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(&mut rng));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..short {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    // q is tall x short with orthonormal columns
    Ok(if rows <= cols {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(j, i)])
    } else {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
    })
}
