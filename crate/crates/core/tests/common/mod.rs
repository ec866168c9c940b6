//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerical code.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;

/// `I_n(x) = (1/pi) int_0^pi exp(x cos t) cos(n t) dt` by composite Simpson.
pub fn bessel_quadrature(order: u32, x: f64) -> f64 {
    let steps = 4000;
    let h = PI / steps as f64;
    let f = |t: f64| (x * t.cos()).exp() * (order as f64 * t).cos();
    let mut sum = f(0.0) + f(PI);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(k as f64 * h);
    }
    sum * h / 3.0 / PI
}

/// Normalized Fourier weights of the Von Mises kernel truncated at `s`.
pub fn von_mises_weights(kappa: f64, s: u32) -> Vec<f64> {
    let i: Vec<f64> = (0..=s).map(|k| bessel_quadrature(k, kappa)).collect();
    let z = i[0] + 2.0 * i[1..].iter().sum::<f64>();
    (0..=s as usize).map(|k| if k == 0 { i[0] / z } else { 2.0 * i[k] / z }).collect()
}

pub fn feature(kappa: f64, s: u32, alpha: f64) -> Vec<f64> {
    let u = von_mises_weights(kappa, s);
    let mut out = vec![u[0].sqrt()];
    for k in 1..=s as usize {
        out.push(u[k].sqrt() * (k as f64 * alpha).cos());
    }
    for k in 1..=s as usize {
        out.push(u[k].sqrt() * (k as f64 * alpha).sin());
    }
    out
}

/// Angles of 1-based grid cell `(i, j)` on an `n x n` grid.
pub fn cell_angles(polar: bool, n: usize, i: usize, j: usize) -> (f64, f64) {
    let c = (n as f64 + 1.0) / 2.0;
    let (x, y) = (i as f64, j as f64);
    if polar {
        let rho_max = 2f64.sqrt() * (n as f64 - 1.0) / 2.0;
        let rho = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
        let a = if rho_max == 0.0 { 0.0 } else { rho / rho_max * PI };
        (a, (y - c).atan2(x - c))
    } else if n == 1 {
        (0.0, 0.0)
    } else {
        ((x - 1.0) / (n as f64 - 1.0) * PI, (y - 1.0) / (n as f64 - 1.0) * PI)
    }
}

pub fn cell_weight(n: usize, i: usize, j: usize) -> f64 {
    let c = (n as f64 + 1.0) / 2.0;
    let rho_max = 2f64.sqrt() * (n as f64 - 1.0) / 2.0;
    if rho_max == 0.0 {
        return 1.0;
    }
    let rho2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
    (-rho2 / (rho_max * rho_max)).exp()
}

/// Position code of a cell, written out element by element.
pub fn position_code(polar: bool, n: usize, i: usize, j: usize, kappa: f64, s: u32, weighted: bool) -> Vec<f64> {
    let (a, b) = cell_angles(polar, n, i, j);
    let fa = feature(kappa, s, a);
    let fb = feature(kappa, s, b);
    let w = if weighted { cell_weight(n, i, j) } else { 1.0 };
    let mut out = Vec::with_capacity(fa.len() * fb.len());
    for x in &fa {
        for y in &fb {
            out.push(w * x * y);
        }
    }
    out
}

/// Raw spatial descriptor by explicit per-position Kronecker sums.
/// `phis[b]` is an `n^2 x d` matrix (row `(i-1) n + (j-1)`), `systems[b]` says
/// whether block `b` is polar.
pub fn spatial_descriptor(
    projection: &Array2<f64>,
    bias: &Array1<f64>,
    phis: &[Array2<f64>],
    systems: &[bool],
    n: usize,
    kappa: f64,
    s: u32,
    weighted: bool,
) -> Vec<f64> {
    let mut encoding = Vec::new();
    for (phi, &polar) in phis.iter().zip(systems) {
        let d = phi.ncols();
        let k = (2 * s as usize + 1).pow(2);
        let mut block = vec![0.0; d * k];
        for i in 1..=n {
            for j in 1..=n {
                let p = (i - 1) * n + (j - 1);
                let code = position_code(polar, n, i, j, kappa, s, weighted);
                for c in 0..d {
                    for q in 0..k {
                        block[c * k + q] += phi[[p, c]] * code[q];
                    }
                }
            }
        }
        encoding.extend(block);
    }
    (0..projection.nrows())
        .map(|r| {
            let mut acc = (n * n) as f64 * bias[r];
            for (col, z) in encoding.iter().enumerate() {
                acc += projection[[r, col]] * z;
            }
            acc
        })
        .collect()
}

/// `W vec(Phi) + w` with position-major vectorization.
pub fn fc_descriptor(weight: &Array2<f64>, bias: &Array1<f64>, phi: &Array2<f64>) -> Vec<f64> {
    let flat: Vec<f64> = phi.iter().copied().collect();
    (0..weight.nrows())
        .map(|r| bias[r] + flat.iter().enumerate().map(|(c, v)| weight[[r, c]] * v).sum::<f64>())
        .collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// For each anchor, the closest positive other than its own, found by a full
/// sort of `(distance, index)`.
pub fn brute_force_hardest(anchors: &[Vec<f64>], positives: &[Vec<f64>]) -> Vec<usize> {
    (0..anchors.len())
        .map(|i| {
            let mut cands: Vec<(f64, usize)> = (0..positives.len())
                .filter(|&j| j != i)
                .map(|j| (euclid(&anchors[i], &positives[j]), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands[0].1
        })
        .collect()
}

/// Sweeps every candidate threshold and returns the false positive rate of
/// the smallest one whose recall is at least 95%.
pub fn fpr95_sweep(dist: &[f64], is_match: &[bool]) -> f64 {
    let mut thresholds = dist.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let pos = is_match.iter().filter(|&&m| m).count() as f64;
    let neg = is_match.len() as f64 - pos;
    for t in thresholds {
        let tp = dist.iter().zip(is_match).filter(|(d, &m)| **d <= t && m).count() as f64;
        if tp / pos >= 0.95 - 1e-15 {
            let fp = dist.iter().zip(is_match).filter(|(d, &m)| **d <= t && !m).count() as f64;
            return fp / neg;
        }
    }
    unreachable!()
}

/// AP from its definition: mean over relevant items of the precision of the
/// prefix that ends at that item.
pub fn ap_definition(dist: &[f64], relevant: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let rel_total = relevant.iter().filter(|&&r| r).count() as f64;
    let mut sum = 0.0;
    for (k, &item) in idx.iter().enumerate() {
        if relevant[item] {
            let prefix = &idx[..=k];
            let hits = prefix.iter().filter(|&&x| relevant[x]).count() as f64;
            sum += hits / prefix.len() as f64;
        }
    }
    sum / rel_total
}

/// 3x3 convolution with zero padding, followed by inference batch norm and
/// ReLU. `input[c][y][x]`, `weight[o][c][ky][kx]` flattened.
pub fn conv_bn_relu(
    input: &[Vec<Vec<f64>>],
    weight: &[f64],
    out_channels: usize,
    stride: usize,
    scale: &[f64],
    shift: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Vec<Vec<Vec<f64>>> {
    let cin = input.len();
    let side = input[0].len();
    let out_side = (side - 1) / stride + 1;
    let mut out = vec![vec![vec![0.0; out_side]; out_side]; out_channels];
    for o in 0..out_channels {
        for oy in 0..out_side {
            for ox in 0..out_side {
                let mut acc = 0.0;
                for c in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let y = (oy * stride + ky) as isize - 1;
                            let x = (ox * stride + kx) as isize - 1;
                            if y < 0 || x < 0 || y >= side as isize || x >= side as isize {
                                continue;
                            }
                            acc += weight[((o * cin + c) * 3 + ky) * 3 + kx] * input[c][y as usize][x as usize];
                        }
                    }
                }
                let bn = scale[o] * (acc - mean[o]) / (var[o] + eps).sqrt() + shift[o];
                out[o][oy][ox] = bn.max(0.0);
            }
        }
    }
    out
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.random_range(-1.0..1.0))
}
