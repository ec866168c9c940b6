//! Explicit feature maps for the normalized Von Mises kernel.
//!
//! A [`FeatureMapSpec`] holds the truncated Fourier coefficients `u_0..u_s` of
//! the kernel. [`FeatureMapSpec::embed`] lifts a scalar angle into
//! `R^(2s+1)` so that inner products of two embeddings reproduce the truncated
//! kernel `sum_i u_i cos(i (a - b))`.
//!
//! Coefficients are normalized to sum to one, which makes every embedding unit
//! norm and the kernel exactly 1 at zero offset.

use std::f64::consts::PI;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default kernel shape used when none is configured.
pub const DEFAULT_KAPPA: f64 = 8.0;

/// Modified Bessel function of the first kind `I_order(x)` for `x >= 0`,
/// summed from its power series.
///
/// All terms are positive so there is no cancellation; accuracy is limited by
/// the 1e-16 relative truncation only. Intended for `x <= 32` but stays
/// finite up to several hundred.
pub fn bessel_i(order: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    if half == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let mut term = 1.0;
    for j in 1..=order {
        term *= half / j as f64;
    }
    let quarter_sq = half * half;
    let mut sum = term;
    let mut k = 0u64;
    loop {
        k += 1;
        term *= quarter_sq / (k as f64 * (k + order as u64) as f64);
        sum += term;
        // terms rise until k ~ x/2 and only then decay
        if (k as f64) > half && term <= 1e-16 * sum {
            break;
        }
        if k > 10_000 {
            break;
        }
    }
    sum
}

/// Truncated Fourier description of the Von Mises kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    kappa: f64,
    s: u32,
    u: Vec<f64>,
}

impl FeatureMapSpec {
    /// Builds the coefficients `u_0 = I_0(k)/Z`, `u_i = 2 I_i(k)/Z` with
    /// `Z = I_0(k) + 2 sum_{j=1..s} I_j(k)`.
    pub fn new(kappa: f64, s: u32) -> Result<Self> {
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(invalid(format!("kappa must be positive and finite, got {kappa}")));
        }
        if s == 0 {
            return Err(invalid("frequency count s must be at least 1"));
        }
        let mut u: Vec<f64> = (0..=s)
            .map(|i| {
                let b = bessel_i(i, kappa);
                if i == 0 {
                    b
                } else {
                    2.0 * b
                }
            })
            .collect();
        let z: f64 = u.iter().sum();
        if !z.is_finite() || z <= 0.0 {
            return Err(Error::Numerical(format!("Bessel normalizer overflowed for kappa={kappa}")));
        }
        for ui in &mut u {
            *ui /= z;
        }
        Ok(Self { kappa, s, u })
    }

    /// Rebuilds a spec from stored values, checking the coefficient invariants.
    pub fn from_parts(kappa: f64, s: u32, u: Vec<f64>) -> Result<Self> {
        if u.len() != s as usize + 1 {
            return Err(invalid(format!("expected {} coefficients, got {}", s + 1, u.len())));
        }
        if u.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(invalid("Fourier coefficients must be positive"));
        }
        let sum: f64 = u.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("Fourier coefficients sum to {sum}, expected 1")));
        }
        Ok(Self { kappa, s, u })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.u
    }

    /// Embedding dimension `2s + 1`.
    pub fn dim(&self) -> usize {
        2 * self.s as usize + 1
    }

    /// `(sqrt u_0, sqrt u_1 cos a, .., sqrt u_s cos sa, sqrt u_1 sin a, .., sqrt u_s sin sa)`.
    pub fn embed(&self, alpha: f64) -> Array1<f64> {
        let s = self.s as usize;
        let mut out = Array1::zeros(2 * s + 1);
        out[0] = self.u[0].sqrt();
        for i in 1..=s {
            let r = self.u[i].sqrt();
            let (sin, cos) = (i as f64 * alpha).sin_cos();
            out[i] = r * cos;
            out[s + i] = r * sin;
        }
        out
    }

    /// Truncated kernel `sum_i u_i cos(i delta)`.
    pub fn kernel_value(&self, delta: f64) -> f64 {
        self.u
            .iter()
            .enumerate()
            .map(|(i, ui)| ui * (i as f64 * delta).cos())
            .sum()
    }
}

/// Maps a coordinate to an angle.
///
/// Linear coordinates are sent affinely onto `[0, pi]`; periodic ones (already
/// angles) pass through. A zero-width linear domain maps everything to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMapping {
    domain_min: f64,
    domain_max: f64,
    periodic: bool,
}

impl AngleMapping {
    pub fn linear(domain_min: f64, domain_max: f64) -> Result<Self> {
        if domain_max.is_nan() || domain_min.is_nan() || domain_max < domain_min {
            return Err(invalid(format!(
                "angle domain [{domain_min}, {domain_max}] is empty"
            )));
        }
        Ok(Self { domain_min, domain_max, periodic: false })
    }

    pub fn periodic() -> Self {
        Self { domain_min: -PI, domain_max: PI, periodic: true }
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn to_angle(&self, coordinate: f64) -> Result<f64> {
        if self.periodic {
            return Ok(coordinate);
        }
        // small slack for coordinates computed in floating point
        let slack = 1e-9 * (1.0 + self.domain_max.abs().max(self.domain_min.abs()));
        if coordinate < self.domain_min - slack || coordinate > self.domain_max + slack {
            return Err(Error::OutOfRange(format!(
                "coordinate {coordinate} outside [{}, {}]",
                self.domain_min, self.domain_max
            )));
        }
        let width = self.domain_max - self.domain_min;
        if width == 0.0 {
            return Ok(0.0);
        }
        let t = ((coordinate - self.domain_min) / width).clamp(0.0, 1.0);
        Ok(PI * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(FeatureMapSpec::new(0.0, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(FeatureMapSpec::new(-1.0, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(FeatureMapSpec::new(8.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn coefficients_are_positive_and_sum_to_one() {
        let spec = FeatureMapSpec::new(8.0, 3).unwrap();
        assert_eq!(spec.coefficients().len(), 4);
        assert!(spec.coefficients().iter().all(|&u| u > 0.0));
        assert_abs_diff_eq!(spec.coefficients().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_kappa_flattens_kernel() {
        let spec = FeatureMapSpec::new(1e-8, 2).unwrap();
        let u = spec.coefficients();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-7);
        assert!(u[1] < 1e-7 && u[2] < 1e-7);
    }

    #[test]
    fn embed_at_zero() {
        let spec = FeatureMapSpec::new(8.0, 2).unwrap();
        let e = spec.embed(0.0);
        let u = spec.coefficients();
        for i in 0..=2 {
            assert_abs_diff_eq!(e[i], u[i].sqrt(), epsilon = 1e-15);
        }
        assert_eq!(e[3], 0.0);
        assert_eq!(e[4], 0.0);
    }

    #[test]
    fn kernel_at_zero_and_pi() {
        let spec = FeatureMapSpec::new(8.0, 2).unwrap();
        assert_abs_diff_eq!(spec.kernel_value(0.0), 1.0, epsilon = 1e-15);
        let u = spec.coefficients();
        assert_abs_diff_eq!(spec.kernel_value(PI), u[0] - u[1] + u[2], epsilon = 1e-15);
    }

    #[test]
    fn angle_mapping_endpoints() {
        let m = AngleMapping::linear(1.0, 8.0).unwrap();
        assert_eq!(m.to_angle(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(m.to_angle(8.0).unwrap(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(m.to_angle(4.5).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert!(matches!(m.to_angle(8.5), Err(Error::OutOfRange(_))));
        assert!(matches!(m.to_angle(0.0), Err(Error::OutOfRange(_))));
        assert_eq!(AngleMapping::periodic().to_angle(-2.1).unwrap(), -2.1);
        assert_eq!(AngleMapping::linear(3.0, 3.0).unwrap().to_angle(3.0).unwrap(), 0.0);
    }

    #[test]
    fn from_parts_validates() {
        let spec = FeatureMapSpec::new(4.0, 2).unwrap();
        let back = FeatureMapSpec::from_parts(4.0, 2, spec.coefficients().to_vec()).unwrap();
        assert_eq!(back, spec);
        assert!(FeatureMapSpec::from_parts(4.0, 2, vec![0.5, 0.5]).is_err());
        assert!(FeatureMapSpec::from_parts(4.0, 1, vec![0.9, 0.9]).is_err());
    }
}
