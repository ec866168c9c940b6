//! Spatial embeddings of grid positions and the precomputed position table.
//!
//! Positions are 1-based `(i, j)` on an `n x n` grid with flat index
//! `(i - 1) * n + (j - 1)`. The Cartesian system uses `x = i`, `y = j`; the
//! polar system measures `rho` and `theta` from the center `c = (n + 1) / 2`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::featuremap::{AngleMapping, FeatureMapSpec};

/// A 1-based grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPos {
    pub i: usize,
    pub j: usize,
}

impl GridPos {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSystem {
    Cartesian,
    Polar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    n: usize,
    center: f64,
    rho_max: f64,
}

impl GridGeometry {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("grid side must be at least 1"));
        }
        let center = (n as f64 + 1.0) / 2.0;
        let rho_max = std::f64::consts::SQRT_2 * (n as f64 - 1.0) / 2.0;
        Ok(Self { n, center, rho_max })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, p: GridPos) -> Result<()> {
        if p.i == 0 || p.j == 0 || p.i > self.n || p.j > self.n {
            return Err(Error::OutOfRange(format!(
                "position ({}, {}) is off the {}x{} grid",
                p.i, p.j, self.n, self.n
            )));
        }
        Ok(())
    }

    pub fn flat_index(&self, p: GridPos) -> usize {
        (p.i - 1) * self.n + (p.j - 1)
    }

    pub fn position(&self, flat: usize) -> GridPos {
        GridPos::new(flat / self.n + 1, flat % self.n + 1)
    }

    /// All positions in flat-index order.
    pub fn positions(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.len()).map(|k| self.position(k))
    }

    pub fn rho(&self, p: GridPos) -> f64 {
        let di = p.i as f64 - self.center;
        let dj = p.j as f64 - self.center;
        (di * di + dj * dj).sqrt()
    }

    pub fn theta(&self, p: GridPos) -> f64 {
        (p.j as f64 - self.center).atan2(p.i as f64 - self.center)
    }

    /// `exp(-(rho / rho_max)^2)`, or 1 on a single-cell grid.
    pub fn center_weight(&self, p: GridPos) -> Result<f64> {
        self.check(p)?;
        let rho = self.rho(p);
        if rho == 0.0 || self.rho_max == 0.0 {
            return Ok(1.0);
        }
        let r = rho / self.rho_max;
        Ok((-r * r).exp())
    }

    /// The two angles fed to the feature maps for position `p`.
    pub fn angles(&self, system: CoordinateSystem, p: GridPos) -> Result<(f64, f64)> {
        self.check(p)?;
        match system {
            CoordinateSystem::Cartesian => {
                let m = AngleMapping::linear(1.0, self.n as f64)?;
                Ok((m.to_angle(p.i as f64)?, m.to_angle(p.j as f64)?))
            }
            CoordinateSystem::Polar => {
                let m = AngleMapping::linear(0.0, self.rho_max)?;
                let theta = AngleMapping::periodic().to_angle(self.theta(p))?;
                Ok((m.to_angle(self.rho(p))?, theta))
            }
        }
    }
}

/// Feature maps for the two coordinates of one system: `(x, y)` or `(rho, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapPair {
    pub first: FeatureMapSpec,
    pub second: FeatureMapSpec,
}

impl FeatureMapPair {
    pub fn new(first: FeatureMapSpec, second: FeatureMapSpec) -> Result<Self> {
        if first.s() != second.s() {
            return Err(invalid(format!(
                "feature maps disagree on s: {} vs {}",
                first.s(),
                second.s()
            )));
        }
        Ok(Self { first, second })
    }

    /// Same kappa on both coordinates.
    pub fn uniform(kappa: f64, s: u32) -> Result<Self> {
        let spec = FeatureMapSpec::new(kappa, s)?;
        Ok(Self { first: spec.clone(), second: spec })
    }

    pub fn s(&self) -> u32 {
        self.first.s()
    }

    /// `(2s + 1)^2`
    pub fn dim(&self) -> usize {
        self.first.dim() * self.second.dim()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.first.s() != self.second.s() {
            return Err(invalid("feature maps disagree on s"));
        }
        Ok(())
    }
}

/// Kronecker product with the first factor major.
pub fn kron(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (ia, &va) in a.iter().enumerate() {
        for (ib, &vb) in b.iter().enumerate() {
            out[ia * b.len() + ib] = va * vb;
        }
    }
    out
}

/// Unweighted embedding `f(a_p) (x) f(b_p)` of position `p`.
pub fn encode_position(
    system: CoordinateSystem,
    geom: &GridGeometry,
    maps: &FeatureMapPair,
    p: GridPos,
) -> Result<Array1<f64>> {
    maps.validate()?;
    let (a, b) = geom.angles(system, p)?;
    Ok(kron(&maps.first.embed(a), &maps.second.embed(b)))
}

/// Precomputed (optionally weighted) position encodings for every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    system: CoordinateSystem,
    n: usize,
    s: u32,
    weighted: bool,
    weights: Array1<f64>,
    table: Array2<f64>,
}

impl PositionTable {
    pub fn build(
        system: CoordinateSystem,
        geom: &GridGeometry,
        maps: &FeatureMapPair,
        weighted: bool,
    ) -> Result<Self> {
        maps.validate()?;
        let rows = geom.len();
        let mut table = Array2::zeros((rows, maps.dim()));
        let mut weights = Array1::zeros(rows);
        for (k, p) in geom.positions().enumerate() {
            let w = if weighted { geom.center_weight(p)? } else { 1.0 };
            weights[k] = w;
            let code = encode_position(system, geom, maps, p)?;
            table.row_mut(k).assign(&(code * w));
        }
        Ok(Self { system, n: geom.n(), s: maps.s(), weighted, weights, table })
    }

    pub fn system(&self) -> CoordinateSystem {
        self.system
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// The `n^2 x (2s+1)^2` matrix `F`.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.table
    }

    /// `(2s + 1)^2`
    pub fn code_dim(&self) -> usize {
        self.table.ncols()
    }
}
