//! Match-kernel view of descriptor similarity.
//!
//! A descriptor is a sum of per-position codes `g(phi^p, p)`, so the inner
//! product of two raw descriptors expands into an `n^2 x n^2` map of
//! position-pair similarities. The affine constant is shared evenly over the
//! `n^2` positions so the map sums exactly to the raw inner product.

use ndarray::{s, Array1, Array2};

use super::{DescriptorHead, FcHead, FeatureTensor};
use crate::error::{invalid, Result};
use crate::position_encoding::{GridGeometry, GridPos, PositionTable};

/// A head that can be written as a sum of per-position codes.
pub trait MatchKernel {
    /// `n^2 x D` matrix whose row `p` is `g(phi^p, p)`. Rows sum to the raw
    /// descriptor.
    fn position_codes(&self, phis: &[&FeatureTensor]) -> Result<Array2<f64>>;
}

impl MatchKernel for FcHead {
    fn position_codes(&self, phis: &[&FeatureTensor]) -> Result<Array2<f64>> {
        let [phi] = phis else {
            return Err(invalid("fc head takes exactly one feature tensor"));
        };
        self.check(phi)?;
        let cells = self.n * self.n;
        let shared = self.bias() / cells as f64;
        let mut codes = Array2::zeros((cells, self.output_dim()));
        for p in 0..cells {
            codes.row_mut(p).assign(&(self.block(p).dot(&phi.at(p)) + &shared));
        }
        Ok(codes)
    }
}

/// A spatial head bound to the position tables of one grid size.
#[derive(Debug, Clone, Copy)]
pub struct SpatialKernel<'a> {
    pub head: &'a DescriptorHead,
    pub tables: &'a [PositionTable],
}

impl<'a> SpatialKernel<'a> {
    pub fn new(head: &'a DescriptorHead, tables: &'a [PositionTable]) -> Self {
        Self { head, tables }
    }
}

impl MatchKernel for SpatialKernel<'_> {
    fn position_codes(&self, phis: &[&FeatureTensor]) -> Result<Array2<f64>> {
        let n = self.head.check_inputs(self.tables, phis)?;
        let cells = n * n;
        let mut codes = Array2::zeros((cells, self.head.output_dim()));
        let mut joint = Array1::zeros(self.head.encoding_dim());
        for p in 0..cells {
            let mut offset = 0;
            for (table, phi) in self.tables.iter().zip(phis) {
                let code = table.matrix().row(p);
                let k = code.len();
                for (c, &v) in phi.at(p).iter().enumerate() {
                    joint
                        .slice_mut(s![offset + c * k..offset + (c + 1) * k])
                        .assign(&(&code * v));
                }
                offset += phi.d() * k;
            }
            // n^2 m spread as m per position
            codes
                .row_mut(p)
                .assign(&(self.head.projection().dot(&joint) + self.head.bias()));
        }
        Ok(codes)
    }
}

/// Pairwise position similarities and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub total: f64,
    /// `map[[p, q]] = g(phi_a^p, p) . g(phi_b^q, q)` over flat indices.
    pub map: Array2<f64>,
}

pub fn match_kernel_similarity<K: MatchKernel + ?Sized>(
    kernel: &K,
    phis_a: &[&FeatureTensor],
    phis_b: &[&FeatureTensor],
) -> Result<SimilarityMap> {
    if phis_a.len() != phis_b.len() {
        return Err(invalid("patches carry different numbers of feature tensors"));
    }
    for (a, b) in phis_a.iter().zip(phis_b) {
        if a.n() != b.n() || a.d() != b.d() {
            return Err(invalid("patches have different feature tensor shapes"));
        }
    }
    let ga = kernel.position_codes(phis_a)?;
    let gb = kernel.position_codes(phis_b)?;
    let map = ga.dot(&gb.t());
    let total = map.sum();
    Ok(SimilarityMap { total, map })
}

/// Similarity of position `p` in patch `a` to every position of patch `b`,
/// laid out on the grid and rescaled to `[0, 1]`. A constant row maps to zeros.
pub fn similarity_heatmap<K: MatchKernel + ?Sized>(
    kernel: &K,
    phis_a: &[&FeatureTensor],
    phis_b: &[&FeatureTensor],
    p: GridPos,
) -> Result<Array2<f64>> {
    let n = phis_a
        .first()
        .ok_or_else(|| invalid("no feature tensors given"))?
        .n();
    let geom = GridGeometry::new(n)?;
    geom.check(p)?;
    let sim = match_kernel_similarity(kernel, phis_a, phis_b)?;
    let row = sim.map.row(geom.flat_index(p));
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let scaled = row.mapv(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 });
    Ok(scaled.into_shape_with_order((n, n)).expect("row has n^2 entries"))
}
