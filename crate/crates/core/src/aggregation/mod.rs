//! Descriptor construction from convolutional feature tensors.
//!
//! Every variant maps a feature tensor `Phi` (`n^2 x d`, one row per grid cell)
//! to a raw descriptor, which is then l2-normalized:
//!
//! | variant | raw descriptor |
//! |---------|----------------|
//! | fc | `W vec(Phi) + w` |
//! | xy, rhotheta | `M vec(Phi^T F) + n^2 m` |
//! | combined | `M [vec(Phi^T F_xy); vec(Phi~^T F_rt)] + n^2 m` |
//! | sum | `sum_p phi^p` |
//! | cat | `vec(Phi)` |
//!
//! `vec` of a `d x K` matrix is row-major, which matches the Kronecker
//! ordering `phi (x) f(a) (x) f(b)` used by the naive path.

mod kernel;
mod params;

pub use kernel::{match_kernel_similarity, similarity_heatmap, MatchKernel, SimilarityMap, SpatialKernel};
pub use params::{
    count_parameters, fc_head_parameters, memory_reduction_factor, spatial_head_parameters,
    LayerCount, ModelCount, ParameterConfig, ParameterReport,
};

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::position_encoding::{CoordinateSystem, PositionTable};

/// An `n x n` grid of `d`-dimensional convolutional descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    n: usize,
    d: usize,
    data: Array2<f64>,
}

impl FeatureTensor {
    /// Wraps a position-major `n^2 x d` matrix.
    pub fn new(n: usize, d: usize, data: Array2<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("feature tensor needs n >= 1 and d >= 1"));
        }
        if data.dim() != (n * n, d) {
            return Err(invalid(format!(
                "feature matrix is {:?}, expected ({}, {d})",
                data.dim(),
                n * n
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("feature tensor has non-finite entries".into()));
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, data: Array2::zeros((n * n, d)) }
    }

    /// From an `n x n x d` array indexed `[i-1, j-1, channel]`.
    pub fn from_grid(grid: Array3<f64>) -> Result<Self> {
        let (a, b, d) = grid.dim();
        if a != b {
            return Err(invalid(format!("feature grid must be square, got {a}x{b}")));
        }
        let data = grid
            .into_shape_with_order((a * a, d))
            .map_err(|e| invalid(e.to_string()))?;
        Self::new(a, d, data)
    }

    /// From a flat position-major buffer.
    pub fn from_vec(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((n * n, d), values).map_err(|e| invalid(e.to_string()))?;
        Self::new(n, d, data)
    }

    pub fn to_grid(&self) -> Array3<f64> {
        self.data
            .clone()
            .into_shape_with_order((self.n, self.n, self.d))
            .expect("shape is n*n x d")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `Phi` as an `n^2 x d` matrix.
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    /// Descriptor at flat grid index `p`.
    pub fn at(&self, p: usize) -> ArrayView1<'_, f64> {
        self.data.row(p)
    }

    /// Position-major, channel-minor flattening.
    pub fn vectorize(&self) -> Array1<f64> {
        Array1::from_iter(self.data.iter().copied())
    }
}

/// A raw descriptor together with its l2-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    raw: Array1<f64>,
    normalized: Array1<f64>,
    gamma: f64,
}

impl Descriptor {
    pub fn from_raw(raw: Array1<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("descriptor has non-finite entries".into()));
        }
        let sq = raw.dot(&raw);
        if sq == 0.0 {
            return Err(Error::ZeroDescriptor);
        }
        let gamma = 1.0 / sq.sqrt();
        let normalized = &raw * gamma;
        Ok(Self { raw, normalized, gamma })
    }

    pub fn raw(&self) -> &Array1<f64> {
        &self.raw
    }

    pub fn normalized(&self) -> &Array1<f64> {
        &self.normalized
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }
}

/// Fully connected head `W vec(Phi) + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcHead {
    n: usize,
    d: usize,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl FcHead {
    pub fn new(n: usize, d: usize, weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != n * n * d {
            return Err(invalid(format!(
                "fc weight has {} columns, expected n^2 d = {}",
                weight.ncols(),
                n * n * d
            )));
        }
        if bias.len() != weight.nrows() {
            return Err(invalid("fc bias length differs from output dimension"));
        }
        Ok(Self { n, d, weight, bias })
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// `W_p`, the `D x d` block acting on the descriptor at flat index `p`.
    pub fn block(&self, p: usize) -> ArrayView2<'_, f64> {
        self.weight.slice(s![.., p * self.d..(p + 1) * self.d])
    }

    fn check(&self, phi: &FeatureTensor) -> Result<()> {
        if phi.n() != self.n || phi.d() != self.d {
            return Err(invalid(format!(
                "fc head expects n={}, d={}; tensor has n={}, d={}",
                self.n,
                self.d,
                phi.n(),
                phi.d()
            )));
        }
        Ok(())
    }
}

/// Raw `W vec(Phi) + w`.
pub fn fc_raw(head: &FcHead, phi: &FeatureTensor) -> Result<Array1<f64>> {
    head.check(phi)?;
    Ok(head.weight.dot(&phi.vectorize()) + &head.bias)
}

pub fn describe_fc(head: &FcHead, phi: &FeatureTensor) -> Result<Descriptor> {
    Descriptor::from_raw(fc_raw(head, phi)?)
}

/// Block form `sum_p W_p phi^p + n^2 w'` with `w' = w / n^2`.
pub fn describe_fc_split(head: &FcHead, phi: &FeatureTensor) -> Result<Descriptor> {
    head.check(phi)?;
    let cells = (head.n * head.n) as f64;
    let shared = &head.bias / cells;
    let mut raw = Array1::zeros(head.output_dim());
    for p in 0..head.n * head.n {
        raw += &head.block(p).dot(&phi.at(p));
    }
    raw += &(shared * cells);
    Descriptor::from_raw(raw)
}

/// Which spatial encoding a head consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadVariant {
    Xy,
    RhoTheta,
    Combined,
}

impl HeadVariant {
    /// Coordinate systems of the position tables, in concatenation order.
    pub fn systems(self) -> &'static [CoordinateSystem] {
        match self {
            HeadVariant::Xy => &[CoordinateSystem::Cartesian],
            HeadVariant::RhoTheta => &[CoordinateSystem::Polar],
            HeadVariant::Combined => &[CoordinateSystem::Cartesian, CoordinateSystem::Polar],
        }
    }

    /// Input dimension `E` of the projection: `d (2s+1)^2` per coordinate system.
    pub fn encoding_dim(self, d: usize, s: u32) -> usize {
        let k = (2 * s as usize + 1).pow(2);
        self.systems().len() * d * k
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadVariant::Xy => "xy",
            HeadVariant::RhoTheta => "rhotheta",
            HeadVariant::Combined => "combined",
        }
    }
}

impl std::str::FromStr for HeadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xy" | "cartesian" => Ok(HeadVariant::Xy),
            "rhotheta" | "polar" | "rt" => Ok(HeadVariant::RhoTheta),
            "combined" | "c" => Ok(HeadVariant::Combined),
            other => Err(invalid(format!("unknown head variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Learnable whitening `(M, m)` applied to aggregated position-aware encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorHead {
    variant: HeadVariant,
    d: usize,
    s: u32,
    projection: Array2<f64>,
    bias: Array1<f64>,
}

impl DescriptorHead {
    pub fn new(
        variant: HeadVariant,
        d: usize,
        s: u32,
        projection: Array2<f64>,
        bias: Array1<f64>,
    ) -> Result<Self> {
        let e = variant.encoding_dim(d, s);
        if projection.ncols() != e {
            return Err(invalid(format!(
                "projection has {} columns, variant {variant} with d={d}, s={s} needs {e}",
                projection.ncols()
            )));
        }
        if bias.len() != projection.nrows() {
            return Err(invalid("bias length differs from output dimension"));
        }
        Ok(Self { variant, d, s, projection, bias })
    }

    pub fn variant(&self) -> HeadVariant {
        self.variant
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn encoding_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// `M`, `D x E`.
    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    /// `m`, length `D`.
    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn projection_mut(&mut self) -> &mut Array2<f64> {
        &mut self.projection
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    pub fn parameter_count(&self) -> usize {
        self.projection.len() + self.bias.len()
    }

    /// Verifies tables and tensors fit this head and returns the grid side.
    pub fn check_inputs(&self, tables: &[PositionTable], phis: &[&FeatureTensor]) -> Result<usize> {
        let systems = self.variant.systems();
        if tables.len() != systems.len() {
            return Err(invalid(format!(
                "variant {} needs {} position table(s), got {}",
                self.variant,
                systems.len(),
                tables.len()
            )));
        }
        if phis.len() != systems.len() {
            return Err(invalid(format!(
                "variant {} needs {} feature tensor(s), got {}",
                self.variant,
                systems.len(),
                phis.len()
            )));
        }
        let n = phis[0].n();
        for ((table, system), phi) in tables.iter().zip(systems).zip(phis) {
            if table.system() != *system {
                return Err(invalid(format!(
                    "variant {} expects a {:?} table, got {:?}",
                    self.variant,
                    system,
                    table.system()
                )));
            }
            if table.s() != self.s {
                return Err(invalid(format!("table has s={}, head has s={}", table.s(), self.s)));
            }
            if table.n() != phi.n() || phi.n() != n {
                return Err(invalid("tables and feature tensors disagree on grid side"));
            }
            if phi.d() != self.d {
                return Err(invalid(format!("tensor has d={}, head expects d={}", phi.d(), self.d)));
            }
        }
        Ok(n)
    }
}

/// `sum_p phi^p (x) F[p]` for every table, concatenated, built one
/// Kronecker vector at a time.
pub fn aggregate_naive(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Array1<f64>> {
    let n = head.check_inputs(tables, phis)?;
    let mut z = Array1::zeros(head.encoding_dim());
    let mut offset = 0;
    for (table, phi) in tables.iter().zip(phis) {
        let k = table.code_dim();
        let block_len = phi.d() * k;
        let mut block = z.slice_mut(s![offset..offset + block_len]);
        for p in 0..n * n {
            let code = table.matrix().row(p);
            let phi_p = phi.at(p);
            let mut joint = Array1::zeros(block_len);
            for (c, &v) in phi_p.iter().enumerate() {
                for (kk, &f) in code.iter().enumerate() {
                    joint[c * k + kk] = v * f;
                }
            }
            block += &joint;
        }
        offset += block_len;
    }
    Ok(z)
}

/// `vec(Phi^T F)` for every table, concatenated. Only `d x (2s+1)^2` transient
/// storage per table.
pub fn aggregate_efficient(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Array1<f64>> {
    head.check_inputs(tables, phis)?;
    let mut z = Array1::zeros(head.encoding_dim());
    let mut offset = 0;
    for (table, phi) in tables.iter().zip(phis) {
        let pooled = phi.matrix().t().dot(table.matrix());
        let len = pooled.len();
        z.slice_mut(s![offset..offset + len])
            .iter_mut()
            .zip(pooled.iter())
            .for_each(|(dst, &v)| *dst = v);
        offset += len;
    }
    Ok(z)
}

fn apply_head(head: &DescriptorHead, z: &Array1<f64>, n: usize) -> Array1<f64> {
    head.projection.dot(z) + &(&head.bias * (n * n) as f64)
}

pub fn spatial_raw_naive(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Array1<f64>> {
    let z = aggregate_naive(head, tables, phis)?;
    Ok(apply_head(head, &z, phis[0].n()))
}

pub fn spatial_raw_efficient(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Array1<f64>> {
    let z = aggregate_efficient(head, tables, phis)?;
    Ok(apply_head(head, &z, phis[0].n()))
}

pub fn describe_spatial_naive(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Descriptor> {
    Descriptor::from_raw(spatial_raw_naive(head, tables, phis)?)
}

pub fn describe_spatial_efficient(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
) -> Result<Descriptor> {
    Descriptor::from_raw(spatial_raw_efficient(head, tables, phis)?)
}

/// Describes many patches in parallel. Output order follows input order and
/// each patch is computed by a single sequential pass, so results do not
/// depend on scheduling.
pub fn describe_batch(
    head: &DescriptorHead,
    tables: &[PositionTable],
    patches: &[Vec<FeatureTensor>],
) -> Vec<Result<Descriptor>> {
    patches
        .par_iter()
        .map(|phis| {
            let refs: Vec<&FeatureTensor> = phis.iter().collect();
            describe_spatial_efficient(head, tables, &refs)
        })
        .collect()
}

/// Translation-invariant baseline: spatial sum pooling, dimension `d`.
pub fn describe_sum(phi: &FeatureTensor) -> Result<Descriptor> {
    Descriptor::from_raw(phi.matrix().sum_axis(ndarray::Axis(0)))
}

/// Concatenation baseline `vec(Phi)`, dimension `n^2 d`.
pub fn describe_cat(phi: &FeatureTensor) -> Result<Descriptor> {
    Descriptor::from_raw(phi.vectorize())
}
