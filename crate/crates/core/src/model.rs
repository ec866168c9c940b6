//! A complete descriptor model and its on-disk format.
//!
//! Layout: `"EMKM"`, `u32` manifest length in bytes, the UTF-8 JSON manifest,
//! then the blob section of little-endian `f32` values. Blob offsets in the
//! manifest are byte offsets from the start of the blob section. Matrices are
//! row-major; `head.M` is `D x E`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{describe_spatial_efficient, Descriptor, DescriptorHead, FeatureTensor, HeadVariant};
use crate::error::{format_err, invalid, Error, Result};
use crate::feature_backend::{
    hardnet_architecture, random_orthogonal_init, BatchNorm, ConvLayer, ConvLayerSpec, ConvNet, Patch, BN_EPSILON,
};
use crate::featuremap::DEFAULT_KAPPA;
use crate::position_encoding::{CoordinateSystem, FeatureMapPair, GridGeometry, PositionTable};

pub const MODEL_MAGIC: &[u8; 4] = b"EMKM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub offset: u64,
    pub count: u64,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cartesian: Option<FeatureMapPair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub polar: Option<FeatureMapPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub variant: HeadVariant,
    pub patch_size: usize,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "D")]
    pub descriptor_dim: usize,
    pub s: u32,
    pub feature_maps: FeatureMaps,
    pub weighted: bool,
    pub bn_epsilon: f64,
    /// Per-patch standardization is never applied here; the flag records
    /// what the weights expect.
    pub pixel_standardization: bool,
    /// One architecture per convolutional part; two for a combined head with
    /// separate parts.
    pub conv: Vec<Vec<ConvLayerSpec>>,
    pub blobs: Vec<BlobEntry>,
}

/// Settings for a freshly initialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: HeadVariant,
    pub patch_size: usize,
    pub s: u32,
    pub kappa_x: f64,
    pub kappa_y: f64,
    pub kappa_rho: f64,
    pub kappa_theta: f64,
    pub descriptor_dim: usize,
    pub weighted: bool,
    pub separate_conv: bool,
    pub architecture: Vec<ConvLayerSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: HeadVariant::Combined,
            patch_size: 32,
            s: 2,
            kappa_x: DEFAULT_KAPPA,
            kappa_y: DEFAULT_KAPPA,
            kappa_rho: DEFAULT_KAPPA,
            kappa_theta: DEFAULT_KAPPA,
            descriptor_dim: 128,
            weighted: true,
            separate_conv: true,
            architecture: hardnet_architecture(),
        }
    }
}

/// Convolutional part(s), position feature maps and the descriptor head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    patch_size: usize,
    n: usize,
    weighted: bool,
    maps: FeatureMaps,
    convs: Vec<ConvNet>,
    head: DescriptorHead,
}

impl Model {
    pub fn new(
        patch_size: usize,
        weighted: bool,
        maps: FeatureMaps,
        convs: Vec<ConvNet>,
        head: DescriptorHead,
    ) -> Result<Self> {
        if convs.is_empty() || convs.len() > head.variant().systems().len() {
            return Err(invalid(format!(
                "variant {} takes 1..={} convolutional parts, got {}",
                head.variant(),
                head.variant().systems().len(),
                convs.len()
            )));
        }
        for conv in &convs {
            if conv.output_channels() != head.d() {
                return Err(invalid(format!(
                    "convolutional part emits d={}, head expects d={}",
                    conv.output_channels(),
                    head.d()
                )));
            }
        }
        let n = convs[0].output_side(patch_size);
        if convs.iter().any(|c| c.output_side(patch_size) != n) {
            return Err(invalid("convolutional parts disagree on output grid side"));
        }
        for system in head.variant().systems() {
            let pair = match system {
                CoordinateSystem::Cartesian => maps.cartesian.as_ref(),
                CoordinateSystem::Polar => maps.polar.as_ref(),
            }
            .ok_or_else(|| invalid(format!("missing {system:?} feature maps")))?;
            pair.validate()?;
            if pair.s() != head.s() {
                return Err(invalid("feature maps and head disagree on s"));
            }
        }
        Ok(Self { patch_size, n, weighted, maps, convs, head })
    }

    /// Orthogonally initialized convolutions and projection, zero bias.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        let variant = config.variant;
        let maps = FeatureMaps {
            cartesian: variant
                .systems()
                .contains(&CoordinateSystem::Cartesian)
                .then(|| {
                    FeatureMapPair::new(
                        crate::featuremap::FeatureMapSpec::new(config.kappa_x, config.s)?,
                        crate::featuremap::FeatureMapSpec::new(config.kappa_y, config.s)?,
                    )
                })
                .transpose()?,
            polar: variant
                .systems()
                .contains(&CoordinateSystem::Polar)
                .then(|| {
                    FeatureMapPair::new(
                        crate::featuremap::FeatureMapSpec::new(config.kappa_rho, config.s)?,
                        crate::featuremap::FeatureMapSpec::new(config.kappa_theta, config.s)?,
                    )
                })
                .transpose()?,
        };
        let parts = if variant == HeadVariant::Combined && config.separate_conv { 2 } else { 1 };
        let convs = (0..parts)
            .map(|k| ConvNet::random_orthogonal(&config.architecture, seed.wrapping_add(1000 * (k as u64 + 1))))
            .collect::<Result<Vec<_>>>()?;
        let d = convs[0].output_channels();
        let e = variant.encoding_dim(d, config.s);
        let projection = random_orthogonal_init(config.descriptor_dim, e, seed)?;
        let head = DescriptorHead::new(variant, d, config.s, projection, Array1::zeros(config.descriptor_dim))?;
        Self::new(config.patch_size, config.weighted, maps, convs, head)
    }

    pub fn head(&self) -> &DescriptorHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DescriptorHead {
        &mut self.head
    }

    pub fn convs(&self) -> &[ConvNet] {
        &self.convs
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Grid side produced by the configured patch size.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> HeadVariant {
        self.head.variant()
    }

    pub fn feature_maps(&self) -> &FeatureMaps {
        &self.maps
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// Position tables for an `n x n` grid, in the head's concatenation order.
    pub fn tables(&self, n: usize) -> Result<Vec<PositionTable>> {
        let geom = GridGeometry::new(n)?;
        self.variant()
            .systems()
            .iter()
            .map(|&system| {
                let pair = match system {
                    CoordinateSystem::Cartesian => self.maps.cartesian.as_ref(),
                    CoordinateSystem::Polar => self.maps.polar.as_ref(),
                }
                .expect("validated at construction");
                PositionTable::build(system, &geom, pair, self.weighted)
            })
            .collect()
    }

    /// Feature tensors for one patch: one per coordinate system, reusing the
    /// shared convolutional part when there is only one.
    pub fn features(&self, patch: &Patch) -> Result<Vec<FeatureTensor>> {
        if patch.side() != self.patch_size {
            return Err(Error::Config(format!(
                "model expects {0}x{0} patches, got {1}x{1}",
                self.patch_size,
                patch.side()
            )));
        }
        let needed = self.variant().systems().len();
        let mut out: Vec<FeatureTensor> = self
            .convs
            .iter()
            .map(|c| c.forward_expecting(patch, self.n))
            .collect::<Result<_>>()?;
        while out.len() < needed {
            out.push(out[0].clone());
        }
        Ok(out)
    }

    pub fn describe_tensors(&self, phis: &[FeatureTensor]) -> Result<Descriptor> {
        let n = phis.first().ok_or_else(|| invalid("no feature tensors"))?.n();
        let tables = self.tables(n)?;
        let refs: Vec<&FeatureTensor> = phis.iter().collect();
        describe_spatial_efficient(&self.head, &tables, &refs)
    }

    pub fn describe_patch(&self, patch: &Patch) -> Result<Descriptor> {
        self.describe_tensors(&self.features(patch)?)
    }

    /// Parallel over patches, results in input order.
    pub fn describe_patches(&self, patches: &[Patch]) -> Result<Vec<Descriptor>> {
        let tables = self.tables(self.n)?;
        patches
            .par_iter()
            .map(|patch| {
                let phis = self.features(patch)?;
                let refs: Vec<&FeatureTensor> = phis.iter().collect();
                describe_spatial_efficient(&self.head, &tables, &refs)
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        self.encode().0
    }

    fn encode(&self) -> (Manifest, Vec<u8>) {
        let mut blobs = Vec::new();
        let mut bytes = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = f64>| {
            let offset = bytes.len() as u64;
            let mut count = 0u64;
            for v in values {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
                count += 1;
            }
            blobs.push(BlobEntry { name, offset, count, shape });
        };
        for (k, conv) in self.convs.iter().enumerate() {
            for (l, layer) in conv.layers().iter().enumerate() {
                let ConvLayerSpec { in_channels, out_channels, .. } = layer.spec;
                let prefix = format!("conv{k}.{l}");
                push(format!("{prefix}.weight"), vec![out_channels, in_channels, 3, 3], &mut layer.weight.iter().copied());
                push(format!("{prefix}.bn_scale"), vec![out_channels], &mut layer.bn.scale.iter().copied());
                push(format!("{prefix}.bn_shift"), vec![out_channels], &mut layer.bn.shift.iter().copied());
                push(format!("{prefix}.bn_mean"), vec![out_channels], &mut layer.bn.mean.iter().copied());
                push(format!("{prefix}.bn_var"), vec![out_channels], &mut layer.bn.var.iter().copied());
            }
        }
        let m = self.head.projection();
        push("head.M".into(), vec![m.nrows(), m.ncols()], &mut m.iter().copied());
        push("head.m".into(), vec![self.head.output_dim()], &mut self.head.bias().iter().copied());
        let eps = self
            .convs
            .first()
            .and_then(|c| c.layers().first())
            .map(|l| l.bn.eps)
            .unwrap_or(BN_EPSILON);
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            variant: self.variant(),
            patch_size: self.patch_size,
            n: self.n,
            d: self.head.d(),
            descriptor_dim: self.head.output_dim(),
            s: self.head.s(),
            feature_maps: self.maps.clone(),
            weighted: self.weighted,
            bn_epsilon: eps,
            pixel_standardization: false,
            conv: self.convs.iter().map(|c| c.architecture()).collect(),
            blobs,
        };
        (manifest, bytes)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let (manifest, blob) = self.encode();
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| format_err("model file too short"))?;
        if &magic != MODEL_MAGIC {
            return Err(format_err("not a model file (bad magic)"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| format_err("truncated model header"))?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|_| format_err("truncated model manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| format_err(format!("bad manifest: {e}")))?;
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        Self::decode(&manifest, &blob)
    }

    fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        if manifest.format_version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {}", manifest.format_version)));
        }
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let entry = manifest
                .blobs
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| format_err(format!("missing blob '{name}'")))?;
            let expected: usize = shape.iter().product();
            if entry.shape != shape || entry.count as usize != expected {
                return Err(format_err(format!(
                    "blob '{name}' has shape {:?}, expected {shape:?}",
                    entry.shape
                )));
            }
            let start = entry.offset as usize;
            let end = start + expected * 4;
            if end > blob.len() {
                return Err(format_err(format!("blob '{name}' runs past end of file")));
            }
            Ok(blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let mut convs = Vec::new();
        for (k, arch) in manifest.conv.iter().enumerate() {
            let mut layers = Vec::new();
            for (l, &spec) in arch.iter().enumerate() {
                let prefix = format!("conv{k}.{l}");
                let c = spec.out_channels;
                let weight = fetch(&format!("{prefix}.weight"), &[c, spec.in_channels, 3, 3])?;
                let bn = BatchNorm {
                    scale: fetch(&format!("{prefix}.bn_scale"), &[c])?,
                    shift: fetch(&format!("{prefix}.bn_shift"), &[c])?,
                    mean: fetch(&format!("{prefix}.bn_mean"), &[c])?,
                    var: fetch(&format!("{prefix}.bn_var"), &[c])?,
                    eps: manifest.bn_epsilon,
                };
                layers.push(ConvLayer::new(spec, weight, bn)?);
            }
            convs.push(ConvNet::new(layers)?);
        }
        let e = manifest.variant.encoding_dim(manifest.d, manifest.s);
        let dd = manifest.descriptor_dim;
        let projection = Array2::from_shape_vec((dd, e), fetch("head.M", &[dd, e])?)
            .map_err(|err| format_err(err.to_string()))?;
        let bias = Array1::from(fetch("head.m", &[dd])?);
        let head = DescriptorHead::new(manifest.variant, manifest.d, manifest.s, projection, bias)
            .map_err(|err| format_err(err.to_string()))?;
        let model = Self::new(manifest.patch_size, manifest.weighted, manifest.feature_maps.clone(), convs, head)
            .map_err(|err| format_err(err.to_string()))?;
        if model.n != manifest.n {
            return Err(format_err(format!(
                "manifest says n={}, architecture gives n={}",
                manifest.n, model.n
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
