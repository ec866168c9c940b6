//! Parameter accounting for the convolutional part and every head.

use std::fmt::Write as _;

use serde::Serialize;

use super::HeadVariant;
use crate::feature_backend::{hardnet_architecture, ConvLayerSpec};

/// Parameters of an FC head on an `n x n x d` tensor.
pub fn fc_head_parameters(descriptor_dim: usize, n: usize, d: usize, bias: bool) -> usize {
    descriptor_dim * n * n * d + if bias { descriptor_dim } else { 0 }
}

/// `D * E + D`. Does not depend on the grid side.
pub fn spatial_head_parameters(variant: HeadVariant, descriptor_dim: usize, d: usize, s: u32) -> usize {
    descriptor_dim * variant.encoding_dim(d, s) + descriptor_dim
}

/// Ratio of naive to efficient transient storage:
/// `n^2 d (2s+1)^2 / (n^2 (d + (2s+1)^2))`.
pub fn memory_reduction_factor(n: usize, d: usize, s: u32) -> f64 {
    let k = (2 * s as usize + 1).pow(2);
    let cells = n * n;
    (cells * d * k) as f64 / (cells * (d + k)) as f64
}

#[derive(Debug, Clone)]
pub struct ParameterConfig {
    pub conv: Vec<ConvLayerSpec>,
    pub d: usize,
    pub descriptor_dim: usize,
    /// `(patch side N, feature grid side n)` pairs.
    pub resolutions: Vec<(usize, usize)>,
    pub frequencies: Vec<u32>,
    pub fc_bias: bool,
}

impl Default for ParameterConfig {
    fn default() -> Self {
        Self {
            conv: hardnet_architecture(),
            d: 128,
            descriptor_dim: 128,
            resolutions: vec![(32, 8), (64, 16)],
            frequencies: vec![1, 2],
            fc_bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: usize,
    /// `[in, out, 3, 3]`
    pub shape: [usize; 4],
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelCount {
    pub model: String,
    pub patch_size: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<u32>,
    pub conv: usize,
    pub conv_tilde: usize,
    pub head: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub conv_layers: Vec<LayerCount>,
    pub conv_total: usize,
    pub models: Vec<ModelCount>,
}

/// Counts parameters for HardNet-style FC models and every spatial head.
///
/// Model names: `hardnet`, `xy`, `rhotheta`, `combined` (shared convolutional
/// part) and `combined-separate` (one convolutional part per coordinate system).
pub fn count_parameters(config: &ParameterConfig) -> ParameterReport {
    let conv_layers: Vec<LayerCount> = config
        .conv
        .iter()
        .enumerate()
        .map(|(i, l)| LayerCount {
            layer: i + 1,
            shape: [l.in_channels, l.out_channels, 3, 3],
            parameters: l.parameter_count(),
        })
        .collect();
    let conv_total: usize = conv_layers.iter().map(|l| l.parameters).sum();
    let (d, dd) = (config.d, config.descriptor_dim);

    let mut models = Vec::new();
    for &(patch, n) in &config.resolutions {
        let head = fc_head_parameters(dd, n, d, config.fc_bias);
        models.push(ModelCount {
            model: "hardnet".into(),
            patch_size: patch,
            n,
            s: None,
            conv: conv_total,
            conv_tilde: 0,
            head,
            total: conv_total + head,
        });
    }
    let spatial = [
        ("xy", HeadVariant::Xy, false),
        ("rhotheta", HeadVariant::RhoTheta, false),
        ("combined", HeadVariant::Combined, false),
        ("combined-separate", HeadVariant::Combined, true),
    ];
    for (name, variant, separate) in spatial {
        for &s in &config.frequencies {
            let head = spatial_head_parameters(variant, dd, d, s);
            let conv_tilde = if separate { conv_total } else { 0 };
            for &(patch, n) in &config.resolutions {
                models.push(ModelCount {
                    model: name.into(),
                    patch_size: patch,
                    n,
                    s: Some(s),
                    conv: conv_total,
                    conv_tilde,
                    head,
                    total: conv_total + conv_tilde + head,
                });
            }
        }
    }
    ParameterReport { conv_layers, conv_total, models }
}

impl ParameterReport {
    pub fn find(&self, model: &str, patch_size: usize, s: Option<u32>) -> Option<&ModelCount> {
        self.models
            .iter()
            .find(|m| m.model == model && m.patch_size == patch_size && m.s == s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "convolutional part");
        for l in &self.conv_layers {
            let _ = writeln!(
                out,
                "  layer {}  [{}, {}, 3, 3]  {}",
                l.layer, l.shape[0], l.shape[1], l.parameters
            );
        }
        let _ = writeln!(out, "  total  {}", self.conv_total);
        let _ = writeln!(out, "models");
        for m in &self.models {
            let s = m.s.map(|s| format!(" s={s}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "  {}{} N={} n={}  conv={} conv_tilde={} head={} total={}",
                m.model, s, m.patch_size, m.n, m.conv, m.conv_tilde, m.head, m.total
            );
        }
        out
    }
}
