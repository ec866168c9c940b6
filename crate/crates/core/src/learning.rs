//! Triplet loss with hardest-in-batch mining, analytic gradients of the
//! spatial head, and momentum SGD for training `(M, m)`.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_efficient, DescriptorHead, FeatureTensor, HeadVariant};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{fpr_at_95, LabeledPairSet, Polarity};
use crate::feature_backend::random_orthogonal_init;
use crate::position_encoding::{FeatureMapPair, GridGeometry, PositionTable};

/// Triplet margin.
pub const MARGIN: f64 = 1.0;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_unit(v: ArrayView1<f64>, what: &str) -> Result<()> {
    let norm = v.dot(&v).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(invalid(format!("{what} descriptor has norm {norm}, expected 1")));
    }
    Ok(())
}

/// `[1 + |a - p| - |a - n|]_+` on l2-normalized descriptors.
pub fn triplet_loss(anchor: ArrayView1<f64>, positive: ArrayView1<f64>, negative: ArrayView1<f64>) -> Result<f64> {
    check_unit(anchor, "anchor")?;
    check_unit(positive, "positive")?;
    check_unit(negative, "negative")?;
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(invalid("triplet descriptors differ in dimension"));
    }
    Ok((MARGIN + distance(anchor, positive) - distance(anchor, negative)).max(0.0))
}

/// Gradients of the triplet loss with respect to its three inputs. Zero on
/// the inactive side of the hinge, including the kink.
pub fn triplet_loss_gradients(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negative: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let dim = anchor.len();
    let dp = distance(anchor, positive);
    let dn = distance(anchor, negative);
    if MARGIN + dp - dn <= 0.0 {
        return (Array1::zeros(dim), Array1::zeros(dim), Array1::zeros(dim));
    }
    let up = if dp > 0.0 { (&anchor - &positive) / dp } else { Array1::zeros(dim) };
    let un = if dn > 0.0 { (&anchor - &negative) / dn } else { Array1::zeros(dim) };
    (&up - &un, -&up, un)
}

/// Backpropagates through `x / |x|`.
pub fn normalization_backward(raw: ArrayView1<f64>, upstream: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = raw.dot(&raw).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroDescriptor);
    }
    let unit = &raw / norm;
    let along = unit.dot(&upstream);
    Ok((&upstream - &(unit * along)) / norm)
}

/// Per-anchor hardest negatives and their losses.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSelection {
    pub negatives: Vec<usize>,
    pub losses: Vec<f64>,
}

impl TripletSelection {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// For each anchor `i`, picks the positive `j != i` closest to it; ties go to
/// the smallest `j`. Rows are descriptors.
pub fn mine_hardest(anchors: &Array2<f64>, positives: &Array2<f64>) -> Result<TripletSelection> {
    let b = anchors.nrows();
    if b < 2 {
        return Err(invalid(format!("hardest-in-batch mining needs at least 2 pairs, got {b}")));
    }
    if positives.dim() != anchors.dim() {
        return Err(invalid("anchors and positives differ in shape"));
    }
    let picks: Vec<(usize, f64)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let a = anchors.row(i);
            let mut best = (usize::MAX, f64::INFINITY);
            for j in (0..b).filter(|&j| j != i) {
                let dist = distance(a, positives.row(j));
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            let loss = (MARGIN + distance(a, positives.row(i)) - best.1).max(0.0);
            (best.0, loss)
        })
        .collect();
    Ok(TripletSelection {
        negatives: picks.iter().map(|p| p.0).collect(),
        losses: picks.iter().map(|p| p.1).collect(),
    })
}

/// Gradients of a scalar with respect to `M`, `m` and each input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
    pub phis: Vec<Array2<f64>>,
}

/// Pulls a gradient on the raw descriptor back through
/// `psi = M vec(Phi^T F) + n^2 m`.
pub fn head_gradients(
    head: &DescriptorHead,
    tables: &[PositionTable],
    phis: &[&FeatureTensor],
    upstream: ArrayView1<f64>,
) -> Result<HeadGradients> {
    if upstream.len() != head.output_dim() {
        return Err(invalid(format!(
            "upstream gradient has length {}, head outputs {}",
            upstream.len(),
            head.output_dim()
        )));
    }
    let z = aggregate_efficient(head, tables, phis)?;
    let n = phis[0].n();
    let projection = upstream
        .to_owned()
        .insert_axis(Axis(1))
        .dot(&z.view().insert_axis(Axis(0)));
    let bias = &upstream * (n * n) as f64;
    let back = head.projection().t().dot(&upstream);
    let mut grads = Vec::with_capacity(tables.len());
    let mut offset = 0;
    for (table, phi) in tables.iter().zip(phis) {
        let k = table.code_dim();
        let len = phi.d() * k;
        let h = back
            .slice(s![offset..offset + len])
            .to_owned()
            .into_shape_with_order((phi.d(), k))
            .expect("block is d x K");
        grads.push(table.matrix().dot(&h.t()));
        offset += len;
    }
    Ok(HeadGradients { projection, bias, phis: grads })
}

/// Loss and gradients of a single triplet, all three descriptors computed by
/// the same head.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradients {
    pub loss: f64,
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
    pub anchor: Vec<Array2<f64>>,
    pub positive: Vec<Array2<f64>>,
    pub negative: Vec<Array2<f64>>,
}

pub fn triplet_objective(
    head: &DescriptorHead,
    tables: &[PositionTable],
    anchor: &[&FeatureTensor],
    positive: &[&FeatureTensor],
    negative: &[&FeatureTensor],
) -> Result<TripletGradients> {
    let raws = [anchor, positive, negative]
        .iter()
        .map(|phis| crate::aggregation::spatial_raw_efficient(head, tables, phis))
        .collect::<Result<Vec<_>>>()?;
    let units = raws
        .iter()
        .map(|r| crate::aggregation::Descriptor::from_raw(r.clone()).map(|d| d.normalized().clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = triplet_loss(units[0].view(), units[1].view(), units[2].view())?;
    let (ga, gp, gn) = triplet_loss_gradients(units[0].view(), units[1].view(), units[2].view());
    let mut projection = Array2::zeros(head.projection().dim());
    let mut bias = Array1::zeros(head.output_dim());
    let mut per_input = Vec::with_capacity(3);
    for ((raw, g), phis) in raws.iter().zip([ga, gp, gn]).zip([anchor, positive, negative]) {
        let upstream = normalization_backward(raw.view(), g.view())?;
        let hg = head_gradients(head, tables, phis, upstream.view())?;
        projection += &hg.projection;
        bias += &hg.bias;
        per_input.push(hg.phis);
    }
    let negative = per_input.pop().expect("three inputs");
    let positive = per_input.pop().expect("three inputs");
    let anchor = per_input.pop().expect("three inputs");
    Ok(TripletGradients { loss, projection, bias, anchor, positive, negative })
}

/// Momentum SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// `v <- momentum v + (g + wd p)`, `p <- p - lr v`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, config: SgdConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), velocity.len(), "parameter and velocity lengths differ");
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + config.weight_decay * *p;
        *v = config.momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Learning rate falling linearly from `base` to zero over `total` units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub base: f64,
    pub total: f64,
}

impl LinearDecay {
    pub fn new(base: f64, total: f64) -> Self {
        Self { base, total }
    }

    pub fn at(&self, progress: f64) -> f64 {
        if self.total <= 0.0 {
            return self.base;
        }
        self.base * (1.0 - progress / self.total).clamp(0.0, 1.0)
    }
}

/// Velocity buffers for `(M, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOptimizer {
    pub config: SgdConfig,
    velocity_projection: Vec<f64>,
    velocity_bias: Vec<f64>,
}

impl HeadOptimizer {
    pub fn new(head: &DescriptorHead, config: SgdConfig) -> Self {
        Self {
            config,
            velocity_projection: vec![0.0; head.projection().len()],
            velocity_bias: vec![0.0; head.bias().len()],
        }
    }

    pub fn step(&mut self, head: &mut DescriptorHead, grad_projection: &Array2<f64>, grad_bias: &Array1<f64>, lr: f64) {
        let config = self.config;
        let gp = grad_projection.as_standard_layout();
        let m = head.projection_mut();
        sgd_step(
            m.as_slice_mut().expect("projection is contiguous"),
            gp.as_slice().expect("standard layout"),
            &mut self.velocity_projection,
            lr,
            config,
        );
        sgd_step(
            head.bias_mut().as_slice_mut().expect("bias is contiguous"),
            grad_bias.as_slice().expect("bias gradient is contiguous"),
            &mut self.velocity_bias,
            lr,
            config,
        );
    }
}

/// Mean hardest-in-batch triplet loss over a batch of pre-aggregated
/// encodings `z = vec(Phi^T F)`, with gradients for `(M, m)`.
pub fn batch_loss_gradients(
    head: &DescriptorHead,
    n: usize,
    anchors: &[&Array1<f64>],
    positives: &[&Array1<f64>],
) -> Result<(f64, Array2<f64>, Array1<f64>, TripletSelection)> {
    let b = anchors.len();
    if b != positives.len() {
        return Err(invalid("anchor and positive counts differ"));
    }
    if b < 2 {
        return Err(invalid(format!("a batch needs at least 2 pairs, got {b}")));
    }
    let cells = (n * n) as f64;
    let raw_of = |z: &Array1<f64>| head.projection().dot(z) + &(head.bias() * cells);
    let raw_a: Vec<Array1<f64>> = anchors.par_iter().map(|z| raw_of(z)).collect();
    let raw_p: Vec<Array1<f64>> = positives.par_iter().map(|z| raw_of(z)).collect();
    let dim = head.output_dim();
    let unit = |raws: &[Array1<f64>]| -> Result<Array2<f64>> {
        let mut out = Array2::zeros((raws.len(), dim));
        for (i, r) in raws.iter().enumerate() {
            let norm = r.dot(r).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroDescriptor);
            }
            out.row_mut(i).assign(&(r / norm));
        }
        Ok(out)
    };
    let ua = unit(&raw_a)?;
    let up = unit(&raw_p)?;
    let selection = mine_hardest(&ua, &up)?;
    let scale = 1.0 / b as f64;
    let mut g_a = Array2::<f64>::zeros((b, dim));
    let mut g_p = Array2::<f64>::zeros((b, dim));
    for i in 0..b {
        let j = selection.negatives[i];
        let (ga, gp, gn) = triplet_loss_gradients(ua.row(i), up.row(i), up.row(j));
        g_a.row_mut(i).scaled_add(scale, &ga);
        g_p.row_mut(i).scaled_add(scale, &gp);
        g_p.row_mut(j).scaled_add(scale, &gn);
    }
    let mut grad_projection = Array2::zeros(head.projection().dim());
    let mut grad_bias = Array1::zeros(dim);
    for (raws, grads, zs) in [(&raw_a, &g_a, anchors), (&raw_p, &g_p, positives)] {
        for i in 0..b {
            let upstream = normalization_backward(raws[i].view(), grads.row(i))?;
            grad_bias.scaled_add(cells, &upstream);
            let outer = upstream
                .view()
                .insert_axis(Axis(1))
                .dot(&zs[i].view().insert_axis(Axis(0)));
            grad_projection += &outer;
        }
    }
    Ok((selection.mean_loss(), grad_projection, grad_bias, selection))
}

/// Labeled feature tensors. For a combined head the same tensor feeds both
/// coordinate systems.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub tensors: Vec<FeatureTensor>,
    pub labels: Vec<usize>,
}

impl ToyDataset {
    pub fn new(tensors: Vec<FeatureTensor>, labels: Vec<usize>) -> Result<Self> {
        if tensors.len() != labels.len() {
            return Err(invalid("tensor and label counts differ"));
        }
        if tensors.is_empty() {
            return Err(invalid("empty dataset"));
        }
        let (n, d) = (tensors[0].n(), tensors[0].d());
        if tensors.iter().any(|t| t.n() != n || t.d() != d) {
            return Err(invalid("dataset tensors differ in shape"));
        }
        Ok(Self { tensors, labels })
    }

    pub fn n(&self) -> usize {
        self.tensors[0].n()
    }

    pub fn d(&self) -> usize {
        self.tensors[0].d()
    }

    /// Indices grouped by label, labels ascending; only labels with at least
    /// two samples.
    fn classes(&self) -> Vec<(usize, Vec<usize>)> {
        let mut map = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map.into_iter().filter(|(_, v)| v.len() >= 2).collect()
    }
}

/// Class-clustered synthetic tensors.
///
/// The first `signal_channels` channels carry a per-class spatial pattern plus
/// small noise; the remaining channels carry strong per-sample nuisance noise
/// shared by no class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub n: usize,
    pub d: usize,
    pub signal_channels: usize,
    pub signal_noise: f64,
    pub nuisance: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 32, per_class: 6, n: 4, d: 8, signal_channels: 3, signal_noise: 0.35, nuisance: 1.5 }
    }
}

/// Class prototypes depend only on `prototype_seed`, so train and held-out
/// sets drawn with different `sample_seed`s share classes.
pub fn synthetic_dataset(spec: &SyntheticSpec, prototype_seed: u64, sample_seed: u64) -> Result<ToyDataset> {
    if spec.signal_channels > spec.d {
        return Err(invalid("more signal channels than channels"));
    }
    let cells = spec.n * spec.n;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(prototype_seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..cells * spec.signal_channels).map(|_| unit.sample(&mut proto_rng)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut tensors = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let mut data = Array2::zeros((cells, spec.d));
            for p in 0..cells {
                for c in 0..spec.d {
                    data[[p, c]] = if c < spec.signal_channels {
                        proto[p * spec.signal_channels + c] + spec.signal_noise * unit.sample(&mut rng)
                    } else {
                        spec.nuisance * unit.sample(&mut rng)
                    };
                }
            }
            tensors.push(FeatureTensor::new(spec.n, spec.d, data)?);
            labels.push(label);
        }
    }
    ToyDataset::new(tensors, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: HeadVariant,
    pub s: u32,
    pub kappa: f64,
    pub weighted: bool,
    pub descriptor_dim: usize,
    pub epochs: usize,
    /// Pairs per batch; every pair in a batch has a distinct label.
    pub batch_pairs: usize,
    /// Passes over the class list per epoch.
    pub rounds_per_epoch: usize,
    pub lr: f64,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: HeadVariant::Xy,
            s: 1,
            kappa: crate::featuremap::DEFAULT_KAPPA,
            weighted: true,
            descriptor_dim: 16,
            epochs: 10,
            batch_pairs: 16,
            rounds_per_epoch: 4,
            lr: 1.0,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn write_trace_csv(w: impl Write, trace: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: DescriptorHead,
    pub tables: Vec<PositionTable>,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    /// Mean batch loss of each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch).max().map_or(0, |e| e + 1);
        (0..epochs)
            .map(|e| {
                let rows: Vec<f64> = self.trace.iter().filter(|r| r.epoch == e).map(|r| r.mean_loss).collect();
                rows.iter().sum::<f64>() / rows.len().max(1) as f64
            })
            .collect()
    }
}

/// Position tables and an orthogonally initialized head for `config`.
pub fn initial_head(config: &TrainConfig, n: usize, d: usize) -> Result<(DescriptorHead, Vec<PositionTable>)> {
    let geom = GridGeometry::new(n)?;
    let maps = FeatureMapPair::uniform(config.kappa, config.s)?;
    let tables = config
        .variant
        .systems()
        .iter()
        .map(|&sys| PositionTable::build(sys, &geom, &maps, config.weighted))
        .collect::<Result<Vec<_>>>()?;
    let e = config.variant.encoding_dim(d, config.s);
    let projection = random_orthogonal_init(config.descriptor_dim, e, config.seed)?;
    let head = DescriptorHead::new(config.variant, d, config.s, projection, Array1::zeros(config.descriptor_dim))?;
    Ok((head, tables))
}

fn inputs_for(variant: HeadVariant, t: &FeatureTensor) -> Vec<&FeatureTensor> {
    variant.systems().iter().map(|_| t).collect()
}

/// Trains `(M, m)` on a labeled dataset with hardest-in-batch triplet loss,
/// momentum SGD and linearly decaying learning rate. Deterministic in
/// `config.seed`.
pub fn train_head_toy(dataset: &ToyDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let (head, tables) = initial_head(config, dataset.n(), dataset.d())?;
    train_from(head, tables, dataset, config)
}

pub fn train_from(
    mut head: DescriptorHead,
    tables: Vec<PositionTable>,
    dataset: &ToyDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let classes = dataset.classes();
    if classes.len() < 2 || config.batch_pairs < 2 {
        return Err(invalid(format!(
            "training needs at least 2 labels with 2+ samples and batches of 2+ pairs (labels: {}, batch: {})",
            classes.len(),
            config.batch_pairs
        )));
    }
    let n = dataset.n();
    let encodings: Vec<Array1<f64>> = dataset
        .tensors
        .par_iter()
        .map(|t| aggregate_efficient(&head, &tables, &inputs_for(config.variant, t)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1b);
    let batch = config.batch_pairs.min(classes.len());
    let steps_per_round = classes.len() / batch;
    let steps_per_epoch = steps_per_round * config.rounds_per_epoch.max(1);
    let schedule = LinearDecay::new(config.lr, (config.epochs * steps_per_epoch) as f64);
    let mut optimizer = HeadOptimizer::new(&head, config.sgd);
    let mut trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        for _ in 0..config.rounds_per_epoch.max(1) {
            let mut order: Vec<usize> = (0..classes.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks_exact(batch) {
                let mut anchors = Vec::with_capacity(batch);
                let mut positives = Vec::with_capacity(batch);
                for &c in chunk {
                    let members = &classes[c].1;
                    let picked: Vec<&usize> = members.choose_multiple(&mut rng, 2).collect();
                    anchors.push(&encodings[*picked[0]]);
                    positives.push(&encodings[*picked[1]]);
                }
                let lr = schedule.at(step as f64);
                let (loss, gp, gb, _) = batch_loss_gradients(&head, n, &anchors, &positives)?;
                optimizer.step(&mut head, &gp, &gb, lr);
                trace.push(TraceRow { epoch, step, mean_loss: loss, lr });
                step += 1;
            }
        }
    }
    Ok(TrainOutcome { head, tables, trace })
}

/// Verification pairs over a dataset: every same-label pair is positive and,
/// per sample, `negatives_per_sample` different-label partners drawn with
/// `seed` are negative.
pub fn verification_pairs(dataset: &ToyDataset, negatives_per_sample: usize, seed: u64) -> Vec<(usize, usize, bool)> {
    let mut pairs = Vec::new();
    let count = dataset.tensors.len();
    for i in 0..count {
        for j in i + 1..count {
            if dataset.labels[i] == dataset.labels[j] {
                pairs.push((i, j, true));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let others: Vec<usize> = (0..count).collect();
    for i in 0..count {
        let mut taken = 0;
        while taken < negatives_per_sample {
            let j = *others.choose(&mut rng).expect("non-empty");
            if dataset.labels[j] != dataset.labels[i] {
                pairs.push((i, j, false));
                taken += 1;
            }
        }
    }
    pairs
}

/// FPR at 95% recall of the head's normalized descriptors on `pairs`.
pub fn verification_fpr95(
    head: &DescriptorHead,
    tables: &[PositionTable],
    dataset: &ToyDataset,
    pairs: &[(usize, usize, bool)],
) -> Result<f64> {
    let descs: Vec<Array1<f64>> = dataset
        .tensors
        .par_iter()
        .map(|t| {
            crate::aggregation::describe_spatial_efficient(head, tables, &inputs_for(head.variant(), t))
                .map(|d| d.normalized().clone())
        })
        .collect::<Result<_>>()?;
    let scores = pairs.iter().map(|&(a, b, _)| distance(descs[a].view(), descs[b].view())).collect();
    let labels = pairs.iter().map(|p| p.2).collect();
    fpr_at_95(&LabeledPairSet::new(scores, labels, Polarity::Distance)?)
}
