//! Patch benchmark metrics: FPR at 95% recall and (mean) average precision,
//! plus label-file driven verification, matching and retrieval protocols.
//!
//! Rankings always sort by ascending distance with ties broken by input
//! order. AP is the non-interpolated mean of precision at each relevant rank.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{format_err, invalid, Error, Result};
use crate::io::DescriptorSet;

/// Whether larger scores mean more or less similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Distance,
    Similarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairSet {
    scores: Vec<f64>,
    is_match: Vec<bool>,
    polarity: Polarity,
}

impl LabeledPairSet {
    pub fn new(scores: Vec<f64>, is_match: Vec<bool>, polarity: Polarity) -> Result<Self> {
        if scores.len() != is_match.len() {
            return Err(invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                is_match.len()
            )));
        }
        if !is_match.iter().any(|&m| m) || is_match.iter().all(|&m| m) {
            return Err(invalid("pair set needs at least one positive and one negative"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("pair scores contain NaN".into()));
        }
        Ok(Self { scores, is_match, polarity })
    }

    /// Scores turned into distances (smaller = more similar).
    fn distances(&self) -> Vec<f64> {
        match self.polarity {
            Polarity::Distance => self.scores.clone(),
            Polarity::Similarity => self.scores.iter().map(|s| -s).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Stable ascending order of `distances`.
pub fn rank_by_distance(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    order
}

/// False positive rate at the smallest distance threshold whose recall reaches
/// 95%. Pairs exactly at the threshold are accepted.
pub fn fpr_at_95(pairs: &LabeledPairSet) -> Result<f64> {
    let dist = pairs.distances();
    let order = rank_by_distance(&dist);
    let positives = pairs.is_match.iter().filter(|&&m| m).count();
    let negatives = pairs.len() - positives;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        // accept the whole tie group at this distance
        let t = dist[order[k]];
        while k < order.len() && dist[order[k]] == t {
            if pairs.is_match[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if 20 * tp >= 19 * positives {
            return Ok(fp as f64 / negatives as f64);
        }
    }
    unreachable!("accepting every pair reaches full recall")
}

/// AP of a ranked relevance list, normalized by the number of relevant items
/// in the list.
pub fn average_precision(ranked: &[bool]) -> Result<f64> {
    let relevant = ranked.iter().filter(|&&r| r).count();
    average_precision_with_total(ranked, relevant)
}

/// AP normalized by `total_relevant`, which may exceed the relevant items
/// present in `ranked` (missed items contribute zero precision).
pub fn average_precision_with_total(ranked: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(invalid("average precision needs at least one relevant item"));
    }
    let present = ranked.iter().filter(|&&r| r).count();
    if present > total_relevant {
        return Err(invalid("more relevant items ranked than exist"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Mean of per-query AP; reduction runs in query order.
pub fn mean_average_precision(queries: &[Vec<bool>]) -> Result<f64> {
    if queries.is_empty() {
        return Err(invalid("no queries"));
    }
    let aps: Vec<f64> = queries
        .par_iter()
        .map(|q| average_precision(q))
        .collect::<Result<_>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// One row of a pairs label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub id_a: usize,
    pub id_b: usize,
    #[serde(deserialize_with = "flag")]
    pub is_match: bool,
}

/// One row of a retrieval label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalLabel {
    pub query_id: usize,
    pub pool_id: usize,
    #[serde(deserialize_with = "flag")]
    pub is_relevant: bool,
}

fn flag<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<bool, D::Error> {
    let raw = String::deserialize(de)?;
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean flag: '{other}'"))),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    reader
        .deserialize()
        .map(|row| row.map_err(|e| format_err(format!("bad label row: {e}"))))
        .collect()
}

pub fn read_pair_labels(r: impl Read) -> Result<Vec<PairLabel>> {
    read_rows(r)
}

pub fn read_retrieval_labels(r: impl Read) -> Result<Vec<RetrievalLabel>> {
    read_rows(r)
}

pub fn load_pair_labels(path: impl AsRef<Path>) -> Result<Vec<PairLabel>> {
    read_pair_labels(std::fs::File::open(path)?)
}

pub fn load_retrieval_labels(path: impl AsRef<Path>) -> Result<Vec<RetrievalLabel>> {
    read_retrieval_labels(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub counts: BTreeMap<String, usize>,
}

fn normalized_rows(set: &DescriptorSet) -> Result<Array2<f64>> {
    let mut rows = set.rows.clone();
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numerical(format!("descriptor {i} cannot be normalized")));
        }
        row /= norm;
    }
    Ok(rows)
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_ids(what: &str, id: usize, len: usize) -> Result<()> {
    if id >= len {
        return Err(format_err(format!("{what} id {id} out of range (have {len} descriptors)")));
    }
    Ok(())
}

fn check_dims(a: &DescriptorSet, b: &DescriptorSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(format_err(format!("descriptor dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// AP and FPR@95 over labeled pairs, ranked by descriptor distance.
pub fn evaluate_verification(a: &DescriptorSet, b: &DescriptorSet, labels: &[PairLabel]) -> Result<Vec<MetricReport>> {
    check_dims(a, b)?;
    if labels.is_empty() {
        return Err(format_err("no labeled pairs"));
    }
    let (ua, ub) = (normalized_rows(a)?, normalized_rows(b)?);
    let mut dist = Vec::with_capacity(labels.len());
    for l in labels {
        check_ids("id_a", l.id_a, a.len())?;
        check_ids("id_b", l.id_b, b.len())?;
        dist.push(euclid(ua.row(l.id_a), ub.row(l.id_b)));
    }
    let matches: Vec<bool> = labels.iter().map(|l| l.is_match).collect();
    let positives = matches.iter().filter(|&&m| m).count();
    let set = LabeledPairSet::new(dist.clone(), matches.clone(), Polarity::Distance)
        .map_err(|e| format_err(e.to_string()))?;
    let ranked: Vec<bool> = rank_by_distance(&dist).into_iter().map(|i| matches[i]).collect();
    let counts = BTreeMap::from([
        ("pairs".to_string(), labels.len()),
        ("positives".to_string(), positives),
        ("negatives".to_string(), labels.len() - positives),
    ]);
    Ok(vec![
        MetricReport {
            task: "verification".into(),
            metric: "ap".into(),
            value: average_precision(&ranked)?,
            counts: counts.clone(),
        },
        MetricReport { task: "verification".into(), metric: "fpr95".into(), value: fpr_at_95(&set)?, counts },
    ])
}

/// Matching between the patches of two images. Every labeled `id_a` is matched
/// to its nearest neighbour in `b`; the resulting correspondences are ranked by
/// distance and scored by AP against the labeled matches, normalized by the
/// number of `id_a` that have a true match.
pub fn evaluate_matching(a: &DescriptorSet, b: &DescriptorSet, labels: &[PairLabel]) -> Result<Vec<MetricReport>> {
    check_dims(a, b)?;
    if b.is_empty() {
        return Err(format_err("empty candidate set"));
    }
    let (ua, ub) = (normalized_rows(a)?, normalized_rows(b)?);
    let mut truth = BTreeMap::<usize, Vec<usize>>::new();
    for l in labels {
        check_ids("id_a", l.id_a, a.len())?;
        check_ids("id_b", l.id_b, b.len())?;
        let entry = truth.entry(l.id_a).or_default();
        if l.is_match {
            entry.push(l.id_b);
        }
    }
    if truth.is_empty() {
        return Err(format_err("no labeled correspondences"));
    }
    let with_match = truth.values().filter(|v| !v.is_empty()).count();
    if with_match == 0 {
        return Err(format_err("no query patch has a true correspondence"));
    }
    let mut dist = Vec::with_capacity(truth.len());
    let mut correct = Vec::with_capacity(truth.len());
    for (&ia, matches) in &truth {
        let d: Vec<f64> = (0..ub.nrows()).map(|j| euclid(ua.row(ia), ub.row(j))).collect();
        let nn = rank_by_distance(&d)[0];
        dist.push(d[nn]);
        correct.push(matches.contains(&nn));
    }
    let ranked: Vec<bool> = rank_by_distance(&dist).into_iter().map(|i| correct[i]).collect();
    let value = average_precision_with_total(&ranked, with_match)?;
    let counts = BTreeMap::from([
        ("queries".to_string(), truth.len()),
        ("with_match".to_string(), with_match),
        ("correct_nn".to_string(), correct.iter().filter(|&&c| c).count()),
    ]);
    Ok(vec![MetricReport { task: "matching".into(), metric: "ap".into(), value, counts }])
}

/// Per query, ranks its labeled pool items by distance; reports mAP.
pub fn evaluate_retrieval(
    queries: &DescriptorSet,
    pool: &DescriptorSet,
    labels: &[RetrievalLabel],
) -> Result<Vec<MetricReport>> {
    check_dims(queries, pool)?;
    if labels.is_empty() || pool.is_empty() {
        return Err(format_err("empty query pool"));
    }
    let (uq, up) = (normalized_rows(queries)?, normalized_rows(pool)?);
    let mut per_query = BTreeMap::<usize, Vec<(usize, bool)>>::new();
    for l in labels {
        check_ids("query_id", l.query_id, queries.len())?;
        check_ids("pool_id", l.pool_id, pool.len())?;
        per_query.entry(l.query_id).or_default().push((l.pool_id, l.is_relevant));
    }
    let mut lists = Vec::with_capacity(per_query.len());
    for (&q, items) in &per_query {
        if !items.iter().any(|i| i.1) {
            return Err(format_err(format!("query {q} has no relevant pool item")));
        }
        let d: Vec<f64> = items.iter().map(|&(p, _)| euclid(uq.row(q), up.row(p))).collect();
        lists.push(rank_by_distance(&d).into_iter().map(|i| items[i].1).collect::<Vec<bool>>());
    }
    let value = mean_average_precision(&lists)?;
    let counts = BTreeMap::from([
        ("queries".to_string(), lists.len()),
        ("labels".to_string(), labels.len()),
    ]);
    Ok(vec![MetricReport { task: "retrieval".into(), metric: "map".into(), value, counts }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        let set = LabeledPairSet::new(vec![0.1, 0.2, 0.3, 0.9, 1.0], vec![true, true, true, false, false], Polarity::Distance).unwrap();
        assert_eq!(fpr_at_95(&set).unwrap(), 0.0);
    }

    #[test]
    fn similarity_polarity() {
        let set = LabeledPairSet::new(vec![0.9, 0.8, 0.1], vec![true, true, false], Polarity::Similarity).unwrap();
        assert_eq!(fpr_at_95(&set).unwrap(), 0.0);
    }

    #[test]
    fn ties_at_threshold_are_accepted() {
        // the positive needed for full recall ties with a negative
        let set = LabeledPairSet::new(vec![0.1, 0.5, 0.5, 0.7], vec![true, true, false, false], Polarity::Distance).unwrap();
        assert_eq!(fpr_at_95(&set).unwrap(), 0.5);
    }

    #[test]
    fn invalid_pair_sets() {
        assert!(LabeledPairSet::new(vec![0.1], vec![true], Polarity::Distance).is_err());
        assert!(LabeledPairSet::new(vec![0.1, 0.2], vec![false, false], Polarity::Distance).is_err());
        assert!(LabeledPairSet::new(vec![0.1], vec![true, false], Polarity::Distance).is_err());
    }

    #[test]
    fn ap_basics() {
        assert_eq!(average_precision(&[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, true]).unwrap(), 0.5);
        assert!(average_precision(&[false, false]).is_err());
        assert_eq!(average_precision_with_total(&[true, false], 2).unwrap(), 0.5);
        assert_eq!(mean_average_precision(&[vec![true], vec![false, true]]).unwrap(), 0.75);
    }

    #[test]
    fn label_parsing() {
        let rows = read_pair_labels("id_a,id_b,is_match\n0,1,1\n2, 3, false\n".as_bytes()).unwrap();
        assert_eq!(rows[1], PairLabel { id_a: 2, id_b: 3, is_match: false });
        assert!(matches!(read_pair_labels("id_a,id_b,is_match\n0,x,1\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_pair_labels("id_a,id_b,is_match\n0,1,maybe\n".as_bytes()), Err(Error::Format(_))));
        let r = read_retrieval_labels("query_id,pool_id,is_relevant\n0,0,1\n".as_bytes()).unwrap();
        assert!(r[0].is_relevant);
    }

    #[test]
    fn retrieval_identity_is_perfect() {
        let rows = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64).sin() + if j == i % 3 { 2.0 } else { 0.0 });
        let set = DescriptorSet::new(rows);
        let labels: Vec<RetrievalLabel> = (0..5)
            .flat_map(|q| (0..5).map(move |p| RetrievalLabel { query_id: q, pool_id: p, is_relevant: p == q }))
            .collect();
        let r = evaluate_retrieval(&set, &set, &labels).unwrap();
        assert_eq!(r[0].value, 1.0);
        assert!(matches!(evaluate_retrieval(&set, &set, &[]), Err(Error::Format(_))));
    }

    #[test]
    fn out_of_range_ids() {
        let set = DescriptorSet::new(Array2::ones((2, 2)));
        let bad = [PairLabel { id_a: 0, id_b: 5, is_match: true }];
        assert!(matches!(evaluate_verification(&set, &set, &bad), Err(Error::Format(_))));
        assert!(matches!(evaluate_matching(&set, &set, &bad), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn metrics_scale_invariant_and_bounded(
            d in prop::collection::vec(0.0f64..10.0, 4..40),
            flips in prop::collection::vec(any::<bool>(), 40),
            scale in 0.01f64..100.0,
        ) {
            let mut labels: Vec<bool> = flips[..d.len()].to_vec();
            labels[0] = true;
            labels[1] = false;
            let a = LabeledPairSet::new(d.clone(), labels.clone(), Polarity::Distance).unwrap();
            let scaled: Vec<f64> = d.iter().map(|v| v * scale).collect();
            let b = LabeledPairSet::new(scaled.clone(), labels.clone(), Polarity::Distance).unwrap();
            let fa = fpr_at_95(&a).unwrap();
            prop_assert!((0.0..=1.0).contains(&fa));
            // scaling may merge or split float ties; only compare when order is unchanged
            if rank_by_distance(&d) == rank_by_distance(&scaled) {
                prop_assert_eq!(fa, fpr_at_95(&b).unwrap());
            }
            let ranked: Vec<bool> = rank_by_distance(&d).into_iter().map(|i| labels[i]).collect();
            let ap = average_precision(&ranked).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn promoting_a_positive_never_lowers_ap(
            ranked in prop::collection::vec(any::<bool>(), 2..30),
            at in 0usize..29,
        ) {
            prop_assume!(ranked.iter().any(|&r| r));
            let at = at % (ranked.len() - 1);
            prop_assume!(!ranked[at] && ranked[at + 1]);
            let mut better = ranked.clone();
            better.swap(at, at + 1);
            prop_assert!(average_precision(&better).unwrap() >= average_precision(&ranked).unwrap());
        }
    }
}
