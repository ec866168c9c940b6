//! Quick runtime checks of the library's core identities.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregation::{
    count_parameters, describe_fc, describe_fc_split, fc_raw, match_kernel_similarity, memory_reduction_factor,
    spatial_raw_efficient, spatial_raw_naive, DescriptorHead, FcHead, FeatureTensor, HeadVariant, ParameterConfig,
};
use crate::evaluation::{average_precision, fpr_at_95, LabeledPairSet, Polarity};
use crate::featuremap::FeatureMapSpec;
use crate::learning::mine_hardest;
use crate::position_encoding::{FeatureMapPair, GridGeometry, PositionTable};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

fn random_tensor(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureTensor {
    FeatureTensor::from_vec(n, d, (0..n * n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape is consistent")
}

pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut out = Vec::new();

    let spec = FeatureMapSpec::new(8.0, 3).expect("valid spec");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b) = (rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0));
        let ea = spec.embed(a);
        worst = worst.max((ea.dot(&ea) - 1.0).abs());
        worst = worst.max((ea.dot(&spec.embed(b)) - spec.kernel_value(a - b)).abs());
    }
    out.push(check("feature map unit norm and kernel identity", worst < 1e-12, format!("max error {worst:.2e}")));

    let mut worst = 0.0f64;
    for variant in [HeadVariant::Xy, HeadVariant::RhoTheta, HeadVariant::Combined] {
        let (n, d, s) = (4, 3, 2);
        let geom = GridGeometry::new(n).expect("n > 0");
        let maps = FeatureMapPair::uniform(8.0, s).expect("valid maps");
        let tables: Vec<PositionTable> = variant
            .systems()
            .iter()
            .map(|&sys| PositionTable::build(sys, &geom, &maps, true).expect("valid table"))
            .collect();
        let e = variant.encoding_dim(d, s);
        let head = DescriptorHead::new(
            variant,
            d,
            s,
            Array2::from_shape_fn((5, e), |_| rng.random_range(-1.0..1.0)),
            Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0)),
        )
        .expect("valid head");
        let phis: Vec<FeatureTensor> = tables.iter().map(|_| random_tensor(&mut rng, n, d)).collect();
        let refs: Vec<&FeatureTensor> = phis.iter().collect();
        let a = spatial_raw_efficient(&head, &tables, &refs).expect("valid inputs");
        let b = spatial_raw_naive(&head, &tables, &refs).expect("valid inputs");
        worst = worst.max((&a - &b).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    out.push(check("efficient equals naive aggregation", worst < 1e-10, format!("max difference {worst:.2e}")));

    let head = FcHead::new(
        3,
        2,
        Array2::from_shape_fn((4, 18), |_| rng.random_range(-1.0..1.0)),
        Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
    )
    .expect("valid fc head");
    let (a, b) = (random_tensor(&mut rng, 3, 2), random_tensor(&mut rng, 3, 2));
    let split_gap = match (describe_fc(&head, &a), describe_fc_split(&head, &a)) {
        (Ok(x), Ok(y)) => (x.raw() - y.raw()).iter().fold(0.0f64, |m, v| m.max(v.abs())),
        _ => f64::INFINITY,
    };
    out.push(check("fc block split identity", split_gap < 1e-12, format!("max difference {split_gap:.2e}")));
    let total_gap = match match_kernel_similarity(&head, &[&a], &[&b]) {
        Ok(sim) => {
            let expected = fc_raw(&head, &a).expect("valid").dot(&fc_raw(&head, &b).expect("valid"));
            (sim.total - expected).abs()
        }
        Err(_) => f64::INFINITY,
    };
    out.push(check("match kernel total equals inner product", total_gap < 1e-8, format!("gap {total_gap:.2e}")));

    let report = count_parameters(&ParameterConfig::default());
    let expect = [
        ("xy", 32, Some(1), 433_568),
        ("xy", 32, Some(2), 695_712),
        ("combined", 64, Some(1), 581_024),
        ("combined", 64, Some(2), 1_105_312),
        ("combined-separate", 32, Some(1), 867_008),
        ("combined-separate", 32, Some(2), 1_391_296),
        ("hardnet", 32, None, 1_334_560),
        ("hardnet", 64, None, 4_480_288),
    ];
    let ok = report.conv_total == 285_984
        && expect
            .iter()
            .all(|&(m, p, s, t)| report.find(m, p, s).map(|c| c.total) == Some(t));
    out.push(check("parameter counts", ok, format!("conv total {}", report.conv_total)));

    let factor = memory_reduction_factor(8, 128, 2);
    out.push(check("memory reduction factor", format!("{factor:.1}") == "20.9", format!("{factor:.4}")));

    let anchors = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
    let positives = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
    let mined = mine_hardest(&anchors, &positives).map(|s| s.negatives);
    let brute: Vec<usize> = (0..6)
        .map(|i| {
            (0..6)
                .filter(|&j| j != i)
                .min_by(|&x, &y| {
                    let dx = (&anchors.row(i) - &positives.row(x)).mapv(|v| v * v).sum();
                    let dy = (&anchors.row(i) - &positives.row(y)).mapv(|v| v * v).sum();
                    dx.total_cmp(&dy)
                })
                .expect("five candidates")
        })
        .collect();
    out.push(check("hardest negative mining", mined.as_ref().ok() == Some(&brute), format!("{mined:?}")));

    let sep = LabeledPairSet::new(vec![0.1, 0.2, 0.8, 0.9], vec![true, true, false, false], Polarity::Distance)
        .and_then(|s| fpr_at_95(&s));
    let ap = average_precision(&[true, true, false]);
    out.push(check(
        "metric degenerate cases",
        matches!(sep, Ok(v) if v == 0.0) && matches!(ap, Ok(v) if v == 1.0),
        format!("fpr95 {sep:?}, ap {ap:?}"),
    ));
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
