mod common;

use approx::assert_relative_eq;
use emk::evaluation::{
    average_precision, evaluate_matching, evaluate_retrieval, evaluate_verification, fpr_at_95,
    mean_average_precision, read_pair_labels, read_retrieval_labels, LabeledPairSet, Polarity,
};
use emk::io::DescriptorSet;
use emk::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, quantized: bool) -> (Vec<f64>, Vec<bool>) {
    loop {
        let len = rng.random_range(2..40);
        let dist: Vec<f64> = (0..len)
            .map(|_| {
                let v: f64 = rng.random_range(0.0..2.0);
                if quantized { (v * 4.0).round() / 4.0 } else { v }
            })
            .collect();
        let labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (dist, labels);
        }
    }
}

#[test]
fn fpr95_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..200 {
        let (dist, labels) = random_instance(&mut rng, k % 2 == 1);
        let set = LabeledPairSet::new(dist.clone(), labels.clone(), Polarity::Distance).unwrap();
        assert_relative_eq!(fpr_at_95(&set).unwrap(), common::fpr95_sweep(&dist, &labels), epsilon = 1e-12);
        let flipped: Vec<f64> = dist.iter().map(|d| -d).collect();
        let sim = LabeledPairSet::new(flipped, labels.clone(), Polarity::Similarity).unwrap();
        assert_eq!(fpr_at_95(&sim).unwrap(), fpr_at_95(&set).unwrap());
    }
}

#[test]
fn ap_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let (dist, labels) = random_instance(&mut rng, false);
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        let ranked: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
        assert_relative_eq!(
            average_precision(&ranked).unwrap(),
            common::ap_definition(&dist, &labels),
            epsilon = 1e-12
        );
    }
}

#[test]
fn degenerate_cases_are_exact() {
    let set = LabeledPairSet::new(vec![0.1, 0.2, 0.3, 0.9], vec![true, true, true, false], Polarity::Distance).unwrap();
    assert_eq!(fpr_at_95(&set).unwrap(), 0.0);
    assert_eq!(average_precision(&[true, true, false, false]).unwrap(), 1.0);
    let worst = LabeledPairSet::new(vec![0.9, 0.1], vec![true, false], Polarity::Distance).unwrap();
    assert_eq!(fpr_at_95(&worst).unwrap(), 1.0);
    assert!(LabeledPairSet::new(vec![0.1], vec![true], Polarity::Distance).is_err());
    assert!(average_precision(&[false, false]).is_err());
    assert!(mean_average_precision(&[]).is_err());
}

#[test]
fn tie_at_threshold_is_accepted() {
    // the positive and the negative share the deciding distance
    let set = LabeledPairSet::new(vec![0.5, 0.5, 0.9], vec![true, false, false], Polarity::Distance).unwrap();
    assert_eq!(fpr_at_95(&set).unwrap(), 0.5);
}

#[test]
fn label_files_parse_flags_and_reject_garbage() {
    let labels = read_pair_labels("id_a,id_b,is_match\n0, 1, 1\n2,3,false\n4,5,yes\n".as_bytes()).unwrap();
    assert_eq!(labels.iter().map(|l| l.is_match).collect::<Vec<_>>(), vec![true, false, true]);
    assert!(matches!(read_pair_labels("id_a,id_b,is_match\n0,1,maybe\n".as_bytes()), Err(Error::Format(_))));
    assert!(matches!(read_pair_labels("id_a,id_b,is_match\n0,1\n".as_bytes()), Err(Error::Format(_))));
    let r = read_retrieval_labels("query_id,pool_id,is_relevant\n0,2,0\n".as_bytes()).unwrap();
    assert_eq!((r[0].query_id, r[0].pool_id, r[0].is_relevant), (0, 2, false));
}

fn set(rows: &[[f64; 2]]) -> DescriptorSet {
    DescriptorSet::new(Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]))
}

#[test]
fn verification_protocol() {
    let a = set(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    let b = set(&[[1.0, 0.1], [0.1, 1.0], [-1.0, 0.0]]);
    let labels = read_pair_labels("id_a,id_b,is_match\n0,0,1\n1,1,1\n2,2,0\n0,2,0\n".as_bytes()).unwrap();
    let reports = evaluate_verification(&a, &b, &labels).unwrap();
    assert_eq!(reports[0].metric, "ap");
    assert_eq!(reports[0].value, 1.0);
    assert_eq!(reports[1].value, 0.0);
    assert_eq!(reports[1].counts["negatives"], 2);
    let bad = read_pair_labels("id_a,id_b,is_match\n0,7,1\n0,0,0\n".as_bytes()).unwrap();
    assert!(matches!(evaluate_verification(&a, &b, &bad), Err(Error::Format(_))));
}

#[test]
fn matching_protocol() {
    let a = set(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    let b = set(&[[0.0, 1.0], [1.0, 0.0], [0.7, 0.8]]);
    // 0 -> 1 and 1 -> 0 are correct nearest neighbours; 2's NN is 2 but its match is 0
    let labels = read_pair_labels("id_a,id_b,is_match\n0,1,1\n1,0,1\n2,0,1\n".as_bytes()).unwrap();
    let r = &evaluate_matching(&a, &b, &labels).unwrap()[0];
    assert_eq!(r.counts["correct_nn"], 2);
    // the wrong correspondence is the farthest of the three
    assert_relative_eq!(r.value, 2.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn retrieval_protocol() {
    let q = set(&[[1.0, 0.0], [0.0, 1.0]]);
    let pool = set(&[[1.0, 0.0], [0.0, 1.0], [0.9, 0.1]]);
    let labels =
        read_retrieval_labels("query_id,pool_id,is_relevant\n0,0,1\n0,1,0\n0,2,1\n1,0,0\n1,2,1\n".as_bytes()).unwrap();
    let r = &evaluate_retrieval(&q, &pool, &labels).unwrap()[0];
    // query 0: [rel, rel, not] -> 1; query 1: pool 2 at distance ~1.27, pool 0 at ~1.41 -> 1
    assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
    assert!(matches!(evaluate_retrieval(&q, &pool, &[]), Err(Error::Format(_))));
    let empty = DescriptorSet::new(Array2::zeros((0, 2)));
    assert!(matches!(evaluate_retrieval(&q, &empty, &labels), Err(Error::Format(_))));
}
