//! Verification, matching and retrieval metrics from descriptor and label
//! files, as produced by `emk describe`.

use emk::evaluation::{
    evaluate_matching, evaluate_retrieval, evaluate_verification, read_pair_labels, read_retrieval_labels,
};
use emk::io::{load_descriptors, save_descriptors, DescriptorSet};
use ndarray::Array2;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

fn main() -> emk::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let base = Array2::from_shape_fn((20, 16), |_| unit.sample(&mut rng));
    let perturbed = &base + &Array2::from_shape_fn((20, 16), |_| 1.1 * unit.sample(&mut rng));

    let dir = std::env::temp_dir().join("emk-eval");
    std::fs::create_dir_all(&dir)?;
    save_descriptors(dir.join("a.emkd"), &DescriptorSet::new(unit_rows(base)))?;
    save_descriptors(dir.join("b.emkd"), &DescriptorSet::new(unit_rows(perturbed)))?;
    let a = load_descriptors(dir.join("a.emkd"))?;
    let b = load_descriptors(dir.join("b.emkd"))?;

    let mut pairs = String::from("id_a,id_b,is_match\n");
    let mut retrieval = String::from("query_id,pool_id,is_relevant\n");
    for i in 0..20 {
        pairs.push_str(&format!("{i},{i},1\n{i},{},0\n", (i + 7) % 20));
        for j in 0..20 {
            retrieval.push_str(&format!("{i},{j},{}\n", u8::from(i == j)));
        }
    }
    let pair_labels = read_pair_labels(pairs.as_bytes())?;
    let mut reports = evaluate_verification(&a, &b, &pair_labels)?;
    reports.extend(evaluate_matching(&a, &b, &pair_labels)?);
    reports.extend(evaluate_retrieval(&a, &b, &read_retrieval_labels(retrieval.as_bytes())?)?);
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}
