//! Write a feature tensor to an EMKT file, read it back, and describe it
//! with a loaded model.

use emk::aggregation::FeatureTensor;
use emk::io::{export_tensor, import_tensor};
use emk::model::{Model, ModelConfig};

fn main() -> emk::Result<()> {
    let (n, d) = (8, 128);
    let tensor = FeatureTensor::from_vec(n, d, (0..n * n * d).map(|k| ((k % 97) as f64 / 97.0).sqrt()).collect())?;
    let path = std::env::temp_dir().join("emk-example.emkt");
    export_tensor(&path, &tensor)?;
    let back = import_tensor(&path)?;
    println!("{} bytes, n={} d={}", std::fs::metadata(&path)?.len(), back.n(), back.d());

    let model = Model::random(&ModelConfig::default(), 0)?;
    let phis = vec![back.clone(), back];
    let desc = model.describe_tensors(&phis)?;
    println!("descriptor dim {}, first entries {:?}", desc.dim(), &desc.normalized().as_slice().unwrap()[..4]);
    Ok(())
}
