//! Create a model, save it, load it back and describe a patch with both.

use emk::aggregation::HeadVariant;
use emk::feature_backend::Patch;
use emk::model::{Model, ModelConfig};
use ndarray::Array2;

fn main() -> emk::Result<()> {
    let config = ModelConfig { variant: HeadVariant::Combined, s: 2, ..ModelConfig::default() };
    let model = Model::random(&config, 5)?;
    let dir = std::env::temp_dir().join("emk-model-roundtrip");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("combined.emkm");
    model.save(&path)?;
    let loaded = Model::load(&path)?;
    println!(
        "saved {} ({} bytes), variant {}, n={}, D={}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        loaded.variant(),
        loaded.n(),
        loaded.head().output_dim()
    );

    let patch = Patch::new(Array2::from_shape_fn((32, 32), |(y, x)| ((x * 7 + y * 3) % 32) as f64 / 31.0))?;
    let a = model.describe_patch(&patch)?;
    let b = loaded.describe_patch(&patch)?;
    let gap = (a.normalized() - b.normalized()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("descriptor norm {:.6}, max difference after reload {gap:.2e}", a.normalized().dot(a.normalized()).sqrt());
    Ok(())
}
