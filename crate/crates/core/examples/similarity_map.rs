//! Similarity of one grid position of a patch against every position of a
//! shifted copy, written as a PGM heat-map.

use emk::aggregation::{match_kernel_similarity, similarity_heatmap, FeatureTensor, SpatialKernel};
use emk::feature_backend::Patch;
use emk::io::write_pgm;
use emk::model::{Model, ModelConfig};
use emk::position_encoding::GridPos;
use ndarray::Array2;

fn blob(cx: f64, cy: f64) -> Array2<f64> {
    Array2::from_shape_fn((32, 32), |(y, x)| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-(dx * dx + dy * dy) / 18.0).exp()
    })
}

fn main() -> emk::Result<()> {
    let model = Model::random(&ModelConfig::default(), 2)?;
    let a = model.features(&Patch::new(blob(12.0, 12.0))?)?;
    let b = model.features(&Patch::new(blob(20.0, 20.0))?)?;
    let tables = model.tables(model.n())?;
    let kernel = SpatialKernel::new(model.head(), &tables);
    let (ra, rb): (Vec<&FeatureTensor>, Vec<&FeatureTensor>) = (a.iter().collect(), b.iter().collect());

    let sim = match_kernel_similarity(&kernel, &ra, &rb)?;
    let da = model.describe_tensors(&a)?;
    let db = model.describe_tensors(&b)?;
    println!("map total {:.6}, raw descriptor product {:.6}", sim.total, da.raw().dot(db.raw()));

    let heat = similarity_heatmap(&kernel, &ra, &rb, GridPos::new(3, 3))?;
    let out = std::env::temp_dir().join("emk-simmap.pgm");
    write_pgm(&out, &heat)?;
    for row in heat.rows() {
        println!("{}", row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "));
    }
    println!("heat-map written to {}", out.display());
    Ok(())
}
