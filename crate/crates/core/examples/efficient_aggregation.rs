//! Spatially encoded descriptor computed both ways, plus the transient
//! memory each approach needs.

use emk::aggregation::{
    describe_spatial_efficient, memory_reduction_factor, spatial_raw_efficient, spatial_raw_naive, DescriptorHead,
    FeatureTensor, HeadVariant,
};
use emk::feature_backend::random_orthogonal_init;
use emk::position_encoding::{FeatureMapPair, GridGeometry, PositionTable};
use ndarray::Array1;
use rand::{Rng, SeedableRng};

fn main() -> emk::Result<()> {
    let (n, d, s, out) = (8, 32, 2, 64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let geom = GridGeometry::new(n)?;
    let maps = FeatureMapPair::uniform(8.0, s)?;

    for variant in [HeadVariant::Xy, HeadVariant::RhoTheta, HeadVariant::Combined] {
        let tables = variant
            .systems()
            .iter()
            .map(|&sys| PositionTable::build(sys, &geom, &maps, true))
            .collect::<emk::Result<Vec<_>>>()?;
        let projection = random_orthogonal_init(out, variant.encoding_dim(d, s), 3)?;
        let head = DescriptorHead::new(variant, d, s, projection, Array1::zeros(out))?;
        let phis: Vec<FeatureTensor> = tables
            .iter()
            .map(|_| FeatureTensor::from_vec(n, d, (0..n * n * d).map(|_| rng.random::<f64>()).collect()))
            .collect::<emk::Result<_>>()?;
        let refs: Vec<&FeatureTensor> = phis.iter().collect();
        let fast = spatial_raw_efficient(&head, &tables, &refs)?;
        let slow = spatial_raw_naive(&head, &tables, &refs)?;
        let gap = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let desc = describe_spatial_efficient(&head, &tables, &refs)?;
        println!("{variant:>9}: D={} max |efficient - naive| = {gap:.2e}", desc.dim());
    }

    for (n, d, s) in [(8, 128, 1), (8, 128, 2), (16, 128, 2)] {
        println!("n={n} d={d} s={s}: memory reduced {:.1}x", memory_reduction_factor(n, d, s));
    }
    Ok(())
}
