//! Positional encodings of an 8x8 grid in both coordinate systems.

use emk::position_encoding::{CoordinateSystem, FeatureMapPair, GridGeometry, GridPos, PositionTable};

fn main() -> emk::Result<()> {
    let geom = GridGeometry::new(8)?;
    let maps = FeatureMapPair::uniform(8.0, 2)?;
    println!("center {}, rho_max {:.4}", geom.center(), geom.rho_max());

    for system in [CoordinateSystem::Cartesian, CoordinateSystem::Polar] {
        let table = PositionTable::build(system, &geom, &maps, true)?;
        println!("{system:?}: table {:?}, code dim {}", table.matrix().dim(), table.code_dim());
        for p in [GridPos::new(1, 1), GridPos::new(4, 5), GridPos::new(8, 8)] {
            let (a, b) = geom.angles(system, p)?;
            let row = table.matrix().row(geom.flat_index(p));
            println!(
                "  ({}, {}) angles ({a:.3}, {b:.3}) weight {:.4} |code| {:.4}",
                p.i,
                p.j,
                geom.center_weight(p)?,
                row.dot(&row).sqrt()
            );
        }
    }
    Ok(())
}
