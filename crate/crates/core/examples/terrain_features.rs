//! Elevation plus ten morphometrics at four smoothing scales.

#[path = "common/mod.rs"]
mod common;

use cropsuit::terrain::{terrain_feature_stack, ScaleSet};

fn main() -> cropsuit::Result<()> {
    let world = common::small_world(3)?;
    let stack = terrain_feature_stack(&world.dem, &ScaleSet::default())?;
    println!("{} terrain features", stack.len());
    for (name, r) in stack.iter().filter(|(n, _)| n == "DEM_1km" || n.starts_with("morf_1_")) {
        let (lo, hi) = r.valid_range().unwrap_or((f64::NAN, f64::NAN));
        println!("{name:<12} min {lo:>9.3} max {hi:>9.3}");
    }
    Ok(())
}
