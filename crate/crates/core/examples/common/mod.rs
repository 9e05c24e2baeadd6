//! Small planted world turned into scaled train/test tables, shared by the
//! model examples.

use cropsuit::dataset::{self, apply_scaler, fit_scaler, FeatureLayout, FeatureTable};
use cropsuit::features::{feature_rasters, terrain_on_grid};
use cropsuit::synth::{self, SynthConfig, SynthWorld};
use cropsuit::terrain::ScaleSet;

pub fn small_world(seed: u64) -> cropsuit::Result<SynthWorld> {
    let cfg = SynthConfig {
        width: 48,
        height: 48,
        years: 6,
        future_years: 6,
        ..SynthConfig::default()
    };
    synth::generate(&cfg, seed)
}

#[allow(dead_code)]
pub fn tables(world: &SynthWorld) -> cropsuit::Result<(FeatureTable, FeatureTable)> {
    let grid = *world.mask.spec();
    let scales = ScaleSet::default();
    let terrain = terrain_on_grid(&world.dem, &grid, &scales)?;
    let rasters = feature_rasters(&world.historical, &world.historical, &terrain, &grid)?;
    let table = dataset::assemble(&rasters, &FeatureLayout::new(&scales), &world.mask)?;
    let (train, test) = dataset::split(&dataset::undersample(&table, 1)?, 0.75, 2)?;
    let scaler = fit_scaler(&train)?;
    Ok((apply_scaler(&train, &scaler)?, apply_scaler(&test, &scaler)?))
}
