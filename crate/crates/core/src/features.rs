//! Full feature rasters on the analysis grid: climate features computed on
//! the climate grid and resampled bilinearly, plus the terrain stack.

use std::collections::BTreeMap;

use crate::climate::{climate_feature_rasters, ClimateStacks};
use crate::error::{Error, Result};
use crate::grid::{regrid, GridSpec, Raster, Resample};
use crate::terrain::{terrain_feature_stack, ScaleSet};

/// Climate features of `target` against the `historical` baseline, on `grid`.
pub fn climate_on_grid(historical: &ClimateStacks, target: &ClimateStacks, grid: &GridSpec) -> Result<Vec<(String, Raster)>> {
    climate_feature_rasters(historical, target)?
        .into_iter()
        .map(|(name, r)| Ok((name, regrid(&r, grid, Resample::Bilinear)?)))
        .collect()
}

/// Terrain features of `dem` on `grid`.
pub fn terrain_on_grid(dem: &Raster, grid: &GridSpec, scales: &ScaleSet) -> Result<Vec<(String, Raster)>> {
    let dem = regrid(dem, grid, Resample::Bilinear)?;
    terrain_feature_stack(&dem, scales)
}

/// Every feature raster for one climate period.
pub fn feature_rasters(
    historical: &ClimateStacks,
    target: &ClimateStacks,
    terrain: &[(String, Raster)],
    grid: &GridSpec,
) -> Result<BTreeMap<String, Raster>> {
    let mut out: BTreeMap<String, Raster> = climate_on_grid(historical, target, grid)?.into_iter().collect();
    for (name, r) in terrain {
        if r.spec != *grid {
            return Err(Error::DimensionMismatch(format!("terrain feature `{name}` is not on the analysis grid")));
        }
        out.insert(name.clone(), r.clone());
    }
    Ok(out)
}
