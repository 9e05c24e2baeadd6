//! Average two model projections, compare the ensemble with the observed mask
//! and count classes along a trajectory.

use cropsuit::grid::{ClassMask, GridSpec, Raster};
use cropsuit::scenario::{delta_heatmap, ensemble_average, trajectory_report, ProbabilityMaps, Provenance, ScenarioKey};

fn maps(spec: GridSpec, key: &ScenarioKey, shift: f64) -> cropsuit::Result<ProbabilityMaps> {
    let pixels: Vec<(usize, usize)> = (0..spec.height).flat_map(|i| (0..spec.width).map(move |j| (i, j))).collect();
    let probs: Vec<f64> = pixels
        .iter()
        .flat_map(|&(i, _)| {
            // Northern rows lean toward class 3 as `shift` grows.
            let north = 1.0 - i as f64 / spec.height as f64;
            let p3 = (0.25 + shift * north).min(0.9);
            let rest = (1.0 - p3) / 3.0;
            [rest, rest, rest, p3]
        })
        .collect();
    ProbabilityMaps::from_predictions(spec, &pixels, &probs, Provenance::Scenario(key.clone()))
}

fn main() -> cropsuit::Result<()> {
    let spec = GridSpec::new(8, 8, 60.0, 58.0, 0.125)?;
    let mask = ClassMask::from_raster(Raster::from_fn(spec, |i, j| ((i + j) % 4) as f64))?;
    let a = ScenarioKey::new("model-a", "SSP5-8.5", "2040-2050")?;
    let b = ScenarioKey::new("model-b", "SSP5-8.5", "2040-2050")?;
    let (pa, pb) = (maps(spec, &a, 0.6)?, maps(spec, &b, 0.4)?);
    let ens = ensemble_average(&[pa.clone(), pb.clone()])?;
    let delta = delta_heatmap(&ens, &mask)?;
    let q = spec.height / 4;
    println!(
        "class-3 change: north {:+.3}, south {:+.3}",
        delta.band_mean(3, 0..q).unwrap_or(f64::NAN),
        delta.band_mean(3, spec.height - q..spec.height).unwrap_or(f64::NAN)
    );
    for row in trajectory_report(&mask, &[(a, pa), (b, pb)])? {
        println!("{} {} class {} {}", row.ssp, row.period, row.class, row.count);
    }
    Ok(())
}
