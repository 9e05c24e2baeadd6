//! Monthly climate indices for one pixel: thresholds and the SPI fit come from
//! the historical decade and are reused for a warmer scenario.

#[path = "common/mod.rs"]
mod common;

use cropsuit::climate::{climate_features, ClimateBaseline};

fn main() -> cropsuit::Result<()> {
    let world = common::small_world(7)?;
    let idx = world.historical.spec().len() / 2;
    let hist = world.historical.pixel(idx).expect("pixel on the climate grid");
    let baseline = ClimateBaseline::fit(&hist)?;
    let now = climate_features(&baseline, &hist)?;
    let (key, stacks) = world.scenarios.last().expect("at least one scenario");
    let later = climate_features(&baseline, &stacks.pixel(idx).expect("same grid"))?;
    println!("pixel {idx}, scenario {}", key.slug());
    println!("{:<12} {:>10} {:>10}", "feature", "historical", "scenario");
    for name in ["t2m_07", "tp_07", "tasmax_07", "monTstep6_04", "fy_07", "snw_01", "12m_SPI"] {
        let (a, b) = (now.get(name).unwrap_or(f64::NAN), later.get(name).unwrap_or(f64::NAN));
        println!("{name:<12} {a:>10.3} {b:>10.3}");
    }
    Ok(())
}
