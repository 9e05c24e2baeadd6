//! Generate a small planted world and show what the labeling rule does under
//! each warming scenario.

#[path = "common/mod.rs"]
mod common;

fn main() -> cropsuit::Result<()> {
    let world = common::small_world(42)?;
    let m = &world.manifest;
    println!("grid {}x{}, {} baseline years", m.config.width, m.config.height, m.config.years);
    println!("rule drivers {:?}", m.drivers);
    println!("thresholds u0 {:.3} w1 {:.3} w2 {:.3}", m.rule.u0, m.rule.w1, m.rule.w2);
    println!("observed class counts {:?}", m.class_counts);
    for (slug, counts) in &m.scenario_truth_counts {
        println!("{slug:<32} {counts:?}");
    }
    Ok(())
}
