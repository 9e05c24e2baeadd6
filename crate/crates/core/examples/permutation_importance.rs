//! Rank the LSTM input channels by the macro-precision drop when each is
//! shuffled across samples.

#[path = "common/mod.rs"]
mod common;

use cropsuit::attribution::{permutation_importance, Score};
use cropsuit::dataset::FeatureLayout;
use cropsuit::models::{train, Arch, Model, TrainConfig};

fn main() -> cropsuit::Result<()> {
    let (train_t, test_t) = common::tables(&common::small_world(21)?)?;
    let model = Model::init(Arch::lstm(FeatureLayout::default().channels(), 32), 1)?;
    let fit = model.inputs(&train_t)?;
    let held = model.inputs(&test_t)?;
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let model = train(model, (&fit.data, train_t.labels()?), (&held.data, test_t.labels()?), &cfg)?.model;
    let report = permutation_importance(&model, &held, test_t.labels()?, 10, 3, Score::MacroPrecision)?;
    println!("reference macro precision {:.3}", report.reference);
    for f in report.ranked().into_iter().take(8) {
        println!("{:<14} {:+.4}", f.feature, f.importance);
    }
    if let Some(w) = report.get("sfcWindmax") {
        println!("pure-noise channel sfcWindmax {:+.4}", w.importance);
    }
    Ok(())
}
