//! Train the three classifiers on a small planted world and report held-out
//! scores.

#[path = "common/mod.rs"]
mod common;

use cropsuit::metrics;
use cropsuit::models::{train, Arch, Model, TrainConfig};
use cropsuit::dataset::FeatureLayout;

fn main() -> cropsuit::Result<()> {
    let (train_t, test_t) = common::tables(&common::small_world(11)?)?;
    let layout = FeatureLayout::default();
    let archs = [
        Arch::logreg(layout.len()),
        Arch::mlp(layout.len(), &[64, 64]),
        Arch::lstm(layout.channels(), 32),
    ];
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    for arch in archs {
        let model = Model::init(arch, 9)?;
        let fit = model.inputs(&train_t)?;
        let held = model.inputs(&test_t)?;
        let out = train(model, (&fit.data, train_t.labels()?), (&held.data, test_t.labels()?), &cfg)?;
        let probs = out.model.predict_proba(&held.data, held.n)?;
        let report = metrics::evaluate(test_t.labels()?, &probs)?;
        println!(
            "{:<6} best epoch {:>2}  macro-F1 {:.3}  accuracy {:.3}",
            out.model.kind(),
            out.best_epoch,
            report.macro_f1,
            report.accuracy
        );
    }
    Ok(())
}
