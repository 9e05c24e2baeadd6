//! Integrated gradients for one test sample against the all-zero baseline,
//! with the completeness check.

#[path = "common/mod.rs"]
mod common;

use cropsuit::attribution::integrated_gradients;
use cropsuit::dataset::FeatureLayout;
use cropsuit::metrics::argmax;
use cropsuit::models::{train, Arch, Model, TrainConfig};

fn main() -> cropsuit::Result<()> {
    let (train_t, test_t) = common::tables(&common::small_world(5)?)?;
    let model = Model::init(Arch::mlp(FeatureLayout::default().len(), &[64, 64]), 2)?;
    let fit = model.inputs(&train_t)?;
    let held = model.inputs(&test_t)?;
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let model = train(model, (&fit.data, train_t.labels()?), (&held.data, test_t.labels()?), &cfg)?.model;

    let x = held.sample(0);
    let target = argmax(&model.predict_proba(x, 1)?);
    let zeros = vec![0.0; x.len()];
    for steps in [16, 64, 256] {
        let a = integrated_gradients(&model, x, &zeros, target, steps)?;
        println!("m = {steps:>3}: F(x) - F(0) = {:+.4}, completeness residual {:.2e}", a.f_input - a.f_baseline, a.residual());
    }
    let a = integrated_gradients(&model, x, &zeros, target, 256)?;
    let mut top: Vec<(usize, f64)> = a.values.iter().copied().enumerate().collect();
    top.sort_by(|p, q| q.1.abs().total_cmp(&p.1.abs()));
    for (k, v) in top.into_iter().take(6) {
        println!("{:<14} {v:+.4}", held.coord_name(k));
    }
    Ok(())
}
