//! Every stage on a small synthetic world, written under the directory given
//! as the first argument (default `small-run`).

use cropsuit::pipeline::{self, RunConfig};
use cropsuit::synth::SynthConfig;

fn main() -> cropsuit::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "small-run".into());
    let mut cfg = RunConfig {
        out: out.into(),
        synth: SynthConfig {
            width: 32,
            height: 32,
            years: 4,
            future_years: 4,
            ..SynthConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.train.optimizer.epochs = 10;
    cfg.attribute.max_pixels = 8;
    pipeline::run_all(&cfg)?;
    for (kind, report) in pipeline::run_eval(&cfg)? {
        println!("{kind}: macro-F1 {:.3}", report.macro_f1);
    }
    println!("outputs in {}", cfg.out.display());
    Ok(())
}
