//! Per-class precision, recall, F1 and average precision from predicted
//! probabilities.

use cropsuit::metrics;

fn main() -> cropsuit::Result<()> {
    let y = [0u8, 0, 1, 1, 2, 2, 3, 3, 3, 0];
    let probs = [
        0.7, 0.1, 0.1, 0.1, //
        0.4, 0.4, 0.1, 0.1, //
        0.2, 0.6, 0.1, 0.1, //
        0.5, 0.3, 0.1, 0.1, //
        0.1, 0.1, 0.7, 0.1, //
        0.1, 0.2, 0.3, 0.4, //
        0.0, 0.1, 0.1, 0.8, //
        0.1, 0.1, 0.2, 0.6, //
        0.3, 0.1, 0.1, 0.5, //
        0.6, 0.2, 0.1, 0.1,
    ];
    let report = metrics::evaluate(&y, &probs)?;
    println!("{report}");
    Ok(())
}
