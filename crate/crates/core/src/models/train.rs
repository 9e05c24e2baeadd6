use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, Arch, Model};
use crate::dataset::shuffled_by_class;
use crate::error::{Error, Result};
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 512,
            patience: 10,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub history: Vec<EpochRecord>,
}

fn check_split(model: &Model, x: &[f64], y: &[u8], what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    if x.len() != y.len() * model.input_len() {
        return Err(Error::DimensionMismatch(format!(
            "{what} split: {} values for {} samples of width {}",
            x.len(),
            y.len(),
            model.input_len()
        )));
    }
    Ok(())
}

pub(crate) fn predict_labels(model: &Model, x: &[f64], n: usize) -> Result<Vec<u8>> {
    let logits = model.logits(x, n)?;
    Ok(logits.chunks(4).map(|r| metrics::argmax(r) as u8).collect())
}

/// Mini-batch Adam on mean cross-entropy with early stopping on validation
/// macro-F1. Shuffling is seeded by `cfg.seed`; the initial parameters are
/// taken as given.
pub fn train(
    model: Model,
    (x_train, y_train): (&[f64], &[u8]),
    (x_val, y_val): (&[f64], &[u8]),
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_split(&model, x_train, y_train, "training")?;
    check_split(&model, x_val, y_val, "validation")?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let w = model.input_len();
    let n = y_train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut current = model;
    let mut best = current.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut bx = Vec::with_capacity(cfg.batch_size.min(n) * w);
    let mut by = Vec::with_capacity(cfg.batch_size.min(n));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &r in batch {
                bx.extend_from_slice(&x_train[r * w..(r + 1) * w]);
                by.push(y_train[r]);
            }
            let (loss, grad) = current.loss_and_grad(&bx, &by, batch.len())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch} (step {}); check input scaling",
                    adam.step + 1
                )));
            }
            loss_sum += loss * batch.len() as f64;
            adam.update(&mut current.params, &grad);
        }
        let pred = predict_labels(&current, x_val, y_val.len())?;
        let f1 = metrics::macro_f1(y_val, &pred)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_macro_f1: f1,
        });
        log::debug!("epoch {epoch}: loss {:.5}, val macro-F1 {f1:.4}", loss_sum / n as f64);
        if f1 > best_f1 {
            best_f1 = f1;
            best_epoch = epoch;
            best = current.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_val_macro_f1: best_f1,
        history,
    })
}

/// Stratified folds: each class is shuffled and dealt round-robin, the deal
/// continuing across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > labels.len() {
        return Err(Error::InvalidArgument(format!("{k} folds for {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for rows in shuffled_by_class(labels, &mut rng) {
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub candidates: Vec<Arch>,
    /// Mean held-out macro-F1 per candidate.
    pub mean_macro_f1: Vec<f64>,
    pub best: usize,
}

fn gather(x: &[f64], y: &[u8], w: usize, rows: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let mut gx = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        gx.extend_from_slice(&x[r * w..(r + 1) * w]);
    }
    (gx, rows.iter().map(|&r| y[r]).collect())
}

/// Score one candidate on one fold: train on the other folds with the
/// held-out fold as validation, return held-out macro-F1 of the best epoch.
pub fn fold_score(arch: &Arch, (x, y): (&[f64], &[u8]), folds: &[Vec<usize>], fold: usize, cfg: &TrainConfig) -> Result<f64> {
    let w = arch.input_len();
    let rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    let (tx, ty) = gather(x, y, w, &rest);
    let (vx, vy) = gather(x, y, w, &folds[fold]);
    let model = Model::init(arch.clone(), cfg.seed)?;
    let out = train(model, (&tx, &ty), (&vx, &vy), cfg)?;
    let pred = predict_labels(&out.model, &vx, vy.len())?;
    metrics::macro_f1(&vy, &pred)
}

/// k-fold model selection. Ties on mean macro-F1 go to the candidate with
/// fewer parameters, then to the earlier one.
pub fn crossval(candidates: &[Arch], (x, y): (&[f64], &[u8]), k: usize, cfg: &TrainConfig) -> Result<CrossvalReport> {
    if candidates.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let folds = stratified_folds(y, k, cfg.seed)?;
    let mut mean_macro_f1 = Vec::with_capacity(candidates.len());
    for arch in candidates {
        let mut sum = 0.0;
        for fold in 0..k {
            sum += fold_score(arch, (x, y), &folds, fold, cfg)?;
        }
        mean_macro_f1.push(sum / k as f64);
    }
    let mut best = 0;
    for c in 1..candidates.len() {
        let (s, b) = (mean_macro_f1[c], mean_macro_f1[best]);
        if s > b || (s == b && candidates[c].param_count() < candidates[best].param_count()) {
            best = c;
        }
    }
    Ok(CrossvalReport {
        candidates: candidates.to_vec(),
        mean_macro_f1,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in 0..n {
            let c = (r % 4) as u8;
            let (cx, cy) = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)][c as usize];
            x.push(cx + rng.random_range(-0.4..0.4));
            x.push(cy + rng.random_range(-0.4..0.4));
            y.push(c);
        }
        (x, y)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            patience: 200,
            lr: 0.05,
            seed: 1,
        }
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (x, y) = separable(80, 3);
        let m = Model::init(Arch::logreg(2), 0).unwrap();
        let out = train(m, (&x, &y), (&x, &y), &quick()).unwrap();
        assert_eq!(predict_labels(&out.model, &x, 80).unwrap(), y);
        assert_eq!(out.best_val_macro_f1, 1.0);
    }

    #[test]
    fn gradient_vanishes_at_the_convex_optimum() {
        // Identical inputs with labels 0,0,1,2,3: the optimum predicts
        // p = (0.4, 0.2, 0.2, 0.2), a finite point.
        let x = [1.0; 5];
        let y = [0, 0, 1, 2, 3];
        let mut m = Model::init(Arch::logreg(1), 9).unwrap();
        for _ in 0..2000 {
            let (_, g) = m.loss_and_grad(&x, &y, 5).unwrap();
            m.params.iter_mut().zip(&g).for_each(|(p, g)| *p -= 2.0 * g);
        }
        let (_, g) = m.loss_and_grad(&x, &y, 5).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
        let p = m.predict_proba(&[1.0], 1).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn logreg_loss_non_increasing_in_first_epoch() {
        let (x, y) = separable(400, 5);
        let mut m = Model::init(Arch::logreg(2), 2).unwrap();
        let mut adam = AdamState::new(m.params.len(), 1e-4);
        let mut prev = m.loss_and_grad(&x, &y, 400).unwrap().0;
        for batch in 0..400 / 32 {
            let rows = batch * 32..(batch + 1) * 32;
            let (_, g) = m.loss_and_grad(&x[rows.start * 2..rows.end * 2], &y[rows], 32).unwrap();
            adam.update(&mut m.params, &g);
            let now = m.loss_and_grad(&x, &y, 400).unwrap().0;
            assert!(now <= prev, "{now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (x, y) = separable(60, 7);
        let run = |seed| {
            let m = Model::init(Arch::mlp(2, &[5]), 3).unwrap();
            let cfg = TrainConfig { seed, epochs: 5, ..quick() };
            train(m, (&x, &y), (&x[..40], &y[..20]), &cfg).unwrap()
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_ne!(a.model, run(2).model);
    }

    #[test]
    fn empty_and_non_finite_errors() {
        let m = Model::zeros(Arch::logreg(2)).unwrap();
        assert!(train(m.clone(), (&[], &[]), (&[0.0, 0.0], &[0]), &quick()).is_err());
        let x = [f64::NAN, 0.0];
        let err = train(m, (&x, &[0]), (&x, &[0]), &quick()).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        let (x, y) = separable(80, 3);
        let m = Model::init(Arch::logreg(2), 0).unwrap();
        let cfg = TrainConfig { patience: 3, ..quick() };
        let out = train(m, (&x, &y), (&x, &y), &cfg).unwrap();
        assert!(out.history.len() <= out.best_epoch + 3);
        let best = out.history.iter().map(|e| e.val_macro_f1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, out.best_val_macro_f1);
    }

    #[test]
    fn folds_partition_and_stratify() {
        let y: Vec<u8> = (0..40).map(|r| (r % 4) as u8).collect();
        let folds = stratified_folds(&y, 5, 2).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 8);
            for c in 0..4u8 {
                assert_eq!(f.iter().filter(|&&r| y[r] == c).count(), 2);
            }
        }
        assert!(stratified_folds(&y, 1, 0).is_err());
        assert!(stratified_folds(&y, 41, 0).is_err());
    }

    #[test]
    fn crossval_single_point_and_leave_one_out() {
        let (x, y) = separable(8, 4);
        let cfg = TrainConfig { epochs: 20, batch_size: 4, ..quick() };
        let one = crossval(&[Arch::logreg(2)], (&x, &y), 2, &cfg).unwrap();
        assert_eq!(one.best, 0);

        let grid = [Arch::mlp(2, &[4]), Arch::logreg(2)];
        let report = crossval(&grid, (&x, &y), 8, &cfg).unwrap();
        // Leave-one-out by hand: train on the other 7 samples, score the one.
        for (c, arch) in grid.iter().enumerate() {
            let mut sum = 0.0;
            let folds = stratified_folds(&y, 8, cfg.seed).unwrap();
            for fold in &folds {
                let held = fold[0];
                let rest: Vec<usize> = folds.iter().flatten().copied().filter(|&r| r != held).collect();
                let tx: Vec<f64> = rest.iter().flat_map(|&r| [x[2 * r], x[2 * r + 1]]).collect();
                let ty: Vec<u8> = rest.iter().map(|&r| y[r]).collect();
                let vx = [x[2 * held], x[2 * held + 1]];
                let m = Model::init(arch.clone(), cfg.seed).unwrap();
                let out = train(m, (&tx, &ty), (&vx, &[y[held]]), &cfg).unwrap();
                let p = predict_labels(&out.model, &vx, 1).unwrap();
                // One sample: macro-F1 is 1/4 when right, 0 when wrong.
                sum += if p[0] == y[held] { 0.25 } else { 0.0 };
            }
            assert_eq!(report.mean_macro_f1[c], sum / 8.0);
        }
        // Equal scores go to the smaller model.
        if report.mean_macro_f1[0] == report.mean_macro_f1[1] {
            assert_eq!(report.best, 1);
        }
    }
}
