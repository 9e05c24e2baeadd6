//! From-scratch classifiers over the 4 land classes: multinomial logistic
//! regression, a ReLU MLP and a single-layer LSTM, all with analytic
//! batched gradients.

mod adam;
mod io;
mod linalg;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FeatureTable, SEQ_LEN};
use crate::error::{Error, Result};
use crate::grid::NUM_CLASSES;
use linalg::{add_rows, gemm, sum_rows, Mat};

pub use adam::AdamState;
pub use io::ModelManifest;
pub use train::{crossval, stratified_folds, train, CrossvalReport, EpochRecord, TrainConfig, TrainOutcome};

/// Rows per work unit in batched passes. Fixed so that results do not
/// depend on the thread count.
const CHUNK: usize = 128;
const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax of one row of logits, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// `-ln p[label]` with the probability clamped away from zero.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Mlp,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Logreg, ModelKind::Mlp, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Mlp => "mlp",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}` (expected logreg, mlp or lstm)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Logreg { inputs: usize },
    Mlp { inputs: usize, hidden: Vec<usize> },
    Lstm { channels: usize, steps: usize, hidden: usize },
}

impl Arch {
    pub fn logreg(inputs: usize) -> Self {
        Arch::Logreg { inputs }
    }

    pub fn mlp(inputs: usize, hidden: &[usize]) -> Self {
        Arch::Mlp {
            inputs,
            hidden: hidden.to_vec(),
        }
    }

    pub fn lstm(channels: usize, hidden: usize) -> Self {
        Arch::Lstm {
            channels,
            steps: SEQ_LEN,
            hidden,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Arch::Logreg { .. } => ModelKind::Logreg,
            Arch::Mlp { .. } => ModelKind::Mlp,
            Arch::Lstm { .. } => ModelKind::Lstm,
        }
    }

    /// Values per sample: flat features, or `steps × channels` for the LSTM.
    pub fn input_len(&self) -> usize {
        match self {
            Arch::Logreg { inputs } | Arch::Mlp { inputs, .. } => *inputs,
            Arch::Lstm { channels, steps, .. } => channels * steps,
        }
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, Arch::Lstm { .. })
    }

    fn dense_sizes(&self) -> Vec<usize> {
        match self {
            Arch::Logreg { inputs } => vec![*inputs, NUM_CLASSES],
            Arch::Mlp { inputs, hidden } => {
                let mut s = vec![*inputs];
                s.extend(hidden);
                s.push(NUM_CLASSES);
                s
            }
            Arch::Lstm { .. } => unreachable!("not a dense stack"),
        }
    }

    /// Named parameter blocks in storage order. Weight matrices are stored
    /// row-major as `fan_in × fan_out`.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Arch::Lstm { channels, hidden, .. } => {
                let g = 4 * hidden;
                vec![
                    ("W_x".into(), vec![*channels, g]),
                    ("W_h".into(), vec![*hidden, g]),
                    ("b".into(), vec![g]),
                    ("W_out".into(), vec![*hidden, NUM_CLASSES]),
                    ("b_out".into(), vec![NUM_CLASSES]),
                ]
            }
            _ => {
                let s = self.dense_sizes();
                s.windows(2)
                    .enumerate()
                    .flat_map(|(l, w)| {
                        [
                            (format!("W{}", l + 1), vec![w[0], w[1]]),
                            (format!("b{}", l + 1), vec![w[1]]),
                        ]
                    })
                    .collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Arch::Logreg { inputs } => *inputs > 0,
            Arch::Mlp { inputs, hidden } => *inputs > 0 && hidden.iter().all(|&h| h > 0),
            Arch::Lstm { channels, steps, hidden } => *channels > 0 && *steps > 0 && *hidden > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("architecture has an empty dimension: {self:?}")))
        }
    }
}

/// Per-layer state kept from the forward pass for backpropagation.
enum Cache {
    /// Post-activation outputs of each hidden layer.
    Dense(Vec<Vec<f64>>),
    /// Activated gates `[i f g o]`, cell states and hidden states per step
    /// (`cells[0]`, `hiddens[0]` are the zero initial state).
    Lstm {
        gates: Vec<Vec<f64>>,
        cells: Vec<Vec<f64>>,
        hiddens: Vec<Vec<f64>>,
    },
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn split_blocks<'a>(arch: &Arch, mut p: &'a [f64]) -> Vec<&'a [f64]> {
    arch.blocks()
        .iter()
        .map(|(_, s)| {
            let (head, tail) = p.split_at(s.iter().product());
            p = tail;
            head
        })
        .collect()
}

fn split_blocks_mut<'a>(arch: &Arch, mut p: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    arch.blocks()
        .iter()
        .map(|(_, s)| {
            let (head, tail) = std::mem::take(&mut p).split_at_mut(s.iter().product());
            p = tail;
            head
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Arch,
    pub params: Vec<f64>,
}

impl Model {
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let params = vec![0.0; arch.param_count()];
        Ok(Model { arch, params })
    }

    /// Uniform `±sqrt(1/fan_in)` weights, zero biases, LSTM forget bias 1.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let mut model = Model::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = model.arch.blocks();
        let lstm_hidden = match model.arch {
            Arch::Lstm { hidden, .. } => Some(hidden),
            _ => None,
        };
        for ((name, shape), block) in blocks.iter().zip(split_blocks_mut(&model.arch, &mut model.params)) {
            if shape.len() == 2 {
                let bound = (1.0 / shape[0] as f64).sqrt();
                block.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            } else if name == "b" {
                let h = lstm_hidden.expect("gate bias only exists in the LSTM");
                block[h..2 * h].fill(1.0);
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind()
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let idx = self.arch.blocks().iter().position(|(n, _)| n == name)?;
        Some(split_blocks(&self.arch, &self.params)[idx])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let idx = self.arch.blocks().iter().position(|(n, _)| n == name)?;
        Some(split_blocks_mut(&self.arch, &mut self.params).swap_remove(idx))
    }

    fn check_input(&self, x: &[f64], n: usize) -> Result<()> {
        if x.len() != n * self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input values for {n} samples of width {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, Cache) {
        match &self.arch {
            Arch::Lstm { channels, steps, hidden } => self.forward_lstm(x, n, *channels, *steps, *hidden),
            arch => self.forward_dense(x, n, &arch.dense_sizes()),
        }
    }

    fn forward_dense(&self, x: &[f64], n: usize, sizes: &[usize]) -> (Vec<f64>, Cache) {
        let p = split_blocks(&self.arch, &self.params);
        let layers = sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers - 1);
        for l in 0..layers {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut z = vec![0.0; n * sizes[l + 1]];
            gemm(Mat::new(input, n, sizes[l]), Mat::new(p[2 * l], sizes[l], sizes[l + 1]), 0.0, &mut z);
            add_rows(&mut z, p[2 * l + 1]);
            if l + 1 == layers {
                return (z, Cache::Dense(acts));
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(z);
        }
        unreachable!("dense stack has at least one layer")
    }

    fn forward_lstm(&self, x: &[f64], n: usize, ch: usize, steps: usize, h: usize) -> (Vec<f64>, Cache) {
        let p = split_blocks(&self.arch, &self.params);
        let (wx, wh, b, wo, bo) = (p[0], p[1], p[2], p[3], p[4]);
        let g4 = 4 * h;
        let mut gates = Vec::with_capacity(steps);
        let mut cells = vec![vec![0.0; n * h]];
        let mut hiddens = vec![vec![0.0; n * h]];
        for t in 0..steps {
            let mut z = vec![0.0; n * g4];
            gemm(Mat::strided(&x[t * ch..], n, ch, steps * ch), Mat::new(wx, ch, g4), 0.0, &mut z);
            gemm(Mat::new(&hiddens[t], n, h), Mat::new(wh, h, g4), 1.0, &mut z);
            add_rows(&mut z, b);
            let mut c = vec![0.0; n * h];
            let mut hn = vec![0.0; n * h];
            for r in 0..n {
                let zr = &mut z[r * g4..(r + 1) * g4];
                for k in 0..h {
                    let i = sigmoid(zr[k]);
                    let f = sigmoid(zr[h + k]);
                    let g = zr[2 * h + k].tanh();
                    let o = sigmoid(zr[3 * h + k]);
                    zr[k] = i;
                    zr[h + k] = f;
                    zr[2 * h + k] = g;
                    zr[3 * h + k] = o;
                    let cv = f * cells[t][r * h + k] + i * g;
                    c[r * h + k] = cv;
                    hn[r * h + k] = o * cv.tanh();
                }
            }
            gates.push(z);
            cells.push(c);
            hiddens.push(hn);
        }
        let mut logits = vec![0.0; n * NUM_CLASSES];
        gemm(Mat::new(&hiddens[steps], n, h), Mat::new(wo, h, NUM_CLASSES), 0.0, &mut logits);
        add_rows(&mut logits, bo);
        (logits, Cache::Lstm { gates, cells, hiddens })
    }

    /// Backpropagate `dlogits` (`n × 4`). Parameter gradients are added to
    /// `grad_params`; input gradients overwrite `grad_input`.
    fn backward(
        &self,
        x: &[f64],
        n: usize,
        cache: &Cache,
        dlogits: &[f64],
        grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        match (&self.arch, cache) {
            (Arch::Lstm { channels, steps, hidden }, Cache::Lstm { gates, cells, hiddens }) => self.backward_lstm(
                x,
                n,
                (*channels, *steps, *hidden),
                (gates, cells, hiddens),
                dlogits,
                grad_params,
                grad_input,
            ),
            (arch, Cache::Dense(acts)) => {
                self.backward_dense(x, n, &arch.dense_sizes(), acts, dlogits, grad_params, grad_input)
            }
            _ => unreachable!("cache built by the same architecture"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_dense(
        &self,
        x: &[f64],
        n: usize,
        sizes: &[usize],
        acts: &[Vec<f64>],
        dlogits: &[f64],
        mut grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        let p = split_blocks(&self.arch, &self.params);
        let mut gp = grad_params.as_deref_mut().map(|g| split_blocks_mut(&self.arch, g));
        let layers = sizes.len() - 1;
        let mut dz = dlogits.to_vec();
        for l in (0..layers).rev() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            if let Some(gp) = gp.as_mut() {
                gemm(
                    Mat::new(input, n, sizes[l]).t(),
                    Mat::new(&dz, n, sizes[l + 1]),
                    1.0,
                    gp[2 * l],
                );
                sum_rows(&dz, gp[2 * l + 1]);
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let mut din = vec![0.0; n * sizes[l]];
            gemm(
                Mat::new(&dz, n, sizes[l + 1]),
                Mat::new(p[2 * l], sizes[l], sizes[l + 1]).t(),
                0.0,
                &mut din,
            );
            if l == 0 {
                if let Some(gi) = grad_input {
                    gi.copy_from_slice(&din);
                }
                break;
            }
            for (d, &a) in din.iter_mut().zip(&acts[l - 1]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = din;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_lstm(
        &self,
        x: &[f64],
        n: usize,
        (ch, steps, h): (usize, usize, usize),
        (gates, cells, hiddens): (&[Vec<f64>], &[Vec<f64>], &[Vec<f64>]),
        dlogits: &[f64],
        mut grad_params: Option<&mut [f64]>,
        mut grad_input: Option<&mut [f64]>,
    ) {
        let p = split_blocks(&self.arch, &self.params);
        let (wx, wh, wo) = (p[0], p[1], p[3]);
        let mut gp = grad_params.as_deref_mut().map(|g| split_blocks_mut(&self.arch, g));
        let g4 = 4 * h;
        if let Some(gp) = gp.as_mut() {
            gemm(
                Mat::new(&hiddens[steps], n, h).t(),
                Mat::new(dlogits, n, NUM_CLASSES),
                1.0,
                gp[3],
            );
            sum_rows(dlogits, gp[4]);
        }
        let mut dh = vec![0.0; n * h];
        gemm(Mat::new(dlogits, n, NUM_CLASSES), Mat::new(wo, h, NUM_CLASSES).t(), 0.0, &mut dh);
        let mut dc = vec![0.0; n * h];
        let mut dz = vec![0.0; n * g4];
        let mut dx = vec![0.0; n * ch];
        for t in (0..steps).rev() {
            let gt = &gates[t];
            for r in 0..n {
                for k in 0..h {
                    let q = r * h + k;
                    let (i, f, g, o) = (gt[r * g4 + k], gt[r * g4 + h + k], gt[r * g4 + 2 * h + k], gt[r * g4 + 3 * h + k]);
                    let tc = cells[t + 1][q].tanh();
                    let dct = dc[q] + dh[q] * o * (1.0 - tc * tc);
                    let dzr = &mut dz[r * g4..(r + 1) * g4];
                    dzr[k] = dct * g * i * (1.0 - i);
                    dzr[h + k] = dct * cells[t][q] * f * (1.0 - f);
                    dzr[2 * h + k] = dct * i * (1.0 - g * g);
                    dzr[3 * h + k] = dh[q] * tc * o * (1.0 - o);
                    dc[q] = dct * f;
                }
            }
            let xt = Mat::strided(&x[t * ch..], n, ch, steps * ch);
            if let Some(gp) = gp.as_mut() {
                gemm(xt.t(), Mat::new(&dz, n, g4), 1.0, gp[0]);
                gemm(Mat::new(&hiddens[t], n, h).t(), Mat::new(&dz, n, g4), 1.0, gp[1]);
                sum_rows(&dz, gp[2]);
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                gemm(Mat::new(&dz, n, g4), Mat::new(wx, ch, g4).t(), 0.0, &mut dx);
                for r in 0..n {
                    let dst = r * steps * ch + t * ch;
                    gi[dst..dst + ch].copy_from_slice(&dx[r * ch..(r + 1) * ch]);
                }
            }
            if t > 0 {
                gemm(Mat::new(&dz, n, g4), Mat::new(wh, h, g4).t(), 0.0, &mut dh);
            }
        }
    }

    fn chunks(&self, n: usize) -> Vec<(usize, usize)> {
        (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect()
    }

    /// `n × 4` logits for `n` samples laid out back to back.
    pub fn logits(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_input(x, n)?;
        let w = self.input_len();
        let parts: Vec<Vec<f64>> = self
            .chunks(n)
            .into_par_iter()
            .map(|(s, e)| self.forward(&x[s * w..e * w], e - s).0)
            .collect();
        Ok(parts.concat())
    }

    /// `n × 4` class probabilities.
    pub fn predict_proba(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut out = self.logits(x, n)?;
        out.chunks_mut(NUM_CLASSES).for_each(softmax_in_place);
        Ok(out)
    }

    /// Mean cross-entropy over the samples and its exact parameter gradient.
    pub fn loss_and_grad(&self, x: &[f64], labels: &[u8], n: usize) -> Result<(f64, Vec<f64>)> {
        self.check_input(x, n)?;
        if labels.len() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!("{} labels for {n} samples", labels.len())));
        }
        let w = self.input_len();
        let parts: Vec<(f64, Vec<f64>)> = self
            .chunks(n)
            .into_par_iter()
            .map(|(s, e)| {
                let m = e - s;
                let xs = &x[s * w..e * w];
                let (mut d, cache) = self.forward(xs, m);
                let mut loss = 0.0;
                for (row, &y) in d.chunks_mut(NUM_CLASSES).zip(&labels[s..e]) {
                    softmax_in_place(row);
                    loss += cross_entropy(row, y as usize);
                    row[y as usize] -= 1.0;
                }
                let mut grad = vec![0.0; self.params.len()];
                self.backward(xs, m, &cache, &d, Some(&mut grad), None);
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    /// Gradient of `Σ_r dlogits[r]·logits(x_r)` with respect to each input
    /// value, `n × input_len`.
    pub fn input_gradient(&self, x: &[f64], n: usize, dlogits: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x, n)?;
        if dlogits.len() != n * NUM_CLASSES {
            return Err(Error::DimensionMismatch("dlogits must be n × 4".into()));
        }
        let w = self.input_len();
        let parts: Vec<Vec<f64>> = self
            .chunks(n)
            .into_par_iter()
            .map(|(s, e)| {
                let m = e - s;
                let xs = &x[s * w..e * w];
                let (_, cache) = self.forward(xs, m);
                let mut gi = vec![0.0; m * w];
                self.backward(xs, m, &cache, &dlogits[s * NUM_CLASSES..e * NUM_CLASSES], None, Some(&mut gi));
                gi
            })
            .collect();
        Ok(parts.concat())
    }

    /// Model inputs for every row of a feature table: flat rows, or the
    /// 12-step sequence view for the LSTM.
    pub fn inputs(&self, table: &FeatureTable) -> Result<ModelInputs> {
        ModelInputs::build(&self.arch, table)
    }
}

/// Samples laid out for a model, with the table column behind each input
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub n: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub coord_column: Vec<usize>,
    pub columns: Vec<String>,
}

impl ModelInputs {
    pub fn build(arch: &Arch, table: &FeatureTable) -> Result<Self> {
        let (data, coord_column) = if arch.is_sequence() {
            let seq = dataset::to_sequences(table)?;
            (seq.data, seq.layout.source_column)
        } else {
            (table.values.clone(), (0..table.width()).collect())
        };
        if coord_column.len() != arch.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} inputs per sample, table provides {}",
                arch.input_len(),
                coord_column.len()
            )));
        }
        Ok(ModelInputs {
            n: table.rows(),
            width: coord_column.len(),
            data,
            coord_column,
            columns: table.columns.clone(),
        })
    }

    pub fn sample(&self, r: usize) -> &[f64] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    /// Name of the table column behind input coordinate `k`.
    pub fn coord_name(&self, k: usize) -> &str {
        &self.columns[self.coord_column[k]]
    }
}
