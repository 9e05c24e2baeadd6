//! Model interpretation: permutation importance per input channel and
//! integrated gradients averaged over geographic regions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::climate::MONTHLY_VARIABLES;
use crate::dataset::FeatureTable;
use crate::error::{Error, Result};
use crate::grid::{self, GridSpec, NUM_CLASSES};
use crate::metrics;
use crate::models::{Model, ModelInputs};

/// Channel a table column belongs to: the variable for monthly columns
/// (`t2m_07` → `t2m`), the column itself otherwise.
pub fn channel_of(column: &str) -> &str {
    if let Some((var, month)) = column.rsplit_once('_') {
        if month.len() == 2 && month.bytes().all(|b| b.is_ascii_digit()) && MONTHLY_VARIABLES.contains(&var) {
            return var;
        }
    }
    column
}

/// Input coordinates grouped by channel, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGroups {
    pub names: Vec<String>,
    pub coords: Vec<Vec<usize>>,
}

impl ChannelGroups {
    pub fn new(inputs: &ModelInputs) -> Self {
        let mut names: Vec<String> = Vec::new();
        let mut coords: Vec<Vec<usize>> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for k in 0..inputs.width {
            let ch = channel_of(inputs.coord_name(k)).to_string();
            let g = *index.entry(ch.clone()).or_insert_with(|| {
                names.push(ch);
                coords.push(Vec::new());
                names.len() - 1
            });
            coords[g].push(k);
        }
        ChannelGroups { names, coords }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    #[default]
    MacroPrecision,
    MacroF1,
    Accuracy,
}

impl Score {
    pub fn compute(self, y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
        let r = metrics::scores(&metrics::confusion(y_true, y_pred)?);
        Ok(match self {
            Score::MacroPrecision => r.macro_precision,
            Score::MacroF1 => r.macro_f1,
            Score::Accuracy => r.accuracy,
        })
    }
}

/// Mean that returns `xs[0]` exactly when all values are equal.
fn stable_mean(xs: &[f64]) -> f64 {
    let first = xs[0];
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
    /// Score after each of the K shuffles.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub score: Score,
    pub reference: f64,
    pub repeats: usize,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn mean_score(&self, j: usize) -> f64 {
        stable_mean(&self.features[j].scores)
    }

    pub fn get(&self, feature: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }

    /// Features sorted by decreasing importance (ties by name).
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.feature.cmp(&b.feature)));
        v
    }

    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranked().iter().position(|f| f.feature == feature).map(|r| r + 1)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.ranked().into_iter().map(|f| (f.feature.clone(), f.importance)).collect::<Vec<_>>();
        write_ranked_csv(path.as_ref(), "importance", &rows)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        grid::write_json(path.as_ref(), self)
    }
}

fn write_ranked_csv(path: &Path, value_name: &str, rows: &[(String, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", value_name, "rank"])?;
    for (rank, (name, v)) in rows.iter().enumerate() {
        w.write_record([name.clone(), v.to_string(), (rank + 1).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn predict(model: &Model, data: &[f64], n: usize) -> Result<Vec<u8>> {
    let logits = model.logits(data, n)?;
    Ok(logits.chunks(NUM_CLASSES).map(|r| metrics::argmax(r) as u8).collect())
}

/// Score drop when each channel is shuffled across samples. One permutation
/// per repeat is applied to every coordinate of the channel, so a shuffled-in
/// sequence stays temporally coherent.
pub fn permutation_importance(
    model: &Model,
    inputs: &ModelInputs,
    labels: &[u8],
    repeats: usize,
    seed: u64,
    score: Score,
) -> Result<ImportanceReport> {
    if repeats < 1 {
        return Err(Error::InvalidArgument("permutation importance needs at least one repeat".into()));
    }
    if labels.len() != inputs.n || inputs.n == 0 {
        return Err(Error::DimensionMismatch(format!("{} labels for {} samples", labels.len(), inputs.n)));
    }
    let (n, w) = (inputs.n, inputs.width);
    let checked = |s: f64| {
        if s.is_nan() {
            Err(Error::Data("score evaluated to NaN".into()))
        } else {
            Ok(s)
        }
    };
    let reference = checked(score.compute(labels, &predict(model, &inputs.data, n)?)?)?;
    let groups = ChannelGroups::new(inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = inputs.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut features = Vec::with_capacity(groups.names.len());
    for (name, coords) in groups.names.iter().zip(&groups.coords) {
        let mut scores = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            perm.shuffle(&mut rng);
            for (r, &src) in perm.iter().enumerate() {
                for &k in coords {
                    data[r * w + k] = inputs.data[src * w + k];
                }
            }
            scores.push(checked(score.compute(labels, &predict(model, &data, n)?)?)?);
        }
        for r in 0..n {
            for &k in coords {
                data[r * w + k] = inputs.data[r * w + k];
            }
        }
        features.push(FeatureImportance {
            feature: name.clone(),
            importance: reference - stable_mean(&scores),
            scores,
        });
    }
    Ok(ImportanceReport {
        score,
        reference,
        repeats,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub target: usize,
    pub steps: usize,
    pub f_input: f64,
    pub f_baseline: f64,
}

impl Attribution {
    /// `|Σ a_i − (F(x) − F(x'))|`.
    pub fn residual(&self) -> f64 {
        (self.values.iter().sum::<f64>() - (self.f_input - self.f_baseline)).abs()
    }
}

/// Integrated gradients of logit `target` along the straight path from
/// `baseline` to `x`, by the midpoint rule with `steps` points.
pub fn integrated_gradients(model: &Model, x: &[f64], baseline: &[f64], target: usize, steps: usize) -> Result<Attribution> {
    if steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    if target >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!("target class {target} out of range")));
    }
    let w = model.input_len();
    if x.len() != w || baseline.len() != w {
        return Err(Error::DimensionMismatch(format!(
            "input and baseline must both have {w} values, got {} and {}",
            x.len(),
            baseline.len()
        )));
    }
    let mut path = Vec::with_capacity(steps * w);
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        path.extend(baseline.iter().zip(x).map(|(b, xi)| b + alpha * (xi - b)));
    }
    let mut dl = vec![0.0; steps * NUM_CLASSES];
    for k in 0..steps {
        dl[k * NUM_CLASSES + target] = 1.0;
    }
    let grads = model.input_gradient(&path, steps, &dl)?;
    let mut avg = vec![0.0; w];
    for g in grads.chunks(w) {
        avg.iter_mut().zip(g).for_each(|(a, v)| *a += v);
    }
    let values = avg
        .iter()
        .zip(x.iter().zip(baseline))
        .map(|(a, (xi, bi))| (xi - bi) * (a / steps as f64))
        .collect();
    let ends = model.logits(&[x, baseline].concat(), 2)?;
    Ok(Attribution {
        values,
        target,
        steps,
        f_input: ends[target],
        f_baseline: ends[NUM_CLASSES + target],
    })
}

/// Latitude/longitude rectangle with the class whose change it exhibits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub lat_north: f64,
    pub lat_south: f64,
    pub lon_west: f64,
    pub lon_east: f64,
    pub class: usize,
}

impl Region {
    pub fn new(name: &str, (lat_a, lon_a): (f64, f64), (lat_b, lon_b): (f64, f64), class: usize) -> Self {
        Region {
            name: name.into(),
            lat_north: lat_a.max(lat_b),
            lat_south: lat_a.min(lat_b),
            lon_west: lon_a.min(lon_b),
            lon_east: lon_a.max(lon_b),
            class,
        }
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lat_south..=self.lat_north).contains(&lat) && (self.lon_west..=self.lon_east).contains(&lon)
    }
}

/// Regions of marked class change in the 2040-2050 projections.
pub fn change_regions() -> [Region; 3] {
    [
        Region::new("NE China", (45.0, 121.0), (42.5, 128.0), 1),
        Region::new("Eastern Europe", (53.0, 21.0), (45.0, 45.0), 2),
        Region::new("Northern Russia", (63.0, 61.0), (57.5, 80.0), 3),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: Region,
    pub pixels_in_region: usize,
    pub pixels_used: usize,
    pub steps: usize,
    /// Mean attribution per table column, input coordinates folded back
    /// onto their source columns.
    pub by_column: Vec<(String, f64)>,
    /// `by_column` further summed over the months of each variable.
    pub by_channel: Vec<(String, f64)>,
    pub max_residual: f64,
}

fn by_abs_desc(v: &mut [(String, f64)]) {
    v.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
}

impl RegionReport {
    /// The `k` channels with the largest absolute mean attribution.
    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.by_channel[..k.min(self.by_channel.len())]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ranked_csv(path.as_ref(), "attribution", &self.by_channel)
    }
}

/// Evenly spaced subset of `items`, at most `cap` long.
fn spread<T: Copy>(items: &[T], cap: usize) -> Vec<T> {
    if items.len() <= cap {
        return items.to_vec();
    }
    (0..cap).map(|k| items[k * items.len() / cap]).collect()
}

/// Mean integrated-gradients attribution over the pixels of `region`, each
/// pixel using its own historical features as the baseline. At most
/// `max_pixels` evenly spaced pixels are evaluated.
pub fn region_attribution(
    model: &Model,
    spec: &GridSpec,
    region: &Region,
    scenario: &FeatureTable,
    historical: &FeatureTable,
    steps: usize,
    max_pixels: usize,
) -> Result<RegionReport> {
    if scenario.columns != historical.columns {
        return Err(Error::Data("scenario and historical tables have different columns".into()));
    }
    let hist_row: BTreeMap<(usize, usize), usize> =
        historical.pixels.iter().enumerate().map(|(r, &p)| (p, r)).collect();
    let pairs: Vec<(usize, usize)> = scenario
        .pixels
        .iter()
        .enumerate()
        .filter(|&(_, &(i, j))| {
            let (lon, lat) = spec.pixel_center(i, j);
            region.contains(lon, lat)
        })
        .filter_map(|(r, p)| hist_row.get(p).map(|&h| (r, h)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!("region `{}` contains no pixels of the grid", region.name)));
    }
    let used = spread(&pairs, max_pixels.max(1));
    let rows: Vec<usize> = used.iter().map(|p| p.0).collect();
    let base_rows: Vec<usize> = used.iter().map(|p| p.1).collect();
    let xs = model.inputs(&scenario.select(&rows))?;
    let bs = model.inputs(&historical.select(&base_rows))?;
    let mut mean = vec![0.0; xs.width];
    let mut max_residual: f64 = 0.0;
    for r in 0..xs.n {
        let a = integrated_gradients(model, xs.sample(r), bs.sample(r), region.class, steps)?;
        max_residual = max_residual.max(a.residual());
        mean.iter_mut().zip(&a.values).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= xs.n as f64);

    let mut by_column = vec![0.0; xs.columns.len()];
    for (k, v) in mean.iter().enumerate() {
        by_column[xs.coord_column[k]] += v;
    }
    let mut channels: BTreeMap<&str, f64> = BTreeMap::new();
    for (c, v) in xs.columns.iter().zip(&by_column) {
        *channels.entry(channel_of(c)).or_default() += v;
    }
    let mut by_channel: Vec<(String, f64)> = channels.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mut by_column: Vec<(String, f64)> = xs.columns.iter().cloned().zip(by_column).collect();
    by_abs_desc(&mut by_column);
    by_abs_desc(&mut by_channel);
    Ok(RegionReport {
        region: region.clone(),
        pixels_in_region: pairs.len(),
        pixels_used: used.len(),
        steps,
        by_column,
        by_channel,
        max_residual,
    })
}
