//! Labeled design matrices: assembly from feature rasters, class balancing,
//! stratified splitting, min-max scaling, and the 12-step sequence view.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::climate::{self, MONTHLY_VARIABLES, SPI_FEATURE};
use crate::error::{Error, Result};
use crate::grid::{self, ClassMask, DType, GridSpec, Raster, NUM_CLASSES};
use crate::terrain::ScaleSet;

pub const SEQ_LEN: usize = 12;

/// Fixed column order: 121 climate features then 41 terrain features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub climate: Vec<String>,
    pub terrain: Vec<String>,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout::new(&ScaleSet::default())
    }
}

impl FeatureLayout {
    pub fn new(scales: &ScaleSet) -> Self {
        FeatureLayout {
            climate: climate::climate_feature_names(),
            terrain: scales.feature_names(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        self.climate.iter().chain(self.terrain.iter()).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.climate.len() + self.terrain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channels per timestep: monthly variables, SPI, then every terrain feature.
    pub fn channels(&self) -> usize {
        MONTHLY_VARIABLES.len() + 1 + self.terrain.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    /// Row-major, `rows() × columns.len()`.
    pub values: Vec<f64>,
    /// `(row, col)` of the source pixel for every table row.
    pub pixels: Vec<(usize, usize)>,
    pub labels: Option<Vec<u8>>,
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        self.pixels.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data("feature table has no labels".into()))
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in self.labels.iter().flatten() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Sub-table of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureTable {
        let w = self.width();
        let mut values = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureTable {
            columns: self.columns.clone(),
            values,
            pixels: rows.iter().map(|&r| self.pixels[r]).collect(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.columns.clone();
        header.extend(["label", "pix_i", "pix_j"].map(String::from));
        w.write_record(&header)?;
        for r in 0..self.rows() {
            let mut rec: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels.as_ref().map_or(String::new(), |l| l[r].to_string()));
            rec.push(self.pixels[r].0.to_string());
            rec.push(self.pixels[r].1.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// `<stem>.json` header (columns, pixels, labels) next to a `<stem>.f64`
    /// row-major value blob.
    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let stem = grid::raster_stem(path.as_ref());
        let blob = grid::with_suffix(&stem, "f64");
        if let Some(parent) = blob.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&blob, grid::encode_values(&self.values, DType::F64)).map_err(|e| Error::io(&blob, e))?;
        let header = TableHeader {
            columns: self.columns.clone(),
            pixels: self.pixels.clone(),
            labels: self.labels.clone(),
        };
        grid::write_json(&grid::with_suffix(&stem, "json"), &header)
    }

    pub fn read_bin(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let stem = grid::raster_stem(path.as_ref());
        let header: TableHeader = grid::read_json(&grid::with_suffix(&stem, "json"))?;
        let blob = grid::with_suffix(&stem, "f64");
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let values = grid::decode_values(&bytes, DType::F64);
        let rows = header.pixels.len();
        if bytes.len() % 8 != 0
            || values.len() != rows * header.columns.len()
            || header.labels.as_ref().is_some_and(|l| l.len() != rows)
        {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} values for {rows} rows of {} columns",
                blob.display(),
                values.len(),
                header.columns.len()
            )));
        }
        Ok(FeatureTable {
            columns: header.columns,
            values,
            pixels: header.pixels,
            labels: header.labels,
        })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let n = header.len();
        if n < 3 || header[n - 3..] != ["label", "pix_i", "pix_j"] {
            return Err(Error::Data(format!(
                "{} lacks trailing label/pix_i/pix_j columns",
                path.display()
            )));
        }
        let columns = header[..n - 3].to_vec();
        let mut values = Vec::new();
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        let mut any_label = false;
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Data(format!("bad number `{s}` in {}", path.display())))
            };
            for v in rec.iter().take(n - 3) {
                values.push(parse(v)?);
            }
            let label = &rec[n - 3];
            if !label.is_empty() {
                any_label = true;
                labels.push(parse(label)? as u8);
            }
            pixels.push((parse(&rec[n - 2])? as usize, parse(&rec[n - 1])? as usize));
        }
        Ok(FeatureTable {
            columns,
            values,
            pixels,
            labels: any_label.then_some(labels),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    columns: Vec<String>,
    pixels: Vec<(usize, usize)>,
    labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableManifest {
    pub columns: Vec<String>,
    pub seed: u64,
    pub counts: [usize; NUM_CLASSES],
}

impl TableManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        grid::write_json(path.as_ref(), self)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        grid::read_json(path.as_ref())
    }
}

fn check_rasters<'a>(
    rasters: &'a BTreeMap<String, Raster>,
    layout: &FeatureLayout,
) -> Result<(GridSpec, Vec<&'a Raster>)> {
    let columns = layout.columns();
    if rasters.len() != columns.len() {
        return Err(Error::Data(format!(
            "expected {} feature rasters, got {}",
            columns.len(),
            rasters.len()
        )));
    }
    let ordered = columns
        .iter()
        .map(|c| {
            rasters
                .get(c)
                .ok_or_else(|| Error::Data(format!("missing feature raster `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ordered[0].spec;
    if let Some(r) = ordered.iter().find(|r| r.spec != spec) {
        return Err(Error::DimensionMismatch(format!(
            "feature rasters disagree on grid: {:?} vs {:?}",
            r.spec, spec
        )));
    }
    Ok((spec, ordered))
}

fn build(
    rasters: &BTreeMap<String, Raster>,
    layout: &FeatureLayout,
    mask: Option<&ClassMask>,
) -> Result<FeatureTable> {
    let (spec, ordered) = check_rasters(rasters, layout)?;
    if let Some(m) = mask {
        if *m.spec() != spec {
            return Err(Error::DimensionMismatch("class mask and features are on different grids".into()));
        }
    }
    let mut values = Vec::new();
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut row = Vec::with_capacity(ordered.len());
    for idx in 0..spec.len() {
        let label = match mask {
            Some(m) => match m.class_at(idx) {
                Some(c) => Some(c),
                None => continue,
            },
            None => None,
        };
        row.clear();
        for r in &ordered {
            match r.valid_at(idx) {
                Some(v) => row.push(v),
                None => break,
            }
        }
        if row.len() != ordered.len() {
            continue;
        }
        values.extend_from_slice(&row);
        pixels.push((idx / spec.width, idx % spec.width));
        labels.extend(label);
    }
    Ok(FeatureTable {
        columns: layout.columns(),
        values,
        pixels,
        labels: mask.map(|_| labels),
    })
}

/// One row per pixel where every feature and the mask are valid.
pub fn assemble(rasters: &BTreeMap<String, Raster>, layout: &FeatureLayout, mask: &ClassMask) -> Result<FeatureTable> {
    build(rasters, layout, Some(mask))
}

/// Unlabeled table for inference (scenario periods).
pub fn assemble_unlabeled(rasters: &BTreeMap<String, Raster>, layout: &FeatureLayout) -> Result<FeatureTable> {
    build(rasters, layout, None)
}

/// Class-0 count after balancing: the largest minority class, never more than
/// the current class-0 count.
pub fn undersample_target(counts: [usize; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let target = counts[1..].iter().copied().max().unwrap_or(0);
    let mut out = counts;
    out[0] = counts[0].min(target);
    out
}

/// Randomly drop class-0 rows (seeded, without replacement) down to the
/// largest minority class count. Row order is preserved.
pub fn undersample(table: &FeatureTable, seed: u64) -> Result<FeatureTable> {
    let labels = table.labels()?;
    let counts = table.class_counts();
    let target = undersample_target(counts)[0];
    if target == counts[0] {
        return Ok(table.clone());
    }
    let zeros: Vec<usize> = (0..table.rows()).filter(|&r| labels[r] == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; table.rows()];
    for &r in &zeros {
        keep[r] = false;
    }
    for k in rand::seq::index::sample(&mut rng, zeros.len(), target) {
        keep[zeros[k]] = true;
    }
    let rows: Vec<usize> = (0..table.rows()).filter(|&r| keep[r]).collect();
    Ok(table.select(&rows))
}

/// Per-class row indices after a seeded shuffle within each class.
pub(crate) fn shuffled_by_class(labels: &[u8], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (r, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(r);
    }
    for rows in &mut by_class {
        rows.shuffle(rng);
    }
    by_class
}

/// Stratified shuffled split: each class contributes `round(frac * n_c)` rows
/// to the first part. Both parts come back shuffled.
pub fn split(table: &FeatureTable, train_frac: f64, seed: u64) -> Result<(FeatureTable, FeatureTable)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_frac} must be in (0, 1)")));
    }
    let labels = table.labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = shuffled_by_class(labels, &mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < 4 {
            return Err(Error::Data(format!(
                "class {c} has only {} rows; at least 4 are needed to split",
                rows.len()
            )));
        }
        let n_train = (rows.len() as f64 * train_frac).round() as usize;
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((table.select(&train), table.select(&test)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_scaler(train: &FeatureTable) -> Result<ScalerParams> {
    if train.rows() == 0 {
        return Err(Error::Data("cannot fit a scaler on an empty table".into()));
    }
    let w = train.width();
    let mut min = vec![f64::INFINITY; w];
    let mut max = vec![f64::NEG_INFINITY; w];
    for r in 0..train.rows() {
        for (k, &v) in train.row(r).iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    Ok(ScalerParams {
        columns: train.columns.clone(),
        min,
        max,
    })
}

impl ScalerParams {
    /// `(x - min) / (max - min)` without clipping; constant columns map to 0.
    pub fn scale(&self, k: usize, x: f64) -> f64 {
        let span = self.max[k] - self.min[k];
        if span > 0.0 {
            (x - self.min[k]) / span
        } else {
            0.0
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: BTreeMap<&str, [f64; 2]> = self
            .columns
            .iter()
            .enumerate()
            .map(|(k, c)| (c.as_str(), [self.min[k], self.max[k]]))
            .collect();
        grid::write_json(path.as_ref(), &map)
    }

    /// Read a scaler and order it by `columns`.
    pub fn read(path: impl AsRef<Path>, columns: &[String]) -> Result<Self> {
        let map: BTreeMap<String, [f64; 2]> = grid::read_json(path.as_ref())?;
        let mut min = Vec::with_capacity(columns.len());
        let mut max = Vec::with_capacity(columns.len());
        for c in columns {
            let [lo, hi] = map
                .get(c)
                .ok_or_else(|| Error::Data(format!("scaler has no entry for column `{c}`")))?;
            min.push(*lo);
            max.push(*hi);
        }
        Ok(ScalerParams {
            columns: columns.to_vec(),
            min,
            max,
        })
    }
}

pub fn apply_scaler(table: &FeatureTable, scaler: &ScalerParams) -> Result<FeatureTable> {
    if table.columns != scaler.columns {
        return Err(Error::Data("scaler columns do not match the table".into()));
    }
    let w = table.width();
    let values = table
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| scaler.scale(i % w, v))
        .collect();
    Ok(FeatureTable {
        values,
        ..table.clone()
    })
}

/// `apply_scaler`, then clamp every value to [0, 1].
pub fn apply_scaler_clipped(table: &FeatureTable, scaler: &ScalerParams) -> Result<FeatureTable> {
    let mut t = apply_scaler(table, scaler)?;
    t.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(t)
}

/// Column index feeding each (timestep, channel) slot of the sequence view.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLayout {
    pub channel_names: Vec<String>,
    /// `SEQ_LEN × channels`, row-major by timestep.
    pub source_column: Vec<usize>,
}

impl SequenceLayout {
    pub fn for_columns(columns: &[String]) -> Result<Self> {
        let find = |name: &str| {
            columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Data(format!("missing column `{name}` for the sequence view")))
        };
        let known: std::collections::BTreeSet<String> = climate::climate_feature_names().into_iter().collect();
        let statics: Vec<String> = columns.iter().filter(|c| !known.contains(*c)).cloned().collect();
        let mut channel_names: Vec<String> = MONTHLY_VARIABLES.iter().map(|s| s.to_string()).collect();
        channel_names.push(SPI_FEATURE.to_string());
        channel_names.extend(statics.iter().cloned());
        let channels = channel_names.len();
        let mut source_column = Vec::with_capacity(SEQ_LEN * channels);
        for t in 0..SEQ_LEN {
            for v in MONTHLY_VARIABLES {
                source_column.push(find(&climate::monthly_feature_name(v, t))?);
            }
            source_column.push(find(SPI_FEATURE)?);
            for s in &statics {
                source_column.push(find(s)?);
            }
        }
        Ok(SequenceLayout {
            channel_names,
            source_column,
        })
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Whether the channel holds one value per month (as opposed to a
    /// static value broadcast over timesteps).
    pub fn is_monthly(&self, channel: usize) -> bool {
        channel < MONTHLY_VARIABLES.len()
    }
}

/// `N × 12 × channels` tensor (52 channels for the default layout).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub layout: SequenceLayout,
    pub n: usize,
    pub data: Vec<f64>,
}

impl SequenceBatch {
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = SEQ_LEN * self.layout.channels();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn get(&self, n: usize, t: usize, channel: usize) -> f64 {
        let ch = self.layout.channels();
        self.data[(n * SEQ_LEN + t) * ch + channel]
    }

    /// Inverse of [`to_sequences`]: rebuild the flat rows in `columns` order.
    pub fn flatten(&self, columns: usize) -> Vec<f64> {
        let per = SEQ_LEN * self.layout.channels();
        let mut out = vec![f64::NAN; self.n * columns];
        for n in 0..self.n {
            for (slot, &col) in self.layout.source_column.iter().enumerate() {
                out[n * columns + col] = self.data[n * per + slot];
            }
        }
        out
    }
}

pub fn to_sequences(table: &FeatureTable) -> Result<SequenceBatch> {
    let layout = SequenceLayout::for_columns(&table.columns)?;
    let mut data = Vec::with_capacity(table.rows() * layout.source_column.len());
    for r in 0..table.rows() {
        let row = table.row(r);
        data.extend(layout.source_column.iter().map(|&c| row[c]));
    }
    Ok(SequenceBatch {
        layout,
        n: table.rows(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout_rasters(spec: GridSpec, f: impl Fn(usize, usize) -> f64) -> BTreeMap<String, Raster> {
        FeatureLayout::default()
            .columns()
            .into_iter()
            .enumerate()
            .map(|(k, name)| (name, Raster::from_fn(spec, |i, j| f(k, i * spec.width + j))))
            .collect()
    }

    fn toy_table(labels: Vec<u8>) -> FeatureTable {
        let n = labels.len();
        FeatureTable {
            columns: vec!["a".into(), "b".into()],
            values: (0..n * 2).map(|v| v as f64).collect(),
            pixels: (0..n).map(|r| (r, 0)).collect(),
            labels: Some(labels),
        }
    }

    #[test]
    fn layout_has_162_columns() {
        let l = FeatureLayout::default();
        assert_eq!(l.len(), 162);
        assert_eq!(l.channels(), 52);
        assert_eq!(l.columns()[121], "DEM_1km");
    }

    #[test]
    fn assemble_full_grid_and_nodata_rows() {
        let spec = GridSpec::new(2, 2, 0.0, 1.0, 0.5).unwrap();
        let mut rasters = layout_rasters(spec, |k, p| (k * 10 + p) as f64);
        let mask = ClassMask::from_raster(Raster::new(spec, vec![0.0, 1.0, 2.0, 3.0]).unwrap()).unwrap();
        let t = assemble(&rasters, &FeatureLayout::default(), &mask).unwrap();
        assert_eq!(t.rows(), 4);
        assert_eq!(t.width(), 162);
        assert_eq!(t.labels.as_deref(), Some(&[0, 1, 2, 3][..]));
        assert_eq!(t.row(3)[5], 53.0);

        rasters.get_mut("t2m_07").unwrap().values[1] = f64::NAN;
        let t = assemble(&rasters, &FeatureLayout::default(), &mask).unwrap();
        assert_eq!(t.rows(), 3);
        assert!(!t.pixels.contains(&(0, 1)));

        let mut mask_nd = mask.clone().into_raster();
        mask_nd.values[2] = f64::NAN;
        let t = assemble(&rasters, &FeatureLayout::default(), &ClassMask::from_raster(mask_nd).unwrap()).unwrap();
        assert_eq!(t.rows(), 2);
    }

    #[test]
    fn assemble_rejects_wrong_column_sets() {
        let spec = GridSpec::new(2, 2, 0.0, 1.0, 0.5).unwrap();
        let mask = ClassMask::from_raster(Raster::filled(spec, 0.0)).unwrap();
        let mut rasters = layout_rasters(spec, |_, _| 1.0);
        rasters.remove("snw_12");
        assert!(assemble(&rasters, &FeatureLayout::default(), &mask).is_err());
        rasters.insert("bogus".into(), Raster::filled(spec, 0.0));
        assert!(assemble(&rasters, &FeatureLayout::default(), &mask).is_err());
        let mut rasters = layout_rasters(spec, |_, _| 1.0);
        rasters.insert("tp_01".into(), Raster::filled(GridSpec::new(3, 2, 0.0, 1.0, 0.5).unwrap(), 0.0));
        assert!(assemble(&rasters, &FeatureLayout::default(), &mask).is_err());
    }

    #[test]
    fn undersample_targets() {
        let t = undersample_target([11_732_309, 146_699, 586_141, 1_173_203]);
        assert_eq!(t, [1_173_203, 146_699, 586_141, 1_173_203]);
        assert_eq!(undersample_target([5, 0, 0, 10]), [5, 0, 0, 10]);
    }

    #[test]
    fn undersample_rows() {
        let mut labels = vec![0u8; 50];
        labels.extend([1u8; 4]);
        labels.extend([3u8; 7]);
        let t = toy_table(labels);
        let u = undersample(&t, 9).unwrap();
        assert_eq!(u.class_counts(), [7, 4, 0, 7]);
        assert_eq!(u.rows(), 18);
        assert_eq!(undersample(&t, 9).unwrap(), u);
        assert_ne!(undersample(&t, 10).unwrap().pixels, u.pixels);
        // Already balanced.
        let small = toy_table(vec![0, 0, 0, 0, 0, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3]);
        assert_eq!(undersample(&small, 1).unwrap(), small);
    }

    #[test]
    fn stratified_split() {
        let labels: Vec<u8> = (0..400).map(|r| (r % 4) as u8).collect();
        let t = toy_table(labels);
        let (train, test) = split(&t, 0.75, 3).unwrap();
        assert_eq!(train.class_counts(), [75; 4]);
        assert_eq!(test.class_counts(), [25; 4]);
        let mut all: Vec<_> = train.pixels.iter().chain(test.pixels.iter()).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 400);
        assert_eq!(split(&t, 0.75, 3).unwrap(), (train, test));
        let tiny = toy_table(vec![0, 0, 0, 0, 1, 1, 1]);
        assert!(split(&tiny, 0.75, 0).is_err());
    }

    #[test]
    fn scaler_examples() {
        let t = FeatureTable {
            columns: vec!["x".into(), "k".into()],
            values: (2..=10).flat_map(|v| [v as f64, 7.0]).collect(),
            pixels: (0..9).map(|r| (r, 0)).collect(),
            labels: None,
        };
        let s = fit_scaler(&t).unwrap();
        assert_eq!(s.scale(0, 6.0), 0.5);
        assert_eq!(s.scale(1, 7.0), 0.0);
        assert_eq!(s.scale(0, 14.0), 1.5);
        let scaled = apply_scaler(&t, &s).unwrap();
        assert!(scaled.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let future = FeatureTable {
            values: vec![14.0, 7.5, -2.0, 7.0],
            pixels: vec![(0, 0), (1, 0)],
            ..t.clone()
        };
        assert_eq!(apply_scaler(&future, &s).unwrap().values, vec![1.5, 0.0, -0.5, 0.0]);
        assert_eq!(apply_scaler_clipped(&future, &s).unwrap().values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn scaler_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ScalerParams {
            columns: vec!["b".into(), "a".into()],
            min: vec![1.0, -2.5],
            max: vec![3.0, 0.1],
        };
        s.write(dir.path().join("scaler.json")).unwrap();
        assert_eq!(ScalerParams::read(dir.path().join("scaler.json"), &s.columns).unwrap(), s);
        assert!(ScalerParams::read(dir.path().join("scaler.json"), &["c".to_string()]).is_err());
    }

    #[test]
    fn sequence_view() {
        let spec = GridSpec::new(3, 1, 0.0, 1.0, 0.5).unwrap();
        let rasters = layout_rasters(spec, |k, p| (k * 100 + p) as f64);
        let mask = ClassMask::from_raster(Raster::filled(spec, 1.0)).unwrap();
        let t = assemble(&rasters, &FeatureLayout::default(), &mask).unwrap();
        let s = to_sequences(&t).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.data.len(), 3 * 12 * 52);
        let t2m = s.layout.channel_names.iter().position(|c| c == "t2m").unwrap();
        let col = t.column_index("t2m_03").unwrap();
        assert_eq!(s.get(1, 2, t2m), t.row(1)[col]);
        let dem = s.layout.channel_names.iter().position(|c| c == "DEM_1km").unwrap();
        let v = s.get(2, 0, dem);
        assert!((0..12).all(|step| s.get(2, step, dem) == v));
        assert_eq!(s.flatten(t.width()), t.values);
    }

    #[test]
    fn sequence_view_needs_monthly_columns() {
        let t = toy_table(vec![0, 1]);
        assert!(to_sequences(&t).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = toy_table(vec![0, 3, 2]);
        t.values[1] = 0.1 + 0.2;
        t.write_csv(dir.path().join("t.csv")).unwrap();
        assert_eq!(FeatureTable::read_csv(dir.path().join("t.csv")).unwrap(), t);
        t.labels = None;
        t.write_csv(dir.path().join("u.csv")).unwrap();
        assert_eq!(FeatureTable::read_csv(dir.path().join("u.csv")).unwrap(), t);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = toy_table(vec![1, 0, 3]);
        t.values[0] = -0.0;
        t.write_bin(dir.path().join("t")).unwrap();
        assert_eq!(FeatureTable::read_bin(dir.path().join("t.json")).unwrap(), t);
        t.labels = None;
        t.write_bin(dir.path().join("u")).unwrap();
        assert_eq!(FeatureTable::read_bin(dir.path().join("u")).unwrap(), t);
        std::fs::write(dir.path().join("u.f64"), [0u8; 12]).unwrap();
        assert!(FeatureTable::read_bin(dir.path().join("u")).is_err());
    }
}
