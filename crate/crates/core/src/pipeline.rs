//! Staged batch pipeline over one run directory.
//!
//! Every stage writes its artifacts under `<out>/<stage>/` and finishes by
//! writing `stage.json` with a fingerprint of the configuration it ran under.
//! A stage refuses to start when an upstream stamp is missing or was written
//! under a different configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{permutation_importance, region_attribution, ImportanceReport, Region, Score};
use crate::climate::ClimateStacks;
use crate::dataset::{self, apply_scaler, apply_scaler_clipped, fit_scaler, FeatureLayout, FeatureTable, ScalerParams, TableManifest};
use crate::error::{Error, Result};
use crate::features::{feature_rasters, terrain_on_grid};
use crate::grid::{self, ClassMask, GridSpec, Raster, NUM_CLASSES};
use crate::metrics::{self, MetricsReport};
use crate::models::{crossval, train, Arch, CrossvalReport, EpochRecord, Model, ModelKind, TrainConfig};
use crate::render;
use crate::scenario::{
    delta_heatmap, ensemble_average, trajectory_report, write_trajectory_csv, ProbabilityMaps, Provenance, ScenarioKey,
    TrajectoryRow,
};
use crate::synth::{self, SynthConfig, HISTORICAL_DIR};
use crate::terrain::{ScaleSet, DEFAULT_SCALES_KM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Features,
    Train,
    Eval,
    Attribute,
    Project,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Features,
        Stage::Train,
        Stage::Eval,
        Stage::Attribute,
        Stage::Project,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Attribute => "attribute",
            Stage::Project => "project",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth => &[],
            Stage::Features => &[Stage::Synth],
            Stage::Train => &[Stage::Features],
            Stage::Eval | Stage::Attribute | Stage::Project => &[Stage::Train],
            Stage::Report => &[Stage::Eval, Stage::Attribute, Stage::Project],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub scales_km: Vec<f64>,
    /// Share of the balanced table kept for training; the rest is the test set.
    pub train_fraction: f64,
    pub undersample: bool,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            scales_km: DEFAULT_SCALES_KM.to_vec(),
            train_fraction: 0.75,
            undersample: true,
        }
    }
}

/// Where early stopping gets its validation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// A stratified slice of the training table.
    #[default]
    Holdout,
    /// The test table itself. Test scores are then optimistic.
    TestSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    pub folds: usize,
    pub mlp_hidden: Vec<Vec<usize>>,
    pub lstm_hidden: Vec<usize>,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig {
            folds: 5,
            mlp_hidden: vec![vec![64, 64], vec![128, 128]],
            lstm_hidden: vec![32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStageConfig {
    pub models: Vec<ModelKind>,
    pub mlp_hidden: Vec<usize>,
    pub lstm_hidden: usize,
    pub validation: Validation,
    pub val_fraction: f64,
    pub crossval: Option<CrossvalConfig>,
    pub optimizer: TrainConfig,
}

impl Default for TrainStageConfig {
    fn default() -> Self {
        TrainStageConfig {
            models: ModelKind::ALL.to_vec(),
            mlp_hidden: vec![128, 128],
            lstm_hidden: 64,
            validation: Validation::Holdout,
            val_fraction: 0.15,
            crossval: None,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfig {
    pub models: Vec<ModelKind>,
    pub repeats: usize,
    pub score: Score,
    /// Test rows used for permutation importance, evenly spaced.
    pub max_samples: usize,
    pub steps: usize,
    pub max_pixels: usize,
    /// Empty means: northern and southern quarter of the grid.
    pub regions: Vec<Region>,
    /// Scenario slug to attribute; empty picks the latest period of the
    /// last SSP for the first climate model.
    pub scenario: String,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        AttributeConfig {
            models: ModelKind::ALL.to_vec(),
            repeats: 10,
            score: Score::MacroPrecision,
            max_samples: 2000,
            steps: 256,
            max_pixels: 64,
            regions: Vec::new(),
            scenario: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Empty means every trained model.
    pub models: Vec<ModelKind>,
    /// Clamp scaled scenario features to the training range.
    pub clip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Image pixels per grid cell in change maps.
    pub scale: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { scale: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    /// Input data directory; defaults to `<out>/data`.
    pub data_dir: Option<PathBuf>,
    /// Input data was not made by `synth`; no stamp is expected there.
    pub external_data: bool,
    pub synth: SynthConfig,
    pub features: FeaturesConfig,
    pub train: TrainStageConfig,
    pub attribute: AttributeConfig,
    pub project: ProjectConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: None,
            out: PathBuf::from("run"),
            data_dir: None,
            external_data: false,
            synth: SynthConfig::default(),
            features: FeaturesConfig::default(),
            train: TrainStageConfig::default(),
            attribute: AttributeConfig::default(),
            project: ProjectConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

const STAMP: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageStamp {
    stage: String,
    fingerprint: String,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.external_data {
            let dir = self.data_dir();
            if !dir.is_dir() {
                return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
            }
        } else {
            self.synth.validate()?;
        }
        let f = &self.features;
        if !(f.train_fraction > 0.0 && f.train_fraction < 1.0) {
            return Err(Error::Config("features.train_fraction must be in (0, 1)".into()));
        }
        ScaleSet::new(f.scales_km.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.train;
        if t.models.is_empty() {
            return Err(Error::Config("train.models is empty".into()));
        }
        if !(t.val_fraction > 0.0 && t.val_fraction < 1.0) {
            return Err(Error::Config("train.val_fraction must be in (0, 1)".into()));
        }
        if t.optimizer.epochs == 0 || t.optimizer.batch_size == 0 || !(t.optimizer.lr > 0.0) {
            return Err(Error::Config("train.optimizer needs positive epochs, batch_size and lr".into()));
        }
        if t.mlp_hidden.contains(&0) || t.lstm_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if let Some(cv) = &t.crossval {
            if cv.folds < 2 {
                return Err(Error::Config("train.crossval.folds must be at least 2".into()));
            }
        }
        let a = &self.attribute;
        if a.repeats == 0 || a.steps == 0 || a.max_samples == 0 || a.max_pixels == 0 {
            return Err(Error::Config("attribute repeats, steps, max_samples and max_pixels must be positive".into()));
        }
        if let Some(k) = a.models.iter().chain(&self.project.models).find(|k| !t.models.contains(k)) {
            return Err(Error::Config(format!("model `{k}` is not in train.models")));
        }
        if self.report.scale == 0 {
            return Err(Error::Config("report.scale must be positive".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Synth => self.data_dir(),
            _ => self.out.join(stage.name()),
        }
    }

    fn section(&self, stage: Stage) -> Result<String> {
        let v = match stage {
            Stage::Synth if self.external_data => Ok(serde_json::json!({ "external": self.data_dir() })),
            Stage::Synth => serde_json::to_value(&self.synth),
            Stage::Features => serde_json::to_value(&self.features),
            Stage::Train => serde_json::to_value(&self.train),
            Stage::Eval => Ok(serde_json::Value::Null),
            Stage::Attribute => serde_json::to_value(&self.attribute),
            Stage::Project => serde_json::to_value(&self.project),
            Stage::Report => serde_json::to_value(&self.report),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(v.to_string())
    }

    /// Hash of the seed, this stage's settings and every upstream fingerprint.
    pub fn fingerprint(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.section(stage)?.as_bytes());
        for &up in stage.upstream() {
            h.update(self.fingerprint(up)?.as_bytes());
        }
        Ok(format!("{:x}", h.finalize()))
    }

    /// Independent seed for one consumer of randomness.
    pub fn stage_seed(&self, tag: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    fn check_upstream(&self, stage: Stage) -> Result<()> {
        for &up in stage.upstream() {
            if up == Stage::Synth && self.external_data {
                let dir = self.data_dir();
                if !dir.is_dir() {
                    return Err(Error::MissingArtifact {
                        stage: up.name().into(),
                        path: dir,
                    });
                }
                continue;
            }
            let path = self.stage_dir(up).join(STAMP);
            if !path.is_file() {
                return Err(Error::MissingArtifact {
                    stage: up.name().into(),
                    path,
                });
            }
            let stamp: StageStamp = grid::read_json(&path)?;
            if stamp.fingerprint != self.fingerprint(up)? {
                return Err(Error::StaleArtifact {
                    stage: up.name().into(),
                    reason: format!("{} was written under a different configuration", path.display()),
                });
            }
        }
        Ok(())
    }

    fn stamp(&self, stage: Stage) -> Result<()> {
        let stamp = StageStamp {
            stage: stage.name().into(),
            fingerprint: self.fingerprint(stage)?,
        };
        grid::write_json(&self.stage_dir(stage).join(STAMP), &stamp)
    }

    fn scales(&self) -> Result<ScaleSet> {
        ScaleSet::new(self.features.scales_km.clone())
    }

    fn layout(&self) -> Result<FeatureLayout> {
        Ok(FeatureLayout::new(&self.scales()?))
    }

    fn arch(&self, kind: ModelKind) -> Result<Arch> {
        let layout = self.layout()?;
        Ok(match kind {
            ModelKind::Logreg => Arch::logreg(layout.len()),
            ModelKind::Mlp => Arch::mlp(layout.len(), &self.train.mlp_hidden),
            ModelKind::Lstm => Arch::lstm(layout.channels(), self.train.lstm_hidden),
        })
    }
}

/// Inputs read from a data directory.
pub struct InputData {
    pub dem: Raster,
    pub mask: ClassMask,
    pub historical: ClimateStacks,
    pub scenarios: Vec<(ScenarioKey, ClimateStacks)>,
}

impl InputData {
    /// Layout: `dem`, `mask`, `climate/historical/<var>` and one
    /// `climate/<model>__<ssp>__<period>/` directory per scenario.
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let dem = grid::read_raster(dir.join("dem"))?;
        let mask = ClassMask::from_raster(grid::read_raster(dir.join("mask"))?)?;
        let climate = dir.join("climate");
        let historical = ClimateStacks::read_dir(climate.join(HISTORICAL_DIR))?;
        let mut slugs = Vec::new();
        for entry in fs::read_dir(&climate).map_err(|e| Error::io(&climate, e))? {
            let entry = entry.map_err(|e| Error::io(&climate, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() && name != HISTORICAL_DIR {
                slugs.push(name);
            }
        }
        slugs.sort();
        let scenarios = slugs
            .into_iter()
            .map(|s| Ok((ScenarioKey::from_slug(&s)?, ClimateStacks::read_dir(climate.join(&s))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(InputData {
            dem,
            mask,
            historical,
            scenarios,
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generate the planted synthetic world into the data directory.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    if cfg.external_data {
        return Err(Error::Config("external_data is set; refusing to overwrite it with synthetic data".into()));
    }
    let world = synth::generate(&cfg.synth, cfg.seed)?;
    log::info!("synthetic class counts {:?}", world.manifest.class_counts);
    world.write(cfg.data_dir())?;
    cfg.stamp(Stage::Synth)
}

fn tables_dir(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir(Stage::Features).join("tables")
}

/// Feature tables for the historical period and every scenario, the balanced
/// train/test split, and the scaler fitted on the training rows.
pub fn run_features(cfg: &RunConfig) -> Result<()> {
    cfg.check_upstream(Stage::Features)?;
    let input = InputData::read(cfg.data_dir())?;
    let grid = *input.mask.spec();
    let layout = cfg.layout()?;
    let terrain = terrain_on_grid(&input.dem, &grid, &cfg.scales()?)?;
    let dir = cfg.stage_dir(Stage::Features);
    create_dir(&dir)?;

    let hist = feature_rasters(&input.historical, &input.historical, &terrain, &grid)?;
    let table = dataset::assemble(&hist, &layout, &input.mask)?;
    log::info!("historical table: {} rows, class counts {:?}", table.rows(), table.class_counts());
    table.write_bin(tables_dir(cfg).join(HISTORICAL_DIR))?;
    for (key, stacks) in &input.scenarios {
        let rasters = feature_rasters(&input.historical, stacks, &terrain, &grid)?;
        dataset::assemble_unlabeled(&rasters, &layout)?.write_bin(tables_dir(cfg).join(key.slug()))?;
    }

    let us_seed = cfg.stage_seed("undersample");
    let balanced = if cfg.features.undersample {
        dataset::undersample(&table, us_seed)?
    } else {
        table
    };
    let (train, test) = dataset::split(&balanced, cfg.features.train_fraction, cfg.stage_seed("split"))?;
    train.write_csv(dir.join("train.csv"))?;
    test.write_csv(dir.join("test.csv"))?;
    fit_scaler(&train)?.write(dir.join("scaler.json"))?;
    TableManifest {
        columns: layout.columns(),
        seed: us_seed,
        counts: balanced.class_counts(),
    }
    .write(dir.join("tables.json"))?;
    cfg.stamp(Stage::Features)
}

fn read_scaled(cfg: &RunConfig, file: &str) -> Result<FeatureTable> {
    let dir = cfg.stage_dir(Stage::Features);
    let table = FeatureTable::read_csv(dir.join(file))?;
    let scaler = ScalerParams::read(dir.join("scaler.json"), &table.columns)?;
    apply_scaler(&table, &scaler)
}

fn model_path(cfg: &RunConfig, kind: ModelKind) -> PathBuf {
    cfg.stage_dir(Stage::Train).join(kind.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub arch: Arch,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub crossval: Option<CrossvalReport>,
    pub history: Vec<EpochRecord>,
}

fn candidates(cfg: &RunConfig, kind: ModelKind, cv: &crate::pipeline::CrossvalConfig) -> Result<Vec<Arch>> {
    let layout = cfg.layout()?;
    Ok(match kind {
        ModelKind::Logreg => vec![Arch::logreg(layout.len())],
        ModelKind::Mlp => cv.mlp_hidden.iter().map(|h| Arch::mlp(layout.len(), h)).collect(),
        ModelKind::Lstm => cv.lstm_hidden.iter().map(|&h| Arch::lstm(layout.channels(), h)).collect(),
    })
}

/// Train every configured model with early stopping; optionally pick hidden
/// sizes by k-fold cross-validation on the training rows first.
pub fn run_train(cfg: &RunConfig) -> Result<BTreeMap<ModelKind, TrainSummary>> {
    cfg.check_upstream(Stage::Train)?;
    let train_all = read_scaled(cfg, "train.csv")?;
    let (fit, val) = match cfg.train.validation {
        Validation::Holdout => dataset::split(&train_all, 1.0 - cfg.train.val_fraction, cfg.stage_seed("validation"))?,
        Validation::TestSet => (train_all.clone(), read_scaled(cfg, "test.csv")?),
    };
    let dir = cfg.stage_dir(Stage::Train);
    create_dir(&dir)?;
    let mut out = BTreeMap::new();
    for &kind in &cfg.train.models {
        let mut opt = cfg.train.optimizer.clone();
        opt.seed = cfg.stage_seed(&format!("shuffle:{kind}"));
        let probe = Model::zeros(cfg.arch(kind)?)?;
        let fx = probe.inputs(&fit)?;
        let vx = probe.inputs(&val)?;
        let (arch, cv_report) = match &cfg.train.crossval {
            Some(cv) if kind != ModelKind::Logreg => {
                let all = probe.inputs(&train_all)?;
                let report = crossval(&candidates(cfg, kind, cv)?, (&all.data, train_all.labels()?), cv.folds, &opt)?;
                log::info!("{kind}: cross-validated macro-F1 {:?}", report.mean_macro_f1);
                (report.candidates[report.best].clone(), Some(report))
            }
            _ => (cfg.arch(kind)?, None),
        };
        let init_seed = cfg.stage_seed(&format!("init:{kind}"));
        let model = Model::init(arch.clone(), init_seed)?;
        let outcome = train(model, (&fx.data, fit.labels()?), (&vx.data, val.labels()?), &opt)?;
        log::info!(
            "{kind}: best epoch {} validation macro-F1 {:.4}",
            outcome.best_epoch,
            outcome.best_val_macro_f1
        );
        outcome
            .model
            .save(model_path(cfg, kind), init_seed, Some("../features/scaler.json"), &train_all.columns)?;
        let summary = TrainSummary {
            arch,
            best_epoch: outcome.best_epoch,
            best_val_macro_f1: outcome.best_val_macro_f1,
            crossval: cv_report,
            history: outcome.history,
        };
        grid::write_json(&dir.join(format!("{kind}_summary.json")), &summary)?;
        out.insert(kind, summary);
    }
    cfg.stamp(Stage::Train)?;
    Ok(out)
}

fn load_model(cfg: &RunConfig, kind: ModelKind) -> Result<Model> {
    let path = model_path(cfg, kind);
    if !grid::with_suffix(&path, "json").is_file() {
        return Err(Error::MissingArtifact {
            stage: Stage::Train.name().into(),
            path: grid::with_suffix(&path, "json"),
        });
    }
    Ok(Model::load(path)?.0)
}

/// Test-set metrics for one model on a scaled table.
pub fn evaluate_model(model: &Model, test: &FeatureTable) -> Result<MetricsReport> {
    let inputs = model.inputs(test)?;
    let probs = model.predict_proba(&inputs.data, inputs.n)?;
    metrics::evaluate(test.labels()?, &probs)
}

pub fn run_eval(cfg: &RunConfig) -> Result<Vec<(ModelKind, MetricsReport)>> {
    cfg.check_upstream(Stage::Eval)?;
    let test = read_scaled(cfg, "test.csv")?;
    let dir = cfg.stage_dir(Stage::Eval);
    create_dir(&dir)?;
    let mut out = Vec::new();
    for &kind in &cfg.train.models {
        let report = evaluate_model(&load_model(cfg, kind)?, &test)?;
        report.write_json(dir.join(format!("metrics_{kind}.json")))?;
        out.push((kind, report));
    }
    cfg.stamp(Stage::Eval)?;
    Ok(out)
}

/// Northern and southern quarter of the grid, attributed to classes 3 and 1.
pub fn band_regions(spec: &GridSpec) -> Vec<Region> {
    let q = spec.height / 4;
    let lat = |row: usize| spec.lat_max - row as f64 * spec.cell;
    let (west, east) = (spec.lon_min, spec.lon_max());
    vec![
        Region::new("north", (lat(0), west), (lat(q), east), 3),
        Region::new("south", (lat(spec.height - q), west), (lat(spec.height), east), 1),
    ]
}

fn scenario_slugs(cfg: &RunConfig) -> Result<Vec<String>> {
    let dir = tables_dir(cfg);
    let mut slugs = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let name = entry.map_err(|e| Error::io(&dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".json") {
            if stem != HISTORICAL_DIR {
                slugs.push(stem.to_string());
            }
        }
    }
    slugs.sort();
    Ok(slugs)
}

fn default_scenario(slugs: &[String]) -> Result<String> {
    let keys = slugs.iter().map(|s| ScenarioKey::from_slug(s)).collect::<Result<Vec<_>>>()?;
    keys.iter()
        .min_by(|a, b| {
            (&b.period, &b.ssp, &a.climate_model).cmp(&(&a.period, &a.ssp, &b.climate_model))
        })
        .map(|k| k.slug())
        .ok_or_else(|| Error::Data("no scenario tables to attribute".into()))
}

/// Evenly spaced rows, at most `cap`.
fn spread_rows(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        (0..cap).map(|k| k * n / cap).collect()
    }
}

/// Permutation importance on the test set and integrated gradients over
/// regions, per model.
pub fn run_attribute(cfg: &RunConfig) -> Result<()> {
    cfg.check_upstream(Stage::Attribute)?;
    let test = read_scaled(cfg, "test.csv")?;
    let test = test.select(&spread_rows(test.rows(), cfg.attribute.max_samples));
    let fdir = cfg.stage_dir(Stage::Features);
    let scaler = ScalerParams::read(fdir.join("scaler.json"), &test.columns)?;
    let slugs = scenario_slugs(cfg)?;
    let slug = if cfg.attribute.scenario.is_empty() {
        default_scenario(&slugs).ok()
    } else if slugs.contains(&cfg.attribute.scenario) {
        Some(cfg.attribute.scenario.clone())
    } else {
        return Err(Error::Config(format!("no scenario `{}` in the feature tables", cfg.attribute.scenario)));
    };
    let historical = apply_scaler(&FeatureTable::read_bin(tables_dir(cfg).join(HISTORICAL_DIR))?, &scaler)?;
    let scenario = match &slug {
        Some(s) => Some(apply_scaler(&FeatureTable::read_bin(tables_dir(cfg).join(s))?, &scaler)?),
        None => None,
    };
    let spec = *InputData::read_mask(cfg)?.spec();
    let regions = if cfg.attribute.regions.is_empty() {
        band_regions(&spec)
    } else {
        cfg.attribute.regions.clone()
    };
    let dir = cfg.stage_dir(Stage::Attribute);
    create_dir(&dir)?;
    for &kind in &cfg.attribute.models {
        let model = load_model(cfg, kind)?;
        let inputs = model.inputs(&test)?;
        let report = permutation_importance(
            &model,
            &inputs,
            test.labels()?,
            cfg.attribute.repeats,
            cfg.stage_seed(&format!("importance:{kind}")),
            cfg.attribute.score,
        )?;
        report.write_csv(dir.join(format!("importance_{kind}.csv")))?;
        report.write_json(dir.join(format!("importance_{kind}.json")))?;
        if let Some(scenario) = &scenario {
            for region in &regions {
                let r = region_attribution(
                    &model,
                    &spec,
                    region,
                    scenario,
                    &historical,
                    cfg.attribute.steps,
                    cfg.attribute.max_pixels,
                )?;
                log::info!("{kind} {}: max completeness residual {:.2e}", region.name, r.max_residual);
                r.write_csv(dir.join(format!("region_{}_{kind}.csv", region.name)))?;
                grid::write_json(&dir.join(format!("region_{}_{kind}.json", region.name)), &r)?;
            }
        }
    }
    cfg.stamp(Stage::Attribute)
}

impl InputData {
    fn read_mask(cfg: &RunConfig) -> Result<ClassMask> {
        ClassMask::from_raster(grid::read_raster(cfg.data_dir().join("mask"))?)
    }
}

/// Mean class change over the northern and southern quarter of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDeltas {
    pub ssp: String,
    pub period: String,
    pub north: [f64; NUM_CLASSES],
    pub south: [f64; NUM_CLASSES],
}

fn project_kinds(cfg: &RunConfig) -> &[ModelKind] {
    if cfg.project.models.is_empty() {
        &cfg.train.models
    } else {
        &cfg.project.models
    }
}

fn group_name(ssp: &str, period: &str) -> String {
    format!("{ssp}__{period}")
}

/// Probability maps for every scenario, per-(SSP, period) ensembles, change
/// maps against the observed mask, and class-count trajectories.
pub fn run_project(cfg: &RunConfig) -> Result<BTreeMap<ModelKind, Vec<BandDeltas>>> {
    cfg.check_upstream(Stage::Project)?;
    let mask = InputData::read_mask(cfg)?;
    let spec = *mask.spec();
    let fdir = cfg.stage_dir(Stage::Features);
    let slugs = scenario_slugs(cfg)?;
    let dir = cfg.stage_dir(Stage::Project);
    create_dir(&dir)?;
    let mut tables = Vec::new();
    for s in &slugs {
        let t = FeatureTable::read_bin(tables_dir(cfg).join(s))?;
        let scaler = ScalerParams::read(fdir.join("scaler.json"), &t.columns)?;
        let scaled = if cfg.project.clip {
            apply_scaler_clipped(&t, &scaler)?
        } else {
            apply_scaler(&t, &scaler)?
        };
        tables.push((ScenarioKey::from_slug(s)?, scaled));
    }
    let q = spec.height / 4;
    let mut out = BTreeMap::new();
    for &kind in project_kinds(cfg) {
        let model = load_model(cfg, kind)?;
        let kdir = dir.join(kind.name());
        let mut projections = Vec::new();
        for (key, table) in &tables {
            let inputs = model.inputs(table)?;
            let probs = model.predict_proba(&inputs.data, inputs.n)?;
            let maps = ProbabilityMaps::from_predictions(spec, &table.pixels, &probs, Provenance::Scenario(key.clone()))?;
            maps.write_dir(kdir.join("scenarios").join(key.slug()))?;
            projections.push((key.clone(), maps));
        }
        let mut groups: BTreeMap<(String, String), Vec<ProbabilityMaps>> = BTreeMap::new();
        for (key, maps) in &projections {
            groups.entry((key.ssp.clone(), key.period.clone())).or_default().push(maps.clone());
        }
        let mut bands = Vec::new();
        for ((ssp, period), members) in &groups {
            let ens = ensemble_average(members)?;
            let name = group_name(ssp, period);
            ens.write_dir(kdir.join("ensemble").join(&name))?;
            let delta = delta_heatmap(&ens, &mask)?;
            delta.write_dir(kdir.join("delta").join(&name))?;
            let band = |rows: std::ops::Range<usize>| -> [f64; NUM_CLASSES] {
                std::array::from_fn(|c| delta.band_mean(c, rows.clone()).unwrap_or(f64::NAN))
            };
            bands.push(BandDeltas {
                ssp: ssp.clone(),
                period: period.clone(),
                north: band(0..q),
                south: band(spec.height - q..spec.height),
            });
        }
        grid::write_json(&kdir.join("bands.json"), &bands)?;
        write_trajectory_csv(&trajectory_report(&mask, &projections)?, kdir.join("trajectory.csv"))?;
        out.insert(kind, bands);
    }
    cfg.stamp(Stage::Project)?;
    Ok(out)
}

/// PNG figures and a plain-text summary from the eval, attribute and
/// project outputs.
pub fn run_report(cfg: &RunConfig) -> Result<()> {
    cfg.check_upstream(Stage::Report)?;
    let dir = cfg.stage_dir(Stage::Report);
    create_dir(&dir)?;
    let mut summary = String::new();
    for &kind in &cfg.train.models {
        let m = MetricsReport::read_json(cfg.stage_dir(Stage::Eval).join(format!("metrics_{kind}.json")))?;
        summary.push_str(&format!("## {kind}\n\n{m}\n"));
    }
    let adir = cfg.stage_dir(Stage::Attribute);
    for &kind in &cfg.attribute.models {
        let r: ImportanceReport = grid::read_json(&adir.join(format!("importance_{kind}.json")))?;
        let ranked = r.ranked();
        let top: Vec<f64> = ranked.iter().take(20).map(|f| f.importance).collect();
        render::bar_chart_png(&top, dir.join(format!("importance_{kind}.png")))?;
        summary.push_str(&format!("## {kind} permutation importance (top 10)\n\n"));
        for f in ranked.iter().take(10) {
            summary.push_str(&format!("{:<20} {:>9.4}\n", f.feature, f.importance));
        }
        summary.push('\n');
    }
    let pdir = cfg.stage_dir(Stage::Project);
    for &kind in project_kinds(cfg) {
        let kdir = pdir.join(kind.name());
        let rows: Vec<TrajectoryRow> = crate::scenario::read_trajectory_csv(kdir.join("trajectory.csv"))?;
        let mut by_ssp: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
        for r in &rows {
            let series = by_ssp.entry(&r.ssp).or_insert_with(|| vec![Vec::new(); NUM_CLASSES]);
            series[r.class].push(r.count as f64);
        }
        for (ssp, series) in &by_ssp {
            render::line_chart_png(series, dir.join(format!("trajectory_{kind}_{ssp}.png")))?;
        }
        let bands: Vec<BandDeltas> = grid::read_json(&kdir.join("bands.json"))?;
        summary.push_str(&format!("## {kind} mean class change, north / south quarter\n\n"));
        for b in &bands {
            let name = group_name(&b.ssp, &b.period);
            for c in 0..NUM_CLASSES {
                let delta = grid::read_raster(kdir.join("delta").join(&name).join(format!("delta_class{c}")))?;
                render::delta_png(&delta, cfg.report.scale, dir.join(format!("delta_{kind}_{name}_class{c}.png")))?;
            }
            let fmt = |v: &[f64; NUM_CLASSES]| v.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
            summary.push_str(&format!("{name:<24} {} / {}\n", fmt(&b.north), fmt(&b.south)));
        }
        summary.push('\n');
    }
    let path = dir.join("summary.txt");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    cfg.stamp(Stage::Report)
}

/// Run every stage in order.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    if !cfg.external_data {
        run_synth(cfg)?;
    }
    run_features(cfg)?;
    run_train(cfg)?;
    run_eval(cfg)?;
    run_attribute(cfg)?;
    run_project(cfg)?;
    run_report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprints_chain_through_upstream() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.optimizer.epochs = 3;
        assert_eq!(a.fingerprint(Stage::Features).unwrap(), b.fingerprint(Stage::Features).unwrap());
        assert_ne!(a.fingerprint(Stage::Train).unwrap(), b.fingerprint(Stage::Train).unwrap());
        assert_ne!(a.fingerprint(Stage::Report).unwrap(), b.fingerprint(Stage::Report).unwrap());
        let mut c = a.clone();
        c.threads = Some(3);
        c.out = "elsewhere".into();
        assert_eq!(a.fingerprint(Stage::Report).unwrap(), c.fingerprint(Stage::Report).unwrap());
    }

    #[test]
    fn stage_seeds_differ_by_tag_and_seed() {
        let a = RunConfig::default();
        assert_ne!(a.stage_seed("split"), a.stage_seed("undersample"));
        let b = RunConfig { seed: 43, ..a.clone() };
        assert_ne!(a.stage_seed("split"), b.stage_seed("split"));
        assert_eq!(a.stage_seed("split"), a.clone().stage_seed("split"));
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<Stage>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 1, "bogus": true}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));
        fs::write(&p, r#"{"seed": 1, "train": {"models": ["mlp"]}}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.train.models, vec![ModelKind::Mlp]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "attribute lists untrained models");
        assert!(matches!(RunConfig::load(dir.path().join("absent.json")), Err(Error::Config(_))));
    }

    #[test]
    fn default_scenario_is_latest_period_last_ssp_first_model() {
        let slugs: Vec<String> = ["a__SSP1__2040", "a__SSP5__2020", "a__SSP5__2040", "b__SSP5__2040"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(default_scenario(&slugs).unwrap(), "a__SSP5__2040");
    }

    #[test]
    fn band_regions_cover_quarters() {
        let spec = GridSpec::new(8, 8, 10.0, 50.0, 0.5).unwrap();
        let r = band_regions(&spec);
        let rows = |reg: &Region| {
            (0..8)
                .filter(|&i| {
                    let (lon, lat) = spec.pixel_center(i, 3);
                    reg.contains(lon, lat)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(rows(&r[0]), vec![0, 1]);
        assert_eq!(rows(&r[1]), vec![6, 7]);
    }
}
