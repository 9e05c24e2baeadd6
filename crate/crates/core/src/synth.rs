//! Planted synthetic world: terrain, daily weather for a historical period
//! and scripted future scenarios, and a class mask produced by a known rule
//! over the historical features.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climate::{monthly_feature_name, ClimateStacks, DailyStack, Variable, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::features::climate_on_grid;
use crate::grid::{self, ClassMask, DType, GridSpec, Raster, NUM_CLASSES};
use crate::scenario::ScenarioKey;

/// Class counts of the full-resolution 2010 irrigation mask.
pub const REFERENCE_CLASS_COUNTS: [usize; NUM_CLASSES] = [11_732_309, 146_699, 586_141, 1_173_203];

pub fn reference_fractions() -> [f64; NUM_CLASSES] {
    let total: usize = REFERENCE_CLASS_COUNTS.iter().sum();
    REFERENCE_CLASS_COUNTS.map(|c| c as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoModel {
    pub name: String,
    /// Added to every scenario warming, °C.
    pub warming_offset: f64,
    /// Multiplies daily precipitation amounts.
    pub precip_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspDrift {
    pub name: String,
    /// Warming in °C for each configured period, in order.
    pub warming: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub name: String,
    pub start_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub lon_min: f64,
    pub lat_max: f64,
    pub cell: f64,
    /// Analysis pixels per climate-grid cell along each axis.
    pub climate_coarsening: usize,
    pub start_year: i32,
    pub years: usize,
    pub future_years: usize,
    pub class_fractions: [f64; NUM_CLASSES],
    pub label_noise: f64,
    pub climate_models: Vec<PseudoModel>,
    pub ssps: Vec<SspDrift>,
    pub periods: Vec<Period>,
    /// Relative change of precipitation amounts per °C of warming: positive
    /// at the northern edge, negative at the southern edge.
    pub precip_drift_per_degree: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 128,
            height: 128,
            lon_min: 60.0,
            lat_max: 58.0,
            cell: 1.0 / 120.0,
            climate_coarsening: 8,
            start_year: 2000,
            years: 10,
            future_years: 10,
            class_fractions: [0.40, 0.15, 0.20, 0.25],
            label_noise: 0.01,
            climate_models: vec![
                PseudoModel {
                    name: "pseudo-A".into(),
                    warming_offset: 0.0,
                    precip_scale: 1.0,
                },
                PseudoModel {
                    name: "pseudo-B".into(),
                    warming_offset: 0.4,
                    precip_scale: 0.97,
                },
            ],
            ssps: vec![
                SspDrift {
                    name: "SSP1-2.6".into(),
                    warming: vec![1.0, 1.6],
                },
                SspDrift {
                    name: "SSP5-8.5".into(),
                    warming: vec![1.5, 3.0],
                },
            ],
            periods: vec![
                Period {
                    name: "2020-2030".into(),
                    start_year: 2020,
                },
                Period {
                    name: "2040-2050".into(),
                    start_year: 2040,
                },
            ],
            precip_drift_per_degree: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.width, self.height, self.lon_min, self.lat_max, self.cell)
    }

    pub fn climate_grid(&self) -> Result<GridSpec> {
        let k = self.climate_coarsening;
        if k == 0 || self.width % k != 0 || self.height % k != 0 {
            return Err(Error::Config(format!(
                "climate_coarsening {k} must divide the grid size {}x{}",
                self.width, self.height
            )));
        }
        GridSpec::new(self.width / k, self.height / k, self.lon_min, self.lat_max, self.cell * k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.climate_grid()?;
        let sum: f64 = self.class_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_fractions.iter().any(|&f| !(0.0..1.0).contains(&f)) {
            return Err(Error::Config(format!(
                "class_fractions {:?} must be in [0, 1) and sum to 1",
                self.class_fractions
            )));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must be in [0, 1]".into()));
        }
        if self.years < 4 || (self.future_years == 0 && !self.periods.is_empty()) {
            return Err(Error::Config("need at least 4 baseline years and 1 future year".into()));
        }
        if let Some(s) = self.ssps.iter().find(|s| s.warming.len() != self.periods.len()) {
            return Err(Error::Config(format!(
                "{} lists {} warmings for {} periods",
                s.name,
                s.warming.len(),
                self.periods.len()
            )));
        }
        Ok(())
    }

    /// Every (model, SSP, period) with its total warming.
    pub fn scenarios(&self) -> Result<Vec<(ScenarioKey, f64, &PseudoModel, &Period)>> {
        let mut out = Vec::new();
        for m in &self.climate_models {
            for s in &self.ssps {
                for (p, w) in self.periods.iter().zip(&s.warming) {
                    out.push((ScenarioKey::new(&m.name, &s.name, &p.name)?, w + m.warming_offset, m, p));
                }
            }
        }
        Ok(out)
    }
}

/// The labelling rule, frozen on the historical period.
///
/// Drivers per pixel: `T` summer (Jun-Aug) mean of `t2m`, `P` annual sum of
/// `tp`, `J` annual sum of `monTstep6`, `E` elevation. With `z` the driver
/// standardized by the historical mean and std, a pixel is class 0 when
/// `max(-zT, zE) >= u0` (too cold or too high); otherwise
/// `W = zP - 0.5 zJ` picks class 1 below `w1`, class 2 below `w2`, class 3
/// above: wet, steady summers score highest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub u0: f64,
    pub w1: f64,
    pub w2: f64,
}

pub const DRIVERS: [&str; 4] = ["t2m", "tp", "monTstep6", "DEM_1km"];

impl PlantedRule {
    /// `[T, P, J, E]` at pixel `idx`.
    pub fn drivers(features: &BTreeMap<String, Raster>, idx: usize) -> Option<[f64; 4]> {
        let get = |name: &str| features.get(name).and_then(|r| r.valid_at(idx));
        let sum = |var: &str, months: std::ops::Range<usize>| -> Option<f64> {
            months.map(|m| get(&monthly_feature_name(var, m))).sum()
        };
        Some([
            sum("t2m", 5..8)? / 3.0,
            sum("tp", 0..12)?,
            sum("monTstep6", 0..12)?,
            get("DEM_1km")?,
        ])
    }

    fn z(&self, d: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|k| (d[k] - self.mean[k]) / self.std[k])
    }

    pub fn scores(&self, d: [f64; 4]) -> (f64, f64) {
        let [zt, zp, zj, ze] = self.z(d);
        ((-zt).max(ze), zp - 0.5 * zj)
    }

    pub fn classify(&self, d: [f64; 4]) -> u8 {
        let (u, w) = self.scores(d);
        if u >= self.u0 {
            0
        } else if w < self.w1 {
            1
        } else if w < self.w2 {
            2
        } else {
            3
        }
    }

    /// Fit standardization and thresholds so the drivers split into the
    /// requested class fractions.
    pub fn fit(drivers: &[[f64; 4]], fractions: [f64; NUM_CLASSES]) -> Result<Self> {
        let n = drivers.len();
        if n < NUM_CLASSES {
            return Err(Error::Data("too few pixels to plant a rule".into()));
        }
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            mean[k] = drivers.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let var = drivers.iter().map(|d| (d[k] - mean[k]).powi(2)).sum::<f64>() / n as f64;
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let mut rule = PlantedRule {
            mean,
            std,
            u0: f64::INFINITY,
            w1: f64::NEG_INFINITY,
            w2: f64::NEG_INFINITY,
        };
        let scores: Vec<(f64, f64)> = drivers.iter().map(|&d| rule.scores(d)).collect();
        let mut u: Vec<f64> = scores.iter().map(|s| s.0).collect();
        u.sort_by(f64::total_cmp);
        let n0 = (fractions[0] * n as f64).round() as usize;
        rule.u0 = if n0 == 0 { f64::INFINITY } else { u[n - n0] };
        let mut w: Vec<f64> = scores.iter().filter(|s| s.0 < rule.u0).map(|s| s.1).collect();
        w.sort_by(f64::total_cmp);
        let rest = fractions[1] + fractions[2] + fractions[3];
        let m = w.len();
        let cut = |f: f64| {
            let k = if rest > 0.0 { (f / rest * m as f64).round() as usize } else { 0 };
            if k >= m {
                f64::INFINITY
            } else {
                w[k]
            }
        };
        rule.w1 = cut(fractions[1]);
        rule.w2 = cut(fractions[1] + fractions[2]);
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub rule: PlantedRule,
    pub drivers: Vec<String>,
    pub class_counts: [usize; NUM_CLASSES],
    /// Class counts the rule assigns to each scenario's own features.
    pub scenario_truth_counts: BTreeMap<String, [usize; NUM_CLASSES]>,
}

pub struct SynthWorld {
    pub dem: Raster,
    pub mask: ClassMask,
    pub historical: ClimateStacks,
    pub scenarios: Vec<(ScenarioKey, ClimateStacks)>,
    /// The rule applied to each scenario's own features, without label noise.
    pub scenario_truth: Vec<ClassMask>,
    pub manifest: SynthManifest,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(seed ^ splitmix(a.wrapping_mul(0x1000_0000_01B3) ^ splitmix(b)))
}

/// Smooth random field on the unit square with roughly unit variance.
#[derive(Debug, Clone)]
struct Field(Vec<[f64; 3]>);

impl Field {
    fn new(rng: &mut impl Rng) -> Self {
        Field(
            (0..6)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0 * PI)])
                .collect(),
        )
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let amp = (2.0 / self.0.len() as f64).sqrt();
        self.0.iter().map(|[ku, kv, ph]| amp * (2.0 * PI * (ku * u + kv * v) + ph).cos()).sum()
    }
}

/// Per-pixel climate parameters of the historical period.
#[derive(Debug, Clone, Copy)]
struct Site {
    summer: f64,
    winter: f64,
    anomaly_sd: f64,
    wet_prob: f64,
    wet_scale: f64,
    dew_depression: f64,
    /// 0 at the northern edge, 1 at the southern edge.
    south: f64,
}

struct Fields {
    summer: Field,
    winter: Field,
    anomaly: Field,
    wet: Field,
    amount: Field,
    dew: Field,
}

impl Fields {
    fn site(&self, u: f64, v: f64) -> Site {
        Site {
            summer: 11.0 + 10.0 * u + 2.5 * self.summer.at(u, v),
            winter: -14.0 + 3.0 * u + 4.0 * self.winter.at(u, v),
            anomaly_sd: (2.6 + 1.2 * self.anomaly.at(u, v)).clamp(1.0, 5.0),
            wet_prob: (0.45 - 0.15 * u + 0.08 * self.wet.at(u, v)).clamp(0.1, 0.8),
            wet_scale: (5.5 - 2.0 * u + 1.0 * self.amount.at(u, v)).clamp(1.0, 10.0),
            dew_depression: (3.0 + 1.5 * self.dew.at(u, v)).clamp(0.5, 8.0),
            south: u,
        }
    }
}

/// Forcing applied to a period: warming in °C and a precipitation factor.
#[derive(Debug, Clone, Copy)]
struct Forcing {
    warming: f64,
    precip_scale: f64,
    precip_drift: f64,
}

const VARS: [Variable; 7] = Variable::ALL;

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Daily values of all seven variables for one pixel, variable-major.
fn weather(site: Site, forcing: Forcing, years: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = years * DAYS_PER_YEAR;
    let mid = (site.summer + site.winter) / 2.0;
    let amp = (site.summer - site.winter) / 2.0;
    let precip_factor =
        (forcing.precip_scale * (1.0 + forcing.precip_drift * forcing.warming * (1.0 - 2.0 * site.south))).max(0.05);
    let amounts = Gamma::new(0.8, site.wet_scale * precip_factor).expect("positive gamma parameters");
    let wind = Gamma::new(4.0, 3.0).expect("positive gamma parameters");
    let mut out = vec![Vec::with_capacity(days); VARS.len()];
    let mut pack: f64 = 0.0;
    for d in 0..days {
        let doy = (d % DAYS_PER_YEAR) as f64;
        let clim = mid - amp * (2.0 * PI * (doy - 15.0) / DAYS_PER_YEAR as f64).cos();
        let z: f64 = StandardNormal.sample(&mut rng);
        let tmean = clim + forcing.warming + site.anomaly_sd * z;
        let tmin = tmean - 5.0;
        let tmax = tmean + 5.0;
        let dz: f64 = StandardNormal.sample(&mut rng);
        let dew = tmin - site.dew_depression - dz.abs();
        let precip = if rng.random::<f64>() < site.wet_prob {
            amounts.sample(&mut rng)
        } else {
            0.0
        };
        // Whole m/s, like station gust reports. Ties at the percentile make
        // exceedance counts vary between pixels; continuous draws would not.
        let w: f64 = wind.sample(&mut rng);
        let w = w.round();
        if tmean < 0.0 {
            pack += precip;
        } else {
            pack -= pack.min(3.0 * tmean);
        }
        for (k, v) in VARS.iter().enumerate() {
            let value = match v {
                Variable::Tmax => tmax,
                Variable::Tmin => tmin,
                Variable::Tmean => tmean,
                Variable::Precip => precip,
                Variable::Dewpoint => dew,
                Variable::Windmax => w,
                Variable::Swe => pack,
            };
            out[k].push(quantize(value));
        }
    }
    out
}

fn generate_stacks(
    spec: GridSpec,
    fields: &Fields,
    forcing: Forcing,
    start_year: i32,
    years: usize,
    seed: u64,
    dataset: u64,
) -> Result<ClimateStacks> {
    let n = spec.len();
    let per_pixel: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / spec.width, idx % spec.width);
            let u = (i as f64 + 0.5) / spec.height as f64;
            let v = (j as f64 + 0.5) / spec.width as f64;
            weather(fields.site(u, v), forcing, years, sub_seed(seed, dataset, idx as u64))
        })
        .collect();
    let days = years * DAYS_PER_YEAR;
    let stacks = VARS
        .iter()
        .enumerate()
        .map(|(k, &var)| {
            let mut values = vec![0.0; days * n];
            for (idx, p) in per_pixel.iter().enumerate() {
                for (d, &v) in p[k].iter().enumerate() {
                    values[d * n + idx] = v;
                }
            }
            DailyStack::new(spec, var, start_year, years, values)
        })
        .collect::<Result<Vec<_>>>()?;
    ClimateStacks::new(stacks)
}

fn synth_dem(spec: GridSpec, rng: &mut impl Rng) -> Raster {
    let bumps: Vec<[f64; 4]> = (0..12)
        .map(|_| {
            [
                rng.random_range(0.0..spec.height as f64),
                rng.random_range(0.0..spec.width as f64),
                rng.random_range(200.0..1200.0),
                rng.random_range(4.0..16.0) * spec.width as f64 / 128.0,
            ]
        })
        .collect();
    let (p1, p2): (f64, f64) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    Raster::from_fn(spec, |i, j| {
        let (y, x) = (i as f64, j as f64);
        let hills: f64 = bumps
            .iter()
            .map(|[ci, cj, h, s]| h * (-((y - ci).powi(2) + (x - cj).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        let ripple = 15.0 * (0.7 * x + p1).sin() * (0.5 * y + p2).sin();
        100.0 + 150.0 * x / spec.width as f64 + hills + ripple
    })
}

fn driver_rows(climate: &BTreeMap<String, Raster>, dem: &Raster) -> Result<Vec<[f64; 4]>> {
    let mut features = climate.clone();
    features.insert(DRIVERS[3].into(), dem.clone());
    (0..dem.spec.len())
        .map(|idx| {
            PlantedRule::drivers(&features, idx)
                .ok_or_else(|| Error::Data(format!("synthetic features missing at pixel {idx}")))
        })
        .collect()
}

/// Build the whole synthetic world in memory.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthWorld> {
    config.validate()?;
    let spec = config.grid()?;
    let cspec = config.climate_grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields = Fields {
        summer: Field::new(&mut rng),
        winter: Field::new(&mut rng),
        anomaly: Field::new(&mut rng),
        wet: Field::new(&mut rng),
        amount: Field::new(&mut rng),
        dew: Field::new(&mut rng),
    };
    let dem = synth_dem(spec, &mut rng);
    let baseline_forcing = Forcing {
        warming: 0.0,
        precip_scale: 1.0,
        precip_drift: 0.0,
    };
    let historical = generate_stacks(cspec, &fields, baseline_forcing, config.start_year, config.years, seed, 0)?;
    let hist_features: BTreeMap<String, Raster> = climate_on_grid(&historical, &historical, &spec)?.into_iter().collect();
    let drivers = driver_rows(&hist_features, &dem)?;
    let rule = PlantedRule::fit(&drivers, config.class_fractions)?;

    let mut label_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, u64::MAX, 0));
    let labels: Vec<f64> = drivers
        .iter()
        .map(|&d| {
            let c = rule.classify(d);
            if label_rng.random::<f64>() < config.label_noise {
                label_rng.random_range(0..NUM_CLASSES as u8) as f64
            } else {
                c as f64
            }
        })
        .collect();
    let mask = ClassMask::from_raster(Raster::new(spec, labels)?)?;

    let mut scenarios = Vec::new();
    let mut scenario_truth_counts = BTreeMap::new();
    let mut scenario_truth = Vec::new();
    for (k, (key, warming, model, period)) in config.scenarios()?.into_iter().enumerate() {
        let forcing = Forcing {
            warming,
            precip_scale: model.precip_scale,
            precip_drift: config.precip_drift_per_degree,
        };
        let stacks = generate_stacks(cspec, &fields, forcing, period.start_year, config.future_years, seed, k as u64 + 1)?;
        let feats: BTreeMap<String, Raster> = climate_on_grid(&historical, &stacks, &spec)?.into_iter().collect();
        let truth: Vec<f64> = driver_rows(&feats, &dem)?.into_iter().map(|d| rule.classify(d) as f64).collect();
        let truth = ClassMask::from_raster(Raster::new(spec, truth)?)?;
        scenario_truth_counts.insert(key.slug(), truth.counts());
        scenario_truth.push(truth);
        scenarios.push((key, stacks));
    }
    let manifest = SynthManifest {
        seed,
        config: config.clone(),
        rule,
        drivers: DRIVERS.iter().map(|s| s.to_string()).collect(),
        class_counts: mask.counts(),
        scenario_truth_counts,
    };
    Ok(SynthWorld {
        dem,
        mask,
        historical,
        scenarios,
        scenario_truth,
        manifest,
    })
}

pub const HISTORICAL_DIR: &str = "historical";

impl SynthWorld {
    /// Layout: `dem`, `mask`, `climate/historical/<var>`,
    /// `climate/<model>__<ssp>__<period>/<var>`, `truth/<slug>` masks,
    /// `MANIFEST.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        grid::write_raster(&self.dem, dir.join("dem"))?;
        grid::write_raster_as(self.mask.raster(), dir.join("mask"), DType::F32)?;
        let climate = dir.join("climate");
        self.historical.write_dir(climate.join(HISTORICAL_DIR), DType::F32)?;
        for ((key, stacks), truth) in self.scenarios.iter().zip(&self.scenario_truth) {
            stacks.write_dir(climate.join(key.slug()), DType::F32)?;
            grid::write_raster_as(truth.raster(), dir.join("truth").join(key.slug()), DType::F32)?;
        }
        grid::write_json(&dir.join("MANIFEST.json"), &self.manifest)
    }
}
