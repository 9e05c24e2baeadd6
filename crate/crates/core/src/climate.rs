//! Monthly climate indices from daily per-pixel series.
//!
//! Every series uses a 365-day no-leap calendar. Monthly indices are averaged
//! across the years of the series (decade averaging); the 12-month SPI is
//! reduced to a single value.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, DType, GridSpec, Raster, RasterManifest};

pub const DAYS_PER_YEAR: usize = 365;
pub const MONTH_LENGTHS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// The ten monthly climate variables, in feature-column order.
pub const MONTHLY_VARIABLES: [&str; 10] = [
    "tasmax",
    "tasmin",
    "t2m",
    "pr_p95",
    "sfcWindmax",
    "fy",
    "monT0ud",
    "monTstep6",
    "tp",
    "snw",
];
pub const SPI_FEATURE: &str = "12m_SPI";
pub const NUM_CLIMATE_FEATURES: usize = MONTHLY_VARIABLES.len() * 12 + 1;

const NESTEROV_RESET_MM: f64 = 3.0;
const NESTEROV_THRESHOLD: f64 = 4000.0;
const JUMP_THRESHOLD: f64 = 6.0;

pub fn monthly_feature_name(var: &str, month: usize) -> String {
    format!("{var}_{:02}", month + 1)
}

/// Names of the 121 climate features: each monthly variable for months
/// 01..12, then the annual SPI.
pub fn climate_feature_names() -> Vec<String> {
    let mut names: Vec<String> = MONTHLY_VARIABLES
        .iter()
        .flat_map(|v| (0..12).map(move |m| monthly_feature_name(v, m)))
        .collect();
    names.push(SPI_FEATURE.to_string());
    names
}

const fn month_starts() -> [usize; 13] {
    let mut starts = [0; 13];
    let mut m = 0;
    while m < 12 {
        starts[m + 1] = starts[m] + MONTH_LENGTHS[m];
        m += 1;
    }
    starts
}

const MONTH_STARTS: [usize; 13] = month_starts();

/// Calendar month (0-based) of a day of the year (0-based).
pub fn month_of_day(day: usize) -> usize {
    debug_assert!(day < DAYS_PER_YEAR);
    MONTH_STARTS.partition_point(|&s| s <= day) - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Tmax,
    Tmin,
    Tmean,
    Precip,
    Dewpoint,
    Windmax,
    Swe,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::Tmax,
        Variable::Tmin,
        Variable::Tmean,
        Variable::Precip,
        Variable::Dewpoint,
        Variable::Windmax,
        Variable::Swe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Tmax => "tmax",
            Variable::Tmin => "tmin",
            Variable::Tmean => "tmean",
            Variable::Precip => "precip",
            Variable::Dewpoint => "dewpoint",
            Variable::Windmax => "windmax",
            Variable::Swe => "swe",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown climate variable `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub variable: Variable,
    pub start_year: i32,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn new(variable: Variable, start_year: i32, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % DAYS_PER_YEAR != 0 {
            return Err(Error::InvalidArgument(format!(
                "{variable} series of {} days is not a whole number of 365-day years",
                values.len()
            )));
        }
        Ok(DailySeries {
            variable,
            start_year,
            values,
        })
    }

    pub fn years(&self) -> usize {
        self.values.len() / DAYS_PER_YEAR
    }

    pub fn year_range(&self) -> Range<i32> {
        self.start_year..self.start_year + self.years() as i32
    }

    pub fn day(&self, year: usize, day: usize) -> f64 {
        self.values[year * DAYS_PER_YEAR + day]
    }

    pub fn month_days(&self, year: usize, month: usize) -> &[f64] {
        let base = year * DAYS_PER_YEAR;
        &self.values[base + MONTH_STARTS[month]..base + MONTH_STARTS[month + 1]]
    }

    /// Sub-series covering the calendar years in `years`.
    pub fn slice_years(&self, years: Range<i32>) -> Result<DailySeries> {
        let own = self.year_range();
        if years.is_empty() || years.start < own.start || years.end > own.end {
            return Err(Error::InvalidArgument(format!(
                "years {years:?} are not inside the series span {own:?}"
            )));
        }
        let a = (years.start - own.start) as usize * DAYS_PER_YEAR;
        let b = (years.end - own.start) as usize * DAYS_PER_YEAR;
        DailySeries::new(self.variable, years.start, self.values[a..b].to_vec())
    }

    fn check_aligned(&self, other: &DailySeries) -> Result<()> {
        if self.values.len() != other.values.len() || self.start_year != other.start_year {
            return Err(Error::InvalidArgument(format!(
                "{} and {} series are not aligned",
                self.variable, other.variable
            )));
        }
        Ok(())
    }
}

/// Mean over years of the per-month count of days satisfying `pred(year, day)`.
fn mean_monthly_count(years: usize, mut pred: impl FnMut(usize, usize) -> bool) -> [f64; 12] {
    let mut counts = [0usize; 12];
    for y in 0..years {
        for d in 0..DAYS_PER_YEAR {
            if pred(y, d) {
                counts[month_of_day(d)] += 1;
            }
        }
    }
    counts.map(|c| c as f64 / years as f64)
}

/// Empirical quantile of sorted data, linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileThresholds {
    pub variable: Variable,
    pub q: f64,
    pub per_month: [f64; 12],
}

/// Per-calendar-month quantile `q` of all baseline days falling in that month.
pub fn fit_percentiles(baseline: &DailySeries, q: f64) -> Result<PercentileThresholds> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} must be in (0, 1)")));
    }
    let mut per_month = [0.0; 12];
    for (m, slot) in per_month.iter_mut().enumerate() {
        let mut bucket: Vec<f64> = (0..baseline.years())
            .flat_map(|y| baseline.month_days(y, m).iter().copied())
            .collect();
        if bucket.is_empty() {
            return Err(Error::Data(format!("no baseline days in month {}", m + 1)));
        }
        bucket.sort_by(f64::total_cmp);
        *slot = quantile_sorted(&bucket, q);
    }
    Ok(PercentileThresholds {
        variable: baseline.variable,
        q,
        per_month,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Above,
    Below,
}

/// Decade-mean monthly count of days strictly beyond the month's threshold.
pub fn count_exceedance(
    series: &DailySeries,
    thresholds: &PercentileThresholds,
    direction: Direction,
) -> Result<[f64; 12]> {
    if series.variable != thresholds.variable {
        return Err(Error::InvalidArgument(format!(
            "{} thresholds applied to a {} series",
            thresholds.variable, series.variable
        )));
    }
    Ok(mean_monthly_count(series.years(), |y, d| {
        let thr = thresholds.per_month[month_of_day(d)];
        let v = series.day(y, d);
        match direction {
            Direction::Above => v > thr,
            Direction::Below => v < thr,
        }
    }))
}

/// Decade mean of the monthly aggregate: precipitation is summed within the
/// month (mm/month), every other variable is averaged.
pub fn monthly_mean(series: &DailySeries) -> [f64; 12] {
    let years = series.years();
    let mut out = [0.0; 12];
    for (m, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for y in 0..years {
            let days = series.month_days(y, m);
            let total: f64 = days.iter().sum();
            acc += match series.variable {
                Variable::Precip => total,
                _ => total / days.len() as f64,
            };
        }
        *slot = acc / years as f64;
    }
    out
}

/// Days per month with a cumulative Nesterov index above 4000.
///
/// The index accumulates `tmax * (tmax - dewpoint)` on days with positive
/// `tmax` and resets to zero whenever daily precipitation exceeds 3 mm.
pub fn nesterov_fy(tmax: &DailySeries, dewpoint: &DailySeries, precip: &DailySeries) -> Result<[f64; 12]> {
    tmax.check_aligned(dewpoint)?;
    tmax.check_aligned(precip)?;
    let mut index = 0.0;
    let mut above = vec![false; tmax.values.len()];
    for (k, flag) in above.iter_mut().enumerate() {
        let t = tmax.values[k];
        if precip.values[k] > NESTEROV_RESET_MM {
            index = 0.0;
        } else if t > 0.0 {
            index += t * (t - dewpoint.values[k]).max(0.0);
        }
        *flag = index > NESTEROV_THRESHOLD;
    }
    Ok(mean_monthly_count(tmax.years(), |y, d| above[y * DAYS_PER_YEAR + d]))
}

/// Days per month on which the temperature passes through 0 °C (`tmin < 0 < tmax`).
pub fn zero_crossings(tmin: &DailySeries, tmax: &DailySeries) -> Result<[f64; 12]> {
    tmin.check_aligned(tmax)?;
    Ok(mean_monthly_count(tmin.years(), |y, d| {
        tmin.day(y, d) < 0.0 && tmax.day(y, d) > 0.0
    }))
}

/// Days per month whose mean temperature differs from the previous day's by
/// more than 6 °C. The first day of the series never counts.
pub fn temp_jumps(tmean: &DailySeries) -> [f64; 12] {
    let v = &tmean.values;
    mean_monthly_count(tmean.years(), |y, d| {
        let k = y * DAYS_PER_YEAR + d;
        k > 0 && (v[k] - v[k - 1]).abs() > JUMP_THRESHOLD
    })
}

/// Inverse standard normal CDF, rational approximation with |error| < 4.5e-4.
pub fn inverse_normal_approx(p: f64) -> f64 {
    const C: [f64; 3] = [2.515517, 0.802853, 0.010328];
    const D: [f64; 3] = [1.432788, 0.189269, 0.001308];
    let tail = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        t - (C[0] + C[1] * t + C[2] * t * t) / (1.0 + D[0] * t + D[1] * t * t + D[2] * t * t * t)
    };
    if p < 0.5 {
        -tail(p)
    } else {
        tail(1.0 - p)
    }
}

/// Gamma(shape, scale) CDF. Very large shapes (near-constant samples) use the
/// Wilson–Hilferty normal approximation.
fn gamma_cdf(shape: f64, scale: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if shape > 1e5 {
        let z = ((x / (shape * scale)).cbrt() - (1.0 - 1.0 / (9.0 * shape))) / (1.0 / (9.0 * shape)).sqrt();
        return 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
    }
    statrs::function::gamma::gamma_lr(shape, x / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpiMonthFit {
    Gamma { shape: f64, scale: f64, zero_prob: f64 },
    AllZero,
}

impl SpiMonthFit {
    /// Gamma fit by Thom's approximation, mixed with the probability of zero.
    pub fn fit(samples: &[f64]) -> SpiMonthFit {
        let positive: Vec<f64> = samples.iter().copied().filter(|&x| x > 0.0).collect();
        if positive.is_empty() {
            return SpiMonthFit::AllZero;
        }
        let n = positive.len() as f64;
        let mean = positive.iter().sum::<f64>() / n;
        let mean_ln = positive.iter().map(|x| x.ln()).sum::<f64>() / n;
        let a = (mean.ln() - mean_ln).max(1e-12);
        let shape = (1.0 + (1.0 + 4.0 * a / 3.0).sqrt()) / (4.0 * a);
        SpiMonthFit::Gamma {
            shape,
            scale: mean / shape,
            zero_prob: (samples.len() - positive.len()) as f64 / samples.len() as f64,
        }
    }

    pub fn spi(&self, x: f64) -> f64 {
        match *self {
            SpiMonthFit::AllZero => 0.0,
            SpiMonthFit::Gamma {
                shape,
                scale,
                zero_prob,
            } => {
                let h = zero_prob + (1.0 - zero_prob) * gamma_cdf(shape, scale, x);
                inverse_normal_approx(h.clamp(1e-6, 1.0 - 1e-6))
            }
        }
    }
}

/// Monthly precipitation totals, indexed `year * 12 + month`.
pub fn monthly_totals(precip: &DailySeries) -> Vec<f64> {
    (0..precip.years())
        .flat_map(|y| (0..12).map(move |m| (y, m)))
        .map(|(y, m)| precip.month_days(y, m).iter().sum())
        .collect()
}

/// 12-month rolling sums ending at each month; `None` until a full window exists.
pub fn rolling_12(totals: &[f64]) -> Vec<Option<f64>> {
    (0..totals.len())
        .map(|k| (k >= 11).then(|| totals[k - 11..=k].iter().sum()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiModel {
    pub months: [SpiMonthFit; 12],
}

impl SpiModel {
    /// Fit one gamma distribution per calendar month to the baseline's
    /// 12-month precipitation sums ending in that month.
    pub fn fit(baseline: &DailySeries) -> Result<SpiModel> {
        if baseline.variable != Variable::Precip {
            return Err(Error::InvalidArgument(format!(
                "SPI needs precipitation, got {}",
                baseline.variable
            )));
        }
        if baseline.years() < 4 {
            return Err(Error::InvalidArgument(format!(
                "SPI baseline has {} years; at least 4 are required",
                baseline.years()
            )));
        }
        let sums = rolling_12(&monthly_totals(baseline));
        let mut months = [SpiMonthFit::AllZero; 12];
        for (m, fit) in months.iter_mut().enumerate() {
            let samples: Vec<f64> = sums.iter().skip(m).step_by(12).filter_map(|s| *s).collect();
            *fit = SpiMonthFit::fit(&samples);
            if *fit == SpiMonthFit::AllZero {
                log::warn!("SPI baseline month {} has no precipitation; SPI set to 0", m + 1);
            }
        }
        Ok(SpiModel { months })
    }

    /// SPI for every month of `precip` that closes a full 12-month window.
    pub fn series(&self, precip: &DailySeries) -> Vec<Option<f64>> {
        rolling_12(&monthly_totals(precip))
            .into_iter()
            .enumerate()
            .map(|(k, s)| s.map(|x| self.months[k % 12].spi(x)))
            .collect()
    }

    /// Annual SPI: mean over each year's available monthly values, then mean
    /// over years.
    pub fn annual_mean(&self, precip: &DailySeries) -> Result<f64> {
        let series = self.series(precip);
        let yearly: Vec<f64> = series
            .chunks(12)
            .filter_map(|year| {
                let vals: Vec<f64> = year.iter().filter_map(|v| *v).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        if yearly.is_empty() {
            return Err(Error::Data("series too short for a 12-month SPI window".into()));
        }
        Ok(yearly.iter().sum::<f64>() / yearly.len() as f64)
    }
}

/// Annual 12-month SPI of `precip`, with the gamma fits taken from `baseline_years`.
pub fn spi_12m(precip: &DailySeries, baseline_years: Range<i32>) -> Result<f64> {
    let baseline = precip.slice_years(baseline_years)?;
    SpiModel::fit(&baseline)?.annual_mean(precip)
}

/// One pixel's daily inputs.
#[derive(Debug, Clone)]
pub struct ClimateInputs {
    pub tmax: DailySeries,
    pub tmin: DailySeries,
    pub tmean: DailySeries,
    pub precip: DailySeries,
    pub dewpoint: DailySeries,
    pub windmax: DailySeries,
    pub swe: DailySeries,
}

impl ClimateInputs {
    pub fn get(&self, v: Variable) -> &DailySeries {
        match v {
            Variable::Tmax => &self.tmax,
            Variable::Tmin => &self.tmin,
            Variable::Tmean => &self.tmean,
            Variable::Precip => &self.precip,
            Variable::Dewpoint => &self.dewpoint,
            Variable::Windmax => &self.windmax,
            Variable::Swe => &self.swe,
        }
    }
}

/// Everything fit on the historical baseline and reused unchanged for
/// scenario periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateBaseline {
    pub tasmax: PercentileThresholds,
    pub tasmin: PercentileThresholds,
    pub pr_p95: PercentileThresholds,
    pub wind_p95: PercentileThresholds,
    pub spi: SpiModel,
}

impl ClimateBaseline {
    pub fn fit(historical: &ClimateInputs) -> Result<Self> {
        Ok(ClimateBaseline {
            tasmax: fit_percentiles(&historical.tmax, 0.95)?,
            tasmin: fit_percentiles(&historical.tmin, 0.05)?,
            pr_p95: fit_percentiles(&historical.precip, 0.95)?,
            wind_p95: fit_percentiles(&historical.windmax, 0.95)?,
            spi: SpiModel::fit(&historical.precip)?,
        })
    }
}

/// The 121 climate features of one pixel, in [`climate_feature_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyFeatureSet {
    pub values: Vec<f64>,
}

impl MonthlyFeatureSet {
    pub fn names() -> Vec<String> {
        climate_feature_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        if name == SPI_FEATURE {
            return Some(self.values[NUM_CLIMATE_FEATURES - 1]);
        }
        let (var, month) = name.rsplit_once('_')?;
        let v = MONTHLY_VARIABLES.iter().position(|&x| x == var)?;
        let m: usize = month.parse().ok()?;
        (1..=12).contains(&m).then(|| self.values[v * 12 + m - 1])
    }

    pub fn monthly(&self, var: &str) -> Option<&[f64]> {
        let v = MONTHLY_VARIABLES.iter().position(|&x| x == var)?;
        Some(&self.values[v * 12..v * 12 + 12])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        climate_feature_names().into_iter().zip(self.values.iter().copied()).collect()
    }
}

pub fn climate_features(baseline: &ClimateBaseline, target: &ClimateInputs) -> Result<MonthlyFeatureSet> {
    let blocks: [[f64; 12]; 10] = [
        count_exceedance(&target.tmax, &baseline.tasmax, Direction::Above)?,
        count_exceedance(&target.tmin, &baseline.tasmin, Direction::Below)?,
        monthly_mean(&target.tmean),
        count_exceedance(&target.precip, &baseline.pr_p95, Direction::Above)?,
        count_exceedance(&target.windmax, &baseline.wind_p95, Direction::Above)?,
        nesterov_fy(&target.tmax, &target.dewpoint, &target.precip)?,
        zero_crossings(&target.tmin, &target.tmax)?,
        temp_jumps(&target.tmean),
        monthly_mean(&target.precip),
        monthly_mean(&target.swe),
    ];
    let mut values: Vec<f64> = blocks.iter().flatten().copied().collect();
    values.push(baseline.spi.annual_mean(&target.precip)?);
    Ok(MonthlyFeatureSet { values })
}

/// A (days × height × width) stack of one daily variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyStack {
    pub spec: GridSpec,
    pub variable: Variable,
    pub start_year: i32,
    pub years: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    #[serde(flatten)]
    grid: RasterManifest,
    start_year: i32,
    years: usize,
    variable: Variable,
}

impl DailyStack {
    pub fn new(spec: GridSpec, variable: Variable, start_year: i32, years: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != years * DAYS_PER_YEAR * spec.len() {
            return Err(Error::DimensionMismatch(format!(
                "{variable} stack has {} values, expected {} days x {} pixels",
                values.len(),
                years * DAYS_PER_YEAR,
                spec.len()
            )));
        }
        Ok(DailyStack {
            spec,
            variable,
            start_year,
            years,
            values,
        })
    }

    pub fn days(&self) -> usize {
        self.years * DAYS_PER_YEAR
    }

    pub fn pixel_series(&self, idx: usize) -> DailySeries {
        let n = self.spec.len();
        let values = (0..self.days()).map(|d| self.values[d * n + idx]).collect();
        DailySeries {
            variable: self.variable,
            start_year: self.start_year,
            values,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<DailyStack> {
        let stem = grid::raster_stem(path.as_ref());
        let manifest_path = grid::with_suffix(&stem, "json");
        let m: StackManifest = grid::read_json(&manifest_path)?;
        let spec = m.grid.spec()?;
        let blob = grid::with_suffix(&stem, m.grid.dtype.extension());
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let expected = m.years * DAYS_PER_YEAR * spec.len() * m.grid.dtype.size();
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} holds {} bytes, manifest implies {expected}",
                blob.display(),
                bytes.len()
            )));
        }
        let nodata = m.grid.nodata.value();
        let values = grid::decode_values(&bytes, m.grid.dtype)
            .into_iter()
            .map(|v| if v == nodata { f64::NAN } else { v })
            .collect();
        DailyStack::new(spec, m.variable, m.start_year, m.years, values)
    }

    pub fn write(&self, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
        let stem = grid::raster_stem(path.as_ref());
        let manifest = StackManifest {
            grid: RasterManifest::for_spec(&self.spec, dtype, f64::NAN),
            start_year: self.start_year,
            years: self.years,
            variable: self.variable,
        };
        grid::write_json(&grid::with_suffix(&stem, "json"), &manifest)?;
        let blob = grid::with_suffix(&stem, dtype.extension());
        fs::write(&blob, grid::encode_values(&self.values, dtype)).map_err(|e| Error::io(&blob, e))
    }
}

/// All seven daily variables for one period on one grid.
#[derive(Debug, Clone)]
pub struct ClimateStacks {
    pub stacks: BTreeMap<Variable, DailyStack>,
}

impl ClimateStacks {
    pub fn new(stacks: Vec<DailyStack>) -> Result<Self> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::Data("no climate stacks".into()))?;
        let (spec, start, years) = (first.spec, first.start_year, first.years);
        let mut map = BTreeMap::new();
        for s in stacks {
            if s.spec != spec || s.start_year != start || s.years != years {
                return Err(Error::DimensionMismatch(format!(
                    "{} stack does not share grid and years with the others",
                    s.variable
                )));
            }
            map.insert(s.variable, s);
        }
        for v in Variable::ALL {
            if !map.contains_key(&v) {
                return Err(Error::Data(format!("missing daily variable `{v}`")));
            }
        }
        Ok(ClimateStacks { stacks: map })
    }

    pub fn spec(&self) -> GridSpec {
        self.stacks[&Variable::Tmax].spec
    }

    pub fn start_year(&self) -> i32 {
        self.stacks[&Variable::Tmax].start_year
    }

    pub fn years(&self) -> usize {
        self.stacks[&Variable::Tmax].years
    }

    /// Inputs at pixel `idx`, or `None` if any day of any variable is missing.
    pub fn pixel(&self, idx: usize) -> Option<ClimateInputs> {
        let get = |v: Variable| {
            let s = self.stacks[&v].pixel_series(idx);
            s.values.iter().all(|x| x.is_finite()).then_some(s)
        };
        Some(ClimateInputs {
            tmax: get(Variable::Tmax)?,
            tmin: get(Variable::Tmin)?,
            tmean: get(Variable::Tmean)?,
            precip: get(Variable::Precip)?,
            dewpoint: get(Variable::Dewpoint)?,
            windmax: get(Variable::Windmax)?,
            swe: get(Variable::Swe)?,
        })
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stacks = Variable::ALL
            .iter()
            .map(|v| DailyStack::read(dir.join(v.name())))
            .collect::<Result<Vec<_>>>()?;
        ClimateStacks::new(stacks)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>, dtype: DType) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (v, s) in &self.stacks {
            s.write(dir.join(v.name()), dtype)?;
        }
        Ok(())
    }
}

/// The 121 climate feature rasters of `target`, with thresholds and SPI fits
/// taken per pixel from `historical`. Both must share one grid.
pub fn climate_feature_rasters(historical: &ClimateStacks, target: &ClimateStacks) -> Result<Vec<(String, Raster)>> {
    let spec = historical.spec();
    if target.spec() != spec {
        return Err(Error::DimensionMismatch(
            "historical and target climate stacks are on different grids".into(),
        ));
    }
    let per_pixel: Vec<Option<Vec<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| -> Result<Option<Vec<f64>>> {
            let (Some(hist), Some(tgt)) = (historical.pixel(idx), target.pixel(idx)) else {
                return Ok(None);
            };
            let baseline = ClimateBaseline::fit(&hist)?;
            Ok(Some(climate_features(&baseline, &tgt)?.values))
        })
        .collect::<Result<_>>()?;
    Ok(climate_feature_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let values = per_pixel
                .iter()
                .map(|p| p.as_ref().map_or(f64::NAN, |v| v[k]))
                .collect();
            (
                name,
                Raster {
                    spec,
                    values,
                    nodata: f64::NAN,
                },
            )
        })
        .collect())
}
