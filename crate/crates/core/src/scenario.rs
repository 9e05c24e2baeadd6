//! Projection analytics: per-scenario class probability maps, the
//! multi-model ensemble mean, change maps against the baseline mask, and
//! class-count trajectories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, ClassMask, GridSpec, Raster, NUM_CLASSES};
use crate::metrics::argmax;

pub const BASELINE_PERIOD: &str = "2010";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub climate_model: String,
    pub ssp: String,
    pub period: String,
}

impl ScenarioKey {
    pub fn new(climate_model: &str, ssp: &str, period: &str) -> Result<Self> {
        if [climate_model, ssp, period].iter().any(|s| s.is_empty()) {
            return Err(Error::Config("scenario keys need a climate model, an SSP and a period".into()));
        }
        Ok(ScenarioKey {
            climate_model: climate_model.into(),
            ssp: ssp.into(),
            period: period.into(),
        })
    }

    /// Directory-safe identifier, `model__ssp__period`.
    pub fn slug(&self) -> String {
        format!("{}__{}__{}", self.climate_model, self.ssp, self.period)
    }

    pub fn from_slug(slug: &str) -> Result<Self> {
        let parts: Vec<&str> = slug.split("__").collect();
        match parts[..] {
            [m, s, p] => ScenarioKey::new(m, s, p),
            _ => Err(Error::Config(format!("`{slug}` is not of the form model__ssp__period"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Scenario(ScenarioKey),
    Ensemble { ssp: String, period: String, members: Vec<String> },
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    pub spec: GridSpec,
    /// One raster per class; NaN marks pixels without a prediction.
    pub classes: Vec<Raster>,
    pub provenance: Provenance,
}

fn all_finite(rasters: &[Raster], idx: usize) -> Option<[f64; NUM_CLASSES]> {
    let mut v = [0.0; NUM_CLASSES];
    for (c, r) in rasters.iter().enumerate() {
        v[c] = r.valid_at(idx)?;
    }
    Some(v)
}

impl ProbabilityMaps {
    /// Scatter `n × 4` probabilities onto the grid at the given pixels.
    pub fn from_predictions(
        spec: GridSpec,
        pixels: &[(usize, usize)],
        probs: &[f64],
        provenance: Provenance,
    ) -> Result<Self> {
        if probs.len() != pixels.len() * NUM_CLASSES {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {} pixels",
                probs.len(),
                pixels.len()
            )));
        }
        let mut classes = vec![Raster::filled(spec, f64::NAN); NUM_CLASSES];
        for (&(i, j), row) in pixels.iter().zip(probs.chunks(NUM_CLASSES)) {
            if i >= spec.height || j >= spec.width {
                return Err(Error::Data(format!("pixel ({i}, {j}) is off the grid")));
            }
            let idx = spec.index(i, j);
            for c in 0..NUM_CLASSES {
                classes[c].values[idx] = row[c];
            }
        }
        let maps = ProbabilityMaps {
            spec,
            classes,
            provenance,
        };
        maps.validate()?;
        Ok(maps)
    }

    /// One-hot maps of an observed mask.
    pub fn one_hot(mask: &ClassMask) -> Self {
        let spec = *mask.spec();
        let classes = (0..NUM_CLASSES)
            .map(|c| {
                Raster::from_fn(spec, |i, j| match mask.class_at(i * spec.width + j) {
                    Some(k) => (k as usize == c) as u8 as f64,
                    None => f64::NAN,
                })
            })
            .collect();
        ProbabilityMaps {
            spec,
            classes,
            provenance: Provenance::Observed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != NUM_CLASSES || self.classes.iter().any(|r| r.spec != self.spec) {
            return Err(Error::DimensionMismatch("probability maps need 4 rasters on one grid".into()));
        }
        for idx in 0..self.spec.len() {
            if let Some(p) = all_finite(&self.classes, idx) {
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Data(format!("pixel {idx}: probabilities {p:?} are not a distribution")));
                }
            }
        }
        Ok(())
    }

    /// Probabilities at one pixel, `None` if any class is nodata.
    pub fn at(&self, idx: usize) -> Option<[f64; NUM_CLASSES]> {
        all_finite(&self.classes, idx)
    }

    /// Argmax class per pixel (ties to the lowest class), NaN where nodata.
    pub fn argmax_mask(&self) -> Result<ClassMask> {
        let values = (0..self.spec.len())
            .map(|idx| self.at(idx).map_or(f64::NAN, |p| argmax(&p) as f64))
            .collect();
        ClassMask::from_raster(Raster::new(self.spec, values)?)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (c, r) in self.classes.iter().enumerate() {
            grid::write_raster(r, dir.join(format!("prob_class{c}")))?;
        }
        grid::write_json(&dir.join("provenance.json"), &self.provenance)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let classes = (0..NUM_CLASSES)
            .map(|c| grid::read_raster(dir.join(format!("prob_class{c}"))))
            .collect::<Result<Vec<_>>>()?;
        let maps = ProbabilityMaps {
            spec: classes[0].spec,
            classes,
            provenance: grid::read_json(&dir.join("provenance.json"))?,
        };
        maps.validate()?;
        Ok(maps)
    }
}

fn member_name(p: &ProbabilityMaps) -> String {
    match &p.provenance {
        Provenance::Scenario(k) => k.climate_model.clone(),
        Provenance::Ensemble { members, .. } => members.join("+"),
        Provenance::Observed => "observed".into(),
    }
}

fn ssp_period(p: &ProbabilityMaps) -> Option<(String, String)> {
    match &p.provenance {
        Provenance::Scenario(k) => Some((k.ssp.clone(), k.period.clone())),
        Provenance::Ensemble { ssp, period, .. } => Some((ssp.clone(), period.clone())),
        Provenance::Observed => None,
    }
}

/// Unweighted per-pixel mean over climate models. Members are summed in
/// order of model name, so the result does not depend on input order.
pub fn ensemble_average(maps: &[ProbabilityMaps]) -> Result<ProbabilityMaps> {
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("ensemble of zero maps".into()))?;
    if maps.iter().any(|m| m.spec != first.spec) {
        return Err(Error::DimensionMismatch("ensemble members are on different grids".into()));
    }
    let key = ssp_period(first);
    if maps.iter().any(|m| ssp_period(m) != key) {
        return Err(Error::InvalidArgument("ensemble members mix SSPs or periods".into()));
    }
    let mut order: Vec<(String, usize)> = maps.iter().enumerate().map(|(i, m)| (member_name(m), i)).collect();
    order.sort();
    let n = maps.len() as f64;
    let classes = (0..NUM_CLASSES)
        .map(|c| {
            // Offsets from the first member keep identical members exact.
            let base = &maps[order[0].1].classes[c];
            let mut acc = Raster::filled(first.spec, 0.0);
            for (_, i) in &order[1..] {
                acc.values
                    .iter_mut()
                    .zip(maps[*i].classes[c].values.iter().zip(&base.values))
                    .for_each(|(a, (v, b))| *a += v - b);
            }
            acc.values.iter_mut().zip(&base.values).for_each(|(a, b)| *a = b + *a / n);
            acc
        })
        .collect();
    let (ssp, period) = key.unwrap_or_default();
    Ok(ProbabilityMaps {
        spec: first.spec,
        classes,
        provenance: Provenance::Ensemble {
            ssp,
            period,
            members: order.into_iter().map(|(name, _)| name).collect(),
        },
    })
}

/// `P^c − onehot(mask)^c` per class; NaN where either side is nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMap {
    pub spec: GridSpec,
    pub classes: Vec<Raster>,
}

pub fn delta_heatmap(p: &ProbabilityMaps, mask: &ClassMask) -> Result<DeltaMap> {
    if *mask.spec() != p.spec {
        return Err(Error::DimensionMismatch("probability maps and mask are on different grids".into()));
    }
    let classes = (0..NUM_CLASSES)
        .map(|c| {
            let values = (0..p.spec.len())
                .map(|idx| match (p.at(idx), mask.class_at(idx)) {
                    (Some(probs), Some(k)) => probs[c] - (k as usize == c) as u8 as f64,
                    _ => f64::NAN,
                })
                .collect();
            Raster::new(p.spec, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeltaMap { spec: p.spec, classes })
}

impl DeltaMap {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (c, r) in self.classes.iter().enumerate() {
            grid::write_raster(r, dir.join(format!("delta_class{c}")))?;
        }
        Ok(())
    }

    /// Mean delta of class `c` over valid pixels of rows `rows`.
    pub fn band_mean(&self, c: usize, rows: std::ops::Range<usize>) -> Option<f64> {
        let w = self.spec.width;
        let vals: Vec<f64> = rows
            .flat_map(|i| (0..w).map(move |j| i * w + j))
            .filter_map(|idx| self.classes[c].valid_at(idx))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Pixels per argmax class over valid pixels (ties to the lowest class).
pub fn class_counts(p: &ProbabilityMaps) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for idx in 0..p.spec.len() {
        if let Some(probs) = p.at(idx) {
            counts[argmax(&probs)] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub ssp: String,
    pub period: String,
    pub class: usize,
    pub count: usize,
}

/// Class counts of the ensemble projection for every (SSP, period), each
/// SSP starting from the observed mask as period "2010".
pub fn trajectory_report(baseline: &ClassMask, projections: &[(ScenarioKey, ProbabilityMaps)]) -> Result<Vec<TrajectoryRow>> {
    let mut groups: BTreeMap<(String, String), Vec<ProbabilityMaps>> = BTreeMap::new();
    for (key, maps) in projections {
        let mut m = maps.clone();
        m.provenance = Provenance::Scenario(key.clone());
        groups.entry((key.ssp.clone(), key.period.clone())).or_default().push(m);
    }
    let base = baseline.counts();
    let mut rows = Vec::new();
    let mut last_ssp: Option<String> = None;
    for ((ssp, period), members) in &groups {
        if last_ssp.as_ref() != Some(ssp) {
            rows.extend((0..NUM_CLASSES).map(|c| TrajectoryRow {
                ssp: ssp.clone(),
                period: BASELINE_PERIOD.into(),
                class: c,
                count: base[c],
            }));
            last_ssp = Some(ssp.clone());
        }
        let counts = class_counts(&ensemble_average(members)?);
        rows.extend((0..NUM_CLASSES).map(|c| TrajectoryRow {
            ssp: ssp.clone(),
            period: period.clone(),
            class: c,
            count: counts[c],
        }));
    }
    if rows.is_empty() {
        rows.extend((0..NUM_CLASSES).map(|c| TrajectoryRow {
            ssp: String::new(),
            period: BASELINE_PERIOD.into(),
            class: c,
            count: base[c],
        }));
    }
    Ok(rows)
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec::new(2, 2, 0.0, 2.0, 1.0).unwrap()
    }

    fn key(m: &str) -> ScenarioKey {
        ScenarioKey::new(m, "SSP5-8.5", "2040-2050").unwrap()
    }

    fn maps(m: &str, rows: &[[f64; 4]]) -> ProbabilityMaps {
        let pixels: Vec<(usize, usize)> = (0..rows.len()).map(|r| (r / 2, r % 2)).collect();
        ProbabilityMaps::from_predictions(spec(), &pixels, &rows.concat(), Provenance::Scenario(key(m))).unwrap()
    }

    fn mask(v: [f64; 4]) -> ClassMask {
        ClassMask::from_raster(Raster::new(spec(), v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn ensemble_examples() {
        let a = maps("A", &[[0.4, 0.2, 0.2, 0.2]]);
        let b = maps("B", &[[0.2, 0.4, 0.2, 0.2]]);
        let c = maps("C", &[[0.0, 0.6, 0.2, 0.2]]);
        let e = ensemble_average(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert!((e.classes[1].values[0] - 0.4).abs() < 1e-15);
        assert!(e.classes[0].values[1].is_nan());
        let sum: f64 = e.at(0).unwrap().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(ensemble_average(&[c.clone(), a.clone(), b.clone()]).unwrap(), e);
        let same = ensemble_average(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.classes, a.classes);
        let single = ensemble_average(&[a.clone()]).unwrap();
        assert_eq!(single.classes, a.classes);
    }

    #[test]
    fn ensemble_errors() {
        let a = maps("A", &[[0.25; 4]]);
        let mut b = maps("B", &[[0.25; 4]]);
        b.provenance = Provenance::Scenario(ScenarioKey::new("B", "SSP1-2.6", "2040-2050").unwrap());
        assert!(ensemble_average(&[a.clone(), b]).is_err());
        let mut c = maps("C", &[[0.25; 4]]);
        c.spec = GridSpec::new(2, 2, 1.0, 2.0, 1.0).unwrap();
        assert!(ensemble_average(&[a, c]).is_err());
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn delta_examples() {
        let m = mask([3.0, 3.0, 1.0, f64::NAN]);
        let p = maps(
            "A",
            &[[0.0, 0.0, 0.0, 1.0], [0.3, 0.3, 0.2, 0.2], [0.05, 0.05, 0.9, 0.0], [0.25; 4]],
        );
        let d = delta_heatmap(&p, &m).unwrap();
        assert_eq!(d.classes[3].values[0], 0.0);
        assert!((d.classes[3].values[1] + 0.8).abs() < 1e-15);
        assert_eq!(d.classes[2].values[2], 0.9);
        assert!(d.classes[0].values[3].is_nan());
        let own = delta_heatmap(&ProbabilityMaps::one_hot(&m), &m).unwrap();
        assert!(own.classes.iter().all(|r| r.values.iter().all(|v| v.is_nan() || *v == 0.0)));
    }

    #[test]
    fn counts_and_tie_rule() {
        let m = mask([0.0, 2.0, 2.0, 3.0]);
        assert_eq!(class_counts(&ProbabilityMaps::one_hot(&m)), m.counts());
        let u = maps("A", &[[0.25; 4], [0.25; 4], [0.25; 4], [0.25; 4]]);
        assert_eq!(class_counts(&u), [4, 0, 0, 0]);
    }

    #[test]
    fn trajectories() {
        let m = mask([0.0, 2.0, 2.0, 3.0]);
        let onehot = ProbabilityMaps::one_hot(&m);
        let flat = [
            (key("A"), onehot.clone()),
            (ScenarioKey::new("A", "SSP5-8.5", "2020-2030").unwrap(), onehot.clone()),
        ];
        let rows = trajectory_report(&m, &flat).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[0].period, "2010");
        for c in 0..4 {
            let counts: Vec<usize> = rows.iter().filter(|r| r.class == c).map(|r| r.count).collect();
            assert!(counts.windows(2).all(|w| w[0] == w[1]));
        }
        // Class 2 grows over the periods.
        let p1 = maps("A", &[[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        let p2 = maps("A", &[[0.0, 0.0, 1.0, 0.0]; 4]);
        let growing = [
            (ScenarioKey::new("A", "SSP2-4.5", "2020-2030").unwrap(), p1),
            (ScenarioKey::new("A", "SSP2-4.5", "2040-2050").unwrap(), p2),
        ];
        let rows = trajectory_report(&m, &growing).unwrap();
        let c2: Vec<usize> = rows.iter().filter(|r| r.class == 2).map(|r| r.count).collect();
        assert_eq!(c2, vec![2, 3, 4]);
        let dir = tempfile::tempdir().unwrap();
        write_trajectory_csv(&rows, dir.path().join("t.csv")).unwrap();
        assert_eq!(read_trajectory_csv(dir.path().join("t.csv")).unwrap(), rows);
    }

    #[test]
    fn maps_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = maps("A", &[[0.1, 0.2, 0.3, 0.4]]);
        p.write_dir(dir.path()).unwrap();
        assert_eq!(ProbabilityMaps::read_dir(dir.path()).unwrap(), p);
        assert_eq!(ScenarioKey::from_slug(&key("A").slug()).unwrap(), key("A"));
    }

    #[test]
    fn invalid_distributions_rejected() {
        let r = ProbabilityMaps::from_predictions(spec(), &[(0, 0)], &[0.5, 0.5, 0.5, 0.0], Provenance::Observed);
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn delta_rows_sum_to_zero(raw in prop::collection::vec(prop::array::uniform4(0.0f64..1.0), 4), labels in prop::array::uniform4(0u8..4)) {
            let rows: Vec<[f64; 4]> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-9;
                r.map(|v| (v + 2.5e-10) / s)
            }).collect();
            let p = maps("A", &rows);
            let m = mask(labels.map(|l| l as f64));
            let d = delta_heatmap(&p, &m).unwrap();
            for idx in 0..4 {
                let s: f64 = (0..4).map(|c| d.classes[c].values[idx]).sum();
                prop_assert!(s.abs() < 1e-6);
                prop_assert!((0..4).all(|c| (-1.0..=1.0).contains(&d.classes[c].values[idx])));
            }
        }
    }
}
