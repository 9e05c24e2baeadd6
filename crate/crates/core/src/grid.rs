//! Plate carrée rasters: the grid model, a little-endian blob + JSON manifest
//! file format, and regridding onto a common analysis grid.
//!
//! A raster file is a pair `<name>.json` (manifest) and `<name>.f32` or
//! `<name>.f64` (row-major values, row 0 northernmost). Nodata is NaN unless
//! the manifest declares a finite sentinel.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Meters per degree used for both axes when converting cell sizes.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub lon_min: f64,
    pub lat_max: f64,
    /// Degrees per pixel, square pixels.
    pub cell: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, lon_min: f64, lat_max: f64, cell: f64) -> Result<Self> {
        let spec = GridSpec {
            width,
            height,
            lon_min,
            lat_max,
            cell,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid(format!(
                "degenerate grid {}x{}",
                self.width, self.height
            )));
        }
        if !(self.lon_min.is_finite() && self.lat_max.is_finite() && self.cell.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid origin or cell size".into()));
        }
        if self.cell <= 0.0 {
            return Err(Error::InvalidGrid(format!("cell size {} must be positive", self.cell)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lon_max(&self) -> f64 {
        self.lon_min + self.width as f64 * self.cell
    }

    pub fn lat_min(&self) -> f64 {
        self.lat_max - self.height as f64 * self.cell
    }

    /// `(lon, lat)` of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.lon_min + (col as f64 + 0.5) * self.cell,
            self.lat_max - (row as f64 + 0.5) * self.cell,
        )
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Cell size in kilometers.
    pub fn cell_km(&self) -> f64 {
        self.cell * METERS_PER_DEGREE / 1000.0
    }

    pub fn cell_m(&self) -> f64 {
        self.cell * METERS_PER_DEGREE
    }

    /// Continuous (row, col) coordinate where integer values are pixel centers.
    fn fractional_index(&self, lon: f64, lat: f64) -> (f64, f64) {
        (
            snap((self.lat_max - lat) / self.cell - 0.5),
            snap((lon - self.lon_min) / self.cell - 0.5),
        )
    }

    fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max() && lat >= self.lat_min() && lat <= self.lat_max
    }

    fn overlaps(&self, other: &GridSpec) -> bool {
        self.lon_min < other.lon_max()
            && other.lon_min < self.lon_max()
            && self.lat_min() < other.lat_max
            && other.lat_min() < self.lat_max
    }
}

// Pixel-aligned grids land within rounding noise of integer coordinates.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

#[derive(Debug, Clone)]
pub struct Raster {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// Sentinel marking missing cells; NaN cells are always treated as missing.
    pub nodata: f64,
}

/// Bitwise equality of values and sentinel, so NaN cells compare equal.
impl PartialEq for Raster {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.spec == other.spec
            && self.nodata.to_bits() == other.nodata.to_bits()
            && bits(&self.values) == bits(&other.values)
    }
}

impl Raster {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.width,
                spec.height
            )));
        }
        Ok(Raster {
            spec,
            values,
            nodata: f64::NAN,
        })
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Raster {
            spec,
            values: vec![value; spec.len()],
            nodata: f64::NAN,
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..spec.height)
            .flat_map(|i| (0..spec.width).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Raster {
            spec,
            values,
            nodata: f64::NAN,
        }
    }

    pub fn with_nodata(mut self, nodata: f64) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.spec.index(row, col)]
    }

    /// Value at `(row, col)`, or `None` for nodata.
    pub fn valid(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.get(row, col);
        self.is_valid(v).then_some(v)
    }

    pub fn is_valid(&self, v: f64) -> bool {
        !(v.is_nan() || v == self.nodata)
    }

    pub fn valid_at(&self, idx: usize) -> Option<f64> {
        let v = self.values[idx];
        self.is_valid(v).then_some(v)
    }

    /// Copy with every nodata cell set to NaN and the sentinel reset to NaN.
    pub fn normalized(&self) -> Raster {
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_valid(v) { v } else { f64::NAN })
            .collect();
        Raster {
            spec: self.spec,
            values,
            nodata: f64::NAN,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_valid(v) { f(v) } else { f64::NAN })
            .collect();
        Raster {
            spec: self.spec,
            values,
            nodata: f64::NAN,
        }
    }

    /// Minimum and maximum over valid cells.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .copied()
            .filter(|&v| self.is_valid(v))
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Raster of cropland classes 0..=3 stored as reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask(Raster);

pub const NUM_CLASSES: usize = 4;

impl ClassMask {
    pub fn from_raster(raster: Raster) -> Result<Self> {
        for &v in &raster.values {
            if raster.is_valid(v) && !(v == 0.0 || v == 1.0 || v == 2.0 || v == 3.0) {
                return Err(Error::Data(format!("class mask value {v} is not in {{0,1,2,3}}")));
            }
        }
        Ok(ClassMask(raster))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }

    pub fn spec(&self) -> &GridSpec {
        &self.0.spec
    }

    pub fn class_at(&self, idx: usize) -> Option<u8> {
        self.0.valid_at(idx).map(|v| v as u8)
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for idx in 0..self.0.values.len() {
            if let Some(c) = self.class_at(idx) {
                counts[c as usize] += 1;
            }
        }
        counts
    }

    /// Class labels are never interpolated.
    pub fn regrid(&self, target: &GridSpec) -> Result<ClassMask> {
        Ok(ClassMask(regrid(&self.0, target, Resample::Nearest)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    Nearest,
    Bilinear,
}

/// Sample `src` at every pixel center of `target`. Target pixels whose center
/// falls outside the source extent are nodata.
pub fn regrid(src: &Raster, target: &GridSpec, method: Resample) -> Result<Raster> {
    target.validate()?;
    src.spec.validate()?;
    if *target == src.spec {
        return Ok(src.normalized());
    }
    if !src.spec.overlaps(target) {
        return Err(Error::InvalidGrid("target grid does not overlap the source extent".into()));
    }
    let s = &src.spec;
    let mut values = vec![f64::NAN; target.len()];
    values
        .par_chunks_mut(target.width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, slot) in out.iter_mut().enumerate() {
                let (lon, lat) = target.pixel_center(row, col);
                if !s.contains(lon, lat) {
                    continue;
                }
                let (fi, fj) = s.fractional_index(lon, lat);
                *slot = match method {
                    Resample::Nearest => sample_nearest(src, fi, fj),
                    Resample::Bilinear => sample_bilinear(src, fi, fj),
                };
            }
        });
    Ok(Raster {
        spec: *target,
        values,
        nodata: f64::NAN,
    })
}

fn clamp_index(x: f64, n: usize) -> usize {
    (x.max(0.0) as usize).min(n - 1)
}

fn sample_nearest(src: &Raster, fi: f64, fj: f64) -> f64 {
    let i = clamp_index((fi + 0.5).floor(), src.spec.height);
    let j = clamp_index((fj + 0.5).floor(), src.spec.width);
    src.valid(i, j).unwrap_or(f64::NAN)
}

fn sample_bilinear(src: &Raster, fi: f64, fj: f64) -> f64 {
    let (h, w) = (src.spec.height, src.spec.width);
    let i0f = fi.floor();
    let j0f = fj.floor();
    let wy = fi - i0f;
    let wx = fj - j0f;
    let rows = [
        (clamp_index(i0f, h), 1.0 - wy),
        (clamp_index(i0f + 1.0, h), wy),
    ];
    let cols = [
        (clamp_index(j0f, w), 1.0 - wx),
        (clamp_index(j0f + 1.0, w), wx),
    ];
    let mut acc = 0.0;
    let mut weight = 0.0;
    for &(i, wi) in &rows {
        for &(j, wj) in &cols {
            let wgt = wi * wj;
            if wgt <= 0.0 {
                continue;
            }
            if let Some(v) = src.valid(i, j) {
                acc += wgt * v;
                weight += wgt;
            }
        }
    }
    if weight > 0.0 {
        // Renormalized weights can drift outside the neighbor range by one ulp.
        let v = acc / weight;
        let (lo, hi) = neighbor_range(src, &rows, &cols);
        v.clamp(lo, hi)
    } else {
        f64::NAN
    }
}

fn neighbor_range(src: &Raster, rows: &[(usize, f64); 2], cols: &[(usize, f64); 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(i, wi) in rows {
        for &(j, wj) in cols {
            if wi * wj > 0.0 {
                if let Some(v) = src.valid(i, j) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn extension(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Nodata as stored in a manifest: a number or the string `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodataRepr {
    Value(f64),
    Tag(NanTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NanTag {
    Nan,
}

impl NodataRepr {
    pub fn from_value(v: f64) -> Self {
        if v.is_nan() {
            NodataRepr::Tag(NanTag::Nan)
        } else {
            NodataRepr::Value(v)
        }
    }

    pub fn value(self) -> f64 {
        match self {
            NodataRepr::Value(v) => v,
            NodataRepr::Tag(NanTag::Nan) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterManifest {
    pub width: usize,
    pub height: usize,
    pub lon_min: f64,
    pub lat_max: f64,
    pub cell: f64,
    pub dtype: DType,
    pub nodata: NodataRepr,
}

impl RasterManifest {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.width, self.height, self.lon_min, self.lat_max, self.cell)
    }

    pub fn for_spec(spec: &GridSpec, dtype: DType, nodata: f64) -> Self {
        RasterManifest {
            width: spec.width,
            height: spec.height,
            lon_min: spec.lon_min,
            lat_max: spec.lat_max,
            cell: spec.cell,
            dtype,
            nodata: NodataRepr::from_value(nodata),
        }
    }
}

/// `dir/name`, `dir/name.json` and `dir/name.f64` all resolve to the stem `dir/name`.
pub(crate) fn raster_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "f32" | "f64") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub(crate) fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn decode_values(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect(),
    }
}

pub(crate) fn encode_values(values: &[f64], dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    match dtype {
        DType::F32 => values
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let stem = raster_stem(path.as_ref());
    let manifest_path = with_suffix(&stem, "json");
    let manifest: RasterManifest = read_json(&manifest_path)?;
    let spec = manifest.spec()?;
    let blob_path = with_suffix(&stem, manifest.dtype.extension());
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected = spec.len() * manifest.dtype.size();
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} holds {} bytes but the manifest declares {}x{} {:?} ({} bytes)",
            blob_path.display(),
            bytes.len(),
            spec.width,
            spec.height,
            manifest.dtype,
            expected
        )));
    }
    Ok(Raster {
        spec,
        values: decode_values(&bytes, manifest.dtype),
        nodata: manifest.nodata.value(),
    })
}

/// Write as 64-bit values.
pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_raster_as(raster, path, DType::F64)
}

pub fn write_raster_as(raster: &Raster, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let stem = raster_stem(path.as_ref());
    write_json(
        &with_suffix(&stem, "json"),
        &RasterManifest::for_spec(&raster.spec, dtype, raster.nodata),
    )?;
    let blob_path = with_suffix(&stem, dtype.extension());
    fs::write(&blob_path, encode_values(&raster.values, dtype)).map_err(|e| Error::io(&blob_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 10.0, 50.0, 0.5).unwrap()
    }

    #[test]
    fn pixel_center_convention() {
        let s = spec(4, 3);
        assert_eq!(s.pixel_center(0, 0), (10.25, 49.75));
        assert_eq!(s.pixel_center(2, 3), (11.75, 48.75));
        assert_eq!(s.lat_min(), 48.5);
        assert_eq!(s.lon_max(), 12.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0, 3, 0.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(3, 3, 0.0, 0.0, 0.0).is_err());
        assert!(GridSpec::new(3, 3, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn read_small_raster() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::new(spec(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_raster(&r, dir.path().join("a")).unwrap();
        let back = read_raster(dir.path().join("a.json")).unwrap();
        assert_eq!(back.get(0, 0), 1.0);
        assert_eq!(back.get(0, 1), 2.0);
        assert_eq!(back.get(1, 0), 3.0);
        assert_eq!(back.get(1, 1), 4.0);
    }

    #[test]
    fn short_blob_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::new(spec(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_raster(&r, dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a.f64"), encode_values(&[1.0, 2.0, 3.0], DType::F64)).unwrap();
        assert!(matches!(
            read_raster(dir.path().join("a")),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn missing_file_and_bad_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_raster(dir.path().join("nope")), Err(Error::Io { .. })));
        fs::write(
            dir.path().join("b.json"),
            r#"{"width":2,"height":2,"lon_min":0,"lat_max":0,"cell":-1,"dtype":"f64","nodata":"nan"}"#,
        )
        .unwrap();
        assert!(matches!(read_raster(dir.path().join("b")), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn zero_raster_blob_and_nan_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::filled(spec(4, 4), 0.0);
        write_raster(&r, dir.path().join("z")).unwrap();
        let bytes = fs::read(dir.path().join("z.f64")).unwrap();
        assert_eq!(bytes.len(), 16 * 8);
        assert!(bytes.iter().all(|&b| b == 0));

        let mut n = Raster::filled(spec(2, 1), 1.0);
        n.values[1] = f64::NAN;
        write_raster_as(&n, dir.path().join("n"), DType::F32).unwrap();
        let bytes = fs::read(dir.path().join("n.f32")).unwrap();
        assert_eq!(&bytes[4..8], &f32::NAN.to_le_bytes());
        let manifest = fs::read_to_string(dir.path().join("n.json")).unwrap();
        assert!(manifest.contains("\"nan\""));
        let back = read_raster(dir.path().join("n")).unwrap();
        assert!(back.values[1].is_nan());
    }

    #[test]
    fn finite_sentinel_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::new(spec(2, 1), vec![3.0, -9999.0]).unwrap().with_nodata(-9999.0);
        write_raster(&r, dir.path().join("m")).unwrap();
        let back = read_raster(dir.path().join("m")).unwrap();
        assert_eq!(back.nodata, -9999.0);
        assert_eq!(back.valid(0, 1), None);
        assert_eq!(back.valid(0, 0), Some(3.0));
    }

    #[test]
    fn identity_regrid() {
        let r = Raster::from_fn(spec(5, 4), |i, j| (i * 7 + j) as f64 * 0.37);
        for m in [Resample::Nearest, Resample::Bilinear] {
            assert_eq!(regrid(&r, &r.spec, m).unwrap().values, r.values);
        }
    }

    #[test]
    fn identity_regrid_with_shifted_equal_spec() {
        // Same grid described by a distinct but equal-valued spec goes through
        // the sampling path; snapping keeps it exact.
        let r = Raster::from_fn(spec(6, 5), |i, j| (i as f64).sin() + j as f64);
        let mut t = r.spec;
        t.width = 5;
        let out = regrid(&r, &t, Resample::Bilinear).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(out.get(i, j), r.get(i, j));
            }
        }
    }

    #[test]
    fn bilinear_two_by_two_to_center() {
        let r = Raster::new(GridSpec::new(2, 2, 0.0, 2.0, 1.0).unwrap(), vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        let target = GridSpec::new(1, 1, 0.0, 2.0, 2.0).unwrap();
        let out = regrid(&r, &target, Resample::Bilinear).unwrap();
        assert_eq!(out.values, vec![2.0]);
    }

    #[test]
    fn nearest_propagates_nodata() {
        let mut r = Raster::filled(GridSpec::new(2, 2, 0.0, 2.0, 1.0).unwrap(), 1.0);
        r.values[0] = f64::NAN;
        let target = GridSpec::new(1, 1, 0.2, 1.8, 0.2).unwrap();
        let out = regrid(&r, &target, Resample::Nearest).unwrap();
        assert!(out.values[0].is_nan());
    }

    #[test]
    fn bilinear_renormalizes_around_nodata() {
        let mut r = Raster::new(GridSpec::new(2, 2, 0.0, 2.0, 1.0).unwrap(), vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        r.values[0] = f64::NAN;
        let target = GridSpec::new(1, 1, 0.0, 2.0, 2.0).unwrap();
        let out = regrid(&r, &target, Resample::Bilinear).unwrap();
        assert!((out.values[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn outside_extent_is_nodata_and_no_overlap_errors() {
        let r = Raster::filled(GridSpec::new(2, 2, 0.0, 2.0, 1.0).unwrap(), 1.0);
        let wider = GridSpec::new(4, 2, 0.0, 2.0, 1.0).unwrap();
        let out = regrid(&r, &wider, Resample::Bilinear).unwrap();
        assert_eq!(out.get(0, 1), 1.0);
        assert!(out.get(0, 2).is_nan());
        let far = GridSpec::new(2, 2, 100.0, 2.0, 1.0).unwrap();
        assert!(regrid(&r, &far, Resample::Nearest).is_err());
        let degenerate = GridSpec {
            width: 0,
            ..wider
        };
        assert!(regrid(&r, &degenerate, Resample::Nearest).is_err());
    }

    #[test]
    fn class_mask_validation() {
        let s = spec(2, 1);
        assert!(ClassMask::from_raster(Raster::new(s, vec![0.0, 3.0]).unwrap()).is_ok());
        assert!(ClassMask::from_raster(Raster::new(s, vec![0.0, 1.5]).unwrap()).is_err());
        let m = ClassMask::from_raster(Raster::new(s, vec![2.0, f64::NAN]).unwrap()).unwrap();
        assert_eq!(m.counts(), [0, 0, 1, 0]);
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(-1e3f64..1e3, w * h)
                .prop_map(move |v| Raster::new(GridSpec::new(w, h, -5.0, 5.0, 0.25).unwrap(), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn write_read_is_bitwise(values in proptest::collection::vec(any::<f64>(), 256)) {
            let dir = tempfile::tempdir().unwrap();
            let r = Raster::new(GridSpec::new(16, 16, 1.0, 2.0, 0.1).unwrap(), values).unwrap();
            write_raster(&r, dir.path().join("r")).unwrap();
            let back = read_raster(dir.path().join("r")).unwrap();
            let a: Vec<u64> = r.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.spec, r.spec);
        }

        #[test]
        fn bilinear_stays_within_neighbors(r in arb_raster(), w in 1usize..12, h in 1usize..12, off in 0.0f64..0.25) {
            let target = GridSpec::new(w, h, -5.0 + off, 5.0 - off, 0.13).unwrap();
            let out = regrid(&r, &target, Resample::Bilinear).unwrap();
            let (lo, hi) = r.valid_range().unwrap();
            for (idx, v) in out.values.iter().enumerate() {
                if v.is_nan() { continue; }
                prop_assert!(*v >= lo && *v <= hi, "pixel {idx}: {v} outside [{lo},{hi}]");
                // Tighter: the four contributing source cells.
                let (lon, lat) = target.pixel_center(idx / w, idx % w);
                let (fi, fj) = r.spec.fractional_index(lon, lat);
                let (i0, j0) = (clamp_index(fi.floor(), r.spec.height), clamp_index(fj.floor(), r.spec.width));
                let (i1, j1) = (clamp_index(fi.floor() + 1.0, r.spec.height), clamp_index(fj.floor() + 1.0, r.spec.width));
                let nb = [r.get(i0, j0), r.get(i0, j1), r.get(i1, j0), r.get(i1, j1)];
                let nlo = nb.iter().cloned().fold(f64::INFINITY, f64::min);
                let nhi = nb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= nlo && *v <= nhi);
            }
        }

        #[test]
        fn nearest_mask_only_uses_source_labels(labels in proptest::collection::vec(0u8..4, 36), cell in 0.05f64..0.6) {
            let src = Raster::new(GridSpec::new(6, 6, 0.0, 3.0, 0.5).unwrap(), labels.iter().map(|&c| c as f64).collect()).unwrap();
            let mask = ClassMask::from_raster(src).unwrap();
            let target = GridSpec::new(7, 5, 0.1, 2.9, cell).unwrap();
            let out = mask.regrid(&target).unwrap();
            for v in out.raster().values.iter().filter(|v| !v.is_nan()) {
                prop_assert!(labels.contains(&(*v as u8)) && v.fract() == 0.0);
            }
        }
    }
}
