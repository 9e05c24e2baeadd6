//! Multi-scale terrain morphometry.
//!
//! Each scale low-passes the DEM with a Gaussian (sigma = L / 6 in pixels) and
//! differentiates the smoothed surface through a 3×3 least-squares quadratic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Raster;

pub const DEM_FEATURE: &str = "DEM_1km";
pub const NUM_MORPHOMETRICS: usize = 10;
pub const DEFAULT_SCALES_KM: [f64; 4] = [3.0, 11.0, 33.0, 47.0];
pub const DEFAULT_SUN_ALTITUDE: f64 = 45.0;

/// Gradients below this magnitude are treated as flat.
const FLAT_GRADIENT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub scales_km: Vec<f64>,
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet {
            scales_km: DEFAULT_SCALES_KM.to_vec(),
        }
    }
}

impl ScaleSet {
    pub fn new(scales_km: Vec<f64>) -> Result<Self> {
        if scales_km.is_empty()
            || scales_km.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || scales_km.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "scales {scales_km:?} must be positive and strictly increasing"
            )));
        }
        Ok(ScaleSet { scales_km })
    }

    pub fn sigma_px(&self, scale_km: f64, cell_km: f64) -> f64 {
        scale_km / cell_km / 6.0
    }

    /// `DEM_1km` followed by `morf_<k>_<L>km`, grouped by variable then scale.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = vec![DEM_FEATURE.to_string()];
        for k in 1..=NUM_MORPHOMETRICS {
            for &s in &self.scales_km {
                names.push(morf_name(k, s));
            }
        }
        names
    }
}

pub fn morf_name(k: usize, scale_km: f64) -> String {
    format!("morf_{k}_{}km", scale_km)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable Gaussian blur truncated at 3 sigma. Missing cells and the area
/// beyond the edge are excluded and the kernel renormalized over the rest;
/// nodata cells stay nodata.
pub fn smooth(dem: &Raster, sigma_px: f64) -> Result<Raster> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma_px} must be positive")));
    }
    let kernel = gaussian_kernel(sigma_px);
    let r = (kernel.len() / 2) as i64;
    let (h, w) = (dem.height(), dem.width());
    let src = dem.normalized();

    let convolve_line = |line: &[f64], out: &mut [f64]| {
        let n = line.len() as i64;
        for (p, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, &kw) in kernel.iter().enumerate() {
                let q = p as i64 + k as i64 - r;
                if q < 0 || q >= n {
                    continue;
                }
                let v = line[q as usize];
                if !v.is_nan() {
                    acc += kw * v;
                    wsum += kw;
                }
            }
            *slot = if wsum > 0.0 { acc / wsum } else { f64::NAN };
        }
    };

    let mut horizontal = vec![f64::NAN; h * w];
    horizontal
        .par_chunks_mut(w)
        .zip(src.values.par_chunks(w))
        .for_each(|(out, line)| convolve_line(line, out));

    let columns: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|j| {
            let line: Vec<f64> = (0..h).map(|i| horizontal[i * w + j]).collect();
            let mut out = vec![f64::NAN; h];
            convolve_line(&line, &mut out);
            out
        })
        .collect();

    let values = (0..h * w)
        .map(|idx| {
            if src.values[idx].is_nan() {
                f64::NAN
            } else {
                columns[idx % w][idx / w]
            }
        })
        .collect();
    Ok(Raster {
        spec: dem.spec,
        values,
        nodata: f64::NAN,
    })
}

/// `z = a x² + b y² + c xy + d x + e y + f` with x east and y north, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPatch {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl QuadraticPatch {
    /// Closed-form least squares over a 3×3 window given row-major from the
    /// north-west corner, grid spacing `g` meters.
    ///
    /// Coefficients are assembled from pairwise differences so that adding a
    /// constant to the window leaves a..e bit-identical whenever the shifted
    /// values are exactly representable.
    pub fn fit(z: &[f64; 9], g: f64) -> Self {
        let [z1, z2, z3, z4, z5, z6, z7, z8, z9] = *z;
        let d = ((z3 - z1) + (z6 - z4) + (z9 - z7)) / (6.0 * g);
        let e = ((z1 - z7) + (z2 - z8) + (z3 - z9)) / (6.0 * g);
        let a = (((z1 - z2) - (z2 - z3)) + ((z4 - z5) - (z5 - z6)) + ((z7 - z8) - (z8 - z9))) / (6.0 * g * g);
        let b = (((z1 - z4) - (z4 - z7)) + ((z2 - z5) - (z5 - z8)) + ((z3 - z6) - (z6 - z9))) / (6.0 * g * g);
        let c = ((z3 - z1) - (z9 - z7)) / (4.0 * g * g);
        let f = (2.0 * (z2 + z4 + z6 + z8) - (z1 + z3 + z7 + z9) + 5.0 * z5) / 9.0;
        QuadraticPatch { a, b, c, d, e, f }
    }

    pub fn morphometrics(&self, sun_altitude_deg: f64) -> [f64; NUM_MORPHOMETRICS] {
        let QuadraticPatch { a, b, c, d, e, .. } = *self;
        let p = d * d + e * e;
        let flat = p.sqrt() < FLAT_GRADIENT;
        let slope = p.sqrt().atan().to_degrees();
        let aspect = if flat {
            0.0
        } else {
            let az = (-d).atan2(-e).to_degrees();
            if az < 0.0 {
                az + 360.0
            } else if az >= 360.0 {
                az - 360.0
            } else {
                az
            }
        };
        let (profile, plan, longitudinal, cross) = if flat {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let along = a * d * d + b * e * e + c * d * e;
            let across = a * e * e + b * d * d - c * d * e;
            (
                -2.0 * along / (p * (1.0 + p).powf(1.5)),
                2.0 * across / p.powf(1.5),
                -2.0 * along / p,
                -2.0 * across / p,
            )
        };
        let root = ((a - b) * (a - b) + c * c).sqrt();
        let k_min = -a - b - root;
        let k_max = -a - b + root;
        let shade = |azimuth_deg: f64| {
            let (alt, az) = (sun_altitude_deg.to_radians(), azimuth_deg.to_radians());
            let sun = [az.sin() * alt.cos(), az.cos() * alt.cos(), alt.sin()];
            let norm = (1.0 + p).sqrt();
            ((-d * sun[0] - e * sun[1] + sun[2]) / norm).clamp(0.0, 1.0)
        };
        [
            slope,
            aspect,
            shade(90.0),
            profile,
            plan,
            longitudinal,
            cross,
            k_min,
            k_max,
            shade(180.0),
        ]
    }
}

/// The ten morphometric rasters of a surface: slope, aspect, east shading,
/// profile convexity, plan convexity, longitudinal curvature, cross-sectional
/// curvature, minimum curvature, maximum curvature, south shading. Border
/// pixels and pixels with a missing neighbor are nodata.
pub fn morphometrics(surface: &Raster, cell_m: f64, sun_altitude_deg: f64) -> Result<Vec<Raster>> {
    let (h, w) = (surface.height(), surface.width());
    if h < 3 || w < 3 {
        return Err(Error::InvalidArgument(format!(
            "morphometrics need at least 3x3 pixels, got {w}x{h}"
        )));
    }
    if !(cell_m > 0.0) {
        return Err(Error::InvalidArgument(format!("cell size {cell_m} m must be positive")));
    }
    let per_pixel: Vec<Option<[f64; NUM_MORPHOMETRICS]>> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / w, idx % w);
            if i == 0 || j == 0 || i == h - 1 || j == w - 1 {
                return None;
            }
            let mut z = [0.0; 9];
            for (k, slot) in z.iter_mut().enumerate() {
                *slot = surface.valid(i + k / 3 - 1, j + k % 3 - 1)?;
            }
            Some(QuadraticPatch::fit(&z, cell_m).morphometrics(sun_altitude_deg))
        })
        .collect();
    Ok((0..NUM_MORPHOMETRICS)
        .map(|k| Raster {
            spec: surface.spec,
            values: per_pixel
                .iter()
                .map(|p| p.map_or(f64::NAN, |m| m[k]))
                .collect(),
            nodata: f64::NAN,
        })
        .collect())
}

/// `DEM_1km` plus ten morphometrics at each scale, named per
/// [`ScaleSet::feature_names`].
pub fn terrain_feature_stack(dem: &Raster, scales: &ScaleSet) -> Result<Vec<(String, Raster)>> {
    let cell_km = dem.spec.cell_km();
    let cell_m = dem.spec.cell_m();
    let mut by_scale = Vec::with_capacity(scales.scales_km.len());
    for &s in &scales.scales_km {
        let surface = smooth(dem, scales.sigma_px(s, cell_km))?;
        by_scale.push(morphometrics(&surface, cell_m, DEFAULT_SUN_ALTITUDE)?);
    }
    let mut out = vec![(DEM_FEATURE.to_string(), dem.normalized())];
    for k in 0..NUM_MORPHOMETRICS {
        for (si, &s) in scales.scales_km.iter().enumerate() {
            out.push((morf_name(k + 1, s), by_scale[si][k].clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use proptest::prelude::*;

    fn window(f: impl Fn(f64, f64) -> f64, g: f64) -> [f64; 9] {
        let mut z = [0.0; 9];
        for (k, slot) in z.iter_mut().enumerate() {
            let (r, c) = (k / 3, k % 3);
            *slot = f((c as f64 - 1.0) * g, (1.0 - r as f64) * g);
        }
        z
    }

    /// Normal-equation least squares on the 9 points, solved by Gaussian elimination.
    fn lstsq_oracle(z: &[f64; 9], g: f64) -> [f64; 6] {
        let mut ata = [[0.0; 6]; 6];
        let mut atb = [0.0; 6];
        for (k, &zk) in z.iter().enumerate() {
            let (r, c) = (k / 3, k % 3);
            let (x, y) = ((c as f64 - 1.0) * g, (1.0 - r as f64) * g);
            let row = [x * x, y * y, x * y, x, y, 1.0];
            for i in 0..6 {
                atb[i] += row[i] * zk;
                for j in 0..6 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        for col in 0..6 {
            let piv = (col..6).max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs())).unwrap();
            ata.swap(col, piv);
            atb.swap(col, piv);
            for r in 0..6 {
                if r != col {
                    let f = ata[r][col] / ata[col][col];
                    for c in 0..6 {
                        ata[r][c] -= f * ata[col][c];
                    }
                    atb[r] -= f * atb[col];
                }
            }
        }
        std::array::from_fn(|i| atb[i] / ata[i][i])
    }

    #[test]
    fn closed_form_matches_least_squares() {
        let z = [3.0, 1.5, -2.0, 0.25, 4.0, 7.0, -1.0, 2.0, 5.5];
        for g in [1.0, 30.0] {
            let p = QuadraticPatch::fit(&z, g);
            let o = lstsq_oracle(&z, g);
            let got = [p.a, p.b, p.c, p.d, p.e, p.f];
            for (x, y) in got.iter().zip(o.iter()) {
                assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()), "{got:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn inclined_plane() {
        let m = QuadraticPatch::fit(&window(|x, _| x, 1.0), 1.0).morphometrics(45.0);
        assert!((m[0] - 45.0).abs() < 1e-9);
        assert!((m[1] - 270.0).abs() < 1e-9);
        for k in [3, 4, 5, 6, 7, 8] {
            assert!(m[k].abs() < 1e-9, "morf_{} = {}", k + 1, m[k]);
        }
        // Descent toward the north for z = -y.
        let m = QuadraticPatch::fit(&window(|_, y| -y, 1.0), 1.0).morphometrics(45.0);
        assert!(m[1].abs() < 1e-9);
        let m = QuadraticPatch::fit(&window(|_, y| y, 1.0), 1.0).morphometrics(45.0);
        assert!((m[1] - 180.0).abs() < 1e-9);
    }

    #[test]
    fn paraboloid_apex() {
        let p = QuadraticPatch::fit(&window(|x, y| -(x * x + y * y), 1.0), 1.0);
        let m = p.morphometrics(45.0);
        assert!((m[7] - 2.0).abs() < 1e-9);
        assert!((m[8] - 2.0).abs() < 1e-9);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[1], 0.0);
    }

    #[test]
    fn flat_shading() {
        let m = QuadraticPatch::fit(&[5.0; 9], 100.0).morphometrics(45.0);
        let expected = 45f64.to_radians().cos();
        assert!((m[2] - expected).abs() < 1e-12);
        assert!((m[9] - expected).abs() < 1e-12);
    }

    #[test]
    fn shading_faces_the_sun() {
        // Surface rising toward the west faces east.
        let m = QuadraticPatch::fit(&window(|x, _| -x, 1.0), 1.0).morphometrics(45.0);
        assert!((m[2] - 1.0).abs() < 1e-12);
        assert!(m[9] < m[2]);
    }

    #[test]
    fn smoothing_limits() {
        let spec = GridSpec::new(9, 7, 0.0, 1.0, 0.01).unwrap();
        let r = Raster::from_fn(spec, |i, j| ((i * 13 + j * 7) % 11) as f64);
        let s = smooth(&r, 0.1).unwrap();
        for (a, b) in r.values.iter().zip(s.values.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let c = smooth(&Raster::filled(spec, 4.5), 1.7).unwrap();
        assert!(c.values.iter().all(|v| (v - 4.5).abs() < 1e-12));
        assert!(smooth(&r, 0.0).is_err());
        assert!(smooth(&r, -1.0).is_err());
    }

    #[test]
    fn impulse_response_is_discrete_gaussian() {
        let spec = GridSpec::new(21, 21, 0.0, 1.0, 0.01).unwrap();
        let sigma = 1.3;
        let r = Raster::from_fn(spec, |i, j| if i == 10 && j == 10 { 1.0 } else { 0.0 });
        let s = smooth(&r, sigma).unwrap();
        // Direct 2-D kernel evaluation over the truncated square.
        let rad = (3.0 * sigma).ceil() as i64;
        let g = |di: i64, dj: i64| (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
        let total: f64 = (-rad..=rad).flat_map(|a| (-rad..=rad).map(move |b| g(a, b))).sum();
        for di in -rad..=rad {
            for dj in -rad..=rad {
                let got = s.get((10 + di) as usize, (10 + dj) as usize);
                assert!((got - g(di, dj) / total).abs() < 1e-12);
            }
        }
        assert_eq!(s.get(10, 10 + rad as usize + 1), 0.0);
    }

    #[test]
    fn smoothing_keeps_nodata() {
        let spec = GridSpec::new(5, 5, 0.0, 1.0, 0.01).unwrap();
        let mut r = Raster::filled(spec, 2.0);
        r.values[12] = f64::NAN;
        let s = smooth(&r, 1.0).unwrap();
        assert!(s.values[12].is_nan());
        assert!((s.values[11] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn morphometrics_need_three_by_three() {
        let spec = GridSpec::new(2, 5, 0.0, 1.0, 0.01).unwrap();
        assert!(morphometrics(&Raster::filled(spec, 0.0), 1.0, 45.0).is_err());
    }

    #[test]
    fn border_pixels_are_nodata() {
        let spec = GridSpec::new(4, 4, 0.0, 1.0, 0.01).unwrap();
        let m = morphometrics(&Raster::from_fn(spec, |i, j| (i + j) as f64), 10.0, 45.0).unwrap();
        for r in &m {
            assert!(r.get(0, 2).is_nan() && r.get(3, 1).is_nan() && r.get(2, 0).is_nan());
            assert!(!r.get(1, 1).is_nan());
        }
    }

    #[test]
    fn stack_names_and_constant_dem() {
        let spec = GridSpec::new(12, 12, 0.0, 1.0, 1.0 / 120.0).unwrap();
        let stack = terrain_feature_stack(&Raster::filled(spec, 350.0), &ScaleSet::default()).unwrap();
        assert_eq!(stack.len(), 41);
        assert_eq!(stack[0].0, "DEM_1km");
        assert_eq!(stack[1].0, "morf_1_3km");
        assert_eq!(stack[4].0, "morf_1_47km");
        assert_eq!(stack[40].0, "morf_10_47km");
        let names: Vec<String> = stack.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, ScaleSet::default().feature_names());
        assert!(stack[0].1.values.iter().all(|&v| v == 350.0));
        for (name, r) in &stack[1..] {
            let is_shade = name.starts_with("morf_3_") || name.starts_with("morf_10_");
            for v in r.values.iter().filter(|v| !v.is_nan()) {
                if is_shade {
                    assert!((v - 45f64.to_radians().cos()).abs() < 1e-9);
                } else {
                    assert!(v.abs() < 1e-12, "{name}: {v}");
                }
            }
        }
    }

    #[test]
    fn plane_slope_is_scale_independent() {
        let spec = GridSpec::new(60, 60, 0.0, 1.0, 1.0 / 120.0).unwrap();
        let g = spec.cell_m();
        let dem = Raster::from_fn(spec, |i, j| 0.02 * g * j as f64 - 0.01 * g * i as f64 + 100.0);
        let scales = ScaleSet::default();
        let expected = (0.02f64.hypot(0.01)).atan().to_degrees();
        let stack = terrain_feature_stack(&dem, &scales).unwrap();
        let max_radius = (3.0 * scales.sigma_px(47.0, spec.cell_km())).ceil() as usize + 1;
        for s in &scales.scales_km {
            let slope = &stack.iter().find(|(n, _)| *n == morf_name(1, *s)).unwrap().1;
            for i in max_radius..60 - max_radius {
                for j in max_radius..60 - max_radius {
                    assert!((slope.get(i, j) - expected).abs() < 1e-7, "scale {s}: {}", slope.get(i, j));
                }
            }
        }
    }

    fn rotate(z: &[f64; 9]) -> [f64; 9] {
        // 90° counter-clockwise: new(r, c) = old(c, 2 - r).
        std::array::from_fn(|k| z[(k % 3) * 3 + (2 - k / 3)])
    }

    proptest! {
        #[test]
        fn curvature_extremes_are_rotation_invariant(z in proptest::array::uniform9(-50.0f64..50.0), g in 1.0f64..100.0) {
            let p = QuadraticPatch::fit(&z, g);
            let q = QuadraticPatch::fit(&rotate(&z), g);
            prop_assert!((p.a - q.b).abs() < 1e-9 && (p.b - q.a).abs() < 1e-9 && (p.c + q.c).abs() < 1e-9);
            let mp = p.morphometrics(45.0);
            let mq = q.morphometrics(45.0);
            prop_assert!(mp[7] <= mp[8]);
            prop_assert!((mp[7] - mq[7]).abs() < 1e-9 && (mp[8] - mq[8]).abs() < 1e-9);
        }

        #[test]
        fn morphometric_ranges(z in proptest::array::uniform9(-500.0f64..500.0), g in 1.0f64..1000.0) {
            let m = QuadraticPatch::fit(&z, g).morphometrics(45.0);
            prop_assert!(m[0] >= 0.0 && m[0] < 90.0);
            prop_assert!(m[1] >= 0.0 && m[1] < 360.0);
            prop_assert!((0.0..=1.0).contains(&m[2]) && (0.0..=1.0).contains(&m[9]));
        }

        #[test]
        fn translation_invariance(z in proptest::array::uniform9(-10_000i32..10_000), shift in -100_000i32..100_000) {
            let zf = z.map(f64::from);
            let shifted = z.map(|v| f64::from(v + shift));
            prop_assert_eq!(
                QuadraticPatch::fit(&zf, 926.0).morphometrics(45.0),
                QuadraticPatch::fit(&shifted, 926.0).morphometrics(45.0)
            );
        }

        #[test]
        fn scaling_steepens_without_turning(z in proptest::array::uniform9(-50.0f64..50.0), s in 1.01f64..5.0) {
            let p = QuadraticPatch::fit(&z, 10.0);
            prop_assume!(p.d.hypot(p.e) > 1e-6);
            let scaled = QuadraticPatch::fit(&z.map(|v| v * s), 10.0);
            let (m, ms) = (p.morphometrics(45.0), scaled.morphometrics(45.0));
            prop_assert!(ms[0] > m[0]);
            prop_assert!((ms[1] - m[1]).abs() < 1e-9 || (ms[1] - m[1]).abs() > 360.0 - 1e-9);
        }
    }
}
