//! 8-bit RGB PNG figures: diverging change maps, bar charts, line charts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Raster;

const NODATA_RGB: [u8; 3] = [200, 200, 200];
const BACKGROUND: [u8; 3] = [255, 255, 255];
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

/// Blue at −1, white at 0, red at +1; values outside are clamped.
pub fn diverging_rgb(v: f64) -> [u8; 3] {
    if !v.is_finite() {
        return NODATA_RGB;
    }
    let t = v.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t < 0.0 {
        [fade(t), fade(t), 255]
    } else {
        [255, fade(t), fade(t)]
    }
}

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            pixels: vec![BACKGROUND; width * height],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = rgb;
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        for y in y0.min(y1)..y0.max(y1) {
            for x in x0.min(x1)..x0.max(x1) {
                self.set(x, y, rgb);
            }
        }
    }

    /// Bresenham line.
    pub fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, rgb);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        enc.write_header()
            .and_then(|mut w| w.write_image_data(&bytes))
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Change map on the fixed [−1, 1] scale, each cell drawn `scale` pixels wide.
pub fn delta_png(raster: &Raster, scale: usize, path: impl AsRef<Path>) -> Result<()> {
    let scale = scale.max(1);
    let (w, h) = (raster.width(), raster.height());
    let mut c = Canvas::new(w * scale, h * scale);
    for i in 0..h {
        for j in 0..w {
            let v = raster.valid(i, j).unwrap_or(f64::NAN);
            let (x, y) = ((j * scale) as i64, (i * scale) as i64);
            c.fill_rect(x, y, x + scale as i64, y + scale as i64, diverging_rgb(v));
        }
    }
    c.write_png(path)
}

/// Horizontal bars, one per value, in the given order; positive bars red,
/// negative bars blue, both from a shared zero axis.
pub fn bar_chart_png(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let (bar, gap, width) = (14usize, 4usize, 400usize);
    let height = (values.len() * (bar + gap) + gap).max(1);
    let mut c = Canvas::new(width, height);
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let has_neg = values.iter().any(|&v| v < 0.0);
    let zero = if has_neg { width / 2 } else { 10 } as i64;
    let span = (width as i64 - zero - 10) as f64;
    for (k, &v) in values.iter().enumerate() {
        let len = if max > 0.0 { (v / max * span).round() as i64 } else { 0 };
        let y = (gap + k * (bar + gap)) as i64;
        let rgb = if v < 0.0 { PALETTE[0] } else { PALETTE[1] };
        c.fill_rect(zero, y, zero + len, y + bar as i64, rgb);
    }
    c.line((zero, 0), (zero, height as i64 - 1), [0, 0, 0]);
    c.write_png(path)
}

/// One polyline per series over a shared y-range.
pub fn line_chart_png(series: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    let (width, height, pad) = (480i64, 320i64, 20i64);
    let mut c = Canvas::new(width as usize, height as usize);
    let finite = series.iter().flatten().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    c.line((pad, height - pad), (width - pad, height - pad), [0, 0, 0]);
    c.line((pad, pad), (pad, height - pad), [0, 0, 0]);
    for (s, ys) in series.iter().enumerate() {
        let n = ys.len().max(2) - 1;
        let pt = |k: usize| {
            let x = pad + (k as i64 * (width - 2 * pad)) / n as i64;
            let y = height - pad - (((ys[k] - lo) / span) * (height - 2 * pad) as f64).round() as i64;
            (x, y)
        };
        for k in 1..ys.len() {
            c.line(pt(k - 1), pt(k), PALETTE[s % PALETTE.len()]);
        }
    }
    c.write_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(diverging_rgb(-1.0), [0, 0, 255]);
        assert_eq!(diverging_rgb(0.0), [255, 255, 255]);
        assert_eq!(diverging_rgb(1.0), [255, 0, 0]);
        assert_eq!(diverging_rgb(7.0), [255, 0, 0]);
        assert_eq!(diverging_rgb(f64::NAN), NODATA_RGB);
    }

    #[test]
    fn pngs_are_rgb8() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(3, 2, 0.0, 1.0, 0.5).unwrap();
        let r = Raster::new(spec, vec![-1.0, 0.0, 1.0, f64::NAN, 0.5, -0.5]).unwrap();
        delta_png(&r, 4, dir.path().join("d.png")).unwrap();
        bar_chart_png(&[0.3, -0.1, 0.05], dir.path().join("b.png")).unwrap();
        line_chart_png(&[vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]], dir.path().join("l.png")).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(dir.path().join("d.png")).unwrap()));
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        assert_eq!((info.width, info.height), (12, 8));
        assert_eq!(info.color_type, png::ColorType::Rgb);
        assert_eq!(info.bit_depth, png::BitDepth::Eight);
    }
}
