//! Reconstruction quality (MSE, PSNR, SSIM) and segmentation scores (confusion, F1).

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::change::label_indices;
use crate::error::{RasterError, Result};
use crate::raster::Raster;

/// NDVI spans [-1, 1].
pub const NDVI_RANGE: f64 = 2.0;
/// MSE below this reports an infinite PSNR.
pub const MSE_FLOOR: f64 = 1e-12;

fn joint_mask(x: &Raster, y: &Raster) -> Result<Vec<bool>> {
    x.require_single_band("metric input")?;
    y.require_single_band("metric input")?;
    if x.width() != y.width() || x.height() != y.height() {
        return Err(RasterError::GridMismatch(format!(
            "{}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    Ok((0..x.pixels()).map(|i| x.is_valid(i) && y.is_valid(i)).collect())
}

/// Mean squared error over positions where `valid` holds (all when `None`).
pub fn mse_values(x: &[f32], y: &[f32], valid: Option<&[bool]>) -> Result<(f64, usize)> {
    assert_eq!(x.len(), y.len(), "mse inputs differ in length");
    let mut sum = 0f64;
    let mut n = 0usize;
    for i in 0..x.len() {
        if valid.map_or(true, |v| v[i]) {
            let d = x[i] as f64 - y[i] as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(RasterError::NoValidPixels);
    }
    Ok((sum / n as f64, n))
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse < MSE_FLOOR {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

pub fn mse(x: &Raster, y: &Raster) -> Result<f64> {
    let m = joint_mask(x, y)?;
    Ok(mse_values(x.band(0), y.band(0), Some(&m))?.0)
}

pub fn psnr(x: &Raster, y: &Raster, range: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?, range))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimWindow {
    Gaussian { size: usize, sigma: f64 },
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub range: f64,
    pub k1: f64,
    pub k2: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { range: NDVI_RANGE, k1: 0.01, k2: 0.03, window: SsimWindow::Gaussian { size: 11, sigma: 1.5 } }
    }
}

impl SsimParams {
    pub fn global() -> Self {
        Self { window: SsimWindow::Global, ..Self::default() }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    fn formula(&self, mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
        let (c1, c2) = (self.c1(), self.c2());
        ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid ("no padding") separable filtering of a `w x h` field.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * tmp[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// SSIM over `w x h` fields. Windowed mode averages over windows whose pixels are all valid.
pub fn ssim_values(x: &[f32], y: &[f32], w: usize, h: usize, valid: Option<&[bool]>, params: &SsimParams) -> Result<f64> {
    assert_eq!(x.len(), w * h);
    assert_eq!(y.len(), w * h);
    let ok = |i: usize| valid.map_or(true, |v| v[i]);
    match params.window {
        SsimWindow::Global => {
            let idx: Vec<usize> = (0..w * h).filter(|&i| ok(i)).collect();
            if idx.is_empty() {
                return Err(RasterError::NoValidPixels);
            }
            let n = idx.len() as f64;
            let mx = idx.iter().map(|&i| x[i] as f64).sum::<f64>() / n;
            let my = idx.iter().map(|&i| y[i] as f64).sum::<f64>() / n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for &i in &idx {
                let (a, b) = (x[i] as f64 - mx, y[i] as f64 - my);
                vx += a * a;
                vy += b * b;
                cxy += a * b;
            }
            Ok(params.formula(mx, my, vx / n, vy / n, cxy / n))
        }
        SsimWindow::Gaussian { size, sigma } => {
            if w < size || h < size {
                return Err(RasterError::WindowTooLarge { width: w, height: h, window: size });
            }
            let g = gaussian_taps(size, sigma);
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
            let mx = filter_valid(&xf, w, h, &g);
            let my = filter_valid(&yf, w, h, &g);
            let sxx = filter_valid(&prod(&xf, &xf), w, h, &g);
            let syy = filter_valid(&prod(&yf, &yf), w, h, &g);
            let sxy = filter_valid(&prod(&xf, &yf), w, h, &g);
            let bad: Vec<f64> = (0..w * h).map(|i| if ok(i) { 0.0 } else { 1.0 }).collect();
            let bad = filter_valid(&bad, w, h, &vec![1.0; size]);
            let mut sum = 0f64;
            let mut count = 0usize;
            for i in 0..mx.len() {
                if bad[i] != 0.0 {
                    continue;
                }
                let (ux, uy) = (mx[i], my[i]);
                sum += params.formula(ux, uy, sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
                count += 1;
            }
            if count == 0 {
                return Err(RasterError::NoValidPixels);
            }
            Ok(sum / count as f64)
        }
    }
}

pub fn ssim(x: &Raster, y: &Raster, params: &SsimParams) -> Result<f64> {
    let m = joint_mask(x, y)?;
    ssim_values(x.band(0), y.band(0), x.width(), x.height(), Some(&m), params)
}

/// Rows are truth, columns prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.counts[t as usize][p as usize] += 1;
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for t in 0..3 {
            for p in 0..3 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }
}

/// Confusion counts over jointly valid pixels of two co-gridded label rasters.
pub fn confusion(truth: &Raster, pred: &Raster) -> Result<ConfusionMatrix> {
    truth.require_cogridded(pred, "confusion")?;
    let (t, p) = (label_indices(truth)?, label_indices(pred)?);
    Ok(ConfusionMatrix::from_pairs(t.into_iter().zip(p).filter_map(|(a, b)| Some((a?, b?)))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Scores {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub macro_f1: f64,
}

/// Per-class scores. A class never predicted or never present scores 0.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let c = &cm.counts;
    let mut s = F1Scores { precision: [0.0; 3], recall: [0.0; 3], f1: [0.0; 3], macro_f1: 0.0 };
    for k in 0..3 {
        let tp = c[k][k] as f64;
        let predicted: u64 = (0..3).map(|t| c[t][k]).sum();
        let actual: u64 = c[k].iter().sum();
        if predicted == 0 || actual == 0 {
            continue;
        }
        let (p, r) = (tp / predicted as f64, tp / actual as f64);
        s.precision[k] = p;
        s.recall[k] = r;
        s.f1[k] = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    s.macro_f1 = s.f1.iter().sum::<f64>() / 3.0;
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub pixel_count: u64,
}

/// Evaluation results with optional `# key: value` header lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub header: Vec<(String, String)>,
    pub rows: Vec<MetricRow>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, value: f64, pixel_count: u64) {
        self.rows.push(MetricRow { name: name.into(), value, pixel_count });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        for (k, v) in &self.header {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "metric,value,pixel_count")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.name, fmt_value(r.value), r.pixel_count)?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "{k}: {v}");
        }
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}", "metric", "value", "pixels");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}", r.name, fmt_value(r.value), r.pixel_count);
        }
        s
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;

    #[test]
    fn psnr_examples() {
        let g = Grid::pixel(4, 4);
        let x = Raster::from_fn(g, |a, b| (a as f32 - b as f32) * 0.1).unwrap();
        assert_eq!(psnr(&x, &x, 2.0).unwrap(), f64::INFINITY);
        let y = x.with_values(x.data().iter().map(|v| v + 0.2).collect()).unwrap();
        assert!((mse(&x, &y).unwrap() - 0.04).abs() < 1e-8);
        assert!((psnr(&x, &y, 2.0).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn no_valid_overlap() {
        let x = Raster::filled(Grid::pixel(2, 1), 1, 0.0).unwrap().masked(|_| true);
        assert!(matches!(mse(&x, &x), Err(RasterError::NoValidPixels)));
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let g = gaussian_taps(11, 1.5);
        let s: f64 = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_hand_example() {
        let cm = ConfusionMatrix::from_pairs([0u8, 0, 1, 1, 2, 2].into_iter().zip([0u8, 1, 1, 1, 2, 0]));
        let s = f1_scores(&cm);
        assert!((s.f1[0] - 0.5).abs() < 1e-12);
        assert!((s.f1[1] - 0.8).abs() < 1e-12);
        assert!((s.f1[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.macro_f1 - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let s = f1_scores(&ConfusionMatrix::from_pairs([(0u8, 0u8), (0, 0)]));
        assert_eq!(s.f1, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn report_csv() {
        let mut r = Report::default();
        r.header.push(("config_hash".into(), "abc".into()));
        r.push("psnr", f64::INFINITY, 4);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# config_hash: abc\nmetric,value,pixel_count\npsnr,inf,4\n");
    }
}
