//! Deterministic synthetic flood scenes: Voronoi parcels, damage ground truth and
//! a sensor degradation model producing aligned low/high resolution NDVI pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::change::{delta_ndvi, morphological_smooth, threshold_label, ThresholdConfig};
use crate::error::{RasterError, Result};
use crate::raster::{read_raster, write_raster, GeoTransform, Grid, QualityMask, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub hr_size: usize,
    pub hr_pixel: f64,
    pub scale: usize,
    pub parcel_count: usize,
    pub damage_fraction: f64,
    pub narrow_feature_count: usize,
    pub cloud_fraction: f64,
    pub noise_sigma: f64,
    /// PSF width in low-resolution pixels.
    pub blur_sigma: f64,
    /// Share of parcels that are cropland.
    pub cropland_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            hr_size: 768,
            hr_pixel: 3.0,
            scale: 3,
            parcel_count: 120,
            damage_fraction: 0.4,
            narrow_feature_count: 12,
            cloud_fraction: 0.0,
            noise_sigma: 0.01,
            blur_sigma: 0.5,
            cropland_fraction: 0.85,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RasterError::Invalid(m));
        if self.scale < 2 {
            return bad(format!("scale must be at least 2, got {}", self.scale));
        }
        if self.hr_size == 0 || self.hr_size % self.scale != 0 {
            return bad(format!("hr_size {} not divisible by scale {}", self.hr_size, self.scale));
        }
        if self.parcel_count == 0 {
            return bad("parcel_count must be positive".into());
        }
        for (name, v) in [
            ("damage_fraction", self.damage_fraction),
            ("cloud_fraction", self.cloud_fraction),
            ("cropland_fraction", self.cropland_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.blur_sigma >= 0.0 && self.hr_pixel > 0.0) {
            return bad("noise_sigma, blur_sigma must be non-negative and hr_pixel positive".into());
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("hr_size", self.hr_size.to_string()),
            ("hr_pixel", self.hr_pixel.to_string()),
            ("scale", self.scale.to_string()),
            ("parcel_count", self.parcel_count.to_string()),
            ("damage_fraction", self.damage_fraction.to_string()),
            ("narrow_feature_count", self.narrow_feature_count.to_string()),
            ("cloud_fraction", self.cloud_fraction.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("blur_sigma", self.blur_sigma.to_string()),
            ("cropland_fraction", self.cropland_fraction.to_string()),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let err = || RasterError::Invalid(format!("bad value `{value}` for `{key}`"));
        fn p<T: std::str::FromStr>(v: &str, e: impl Fn() -> RasterError) -> Result<T> {
            v.trim().parse().map_err(|_| e())
        }
        match key {
            "seed" => self.seed = p(value, err)?,
            "hr_size" => self.hr_size = p(value, err)?,
            "hr_pixel" => self.hr_pixel = p(value, err)?,
            "scale" => self.scale = p(value, err)?,
            "parcel_count" => self.parcel_count = p(value, err)?,
            "damage_fraction" => self.damage_fraction = p(value, err)?,
            "narrow_feature_count" => self.narrow_feature_count = p(value, err)?,
            "cloud_fraction" => self.cloud_fraction = p(value, err)?,
            "noise_sigma" => self.noise_sigma = p(value, err)?,
            "blur_sigma" => self.blur_sigma = p(value, err)?,
            "cropland_fraction" => self.cropland_fraction = p(value, err)?,
            _ => return Err(RasterError::Invalid(format!("unknown scene key `{key}`"))),
        }
        Ok(())
    }

    pub fn hr_grid(&self) -> Grid {
        let extent = self.hr_size as f64 * self.hr_pixel;
        Grid::new(
            self.hr_size,
            self.hr_size,
            GeoTransform { origin_x: 500_000.0, pixel_size_x: self.hr_pixel, origin_y: 4_000_000.0 + extent, pixel_size_y: -self.hr_pixel },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub pre_hr: Raster,
    pub post_hr: Raster,
    pub pre_lr: Raster,
    pub post_lr: Raster,
    pub truth: Raster,
    /// 1 on cropland, 0 elsewhere, on the high-resolution grid.
    pub cropland: Raster,
    /// Voronoi parcel index per high-resolution pixel.
    pub parcels: Raster,
    pub pre_lr_quality: QualityMask,
    pub post_lr_quality: QualityMask,
}

const MARGIN: f64 = 0.05;

/// Labels from clean high-resolution NDVI: threshold the change, then smooth.
pub fn truth_labels(pre_hr: &Raster, post_hr: &Raster) -> Result<Raster> {
    let labels = threshold_label(&delta_ndvi(pre_hr, post_hr)?, &ThresholdConfig::default())?;
    morphological_smooth(&labels, 3)
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let t = ThresholdConfig::default();
    let (tp, tf) = (t.t_partial as f64, t.t_full as f64);
    let grid = spec.hr_grid();
    let n = spec.hr_size;
    let mut rng = sub_rng(spec.seed, 1);

    let seeds: Vec<(f64, f64)> = (0..spec.parcel_count).map(|_| (rng.gen::<f64>() * n as f64, rng.gen::<f64>() * n as f64)).collect();
    let mut parcel = vec![0u32; n * n];
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u32);
            for (k, &(sx, sy)) in seeds.iter().enumerate() {
                let d = (px - sx).powi(2) + (py - sy).powi(2);
                if d < best.0 {
                    best = (d, k as u32);
                }
            }
            parcel[y * n + x] = best.1;
        }
    }

    struct Parcel {
        crop: bool,
        base: f64,
        drop: f64,
    }
    let parcels: Vec<Parcel> = (0..spec.parcel_count)
        .map(|_| {
            let crop = rng.gen::<f64>() < spec.cropland_fraction;
            if !crop {
                return Parcel { crop, base: rng.gen_range(0.05..0.35), drop: rng.gen_range(-0.03..0.03) };
            }
            let base = rng.gen_range(0.5..0.9);
            let damaged = rng.gen::<f64>() < spec.damage_fraction;
            let drop = if !damaged {
                rng.gen_range(-0.05..tp - MARGIN)
            } else if rng.gen::<bool>() {
                rng.gen_range(tp + MARGIN..tf - MARGIN)
            } else {
                rng.gen_range(tf + MARGIN..(tf + 0.35).min(base + 0.3))
            };
            Parcel { crop, base, drop }
        })
        .collect();

    let waves: Vec<Wave> = (0..6)
        .map(|_| {
            let len = rng.gen_range(8.0..60.0);
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let k = 2.0 * std::f64::consts::PI / len;
            Wave { kx: k * ang.cos(), ky: k * ang.sin(), phase: rng.gen_range(0.0..std::f64::consts::TAU), amp: rng.gen_range(0.005..0.015) }
        })
        .collect();

    let mut drop: Vec<f64> = parcel.iter().map(|&p| parcels[p as usize].drop).collect();
    for _ in 0..spec.narrow_feature_count {
        let width = rng.gen_range(2..=3usize);
        let len = rng.gen_range(n / 6..=n / 2).max(1);
        let horizontal = rng.gen::<bool>();
        let strip_drop = rng.gen_range(tf + 0.1..tf + 0.3);
        let along = rng.gen_range(0..n.saturating_sub(len).max(1));
        let across = rng.gen_range(0..n - width.min(n) + 1);
        for a in along..(along + len).min(n) {
            for c in across..(across + width).min(n) {
                let (x, y) = if horizontal { (a, c) } else { (c, a) };
                let i = y * n + x;
                if parcels[parcel[i] as usize].crop {
                    drop[i] = drop[i].max(strip_drop);
                }
            }
        }
    }

    let mut noise_rng = sub_rng(spec.seed, 2);
    let mut pre = vec![0f32; n * n];
    let mut post = vec![0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let p = &parcels[parcel[i] as usize];
            let tex: f64 = waves.iter().map(|w| w.amp * (w.kx * x as f64 + w.ky * y as f64 + w.phase).sin()).sum();
            let clean = p.base + tex;
            pre[i] = (clean + gaussian_noise(&mut noise_rng, spec.noise_sigma)).clamp(-1.0, 1.0) as f32;
            post[i] = (clean - drop[i] + gaussian_noise(&mut noise_rng, spec.noise_sigma)).clamp(-1.0, 1.0) as f32;
        }
    }
    let pre_hr = Raster::new(grid, 1, pre)?;
    let post_hr = Raster::new(grid, 1, post)?;
    let truth = truth_labels(&pre_hr, &post_hr)?;
    let cropland = Raster::new(grid, 1, parcel.iter().map(|&p| if parcels[p as usize].crop { 1.0 } else { 0.0 }).collect())?;
    let parcels_r = Raster::new(grid, 1, parcel.iter().map(|&p| p as f32).collect())?;

    let mut pre_lr = degrade_to_lr(&pre_hr, spec.scale, spec.blur_sigma, spec.noise_sigma, spec.seed.wrapping_mul(2).wrapping_add(11))?;
    let mut post_lr = degrade_to_lr(&post_hr, spec.scale, spec.blur_sigma, spec.noise_sigma, spec.seed.wrapping_mul(2).wrapping_add(12))?;
    let pre_lr_quality = cloud_mask(&mut pre_lr, spec.cloud_fraction, &mut sub_rng(spec.seed, 3));
    let post_lr_quality = cloud_mask(&mut post_lr, spec.cloud_fraction, &mut sub_rng(spec.seed, 4));

    Ok(SceneBundle {
        spec: spec.clone(),
        pre_hr,
        post_hr,
        pre_lr,
        post_lr,
        truth,
        cropland,
        parcels: parcels_r,
        pre_lr_quality,
        post_lr_quality,
    })
}

/// Round cloud blobs covering about `fraction` of the raster; cloudy pixels read near-zero NDVI.
fn cloud_mask(r: &mut Raster, fraction: f64, rng: &mut ChaCha8Rng) -> QualityMask {
    let (w, h) = (r.width(), r.height());
    let mut q = QualityMask::clear(*r.grid());
    let target = (fraction * r.pixels() as f64).round() as usize;
    let mut covered = 0;
    let max_radius = (w.min(h) as f64 / 8.0).max(2.0);
    while covered < target {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let rad = rng.gen_range(1.5..max_radius);
        let shadow = (rad * 0.6, rad * 0.4);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let i = y * w + x;
                let in_cloud = (fx - cx).powi(2) + (fy - cy).powi(2) <= rad * rad;
                let in_shadow = (fx - cx - shadow.0).powi(2) + (fy - cy - shadow.1).powi(2) <= rad * rad;
                if in_cloud || in_shadow {
                    if !q.is_flagged(i) {
                        covered += 1;
                    }
                    q.set(i, if in_cloud { QualityMask::CLOUD } else { QualityMask::SHADOW });
                    if in_cloud {
                        r.band_mut(0)[i] = 0.05;
                    }
                }
            }
        }
    }
    q
}

/// Normalised Gaussian blur that skips invalid pixels; edges are handled by renormalising.
fn blur(r: &Raster, sigma: f64) -> Vec<f64> {
    let (w, h) = (r.width(), r.height());
    let vals: Vec<f64> = (0..r.pixels()).map(|i| if r.is_valid(i) { r.band(0)[i] as f64 } else { 0.0 }).collect();
    let wts: Vec<f64> = (0..r.pixels()).map(|i| if r.is_valid(i) { 1.0 } else { 0.0 }).collect();
    if sigma == 0.0 {
        return vals;
    }
    let rad = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-rad..=rad).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0f64; src.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for (t, &g) in taps.iter().enumerate() {
                    let k = t as isize - rad;
                    let (sx, sy) = if horizontal { (x + k, y) } else { (x, y + k) };
                    if sx >= 0 && sx < w as isize && sy >= 0 && sy < h as isize {
                        acc += g * src[(sy * w as isize + sx) as usize];
                    }
                }
                out[(y * w as isize + x) as usize] = acc;
            }
        }
        out
    };
    let num = pass(&pass(&vals, true), false);
    let den = pass(&pass(&wts, true), false);
    num.iter().zip(&den).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
}

/// Sensor model: Gaussian PSF (`blur_sigma * r` fine pixels), `r x r` box average,
/// additive Gaussian noise, clamp to [-1, 1]. A coarse pixel is nodata when any
/// fine pixel in its block is.
pub fn degrade_to_lr(hr: &Raster, r: usize, blur_sigma: f64, noise_sigma: f64, seed: u64) -> Result<Raster> {
    hr.require_single_band("degraded raster")?;
    if !(blur_sigma >= 0.0 && noise_sigma >= 0.0) {
        return Err(RasterError::Invalid("blur and noise sigma must be non-negative".into()));
    }
    let grid = hr.grid().coarsened(r)?;
    let blurred = blur(hr, blur_sigma * r as f64);
    let w = hr.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0f32; grid.len()];
    let mut mask = vec![false; grid.len()];
    for y in 0..grid.height {
        for x in 0..grid.width {
            let mut acc = 0.0;
            let mut bad = false;
            for yy in y * r..(y + 1) * r {
                for xx in x * r..(x + 1) * r {
                    bad |= hr.is_nodata(yy * w + xx);
                    acc += blurred[yy * w + xx];
                }
            }
            let noise = gaussian_noise(&mut rng, noise_sigma);
            let o = y * grid.width + x;
            mask[o] = bad;
            values[o] = (acc / (r * r) as f64 + noise).clamp(-1.0, 1.0) as f32;
        }
    }
    Raster::with_mask(grid, 1, values, mask)
}

const FILES: [&str; 9] = [
    "pre_hr", "post_hr", "pre_lr", "post_lr", "truth", "cropland", "parcels", "pre_lr_quality", "post_lr_quality",
];

impl SceneBundle {
    fn members(&self) -> [Raster; 9] {
        [
            self.pre_hr.clone(),
            self.post_hr.clone(),
            self.pre_lr.clone(),
            self.post_lr.clone(),
            self.truth.clone(),
            self.cropland.clone(),
            self.parcels.clone(),
            self.pre_lr_quality.to_raster(),
            self.post_lr_quality.to_raster(),
        ]
    }

    /// Writes one FR1 file per member plus `manifest.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (k, v) in self.spec.to_pairs() {
            manifest.push_str(&format!("{k}={v}\n"));
        }
        for (name, r) in FILES.iter().zip(self.members()) {
            let file = format!("{name}.fr1");
            write_raster(&r, dir.join(&file))?;
            manifest.push_str(&format!("file.{name}={file}\n"));
        }
        let tmp = dir.join(".manifest.txt.tmp");
        fs::write(&tmp, manifest)?;
        fs::rename(tmp, dir.join("manifest.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut spec = SceneSpec::default();
        let mut files = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| RasterError::Invalid(format!("manifest line `{line}`")))?;
            match k.strip_prefix("file.") {
                Some(name) => {
                    files.insert(name.to_string(), v.to_string());
                }
                None => spec.set(k, v)?,
            }
        }
        let mut get = |name: &str| -> Result<Raster> {
            let file = files.remove(name).ok_or_else(|| RasterError::Invalid(format!("manifest lacks file.{name}")))?;
            read_raster(dir.join(file))
        };
        let bundle = Self {
            pre_hr: get("pre_hr")?,
            post_hr: get("post_hr")?,
            pre_lr: get("pre_lr")?,
            post_lr: get("post_lr")?,
            truth: get("truth")?,
            cropland: get("cropland")?,
            parcels: get("parcels")?,
            pre_lr_quality: QualityMask::from_raster(&get("pre_lr_quality")?)?,
            post_lr_quality: QualityMask::from_raster(&get("post_lr_quality")?)?,
            spec,
        };
        for r in [&bundle.post_hr, &bundle.truth, &bundle.cropland, &bundle.parcels] {
            bundle.pre_hr.require_cogridded(r, "bundle high-resolution members")?;
        }
        bundle.pre_lr.require_cogridded(&bundle.post_lr, "bundle low-resolution members")?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec { seed, hr_size: 96, parcel_count: 12, narrow_feature_count: 3, ..SceneSpec::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_scene(&small(5)).unwrap(), generate_scene(&small(5)).unwrap());
        assert_ne!(generate_scene(&small(5)).unwrap().parcels, generate_scene(&small(6)).unwrap().parcels);
    }

    #[test]
    fn no_damage_means_all_no() {
        let spec = SceneSpec { damage_fraction: 0.0, narrow_feature_count: 0, ..small(3) };
        let b = generate_scene(&spec).unwrap();
        assert!(b.truth.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lr_grid_is_coarser_by_scale() {
        let b = generate_scene(&small(1)).unwrap();
        assert_eq!(b.pre_lr.width(), 32);
        assert_eq!(b.pre_lr.geo().pixel_size_x, 9.0);
        assert_eq!(b.pre_lr.geo().origin_x, b.pre_hr.geo().origin_x);
        assert_eq!(b.pre_lr.geo().origin_y, b.pre_hr.geo().origin_y);
    }

    #[test]
    fn constant_degrades_to_constant() {
        let r = Raster::filled(Grid::pixel(12, 12), 1, 0.37).unwrap();
        let lr = degrade_to_lr(&r, 3, 0.5, 0.0, 1).unwrap();
        assert_eq!(lr.width(), 4);
        assert!(lr.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        assert!(degrade_to_lr(&Raster::filled(Grid::pixel(10, 9), 1, 0.0).unwrap(), 3, 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec { hr_size: 100, ..SceneSpec::default() }.validate().is_err());
        assert!(SceneSpec { damage_fraction: 1.5, ..SceneSpec::default() }.validate().is_err());
    }
}
