//! Whole-raster inference by overlapping tiles.

use flnet_autodiff::{Graph, ParamStore, Tensor};
use flnet_core::change::small_object_removal;
use flnet_core::raster::{resample, Resampling};
use flnet_core::Raster;

use crate::dataset::filled_tensor;
use crate::edsr::Edsr;
use crate::error::{ModelError, Result};
use crate::tiling::{feather, round_up, tile_starts, window_reflect};
use crate::unet::{Unet, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileOptions {
    pub tile: usize,
    pub overlap: usize,
}

impl TileOptions {
    pub const SR: TileOptions = TileOptions { tile: 64, overlap: 8 };
    pub const SEG: TileOptions = TileOptions { tile: 256, overlap: 32 };

    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(ModelError::Config(format!("tile {} must exceed overlap {}", self.tile, self.overlap)));
        }
        Ok(())
    }
}

/// Super-resolves a single-band NDVI raster. Output is clamped to [-1, 1] and
/// carries the nearest-upsampled input mask.
pub fn infer_sr(model: &Edsr, params: &ParamStore<f32>, lr: &Raster, opts: TileOptions) -> Result<Raster> {
    opts.validate()?;
    lr.require_single_band("SR input")?;
    let r = model.config.scale;
    let halo = model.receptive_radius();
    let (w, h) = (lr.width(), lr.height());
    // Short axes are reflect-padded up to a full tile.
    let (pw, ph) = (w.max(opts.tile), h.max(opts.tile));
    let src = filled_tensor(lr).into_data();
    let xs = tile_starts(pw, opts.tile, opts.overlap);
    let ys = tile_starts(ph, opts.tile, opts.overlap);
    let (ow, oh) = (pw * r, ph * r);
    let t = opts.tile * r;
    let mut acc = vec![0f64; ow * oh];
    let mut wsum = vec![0f64; ow * oh];
    let xs_out: Vec<usize> = xs.iter().map(|s| s * r).collect();
    let ys_out: Vec<usize> = ys.iter().map(|s| s * r).collect();
    for (ky, &y0) in ys.iter().enumerate() {
        let fy = feather(&ys_out, t, ky);
        for (kx, &x0) in xs.iter().enumerate() {
            let fx = feather(&xs_out, t, kx);
            let side = opts.tile + 2 * halo;
            let (hx, hy) = (x0 as isize - halo as isize, y0 as isize - halo as isize);
            let tile = window_reflect(&src, w, h, hx, hy, side, side);
            let mut g = Graph::new();
            let input = g.input(Tensor::new(&[1, 1, side, side], tile)?);
            let out = model.forward(&mut g, params, input)?;
            let pred = g.take_value(out).into_data();
            let (stride, skip) = (side * r, halo * r);
            for j in 0..t {
                let row = (y0 * r + j) * ow + x0 * r;
                let src_row = (j + skip) * stride + skip;
                for i in 0..t {
                    let wgt = fy[j] * fx[i];
                    acc[row + i] += wgt * pred[src_row + i] as f64;
                    wsum[row + i] += wgt;
                }
            }
        }
    }
    let grid = lr.grid().refined(r);
    let mut values = Vec::with_capacity(grid.len());
    for y in 0..h * r {
        for x in 0..w * r {
            let i = y * ow + x;
            values.push(((acc[i] / wsum[i]) as f32).clamp(-1.0, 1.0));
        }
    }
    let mask = resample(lr, &grid, Resampling::Nearest)?.nodata_mask().to_vec();
    Ok(Raster::with_mask(grid, 1, values, mask)?)
}

/// Class logits `[3, H, W]`, mean-blended where tiles overlap.
pub fn predict_logits(model: &Unet, params: &ParamStore<f32>, delta: &Raster, opts: TileOptions) -> Result<Vec<f32>> {
    opts.validate()?;
    delta.require_single_band("change map")?;
    let m = model.config.divisor();
    if opts.tile % m != 0 {
        return Err(ModelError::Config(format!("segmentation tile {} must be a multiple of {m}", opts.tile)));
    }
    let (w, h) = (delta.width(), delta.height());
    let src: Vec<f32> = (0..delta.pixels()).map(|i| if delta.is_valid(i) { delta.band(0)[i] } else { 0.0 }).collect();
    let plan = |n: usize| -> (usize, Vec<usize>) {
        if n <= opts.tile {
            (round_up(n, m), vec![0])
        } else {
            (opts.tile, tile_starts(n, opts.tile, opts.overlap))
        }
    };
    let (tw, xs) = plan(w);
    let (th, ys) = plan(h);
    let n = w * h;
    let mut acc = vec![0f64; N_CLASSES * n];
    let mut count = vec![0u32; n];
    for &y0 in &ys {
        for &x0 in &xs {
            let tile = window_reflect(&src, w, h, x0 as isize, y0 as isize, tw, th);
            let mut g = Graph::new();
            let input = g.input(Tensor::new(&[1, 1, th, tw], tile)?);
            let out = model.forward(&mut g, params, input)?;
            let logits = g.take_value(out).into_data();
            for j in 0..th.min(h - y0) {
                for i in 0..tw.min(w - x0) {
                    let o = (y0 + j) * w + x0 + i;
                    count[o] += 1;
                    for c in 0..N_CLASSES {
                        acc[c * n + o] += logits[c * tw * th + j * tw + i] as f64;
                    }
                }
            }
        }
    }
    Ok((0..N_CLASSES * n).map(|k| (acc[k] / count[k % n] as f64) as f32).collect())
}

/// First-index argmax over the class axis of `[3, n]` logits.
pub fn argmax_labels(logits: &[f32], n: usize) -> Vec<u8> {
    (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..N_CLASSES {
                if logits[c * n + i] > logits[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DamageOptions {
    pub tiles: TileOptions,
    pub min_object_size: usize,
}

impl Default for DamageOptions {
    fn default() -> Self {
        Self { tiles: TileOptions::SEG, min_object_size: 10 }
    }
}

/// Damage label raster from a change map: tiled argmax, nodata carried over,
/// then small-object removal.
pub fn predict_damage(model: &Unet, params: &ParamStore<f32>, delta: &Raster, opts: DamageOptions) -> Result<Raster> {
    let logits = predict_logits(model, params, delta, opts.tiles)?;
    let labels = argmax_labels(&logits, delta.pixels());
    let raw = Raster::with_mask(*delta.grid(), 1, labels.iter().map(|&l| l as f32).collect(), delta.nodata_mask().to_vec())?;
    if opts.min_object_size <= 1 {
        return Ok(raw);
    }
    Ok(small_object_removal(&raw, opts.min_object_size)?)
}
