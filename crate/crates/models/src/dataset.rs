//! Paired training chips for super-resolution and segmentation.

use flnet_autodiff::Tensor;
use flnet_core::change::label_indices;
use flnet_core::raster::{apply_masks, extract_chips};
use flnet_core::synth::SceneBundle;
use flnet_core::Raster;

use crate::error::{ModelError, Result};

/// Maximum nodata share inside a training chip.
pub const DEFAULT_MAX_NODATA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SrPair {
    /// `[1, h, w]`, invalid pixels filled with the chip mean.
    pub lr: Tensor<f32>,
    pub lr_valid: Vec<bool>,
    /// `[1, r h, r w]`.
    pub hr: Tensor<f32>,
    /// Pixels that count in the loss.
    pub valid: Vec<bool>,
    pub scale: usize,
}

/// Tensor of band 0 with invalid pixels replaced by the mean of the valid ones.
pub fn filled_tensor(r: &Raster) -> Tensor<f32> {
    let band = r.band(0);
    let (mut s, mut n) = (0f64, 0usize);
    for i in (0..r.pixels()).filter(|&i| r.is_valid(i)) {
        s += band[i] as f64;
        n += 1;
    }
    let fill = if n > 0 { (s / n as f64) as f32 } else { 0.0 };
    let data = (0..r.pixels()).map(|i| if r.is_valid(i) { band[i] } else { fill }).collect();
    Tensor::new(&[1, r.height(), r.width()], data).expect("shape matches raster")
}

fn valid_mask(r: &Raster) -> Vec<bool> {
    r.nodata_mask().iter().map(|b| !b).collect()
}

/// Chips of `hr_chip` fine pixels taken every `stride` fine pixels, each with
/// the coarse window covering the same ground.
pub fn make_sr_pairs(lr: &Raster, hr: &Raster, scale: usize, hr_chip: usize, stride: usize, max_nodata: f64) -> Result<Vec<SrPair>> {
    lr.require_single_band("low-resolution input")?;
    hr.require_single_band("high-resolution target")?;
    if hr_chip % scale != 0 || stride % scale != 0 {
        return Err(ModelError::Misaligned(format!(
            "chip {hr_chip} and stride {stride} must be multiples of the SR scale {scale}; \
             resample the low-resolution raster to exactly {scale}x the target pixel size first"
        )));
    }
    if *hr.grid() != lr.grid().refined(scale) {
        return Err(ModelError::Misaligned(format!(
            "high-resolution grid {:?} is not the {scale}x refinement of {:?}",
            hr.grid(),
            lr.grid()
        )));
    }
    let c = hr_chip / scale;
    let mut out = Vec::new();
    for chip in extract_chips(&[hr], hr_chip, stride, max_nodata)? {
        let lr_chip = lr.crop(chip.col / scale, chip.row / scale, c, c)?;
        let bad = lr_chip.pixels() - lr_chip.valid_count();
        if bad as f64 > max_nodata * lr_chip.pixels() as f64 {
            continue;
        }
        let hr_chip_r = &chip.rasters[0];
        let lr_valid = valid_mask(&lr_chip);
        let valid = (0..hr_chip_r.pixels())
            .map(|i| {
                let (x, y) = (i % hr_chip, i / hr_chip);
                hr_chip_r.is_valid(i) && lr_valid[(y / scale) * c + x / scale]
            })
            .collect();
        out.push(SrPair { lr: filled_tensor(&lr_chip), lr_valid, hr: filled_tensor(hr_chip_r), valid, scale });
    }
    Ok(out)
}

/// Pre- and post-event pairs from each bundle. Low-resolution inputs are
/// masked by their quality flags; targets are restricted to cropland.
pub fn make_sr_dataset(scenes: &[SceneBundle], hr_chip: usize, stride: usize, max_nodata: f64) -> Result<Vec<SrPair>> {
    let mut out = Vec::new();
    for s in scenes {
        let crop_only = s.cropland.clone();
        for (lr, q, hr) in [(&s.pre_lr, &s.pre_lr_quality, &s.pre_hr), (&s.post_lr, &s.post_lr_quality, &s.post_hr)] {
            let lr = lr.masked(|i| q.is_flagged(i));
            let hr = hr.masked(|i| crop_only.band(0)[i] == 0.0 || crop_only.is_nodata(i));
            out.extend(make_sr_pairs(&lr, &hr, s.spec.scale, hr_chip, stride, max_nodata)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    /// `[1, h, w]` change values, invalid pixels filled with 0.
    pub delta: Tensor<f32>,
    pub labels: Vec<u8>,
    pub valid: Vec<bool>,
}

/// Co-located change/label chips; a pixel is usable when both are valid.
pub fn make_seg_samples(delta: &Raster, labels: &Raster, chip: usize, stride: usize, max_nodata: f64) -> Result<Vec<SegSample>> {
    delta.require_single_band("change map")?;
    delta.require_cogridded(labels, "segmentation pair")?;
    let joint = delta.masked(|i| labels.is_nodata(i));
    let mut out = Vec::new();
    for c in extract_chips(&[&joint, labels], chip, stride, max_nodata)? {
        let (d, l) = (&c.rasters[0], &c.rasters[1]);
        let idx = label_indices(l)?;
        let valid: Vec<bool> = (0..d.pixels()).map(|i| d.is_valid(i) && idx[i].is_some()).collect();
        let data = (0..d.pixels()).map(|i| if valid[i] { d.band(0)[i] } else { 0.0 }).collect();
        out.push(SegSample {
            delta: Tensor::new(&[1, chip, chip], data).expect("chip shape"),
            labels: idx.iter().map(|v| v.unwrap_or(0)).collect(),
            valid,
        });
    }
    Ok(out)
}

/// Chips of clean high-resolution change and truth labels within cropland.
pub fn make_seg_dataset(scenes: &[SceneBundle], chip: usize, stride: usize, max_nodata: f64) -> Result<Vec<SegSample>> {
    let mut out = Vec::new();
    for s in scenes {
        let delta = flnet_core::change::delta_ndvi(&s.pre_hr, &s.post_hr)?;
        let clear = flnet_core::raster::QualityMask::clear(*delta.grid());
        let delta = apply_masks(&delta, &clear, &s.cropland)?;
        out.extend(make_seg_samples(&delta, &s.truth, chip, stride, max_nodata)?);
    }
    Ok(out)
}

pub fn class_counts(samples: &[SegSample]) -> [u64; 3] {
    let mut c = [0u64; 3];
    for s in samples {
        for (l, v) in s.labels.iter().zip(&s.valid) {
            if *v {
                c[*l as usize] += 1;
            }
        }
    }
    c
}
