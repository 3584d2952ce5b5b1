//! Change feature, fixed-threshold damage labels and label clean-up filters.

use crate::error::{RasterError, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DamageLabel {
    No = 0,
    Partial = 1,
    Full = 2,
}

impl DamageLabel {
    pub const ALL: [DamageLabel; 3] = [DamageLabel::No, DamageLabel::Partial, DamageLabel::Full];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::No => "No",
            Self::Partial => "Partial",
            Self::Full => "Full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    pub t_partial: f32,
    pub t_full: f32,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { t_partial: 0.15, t_full: 0.40 }
    }
}

impl ThresholdConfig {
    pub fn new(t_partial: f32, t_full: f32) -> Result<Self> {
        let cfg = Self { t_partial, t_full };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if -2.0 < self.t_partial && self.t_partial < self.t_full && self.t_full < 2.0 {
            Ok(())
        } else {
            Err(RasterError::Invalid(format!("thresholds need -2 < t_partial < t_full < 2, got {self:?}")))
        }
    }

    /// Boundaries belong to the higher class.
    pub fn classify(&self, delta: f32) -> DamageLabel {
        if delta >= self.t_full {
            DamageLabel::Full
        } else if delta >= self.t_partial {
            DamageLabel::Partial
        } else {
            DamageLabel::No
        }
    }
}

/// `pre - post` per pixel, nodata where either input is.
pub fn delta_ndvi(pre: &Raster, post: &Raster) -> Result<Raster> {
    pre.require_single_band("pre")?;
    post.require_single_band("post")?;
    pre.require_cogridded(post, "delta ndvi")?;
    let values = pre.data().iter().zip(post.data()).map(|(a, b)| a - b).collect();
    let mask = (0..pre.pixels()).map(|i| pre.is_nodata(i) || post.is_nodata(i)).collect();
    Raster::with_mask(*pre.grid(), 1, values, mask)
}

pub fn threshold_label(delta: &Raster, cfg: &ThresholdConfig) -> Result<Raster> {
    cfg.validate()?;
    delta.require_single_band("delta")?;
    let values = delta.data().iter().map(|&d| cfg.classify(d) as u8 as f32).collect();
    Raster::with_mask(*delta.grid(), 1, values, delta.nodata_mask().to_vec())
}

/// Class index per pixel, `None` at nodata.
pub fn label_indices(labels: &Raster) -> Result<Vec<Option<u8>>> {
    labels.require_single_band("labels")?;
    (0..labels.pixels())
        .map(|i| {
            if labels.is_nodata(i) {
                return Ok(None);
            }
            let v = labels.data()[i];
            match v {
                0.0 => Ok(Some(0)),
                1.0 => Ok(Some(1)),
                2.0 => Ok(Some(2)),
                _ => Err(RasterError::Invalid(format!("label value {v} at pixel {i}"))),
            }
        })
        .collect()
}

fn from_indices(template: &Raster, idx: &[Option<u8>]) -> Result<Raster> {
    let values = idx.iter().map(|l| l.map_or(0.0, |c| c as f32)).collect();
    let mask = idx.iter().map(Option::is_none).collect();
    Raster::with_mask(*template.grid(), 1, values, mask)
}

/// Majority vote over the valid pixels of a `window x window` neighbourhood.
///
/// Ties keep the centre label when it is among the winners, otherwise the lowest class wins.
pub fn morphological_smooth(labels: &Raster, window: usize) -> Result<Raster> {
    if window % 2 == 0 {
        return Err(RasterError::Invalid(format!("smoothing window must be odd, got {window}")));
    }
    let idx = label_indices(labels)?;
    let (w, h) = (labels.width(), labels.height());
    let rad = window / 2;
    let out: Vec<Option<u8>> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let centre = idx[y * w + x]?;
            let mut counts = [0usize; 3];
            for yy in y.saturating_sub(rad)..(y + rad + 1).min(h) {
                for xx in x.saturating_sub(rad)..(x + rad + 1).min(w) {
                    if let Some(c) = idx[yy * w + xx] {
                        counts[c as usize] += 1;
                    }
                }
            }
            let top = *counts.iter().max().unwrap();
            if counts[centre as usize] == top {
                Some(centre)
            } else {
                Some(counts.iter().position(|&c| c == top).unwrap() as u8)
            }
        })
        .collect();
    from_indices(labels, &out)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Relabels 4-connected components smaller than `min_size` to the most common
/// label among their valid edge neighbours (ties go to No). All components are
/// judged against the input labels.
pub fn small_object_removal(labels: &Raster, min_size: usize) -> Result<Raster> {
    if min_size == 0 {
        return Err(RasterError::Invalid("min_size must be at least 1".into()));
    }
    let idx = label_indices(labels)?;
    let (w, h) = (labels.width(), labels.height());
    let n = w * h;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some(c) = idx[i] else { continue };
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                if idx[j] == Some(c) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut size = vec![0usize; n];
    for i in (0..n).filter(|&i| idx[i].is_some()) {
        size[roots[i]] += 1;
    }
    // Each neighbour pixel votes once per component it borders.
    let mut votes = vec![[0usize; 3]; n];
    let mut seen: Vec<usize> = vec![usize::MAX; n];
    for y in 0..h {
        for x in 0..w {
            let j = y * w + x;
            let Some(c) = idx[j] else { continue };
            let nbrs = [
                (x > 0).then(|| j - 1),
                (x + 1 < w).then(|| j + 1),
                (y > 0).then(|| j - w),
                (y + 1 < h).then(|| j + w),
            ];
            for i in nbrs.into_iter().flatten() {
                if idx[i].is_none() {
                    continue;
                }
                let root = roots[i];
                if roots[j] == root || size[root] >= min_size {
                    continue;
                }
                // `seen` only prevents double counting within the four neighbours of j.
                if seen[root] == j {
                    continue;
                }
                seen[root] = j;
                votes[root][c as usize] += 1;
            }
        }
    }
    let out: Vec<Option<u8>> = (0..n)
        .map(|i| {
            let c = idx[i]?;
            let root = roots[i];
            if size[root] >= min_size {
                return Some(c);
            }
            let v = votes[root];
            let top = *v.iter().max().unwrap();
            if top == 0 {
                return Some(c);
            }
            let winners = v.iter().filter(|&&k| k == top).count();
            Some(if winners > 1 { 0 } else { v.iter().position(|&k| k == top).unwrap() as u8 })
        })
        .collect();
    from_indices(labels, &out)
}
