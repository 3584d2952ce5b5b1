use super::{Grid, Raster};
use crate::error::{RasterError, Result};

/// Per-pixel quality bit flags. Any set bit marks the pixel unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMask {
    grid: Grid,
    bits: Vec<u8>,
}

impl QualityMask {
    pub const CLOUD: u8 = 1;
    pub const SHADOW: u8 = 2;
    pub const WATER_GLARE: u8 = 4;
    pub const NODATA: u8 = 8;
    const ALL: u8 = 15;

    pub fn clear(grid: Grid) -> Self {
        Self { grid, bits: vec![0; grid.len()] }
    }

    pub fn from_bits(grid: Grid, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(RasterError::Invalid(format!("{} flags for {} pixels", bits.len(), grid.len())));
        }
        if let Some(b) = bits.iter().find(|&&b| b & !Self::ALL != 0) {
            return Err(RasterError::Invalid(format!("unknown quality bits {b:#x}")));
        }
        Ok(Self { grid, bits })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn set(&mut self, index: usize, flag: u8) {
        self.bits[index] |= flag;
    }

    pub fn is_flagged(&self, index: usize) -> bool {
        self.bits[index] != 0
    }

    pub fn flagged_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Stores the flags as a single-band raster holding small integers.
    pub fn to_raster(&self) -> Raster {
        Raster::new(self.grid, 1, self.bits.iter().map(|&b| b as f32).collect()).expect("grid already validated")
    }

    /// Nodata pixels of the stored raster read back as `NODATA`.
    pub fn from_raster(r: &Raster) -> Result<Self> {
        r.require_single_band("quality mask")?;
        let mut bits = Vec::with_capacity(r.pixels());
        for i in 0..r.pixels() {
            if r.is_nodata(i) {
                bits.push(Self::NODATA);
                continue;
            }
            let v = r.data()[i];
            if !(0.0..=Self::ALL as f32).contains(&v) || v.fract() != 0.0 {
                return Err(RasterError::Invalid(format!("quality value {v} at pixel {i}")));
            }
            bits.push(v as u8);
        }
        Self::from_bits(*r.grid(), bits)
    }
}

/// Invalidates pixels outside cropland or carrying any quality flag.
///
/// `cropland` is nonzero on cropland; its own nodata pixels count as non-cropland.
pub fn apply_masks(r: &Raster, quality: &QualityMask, cropland: &Raster) -> Result<Raster> {
    if r.grid() != quality.grid() {
        return Err(RasterError::GridMismatch(format!("quality mask: {:?} vs {:?}", r.grid(), quality.grid())));
    }
    r.require_cogridded(cropland, "cropland mask")?;
    Ok(r.masked(|i| quality.is_flagged(i) || cropland.is_nodata(i) || cropland.band(0)[i] == 0.0))
}
