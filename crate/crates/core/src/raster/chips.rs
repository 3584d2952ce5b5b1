use super::Raster;
use crate::error::{RasterError, Result};

/// Aligned windows cut from a set of co-gridded rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    /// Pixel column of the window origin in the source rasters.
    pub col: usize,
    pub row: usize,
    pub rasters: Vec<Raster>,
}

fn nodata_fraction(r: &Raster, col: usize, row: usize, size: usize) -> f64 {
    let w = r.width();
    let bad: usize = (row..row + size)
        .map(|y| r.nodata_mask()[y * w + col..y * w + col + size].iter().filter(|&&b| b).count())
        .sum();
    bad as f64 / (size * size) as f64
}

/// Row-major `chip_size` windows at `stride` spacing, keeping a window only when
/// every raster has at most `max_nodata_fraction` invalid pixels in it.
pub fn extract_chips(rasters: &[&Raster], chip_size: usize, stride: usize, max_nodata_fraction: f64) -> Result<Vec<Chip>> {
    if chip_size == 0 || stride == 0 {
        return Err(RasterError::Invalid("chip size and stride must be positive".into()));
    }
    let Some(first) = rasters.first() else { return Ok(Vec::new()) };
    for r in &rasters[1..] {
        first.require_cogridded(r, "chip set")?;
    }
    let (w, h) = (first.width(), first.height());
    if chip_size > w || chip_size > h {
        return Ok(Vec::new());
    }
    let mut chips = Vec::new();
    for row in (0..=h - chip_size).step_by(stride) {
        for col in (0..=w - chip_size).step_by(stride) {
            if rasters.iter().all(|r| nodata_fraction(r, col, row, chip_size) <= max_nodata_fraction) {
                let parts = rasters.iter().map(|r| r.crop(col, row, chip_size, chip_size)).collect::<Result<_>>()?;
                chips.push(Chip { col, row, rasters: parts });
            }
        }
    }
    Ok(chips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;

    #[test]
    fn tiles_512() {
        let r = Raster::filled(Grid::pixel(512, 512), 1, 0.1).unwrap();
        let chips = extract_chips(&[&r], 256, 256, 0.0).unwrap();
        let origins: Vec<_> = chips.iter().map(|c| (c.col, c.row)).collect();
        assert_eq!(origins, vec![(0, 0), (256, 0), (0, 256), (256, 256)]);
        assert_eq!(chips[3].rasters[0].width(), 256);
    }

    #[test]
    fn no_partial_chips() {
        let r = Raster::filled(Grid::pixel(300, 300), 1, 0.1).unwrap();
        assert_eq!(extract_chips(&[&r], 256, 256, 0.0).unwrap().len(), 1);
    }

    #[test]
    fn skips_dirty_window() {
        let r = Raster::filled(Grid::pixel(10, 10), 1, 0.1).unwrap();
        let dirty = r.masked(|i| i % 10 < 4);
        assert!(extract_chips(&[&r, &dirty], 10, 10, 0.2).unwrap().is_empty());
        assert_eq!(extract_chips(&[&r, &dirty], 10, 10, 0.4).unwrap().len(), 1);
    }
}
