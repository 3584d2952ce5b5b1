//! Georeferenced raster grids with a per-pixel validity mask.

mod chips;
mod io;
mod mask;
mod ndvi;
mod register;
mod render;
mod resample;

pub use chips::{extract_chips, Chip};
pub use io::{decode_raster, encode_raster, read_raster, write_raster, RASTER_MAGIC};
pub use mask::{apply_masks, QualityMask};
pub use ndvi::{compute_ndvi, NDVI_DENOMINATOR_EPS};
pub use register::{coregister_translation, Registration};
pub use render::{render_map, RenderStyle, DAMAGE_PALETTE, NDVI_RAMP, NODATA_COLOR};
pub use resample::{resample, shift_raster, Resampling};

use crate::error::{RasterError, Result};

/// Default value written into invalid pixels.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// North-up affine georeferencing: `x = origin_x + col * pixel_size_x`,
/// `y = origin_y + row * pixel_size_y`. Rotation terms are always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_size_x: f64,
    pub origin_y: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, pixel_size_x: f64, origin_y: f64, pixel_size_y: f64) -> Result<Self> {
        let gt = Self { origin_x, pixel_size_x, origin_y, pixel_size_y };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.origin_x, self.pixel_size_x, self.origin_y, self.pixel_size_y].iter().all(|v| v.is_finite());
        if !finite || self.pixel_size_x <= 0.0 || self.pixel_size_y == 0.0 {
            return Err(RasterError::InvalidHeader(format!("bad geotransform {self:?}")));
        }
        Ok(())
    }

    /// The six affine coefficients in GDAL order.
    pub fn coefficients(&self) -> [f64; 6] {
        [self.origin_x, self.pixel_size_x, 0.0, self.origin_y, 0.0, self.pixel_size_y]
    }

    /// Same origin, pixels `factor` times larger (factor < 1 refines).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { pixel_size_x: self.pixel_size_x * factor, pixel_size_y: self.pixel_size_y * factor, ..*self }
    }

    /// Map coordinate of the centre of pixel `(col, row)`.
    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        (self.origin_x + (col + 0.5) * self.pixel_size_x, self.origin_y + (row + 0.5) * self.pixel_size_y)
    }

    /// Fractional pixel position (edge-based) of a map coordinate.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.pixel_size_x, (y - self.origin_y) / self.pixel_size_y)
    }

    /// Geotransform of the window starting at pixel `(col, row)`.
    pub fn offset(&self, col: usize, row: usize) -> Self {
        Self {
            origin_x: self.origin_x + col as f64 * self.pixel_size_x,
            origin_y: self.origin_y + row as f64 * self.pixel_size_y,
            ..*self
        }
    }
}

/// Raster dimensions plus georeferencing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub geo: GeoTransform,
}

impl Grid {
    pub fn new(width: usize, height: usize, geo: GeoTransform) -> Self {
        Self { width, height, geo }
    }

    /// A unit-pixel grid at the origin, for data without georeferencing.
    pub fn pixel(width: usize, height: usize) -> Self {
        Self::new(width, height, GeoTransform { origin_x: 0.0, pixel_size_x: 1.0, origin_y: 0.0, pixel_size_y: -1.0 })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The grid covering the same extent with `factor`-times coarser pixels.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(RasterError::Invalid(format!("{}x{} not divisible by {factor}", self.width, self.height)));
        }
        Ok(Self::new(self.width / factor, self.height / factor, self.geo.scaled(factor as f64)))
    }

    /// The grid covering the same extent with `factor`-times finer pixels.
    pub fn refined(&self, factor: usize) -> Self {
        Self::new(self.width * factor, self.height * factor, self.geo.scaled(1.0 / factor as f64))
    }
}

/// A band-major grid of `f32` values with a per-pixel nodata mask shared by all bands.
///
/// Invalid pixels hold `nodata_value` in every band so that the stored
/// bytes are a pure function of the valid content.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: Grid,
    bands: usize,
    data: Vec<f32>,
    nodata: Vec<bool>,
    nodata_value: f32,
    flags: u32,
}

impl Raster {
    pub fn new(grid: Grid, bands: usize, data: Vec<f32>) -> Result<Self> {
        let mask = vec![false; grid.len()];
        Self::with_mask(grid, bands, data, mask)
    }

    pub fn with_mask(grid: Grid, bands: usize, data: Vec<f32>, nodata: Vec<bool>) -> Result<Self> {
        grid.geo.validate()?;
        if bands == 0 || grid.width == 0 || grid.height == 0 {
            return Err(RasterError::Invalid(format!("empty raster {}x{}x{bands}", grid.width, grid.height)));
        }
        if data.len() != grid.len() * bands {
            return Err(RasterError::Invalid(format!("{} values for {}x{}x{bands}", data.len(), grid.width, grid.height)));
        }
        if nodata.len() != grid.len() {
            return Err(RasterError::Invalid(format!("mask has {} entries for {} pixels", nodata.len(), grid.len())));
        }
        let mut r = Self { grid, bands, data, nodata, nodata_value: DEFAULT_NODATA, flags: 0 };
        r.normalize_nodata();
        Ok(r)
    }

    pub fn filled(grid: Grid, bands: usize, value: f32) -> Result<Self> {
        Self::new(grid, bands, vec![value; grid.len() * bands])
    }

    /// Single band from a per-pixel function of `(col, row)`.
    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let data = (0..grid.height).flat_map(|y| (0..grid.width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(grid, 1, data)
    }

    /// Decoded rasters keep their stored values verbatim.
    pub(crate) fn from_parts(grid: Grid, bands: usize, data: Vec<f32>, nodata: Vec<bool>, nodata_value: f32, flags: u32) -> Self {
        Self { grid, bands, data, nodata, nodata_value, flags }
    }

    fn normalize_nodata(&mut self) {
        let n = self.grid.len();
        for (i, &bad) in self.nodata.iter().enumerate() {
            if bad {
                for b in 0..self.bands {
                    self.data[b * n + i] = self.nodata_value;
                }
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.grid.geo
    }

    pub fn pixels(&self) -> usize {
        self.grid.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    /// Mutable access to band values. Values written at nodata pixels are
    /// reset to the sentinel by [`Raster::set_nodata`] or stay as written.
    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    pub fn nodata_value(&self) -> f32 {
        self.nodata_value
    }

    pub fn flags(&self) -> u32 {
        self.flags
    }

    pub fn set_flags(&mut self, flags: u32) {
        self.flags = flags;
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        self.nodata[index]
    }

    pub fn is_valid(&self, index: usize) -> bool {
        !self.nodata[index]
    }

    pub fn set_nodata(&mut self, index: usize) {
        self.nodata[index] = true;
        let n = self.pixels();
        for b in 0..self.bands {
            self.data[b * n + index] = self.nodata_value;
        }
    }

    pub fn valid_count(&self) -> usize {
        self.nodata.iter().filter(|&&m| !m).count()
    }

    pub fn get(&self, band: usize, col: usize, row: usize) -> f32 {
        self.data[band * self.pixels() + row * self.width() + col]
    }

    /// Value of band 0 at `(col, row)`, or `None` when invalid.
    pub fn value(&self, col: usize, row: usize) -> Option<f32> {
        let i = row * self.width() + col;
        (!self.nodata[i]).then(|| self.data[i])
    }

    pub fn is_cogridded(&self, other: &Raster) -> bool {
        self.grid == other.grid
    }

    pub fn require_cogridded(&self, other: &Raster, what: &str) -> Result<()> {
        if self.is_cogridded(other) {
            Ok(())
        } else {
            Err(RasterError::GridMismatch(format!("{what}: {:?} vs {:?}", self.grid, other.grid)))
        }
    }

    pub fn require_single_band(&self, what: &str) -> Result<()> {
        if self.bands == 1 {
            Ok(())
        } else {
            Err(RasterError::Invalid(format!("{what} must be single-band, has {} bands", self.bands)))
        }
    }

    /// Copies the window `[col, col+width) x [row, row+height)`.
    pub fn crop(&self, col: usize, row: usize, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 || col + width > self.width() || row + height > self.height() {
            return Err(RasterError::Invalid(format!(
                "window {width}x{height}+{col}+{row} outside {}x{}",
                self.width(),
                self.height()
            )));
        }
        let grid = Grid::new(width, height, self.geo().offset(col, row));
        let mut data = Vec::with_capacity(width * height * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for y in row..row + height {
                data.extend_from_slice(&band[y * self.width() + col..y * self.width() + col + width]);
            }
        }
        let mut mask = Vec::with_capacity(width * height);
        for y in row..row + height {
            mask.extend_from_slice(&self.nodata[y * self.width() + col..y * self.width() + col + width]);
        }
        Ok(Self { grid, bands: self.bands, data, nodata: mask, nodata_value: self.nodata_value, flags: self.flags })
    }

    /// Single-band raster on the same grid with the same mask.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Raster> {
        let mut r = Self::with_mask(self.grid, 1, values, self.nodata.clone())?;
        r.nodata_value = self.nodata_value;
        r.normalize_nodata();
        Ok(r)
    }

    /// Marks additional pixels invalid.
    pub fn masked(&self, invalid: impl Fn(usize) -> bool) -> Raster {
        let mut out = self.clone();
        for i in 0..self.pixels() {
            if !out.nodata[i] && invalid(i) {
                out.set_nodata(i);
            }
        }
        out
    }
}
