use super::Raster;
use crate::error::Result;

/// Pixels with `|nir + red|` below this are nodata.
pub const NDVI_DENOMINATOR_EPS: f32 = 1e-6;

/// `(nir - red) / (nir + red)` per pixel.
pub fn compute_ndvi(nir: &Raster, red: &Raster) -> Result<Raster> {
    nir.require_single_band("nir")?;
    red.require_single_band("red")?;
    nir.require_cogridded(red, "ndvi bands")?;
    let n = nir.pixels();
    let mut values = vec![0.0f32; n];
    let mut mask = vec![false; n];
    for i in 0..n {
        let (a, b) = (nir.data()[i], red.data()[i]);
        let den = a + b;
        if nir.is_nodata(i) || red.is_nodata(i) || !(den.abs() >= NDVI_DENOMINATOR_EPS) {
            mask[i] = true;
        } else {
            values[i] = ((a - b) / den).clamp(-1.0, 1.0);
        }
    }
    Raster::with_mask(*nir.grid(), 1, values, mask)
}
