use std::str::FromStr;

use super::Raster;
use crate::error::{RasterError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStyle {
    DamageClasses,
    NdviDiverging,
}

impl FromStr for RenderStyle {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "damage-classes" => Ok(Self::DamageClasses),
            "ndvi-diverging" => Ok(Self::NdviDiverging),
            other => Err(RasterError::UnknownStyle(other.to_string())),
        }
    }
}

/// No, Partial and Full damage.
pub const DAMAGE_PALETTE: [[u8; 3]; 3] = [[26, 150, 65], [253, 174, 97], [215, 25, 28]];
/// Colours at NDVI -1, 0 and +1; linear in between.
pub const NDVI_RAMP: [[u8; 3]; 3] = [[166, 97, 26], [245, 245, 245], [1, 133, 113]];
pub const NODATA_COLOR: [u8; 3] = [128, 128, 128];

fn ramp(v: f32) -> [u8; 3] {
    let t = v.clamp(-1.0, 1.0) as f64;
    let (a, b, f) = if t < 0.0 { (NDVI_RAMP[0], NDVI_RAMP[1], t + 1.0) } else { (NDVI_RAMP[1], NDVI_RAMP[2], t) };
    std::array::from_fn(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * f).round() as u8)
}

/// Binary PPM (P6) rendering of a single-band raster.
pub fn render_map(r: &Raster, style: RenderStyle) -> Result<Vec<u8>> {
    r.require_single_band("rendered raster")?;
    let mut out = format!("P6\n{} {}\n255\n", r.width(), r.height()).into_bytes();
    out.reserve(r.pixels() * 3);
    for (i, &v) in r.band(0).iter().enumerate() {
        let rgb = if r.is_nodata(i) || !v.is_finite() {
            NODATA_COLOR
        } else {
            match style {
                RenderStyle::DamageClasses => match v {
                    0.0 => DAMAGE_PALETTE[0],
                    1.0 => DAMAGE_PALETTE[1],
                    2.0 => DAMAGE_PALETTE[2],
                    _ => NODATA_COLOR,
                },
                RenderStyle::NdviDiverging => ramp(v),
            }
        };
        out.extend_from_slice(&rgb);
    }
    Ok(out)
}
