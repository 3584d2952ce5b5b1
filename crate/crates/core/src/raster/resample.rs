use std::str::FromStr;

use super::{Grid, Raster};
use crate::error::{RasterError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    Nearest,
    #[default]
    Bilinear,
    Bicubic,
}

impl FromStr for Resampling {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(RasterError::Invalid(format!("unknown resampling method `{other}`"))),
        }
    }
}

const SNAP: f64 = 1e-9;
const KEYS_A: f64 = -0.5;

fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP {
        r
    } else {
        u
    }
}

fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (KEYS_A + 2.0) * t * t * t - (KEYS_A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        KEYS_A * t * t * t - 5.0 * KEYS_A * t * t + 8.0 * KEYS_A * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Unclamped source taps `(index, weight)` for centre-based coordinate `u`.
fn taps(u: f64, method: Resampling, out: &mut Vec<(isize, f64)>) {
    out.clear();
    match method {
        Resampling::Nearest => out.push(((u + 0.5).floor() as isize, 1.0)),
        Resampling::Bilinear => {
            let i0 = u.floor();
            let f = u - i0;
            out.push((i0 as isize, 1.0 - f));
            if f != 0.0 {
                out.push((i0 as isize + 1, f));
            }
        }
        Resampling::Bicubic => {
            let i0 = u.floor();
            let f = u - i0;
            if f == 0.0 {
                out.push((i0 as isize, 1.0));
            } else {
                for k in -1..=2 {
                    out.push((i0 as isize + k, keys(f - k as f64)));
                }
            }
        }
    }
}

fn clamp_taps(t: &mut [(isize, f64)], n: usize) {
    for (i, _) in t.iter_mut() {
        *i = (*i).clamp(0, n as isize - 1);
    }
}

/// Samples every band of `src` at the pixel centres of `target`.
///
/// Target pixels whose centre lies outside the source extent are nodata, as
/// is any pixel whose interpolation touches an invalid source pixel.
pub fn resample(src: &Raster, target: &Grid, method: Resampling) -> Result<Raster> {
    target.geo.validate()?;
    if src.grid() == target {
        return Ok(src.clone());
    }
    let (sw, sh) = (src.width(), src.height());
    let geo = src.geo();
    let n_out = target.len();
    let mut data = vec![0f32; n_out * src.bands()];
    let mut mask = vec![true; n_out];
    let mut any_inside = false;

    let cols: Vec<Option<Vec<(isize, f64)>>> = (0..target.width)
        .map(|x| {
            let (mx, _) = target.geo.pixel_center(x as f64, 0.0);
            let (px, _) = geo.to_pixel(mx, geo.origin_y);
            (px >= 0.0 && px < sw as f64).then(|| {
                let mut t = Vec::new();
                taps(snap(px - 0.5), method, &mut t);
                clamp_taps(&mut t, sw);
                t
            })
        })
        .collect();
    let mut rows_t = Vec::new();
    for y in 0..target.height {
        let (_, my) = target.geo.pixel_center(0.0, y as f64);
        let (_, py) = geo.to_pixel(geo.origin_x, my);
        if !(py >= 0.0 && py < sh as f64) {
            continue;
        }
        taps(snap(py - 0.5), method, &mut rows_t);
        clamp_taps(&mut rows_t, sh);
        for (x, ct) in cols.iter().enumerate() {
            let Some(ct) = ct else { continue };
            any_inside = true;
            let touches_invalid = rows_t.iter().any(|&(iy, wy)| {
                ct.iter().any(|&(ix, wx)| wx * wy != 0.0 && src.is_nodata(iy as usize * sw + ix as usize))
            });
            let o = y * target.width + x;
            if touches_invalid {
                continue;
            }
            mask[o] = false;
            for b in 0..src.bands() {
                let band = src.band(b);
                if let ([(iy, _)], [(ix, _)]) = (rows_t.as_slice(), ct.as_slice()) {
                    data[b * n_out + o] = band[*iy as usize * sw + *ix as usize];
                    continue;
                }
                let mut acc = 0f64;
                for &(iy, wy) in &rows_t {
                    for &(ix, wx) in ct {
                        acc += wy * wx * band[iy as usize * sw + ix as usize] as f64;
                    }
                }
                data[b * n_out + o] = acc as f32;
            }
        }
    }
    if !any_inside {
        return Err(RasterError::EmptyOverlap);
    }
    Raster::with_mask(*target, src.bands(), data, mask)
}

/// Bilinear translation by `(dx, dy)` pixels: `out(x, y) = in(x - dx, y - dy)`.
/// Output pixels that need samples from beyond the raster are nodata.
pub fn shift_raster(r: &Raster, dx: f64, dy: f64) -> Result<Raster> {
    if !dx.is_finite() || !dy.is_finite() {
        return Err(RasterError::Invalid(format!("non-finite shift ({dx}, {dy})")));
    }
    if dx == 0.0 && dy == 0.0 {
        return Ok(r.clone());
    }
    let (w, h) = (r.width(), r.height());
    let axis = |n: usize, d: f64| -> Vec<Option<Vec<(usize, f64)>>> {
        let mut t = Vec::new();
        (0..n)
            .map(|i| {
                taps(snap(i as f64 - d), Resampling::Bilinear, &mut t);
                t.iter()
                    .filter(|&&(_, wt)| wt != 0.0)
                    .map(|&(j, wt)| (j >= 0 && (j as usize) < n).then_some((j as usize, wt)))
                    .collect()
            })
            .collect()
    };
    let cols = axis(w, dx);
    let rows = axis(h, dy);
    let n = r.pixels();
    let mut data = vec![0f32; n * r.bands()];
    let mut mask = vec![true; n];
    for (y, rt) in rows.iter().enumerate() {
        let Some(rt) = rt else { continue };
        for (x, ct) in cols.iter().enumerate() {
            let Some(ct) = ct else { continue };
            if rt.iter().any(|&(iy, _)| ct.iter().any(|&(ix, _)| r.is_nodata(iy * w + ix))) {
                continue;
            }
            let o = y * w + x;
            mask[o] = false;
            for b in 0..r.bands() {
                let band = r.band(b);
                if let ([(iy, _)], [(ix, _)]) = (rt.as_slice(), ct.as_slice()) {
                    data[b * n + o] = band[iy * w + ix];
                    continue;
                }
                let mut acc = 0f64;
                for &(iy, wy) in rt {
                    for &(ix, wx) in ct {
                        acc += wy * wx * band[iy * w + ix] as f64;
                    }
                }
                data[b * n + o] = acc as f32;
            }
        }
    }
    Raster::with_mask(*r.grid(), r.bands(), data, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn geo(psx: f64) -> GeoTransform {
        GeoTransform::new(0.0, psx, 0.0, -psx).unwrap()
    }

    #[test]
    fn bilinear_two_to_four_columns() {
        let src = Raster::new(Grid::new(2, 2, geo(1.0)), 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resample(&src, &Grid::new(4, 2, GeoTransform::new(0.0, 0.5, 0.0, -1.0).unwrap()), Resampling::Bilinear)
            .unwrap();
        assert_eq!(&out.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(out.valid_count(), 8);
    }

    #[test]
    fn nearest_upsample_blocks() {
        let src = Raster::new(Grid::new(2, 2, geo(3.0)), 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = resample(&src, &src.grid().refined(3), Resampling::Nearest).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.get(0, x, y), src.get(0, x / 3, y / 3));
            }
        }
    }

    #[test]
    fn nearest_preserves_mask() {
        let mut src = Raster::new(Grid::new(2, 2, geo(2.0)), 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        src.set_nodata(1);
        let out = resample(&src, &src.grid().refined(2), Resampling::Nearest).unwrap();
        assert_eq!(out.valid_count(), 12);
        assert!(out.is_nodata(2) && out.is_nodata(3) && out.is_nodata(6) && out.is_nodata(7));
    }

    #[test]
    fn bilinear_propagates_nodata() {
        let mut src = Raster::filled(Grid::new(4, 4, geo(1.0)), 1, 0.5).unwrap();
        src.set_nodata(5);
        let out = resample(&src, &Grid::new(8, 8, geo(0.5)), Resampling::Bilinear).unwrap();
        // Source pixel (1,1) feeds fine pixels (1..=4, 1..=4).
        for y in 0..8 {
            for x in 0..8 {
                let touched = (1..=4).contains(&x) && (1..=4).contains(&y);
                assert_eq!(out.is_nodata(y * 8 + x), touched, "({x},{y})");
            }
        }
    }

    #[test]
    fn disjoint_grids_fail() {
        let src = Raster::filled(Grid::new(4, 4, geo(1.0)), 1, 0.5).unwrap();
        let far = Grid::new(4, 4, GeoTransform::new(100.0, 1.0, 0.0, -1.0).unwrap());
        assert!(matches!(resample(&src, &far, Resampling::Nearest), Err(RasterError::EmptyOverlap)));
    }

    #[test]
    fn shift_by_one_column() {
        let r = Raster::new(Grid::pixel(3, 1), 1, vec![1.0, 2.0, 3.0]).unwrap();
        let s = shift_raster(&r, 1.0, 0.0).unwrap();
        assert!(s.is_nodata(0));
        assert_eq!(&s.data()[1..], &[1.0, 2.0]);
        assert_eq!(shift_raster(&r, 0.0, 0.0).unwrap(), r);
    }

    #[test]
    fn fractional_shift_interpolates() {
        let r = Raster::new(Grid::pixel(3, 1), 1, vec![1.0, 2.0, 4.0]).unwrap();
        let s = shift_raster(&r, -0.5, 0.0).unwrap();
        assert_eq!(&s.data()[..2], &[1.5, 3.0]);
        assert!(s.is_nodata(2));
    }
}
