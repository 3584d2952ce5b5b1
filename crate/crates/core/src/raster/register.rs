use super::Raster;
use crate::error::{RasterError, Result};

/// Minimum valid pixel count in each image.
const MIN_VALID: usize = 64 * 64;
/// Minimum jointly valid fraction of the image for a candidate shift.
const MIN_OVERLAP_FRACTION: f64 = 0.25;
/// Peaks at or above this correlation are already exact.
const PERFECT: f64 = 1.0 - 1e-9;

/// Translation that maps `moving` onto `reference`: `shift_raster(moving, dx, dy)`
/// lines up with the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub dx: f64,
    pub dy: f64,
    pub score: f64,
}

/// Masked normalised cross-correlation with `moving` displaced by `(sx, sy)`.
fn ncc(reference: &Raster, moving: &Raster, sx: i64, sy: i64, min_pairs: usize) -> Option<f64> {
    let (w, h) = (reference.width() as i64, reference.height() as i64);
    let (r, m) = (reference.band(0), moving.band(0));
    let (mut n, mut sr, mut sm, mut srr, mut smm, mut srm) = (0usize, 0f64, 0f64, 0f64, 0f64, 0f64);
    for y in sy.max(0)..(h + sy).min(h) {
        for x in sx.max(0)..(w + sx).min(w) {
            let i = (y * w + x) as usize;
            let j = ((y - sy) * w + (x - sx)) as usize;
            if reference.is_nodata(i) || moving.is_nodata(j) {
                continue;
            }
            let (a, b) = (r[i] as f64, m[j] as f64);
            n += 1;
            sr += a;
            sm += b;
            srr += a * a;
            smm += b * b;
            srm += a * b;
        }
    }
    if n < min_pairs {
        return None;
    }
    let nf = n as f64;
    let var_r = srr - sr * sr / nf;
    let var_m = smm - sm * sm / nf;
    let cov = srm - sr * sm / nf;
    if var_r <= 0.0 || var_m <= 0.0 {
        return None;
    }
    Some((cov / (var_r * var_m).sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares quadratic through a 3x3 score patch; offset of its stationary point.
fn quadratic_peak(s: &[[f64; 3]; 3]) -> Option<(f64, f64)> {
    let (mut b, mut c, mut d, mut e, mut f) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in s.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
            b += x * v / 6.0;
            c += y * v / 6.0;
            e += x * y * v / 4.0;
            d += (x * x - 2.0 / 3.0) * v / 2.0;
            f += (y * y - 2.0 / 3.0) * v / 2.0;
        }
    }
    let det = 4.0 * d * f - e * e;
    if !(d < 0.0 && det > 0.0) {
        return None;
    }
    let ox = (-b * 2.0 * f + c * e) / det;
    let oy = (-c * 2.0 * d + b * e) / det;
    (ox.abs() <= 1.0 && oy.abs() <= 1.0).then_some((ox, oy))
}

fn parabola(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den < 0.0 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Translation-only registration by exhaustive integer NCC search over
/// `[-max_shift, max_shift]^2` with quadratic subpixel refinement.
pub fn coregister_translation(reference: &Raster, moving: &Raster, max_shift: usize) -> Result<Registration> {
    reference.require_single_band("reference")?;
    moving.require_single_band("moving")?;
    if reference.width() != moving.width() || reference.height() != moving.height() {
        return Err(RasterError::GridMismatch(format!(
            "registration needs equal dimensions, got {}x{} and {}x{}",
            reference.width(),
            reference.height(),
            moving.width(),
            moving.height()
        )));
    }
    for (name, r) in [("reference", reference), ("moving", moving)] {
        if r.valid_count() < MIN_VALID {
            return Err(RasterError::InsufficientOverlap(format!(
                "{name} has {} valid pixels, need {MIN_VALID}",
                r.valid_count()
            )));
        }
    }
    let min_pairs = (MIN_OVERLAP_FRACTION * reference.pixels() as f64).ceil() as usize;
    let m = max_shift as i64;
    let side = (2 * m + 1) as usize;
    let mut scores = vec![None; side * side];
    let mut best: Option<(i64, i64, f64)> = None;
    for sy in -m..=m {
        for sx in -m..=m {
            let s = ncc(reference, moving, sx, sy, min_pairs);
            scores[((sy + m) as usize) * side + (sx + m) as usize] = s;
            if let Some(v) = s {
                if best.map_or(true, |(_, _, bv)| v > bv) {
                    best = Some((sx, sy, v));
                }
            }
        }
    }
    let (bx, by, score) = best.ok_or_else(|| {
        RasterError::InsufficientOverlap(format!("no shift within {max_shift} px overlaps 25% of the image"))
    })?;
    let mut reg = Registration { dx: bx as f64, dy: by as f64, score };
    if score >= PERFECT {
        return Ok(reg);
    }
    let at = |sx: i64, sy: i64| -> Option<f64> {
        if sx.abs() > m || sy.abs() > m {
            return None;
        }
        scores[((sy + m) as usize) * side + (sx + m) as usize]
    };
    let mut patch = [[0.0; 3]; 3];
    let mut complete = true;
    for (j, row) in patch.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            match at(bx + i as i64 - 1, by + j as i64 - 1) {
                Some(s) => *v = s,
                None => complete = false,
            }
        }
    }
    if complete {
        if let Some((ox, oy)) = quadratic_peak(&patch) {
            reg.dx += ox;
            reg.dy += oy;
            return Ok(reg);
        }
    }
    if let (Some(l), Some(r)) = (at(bx - 1, by), at(bx + 1, by)) {
        reg.dx += parabola(l, score, r);
    }
    if let (Some(u), Some(d)) = (at(bx, by - 1), at(bx, by + 1)) {
        reg.dy += parabola(u, score, d);
    }
    Ok(reg)
}
