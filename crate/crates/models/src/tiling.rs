//! Overlapping tile layouts, feather weights and reflect padding.

/// Tile origins covering `[0, n)` with tiles of `tile` and at least `overlap` shared pixels.
/// The last tile is pulled back so it ends exactly at `n`; for `n <= tile` there is one tile.
pub fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    assert!(tile > overlap, "tile {tile} must exceed overlap {overlap}");
    if n <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|k| k * step).take_while(|&s| s + tile < n).collect();
    starts.push(n - tile);
    starts.dedup();
    starts
}

/// Per-position blend weights of tile `k` along one axis, in output units.
///
/// Weights ramp linearly across the bands shared with neighbouring tiles and
/// are 1 elsewhere.
pub fn feather(starts: &[usize], len: usize, k: usize) -> Vec<f64> {
    let s = starts[k];
    let e = s + len;
    let prev_end = (k > 0).then(|| starts[k - 1] + len).filter(|&pe| pe > s);
    let next_start = starts.get(k + 1).copied().filter(|&ns| ns < e);
    (s..e)
        .map(|x| {
            let mut w: f64 = 1.0;
            if let Some(pe) = prev_end {
                w = w.min(((x - s) as f64 + 0.5) / (pe - s) as f64);
            }
            if let Some(ns) = next_start {
                w = w.min(((e - x) as f64 - 0.5) / (e - ns) as f64);
            }
            w.min(1.0)
        })
        .collect()
}

/// Mirror index into `[0, n)` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Copies the `tw x th` window at `(x0, y0)` out of a `w x h` field, reflecting past the edges.
pub fn window_reflect(src: &[f32], w: usize, h: usize, x0: isize, y0: isize, tw: usize, th: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        let sy = reflect_index(y0 + y as isize, h);
        for x in 0..tw {
            out.push(src[sy * w + reflect_index(x0 + x as isize, w)]);
        }
    }
    out
}

pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_cover_and_end_flush() {
        assert_eq!(tile_starts(100, 64, 8), vec![0, 36]);
        assert_eq!(tile_starts(64, 64, 8), vec![0]);
        assert_eq!(tile_starts(20, 64, 8), vec![0]);
        assert_eq!(tile_starts(128, 64, 8), vec![0, 56, 64]);
        assert_eq!(tile_starts(112, 64, 8), vec![0, 48]);
    }

    #[test]
    fn feathers_partition_unity() {
        for n in [100usize, 128, 200, 300] {
            let starts = tile_starts(n, 64, 8);
            let mut sum = vec![0.0; n];
            for k in 0..starts.len() {
                for (i, w) in feather(&starts, 64, k).into_iter().enumerate() {
                    assert!(w > 0.0 && w <= 1.0);
                    sum[starts[k] + i] += w;
                }
            }
            assert!(sum.iter().all(|&s| s > 0.0), "n={n}");
            // Wherever exactly two tiles meet, weights sum to one.
            let pairs_only = starts.windows(3).all(|w| w[2] >= w[0] + 64);
            if pairs_only {
                assert!(sum.iter().all(|&s| (s - 1.0).abs() < 1e-12), "n={n} {sum:?}");
            }
        }
    }

    #[test]
    fn reflect_mirrors() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(5, 1), 0);
    }
}
