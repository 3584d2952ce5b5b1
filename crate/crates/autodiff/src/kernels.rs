//! Forward and backward kernels on plain tensors.
//!
//! The graph in [`crate::graph`] records which kernel produced each node
//! and calls the matching backward here. Every kernel is sequential and
//! deterministic.

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], padding: usize, stride: usize) -> Result<Self> {
        let (cin, h, w) = match input {
            [_, c, h, w] => (*c, *h, *w),
            _ => return Err(AutodiffError::Shape(format!("conv2d input must be rank 4, got {input:?}"))),
        };
        let (cout, wc, kh, kw) = match weight {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            _ => return Err(AutodiffError::Shape(format!("conv2d weight must be rank 4, got {weight:?}"))),
        };
        if wc != cin {
            return Err(AutodiffError::Shape(format!("conv2d weight expects {wc} input channels, input has {cin}")));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(AutodiffError::Shape(format!("conv2d kernel must be square and odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(AutodiffError::Invalid("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(AutodiffError::Shape(format!("conv2d input {h}x{w} smaller than kernel {kh}")));
        }
        Ok(Self {
            in_channels: cin,
            height: h,
            width: w,
            out_channels: cout,
            kernel: kh,
            padding,
            stride,
            out_height: (h + 2 * padding - kh) / stride + 1,
            out_width: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Output column range `[lo, hi)` whose input column `ox*stride + kj - pad` lies inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kj as isize - self.padding as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_exclusive = (self.width as isize - off + s - 1) / s;
        let lo = lo.clamp(0, self.out_width as isize) as usize;
        let hi = hi_exclusive.clamp(0, self.out_width as isize) as usize;
        (lo, hi.max(lo))
    }
}

/// Writes the patch matrix of `img` into columns `off..off + howo` of `col`,
/// whose rows are `ld` elements apart.
fn im2col<T: Float>(img: &[T], g: &ConvGeometry, col: &mut [T], ld: usize, off: usize) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let (ho, wo, howo) = (g.out_height, g.out_width, g.out_pixels());
    for c in 0..g.in_channels {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * ld + off..row * ld + off + howo];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..ho {
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize || lo == hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kj - g.padding;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out_row[ox] = src[ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Float>(col: &[T], g: &ConvGeometry, img: &mut [T], ld: usize, off: usize) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let (ho, wo, howo) = (g.out_height, g.out_width, g.out_pixels());
    for c in 0..g.in_channels {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * ld + off..row * ld + off + howo];
                let (lo, hi) = g.valid_cols(kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let row_src = &src[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.padding] += row_src[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation `out[b, o] = bias[o] + sum_c weight[o, c] * input[b, c]` with zero padding.
pub fn conv2d_forward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), padding, stride)?;
    if let Some(b) = bias {
        if b.numel() != g.out_channels {
            return Err(AutodiffError::Shape(format!("conv2d bias has {} values for {} channels", b.numel(), g.out_channels)));
        }
    }
    let batch = input.shape()[0];
    let (kk, howo, cout) = (g.col_rows(), g.out_pixels(), g.out_channels);
    let in_len = g.in_channels * g.height * g.width;
    let out_len = cout * howo;
    let mut out = vec![T::zero(); batch * out_len];
    let group = batch_group(kk, howo, batch);
    let mut col = vec![T::zero(); kk * howo * group];
    let mut prod = vec![T::zero(); cout * howo * group];
    for b0 in (0..batch).step_by(group) {
        let n = group.min(batch - b0);
        let ld = n * howo;
        for i in 0..n {
            im2col(&input.data()[(b0 + i) * in_len..(b0 + i + 1) * in_len], &g, &mut col, ld, i * howo);
        }
        let beta = match bias {
            Some(bias) => {
                for (o, &bv) in bias.data().iter().enumerate() {
                    prod[o * ld..(o + 1) * ld].fill(bv);
                }
                T::one()
            }
            None => T::zero(),
        };
        T::gemm(cout, kk, ld, T::one(), weight.data(), (kk as isize, 1), &col, (ld as isize, 1), beta, &mut prod, (ld as isize, 1));
        for i in 0..n {
            let dst = &mut out[(b0 + i) * out_len..(b0 + i + 1) * out_len];
            for o in 0..cout {
                dst[o * howo..(o + 1) * howo].copy_from_slice(&prod[o * ld + i * howo..o * ld + (i + 1) * howo]);
            }
        }
    }
    Tensor::new(&[batch, cout, g.out_height, g.out_width], out)
}

/// Batch items whose patch matrices are multiplied together, bounded so
/// the shared column buffer stays cache-sized.
fn batch_group(kk: usize, howo: usize, batch: usize) -> usize {
    const COL_BUDGET: usize = 1 << 18;
    (COL_BUDGET / (kk * howo).max(1)).clamp(1, batch.max(1))
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
    stride: usize,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), padding, stride)?;
    let batch = input.shape()[0];
    let (kk, howo, cout) = (g.col_rows(), g.out_pixels(), g.out_channels);
    let in_len = g.in_channels * g.height * g.width;
    let out_len = cout * howo;
    let [need_input, need_weight, need_bias] = need;

    let mut d_input = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut d_weight = need_weight.then(|| vec![T::zero(); weight.numel()]);
    let mut d_bias = need_bias.then(|| vec![T::zero(); cout]);
    let group = batch_group(kk, howo, batch);
    let mut gout = vec![T::zero(); cout * howo * group];
    let mut col = if need_weight || need_input { vec![T::zero(); kk * howo * group] } else { Vec::new() };

    for b0 in (0..batch).step_by(group) {
        let n = group.min(batch - b0);
        let ld = n * howo;
        for i in 0..n {
            let src = &grad_out.data()[(b0 + i) * out_len..(b0 + i + 1) * out_len];
            for o in 0..cout {
                gout[o * ld + i * howo..o * ld + (i + 1) * howo].copy_from_slice(&src[o * howo..(o + 1) * howo]);
            }
        }
        if let Some(db) = d_bias.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += gout[o * ld..(o + 1) * ld].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = d_weight.as_mut() {
            for i in 0..n {
                im2col(&input.data()[(b0 + i) * in_len..(b0 + i + 1) * in_len], &g, &mut col, ld, i * howo);
            }
            // dW (cout x kk) += gout (cout x n*howo) * cols^T (n*howo x kk)
            T::gemm(cout, ld, kk, T::one(), &gout, (ld as isize, 1), &col, (1, ld as isize), T::one(), dw, (kk as isize, 1));
        }
        if let Some(dx) = d_input.as_mut() {
            // dcol (kk x n*howo) = W^T (kk x cout) * gout (cout x n*howo)
            T::gemm(kk, cout, ld, T::one(), weight.data(), (1, kk as isize), &gout, (ld as isize, 1), T::zero(), &mut col, (ld as isize, 1));
            for i in 0..n {
                col2im_add(&col, &g, &mut dx[(b0 + i) * in_len..(b0 + i + 1) * in_len], ld, i * howo);
            }
        }
    }
    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        weight: d_weight.map(|d| Tensor::new(weight.shape(), d)).transpose()?,
        bias: d_bias.map(|d| Tensor::new(&[cout], d)).transpose()?,
    })
}

/// `[B, C*r*r, H, W] -> [B, C, H*r, W*r]`, with `out[b, c, y*r+i, x*r+j] = in[b, c*r*r + i*r + j, y, x]`.
pub fn pixel_shuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c_in, h, w) = x.dims4()?;
    if r == 0 || c_in % (r * r) != 0 {
        return Err(AutodiffError::Shape(format!("pixel_shuffle: {c_in} channels not divisible by {r}^2")));
    }
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let sc = ci * r * r + i * r + j;
                    let plane = &src[((bi * c_in + sc) * h) * w..((bi * c_in + sc) * h + h) * w];
                    let dst_base = (bi * c + ci) * ho * wo;
                    for y in 0..h {
                        let row = &plane[y * w..(y + 1) * w];
                        let dst_row = dst_base + (y * r + i) * wo + j;
                        for (xx, &v) in row.iter().enumerate() {
                            out[dst_row + xx * r] = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c, ho, wo], out)
}

/// Inverse permutation of [`pixel_shuffle`]; also its backward.
pub fn pixel_unshuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, ho, wo) = x.dims4()?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return Err(AutodiffError::Shape(format!("pixel_unshuffle: {ho}x{wo} not divisible by {r}")));
    }
    let (h, w) = (ho / r, wo / r);
    let c_out = c * r * r;
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            let src_base = (bi * c + ci) * ho * wo;
            for i in 0..r {
                for j in 0..r {
                    let dc = ci * r * r + i * r + j;
                    let dst_base = (bi * c_out + dc) * h * w;
                    for y in 0..h {
                        let src_row = src_base + (y * r + i) * wo + j;
                        for xx in 0..w {
                            out[dst_base + y * w + xx] = src[src_row + xx * r];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c_out, h, w], out)
}

/// 2x2 / stride-2 max pool. Returns the pooled tensor and, per output, the flat
/// input index of the maximum (first in row-major order on ties).
pub fn max_pool2x2<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(AutodiffError::Shape(format!("max_pool2d needs at least 2x2 input, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    let src = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + (2 * oy) * w + 2 * ox;
                let mut best = src[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    Ok((Tensor::new(&[b, c, ho, wo], out)?, arg))
}

pub fn upsample_nearest<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if r == 0 {
        return Err(AutodiffError::Invalid("upsample factor must be >= 1".into()));
    }
    let (ho, wo) = (h * r, w * r);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let src = x.data();
    for plane in 0..b * c {
        for y in 0..ho {
            let row = &src[(plane * h + y / r) * w..(plane * h + y / r + 1) * w];
            for xx in 0..wo {
                out.push(row[xx / r]);
            }
        }
    }
    Tensor::new(&[b, c, ho, wo], out)
}

pub fn upsample_nearest_backward<T: Float>(grad: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, ho, wo) = grad.dims4()?;
    let (h, w) = (ho / r, wo / r);
    let mut out = vec![T::zero(); b * c * h * w];
    let src = grad.data();
    for plane in 0..b * c {
        for y in 0..ho {
            for xx in 0..wo {
                out[(plane * h + y / r) * w + xx / r] += src[(plane * ho + y) * wo + xx];
            }
        }
    }
    Tensor::new(&[b, c, h, w], out)
}

pub fn concat_channels<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ca, ha, wa) = a.dims4()?;
    let (bb, cb, hb, wb) = b.dims4()?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(AutodiffError::Shape(format!("concat: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (na, nb) = (ca * ha * wa, cb * hb * wb);
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..ba {
        out.extend_from_slice(&a.data()[i * na..(i + 1) * na]);
        out.extend_from_slice(&b.data()[i * nb..(i + 1) * nb]);
    }
    Tensor::new(&[ba, ca + cb, ha, wa], out)
}

/// Splits a channel-concatenated tensor back into its `first_channels` and remaining parts.
pub fn split_channels<T: Float>(x: &Tensor<T>, first_channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = x.dims4()?;
    if first_channels > c {
        return Err(AutodiffError::Shape(format!("split at {first_channels} of {c} channels")));
    }
    let (na, nb) = (first_channels * h * w, (c - first_channels) * h * w);
    let mut a = Vec::with_capacity(b * na);
    let mut rest = Vec::with_capacity(b * nb);
    for i in 0..b {
        let item = &x.data()[i * (na + nb)..(i + 1) * (na + nb)];
        a.extend_from_slice(&item[..na]);
        rest.extend_from_slice(&item[na..]);
    }
    Ok((Tensor::new(&[b, first_channels, h, w], a)?, Tensor::new(&[b, c - first_channels, h, w], rest)?))
}

/// Mean absolute error over positions where `valid` is true. Returns the loss and d(loss)/d(pred).
pub fn l1_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, valid: Option<&[bool]>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(AutodiffError::Shape(format!("l1_loss: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    if let Some(m) = valid {
        if m.len() != pred.numel() {
            return Err(AutodiffError::Shape(format!("l1_loss mask has {} entries for {}", m.len(), pred.numel())));
        }
    }
    let is_valid = |i: usize| valid.map_or(true, |m| m[i]);
    let count = (0..pred.numel()).filter(|&i| is_valid(i)).count();
    if count == 0 {
        return Err(AutodiffError::NoValidPixels);
    }
    let n = T::from_usize(count).expect("count fits");
    let mut total = 0.0f64;
    let mut grad = vec![T::zero(); pred.numel()];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        if !is_valid(i) {
            continue;
        }
        let d = p - t;
        total += d.abs().as_f64();
        grad[i] = if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        };
    }
    Ok((T::from_f64_lossy(total / count as f64), Tensor::new(pred.shape(), grad)?))
}

/// Options for [`cross_entropy`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CrossEntropyOptions {
    /// Per-class weights; the loss is the weighted mean over valid pixels.
    pub class_weights: Option<[f64; 3]>,
    /// Focal exponent; each pixel term is scaled by `(1 - p_true)^gamma`.
    pub focal_gamma: Option<f64>,
}

/// Softmax cross-entropy over a `[B, 3, H, W]` logit map against per-pixel labels.
///
/// Returns the loss and d(loss)/d(logits).
pub fn cross_entropy<T: Float>(
    logits: &Tensor<T>,
    labels: &[u8],
    valid: Option<&[bool]>,
    opts: &CrossEntropyOptions,
) -> Result<(T, Tensor<T>)> {
    let (b, c, h, w) = logits.dims4()?;
    if c != 3 {
        return Err(AutodiffError::Shape(format!("cross_entropy expects 3 class channels, got {c}")));
    }
    let hw = h * w;
    if labels.len() != b * hw {
        return Err(AutodiffError::Shape(format!("cross_entropy: {} labels for {} pixels", labels.len(), b * hw)));
    }
    if let Some(m) = valid {
        if m.len() != b * hw {
            return Err(AutodiffError::Shape(format!("cross_entropy mask has {} entries for {}", m.len(), b * hw)));
        }
    }
    let gamma = opts.focal_gamma.unwrap_or(0.0);
    let weights = opts.class_weights.unwrap_or([1.0; 3]);
    let src = logits.data();
    // Accumulate in f64 and scale the gradient once the normaliser is known.
    let mut grad = vec![0.0f64; logits.numel()];
    let mut total = 0.0f64;
    let mut norm = 0.0f64;
    for bi in 0..b {
        for p in 0..hw {
            let flat = bi * hw + p;
            if !valid.map_or(true, |m| m[flat]) {
                continue;
            }
            let y = labels[flat] as usize;
            if y >= c {
                return Err(AutodiffError::LabelOutOfRange { label: labels[flat], index: flat, classes: c });
            }
            let z: [f64; 3] = std::array::from_fn(|k| src[(bi * c + k) * hw + p].as_f64());
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
            let log_norm = zmax + sum_exp.ln();
            let probs: [f64; 3] = std::array::from_fn(|k| (z[k] - log_norm).exp());
            let log_pt = z[y] - log_norm;
            let pt = probs[y];
            let wy = weights[y];
            let one_minus = (1.0 - pt).max(0.0);
            let focal = if gamma == 0.0 { 1.0 } else { one_minus.powf(gamma) };
            total += -wy * focal * log_pt;
            norm += wy;
            // d/dz_k of -(1-p)^g log p = -(delta_ky - p_k) [ (1-p)^g - g (1-p)^(g-1) p log p ]
            let focal_slope = if gamma == 0.0 || one_minus == 0.0 {
                0.0
            } else {
                gamma * one_minus.powf(gamma - 1.0) * pt * log_pt
            };
            let factor = focal - focal_slope;
            for k in 0..c {
                let delta = if k == y { 1.0 } else { 0.0 };
                grad[(bi * c + k) * hw + p] = -wy * (delta - probs[k]) * factor;
            }
        }
    }
    if norm <= 0.0 {
        return Err(AutodiffError::NoValidPixels);
    }
    let grad = grad.into_iter().map(|g| T::from_f64_lossy(g / norm)).collect();
    Ok((T::from_f64_lossy(total / norm), Tensor::new(logits.shape(), grad)?))
}
