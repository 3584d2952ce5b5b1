//! Central finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so gradients that are exactly
/// or nearly zero are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients of the scalar built by `f` against
/// `(f(x + h) - f(x - h)) / 2h` for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape());
        let analytic = grads.get(var).unwrap_or(&zeros).clone();
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_op_checks_to_round_off() {
        let x = Tensor::new(&[3], vec![0.4, -0.8, 1.3]).unwrap();
        let ok = check_gradients(&[x.clone()], 1e-4, |g, v| {
            let y = g.scale(v[0], 3.0);
            g.l1_loss(y, &Tensor::zeros(&[3]), None)
        })
        .unwrap();
        assert!(ok.max_rel_error < 1e-8);
        assert_eq!(ok.checked, 3);
    }
}

pub mod suite {
    //! Randomised finite-difference checks for every differentiable op.

    use std::cell::OnceCell;

    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_gradients, GradCheckReport};
    use crate::error::Result;
    use crate::graph::{Graph, Var};
    use crate::kernels::CrossEntropyOptions;
    use crate::tensor::Tensor;

    pub const STEP: f64 = 1e-4;

    #[derive(Debug, Clone)]
    pub struct OpCheck {
        pub op: &'static str,
        pub shape: Vec<usize>,
        pub report: GradCheckReport,
    }

    pub const OPS: [&str; 10] =
        ["conv2d", "relu", "add", "pixel_shuffle", "max_pool2d", "upsample_nearest", "concat_channels", "l1_loss", "cross_entropy", "cross_entropy_focal"];

    fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Values bounded at least `gap` away from zero.
    fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m = rng.gen_range(gap..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Reduces an arbitrary tensor to a scalar whose gradient w.r.t. every
    /// element is a random ±1: `l1` against the target `y0 - 0.5 s`, where
    /// `y0` is the unperturbed output captured on the first call. Finite
    /// differences move `y` by far less than 0.5, so each term stays linear.
    fn project(g: &mut Graph<f64>, x: Var, signs: &[f64], anchor: &OnceCell<Tensor<f64>>) -> Result<Var> {
        let value = g.value(x);
        let target = anchor.get_or_init(|| {
            let data = value.data().iter().zip(signs).map(|(v, s)| v - 0.5 * s).collect();
            Tensor::new(value.shape(), data).unwrap()
        });
        let loss = g.l1_loss(x, &target.clone(), None)?;
        Ok(g.scale(loss, signs.len() as f64))
    }

    fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
    }

    /// Runs `per_op` randomised shape checks for every op in [`OPS`].
    pub fn run(seed: u64, per_op: usize) -> Result<Vec<OpCheck>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for trial in 0..per_op {
            out.push(conv(&mut rng, trial)?);
            out.push(relu(&mut rng)?);
            out.push(add(&mut rng)?);
            out.push(shuffle(&mut rng)?);
            out.push(pool(&mut rng)?);
            out.push(upsample(&mut rng)?);
            out.push(concat(&mut rng)?);
            out.push(l1(&mut rng)?);
            out.push(ce(&mut rng, false)?);
            out.push(ce(&mut rng, true)?);
        }
        Ok(out)
    }

    fn conv(rng: &mut ChaCha8Rng, trial: usize) -> Result<OpCheck> {
        // First trial is the canonical 2x3x5x5 input with a 4x3x3x3 kernel.
        let (b, cin, h, w, cout, k, stride) = if trial == 0 {
            (2, 3, 5, 5, 4, 3, 1)
        } else {
            let k = *[1usize, 3, 3, 5].choose(rng).unwrap();
            (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(k..k + 4), rng.gen_range(k..k + 4), rng.gen_range(1..4), k, rng.gen_range(1..3))
        };
        let pad = (k - 1) / 2;
        let x = uniform(rng, &[b, cin, h, w], -1.0, 1.0);
        let wt = uniform(rng, &[cout, cin, k, k], -1.0, 1.0);
        let bias = uniform(rng, &[cout], -1.0, 1.0);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let s = signs(rng, b * cout * ho * wo);
        let anchor = OnceCell::new();
        let report = check_gradients(&[x, wt, bias], STEP, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), pad, stride)?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "conv2d", shape: vec![b, cin, h, w, cout, k, stride], report })
    }

    fn rand_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
        vec![rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6)]
    }

    fn relu(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = rand_shape(rng);
        let x = away_from_zero(rng, &shape, 0.05);
        let s = signs(rng, x.numel());
        let anchor = OnceCell::new();
        let report = check_gradients(&[x], STEP, |g, v| {
            let y = g.relu(v[0]);
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "relu", shape, report })
    }

    fn add(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = rand_shape(rng);
        let a = uniform(rng, &shape, -1.0, 1.0);
        // Alternate between same-shape and batch-broadcast addends.
        let mut bshape = shape.clone();
        if rng.gen_bool(0.5) {
            bshape[0] = 1;
        }
        let b = uniform(rng, &bshape, -1.0, 1.0);
        let s = signs(rng, a.numel());
        let anchor = OnceCell::new();
        let report = check_gradients(&[a, b], STEP, |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "add", shape, report })
    }

    fn shuffle(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let r = rng.gen_range(2..4);
        let shape = vec![rng.gen_range(1..3), rng.gen_range(1..3) * r * r, rng.gen_range(1..4), rng.gen_range(1..4)];
        let x = uniform(rng, &shape, -1.0, 1.0);
        let s = signs(rng, x.numel());
        let anchor = OnceCell::new();
        let report = check_gradients(&[x], STEP, |g, v| {
            let y = g.pixel_shuffle(v[0], r)?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "pixel_shuffle", shape, report })
    }

    fn pool(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = vec![rng.gen_range(1..3), rng.gen_range(1..3), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4)];
        let n: usize = shape.iter().product();
        // Distinct values 0.01 apart keep every window free of near-ties.
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
        vals.shuffle(rng);
        let x = Tensor::new(&shape, vals)?;
        let s = signs(rng, n / 4);
        let anchor = OnceCell::new();
        let report = check_gradients(&[x], STEP, |g, v| {
            let y = g.max_pool2d(v[0])?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "max_pool2d", shape, report })
    }

    fn upsample(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = rand_shape(rng);
        let x = uniform(rng, &shape, -1.0, 1.0);
        let s = signs(rng, x.numel() * 4);
        let anchor = OnceCell::new();
        let report = check_gradients(&[x], STEP, |g, v| {
            let y = g.upsample_nearest(v[0], 2)?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "upsample_nearest", shape, report })
    }

    fn concat(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = rand_shape(rng);
        let mut other = shape.clone();
        other[1] = rng.gen_range(1..4);
        let a = uniform(rng, &shape, -1.0, 1.0);
        let b = uniform(rng, &other, -1.0, 1.0);
        let s = signs(rng, a.numel() + b.numel());
        let anchor = OnceCell::new();
        let report = check_gradients(&[a, b], STEP, |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            project(g, y, &s, &anchor)
        })?;
        Ok(OpCheck { op: "concat_channels", shape, report })
    }

    fn l1(rng: &mut ChaCha8Rng) -> Result<OpCheck> {
        let shape = rand_shape(rng);
        let pred = uniform(rng, &shape, -1.0, 1.0);
        let offsets = away_from_zero(rng, &shape, 0.05);
        let target = Tensor::new(&shape, pred.data().iter().zip(offsets.data()).map(|(p, o)| p + o).collect())?;
        let mut mask: Vec<bool> = (0..pred.numel()).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        let n_valid = mask.iter().filter(|&&m| m).count() as f64;
        let report = check_gradients(&[pred], STEP, |g, v| {
            let loss = g.l1_loss(v[0], &target, Some(&mask))?;
            Ok(g.scale(loss, n_valid))
        })?;
        Ok(OpCheck { op: "l1_loss", shape, report })
    }

    fn ce(rng: &mut ChaCha8Rng, focal: bool) -> Result<OpCheck> {
        let (b, h, w) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let shape = vec![b, 3, h, w];
        let logits = uniform(rng, &shape, -2.0, 2.0);
        let labels: Vec<u8> = (0..b * h * w).map(|_| rng.gen_range(0..3)).collect();
        let mut mask: Vec<bool> = (0..b * h * w).map(|_| rng.gen_bool(0.8)).collect();
        mask[0] = true;
        let opts = if focal {
            CrossEntropyOptions { class_weights: Some([1.0, 2.0, 4.0]), focal_gamma: Some(2.0) }
        } else {
            CrossEntropyOptions { class_weights: Some([1.0, 2.0, 4.0]), focal_gamma: None }
        };
        let n = (b * h * w) as f64;
        let report = check_gradients(&[logits], STEP, |g, v| {
            let loss = g.cross_entropy(v[0], &labels, Some(&mask), &opts)?;
            Ok(g.scale(loss, n))
        })?;
        Ok(OpCheck { op: if focal { "cross_entropy_focal" } else { "cross_entropy" }, shape, report })
    }
}
