//! Training objectives for the two networks.

use flnet_autodiff::{
    run_training, AutodiffError, CrossEntropyOptions, Graph, Objective, ParamStore, Tensor, TrainError, TrainOutcome,
    TrainSchedule, Var,
};
use flnet_core::metrics::{f1_scores, mse_values, psnr_from_mse, ConfusionMatrix, NDVI_RANGE};
use flnet_core::raster::{resample, Resampling};
use flnet_core::{Grid, Raster};

use crate::dataset::{SegSample, SrPair};
use crate::edsr::Edsr;
use crate::infer::argmax_labels;
use crate::unet::{Unet, N_CLASSES};

fn engine(e: crate::error::ModelError) -> AutodiffError {
    match e {
        crate::error::ModelError::Engine(e) => e,
        other => AutodiffError::Invalid(other.to_string()),
    }
}

pub struct SrObjective<'a> {
    pub model: &'a Edsr,
}

impl SrObjective<'_> {
    /// Forward pass on a batch; returns the prediction variable.
    fn predict(&self, g: &mut Graph<f32>, params: &ParamStore<f32>, batch: &[&SrPair]) -> Result<Var, AutodiffError> {
        let lr: Vec<&Tensor<f32>> = batch.iter().map(|p| &p.lr).collect();
        let x = g.input(Tensor::stack(&lr)?);
        self.model.forward(g, params, x).map_err(engine)
    }
}

impl Objective for SrObjective<'_> {
    type Sample = SrPair;

    fn batch_loss(&self, g: &mut Graph<f32>, params: &ParamStore<f32>, batch: &[&SrPair]) -> Result<Var, AutodiffError> {
        let pred = self.predict(g, params, batch)?;
        let hr: Vec<&Tensor<f32>> = batch.iter().map(|p| &p.hr).collect();
        let target = Tensor::stack(&hr)?;
        let valid: Vec<bool> = batch.iter().flat_map(|p| p.valid.iter().copied()).collect();
        g.l1_loss(pred, &target, Some(&valid))
    }

    fn epoch_metrics(&self, params: &ParamStore<f32>, val: &[SrPair]) -> Result<Vec<(String, f64)>, AutodiffError> {
        let (mse, _) = sr_mse(self.model, params, val)?;
        Ok(vec![("psnr".into(), psnr_from_mse(mse, NDVI_RANGE))])
    }
}

/// Pooled MSE and valid pixel count of clamped model output over `pairs`.
pub fn sr_mse(model: &Edsr, params: &ParamStore<f32>, pairs: &[SrPair]) -> Result<(f64, usize), AutodiffError> {
    let obj = SrObjective { model };
    let (mut sum, mut n) = (0f64, 0usize);
    for chunk in pairs.chunks(8) {
        let refs: Vec<&SrPair> = chunk.iter().collect();
        let mut g = Graph::new();
        let pred = obj.predict(&mut g, params, &refs)?;
        let out = g.take_value(pred).into_data();
        let per = out.len() / chunk.len();
        for (k, p) in chunk.iter().enumerate() {
            let clamped: Vec<f32> = out[k * per..(k + 1) * per].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            if let Ok((m, c)) = mse_values(&clamped, p.hr.data(), Some(&p.valid)) {
                sum += m * c as f64;
                n += c;
            }
        }
    }
    if n == 0 {
        return Err(AutodiffError::NoValidPixels);
    }
    Ok((sum / n as f64, n))
}

fn chip_raster(t: &Tensor<f32>, valid: &[bool], grid: Grid) -> Raster {
    Raster::with_mask(grid, 1, t.data().to_vec(), valid.iter().map(|v| !v).collect()).expect("chip shape")
}

/// Pooled MSE of interpolating each coarse chip onto its fine grid with `method`.
pub fn interpolation_mse(pairs: &[SrPair], method: Resampling) -> Result<(f64, usize), crate::error::ModelError> {
    let (mut sum, mut n) = (0f64, 0usize);
    for p in pairs {
        let (h, w) = (p.lr.shape()[1], p.lr.shape()[2]);
        let lr_grid = Grid::pixel(w, h);
        let up = resample(&chip_raster(&p.lr, &p.lr_valid, lr_grid), &lr_grid.refined(p.scale), method)?;
        let valid: Vec<bool> = (0..up.pixels()).map(|i| p.valid[i] && up.is_valid(i)).collect();
        if let Ok((m, c)) = mse_values(up.band(0), p.hr.data(), Some(&valid)) {
            sum += m * c as f64;
            n += c;
        }
    }
    if n == 0 {
        return Err(AutodiffError::NoValidPixels.into());
    }
    Ok((sum / n as f64, n))
}

pub fn train_edsr(
    model: &Edsr,
    params: ParamStore<f32>,
    train: &[SrPair],
    val: &[SrPair],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, TrainError> {
    run_training(&SrObjective { model }, params, train, val, schedule)
}

pub struct SegObjective<'a> {
    pub model: &'a Unet,
    pub loss: CrossEntropyOptions,
}

impl SegObjective<'_> {
    fn logits(&self, g: &mut Graph<f32>, params: &ParamStore<f32>, batch: &[&SegSample]) -> Result<Var, AutodiffError> {
        let x: Vec<&Tensor<f32>> = batch.iter().map(|s| &s.delta).collect();
        let x = g.input(Tensor::stack(&x)?);
        self.model.forward(g, params, x).map_err(engine)
    }
}

impl Objective for SegObjective<'_> {
    type Sample = SegSample;

    fn batch_loss(&self, g: &mut Graph<f32>, params: &ParamStore<f32>, batch: &[&SegSample]) -> Result<Var, AutodiffError> {
        let logits = self.logits(g, params, batch)?;
        let labels: Vec<u8> = batch.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let valid: Vec<bool> = batch.iter().flat_map(|s| s.valid.iter().copied()).collect();
        g.cross_entropy(logits, &labels, Some(&valid), &self.loss)
    }

    fn epoch_metrics(&self, params: &ParamStore<f32>, val: &[SegSample]) -> Result<Vec<(String, f64)>, AutodiffError> {
        let s = f1_scores(&seg_confusion(self.model, params, val)?);
        Ok(vec![
            ("f1_no".into(), s.f1[0]),
            ("f1_partial".into(), s.f1[1]),
            ("f1_full".into(), s.f1[2]),
            ("macro_f1".into(), s.macro_f1),
        ])
    }
}

/// Per-pixel argmax confusion over valid pixels of `samples`, without post-processing.
pub fn seg_confusion(model: &Unet, params: &ParamStore<f32>, samples: &[SegSample]) -> Result<ConfusionMatrix, AutodiffError> {
    let obj = SegObjective { model, loss: CrossEntropyOptions::default() };
    let mut cm = ConfusionMatrix::default();
    for chunk in samples.chunks(8) {
        let refs: Vec<&SegSample> = chunk.iter().collect();
        let mut g = Graph::new();
        let logits = obj.logits(&mut g, params, &refs)?;
        let out = g.take_value(logits).into_data();
        let per = out.len() / chunk.len();
        for (k, s) in chunk.iter().enumerate() {
            let n = per / N_CLASSES;
            let pred = argmax_labels(&out[k * per..(k + 1) * per], n);
            cm.merge(&ConfusionMatrix::from_pairs(
                (0..n).filter(|&i| s.valid[i]).map(|i| (s.labels[i], pred[i])),
            ));
        }
    }
    Ok(cm)
}

pub fn train_unet(
    model: &Unet,
    params: ParamStore<f32>,
    train: &[SegSample],
    val: &[SegSample],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, TrainError> {
    let loss = model.config.loss_options(Some(crate::dataset::class_counts(train)));
    run_training(&SegObjective { model, loss }, params, train, val, schedule)
}
