//! Subcommand implementations.

use std::path::{Path, PathBuf};

use std::fmt;

use anyhow::{Context, Result};
use clap::Args;
use flnet_autodiff::{read_checkpoint, write_checkpoint, ParamStore, TrainError, TrainOutcome};
use flnet_core::change::{delta_ndvi, morphological_smooth, threshold_label};
use flnet_core::metrics::{confusion, f1_scores, mse, psnr_from_mse, ssim, Report, NDVI_RANGE};
use flnet_core::raster::{coregister_translation, render_map, resample, shift_raster, compute_ndvi, QualityMask, RenderStyle};
use flnet_core::synth::{generate_scene, SceneBundle, SceneSpec};
use flnet_core::{Raster, RasterError};
use flnet_models::dataset::{make_seg_dataset, make_sr_dataset};
use flnet_models::train::{interpolation_mse, sr_mse, train_edsr, train_unet};
use flnet_models::{infer_sr, predict_damage, DamageOptions, Edsr, Unet};

use crate::config::{Config, ConfigError};
use crate::fsutil::{load_raster, require_file, save_raster, scene_dirs, split_scenes, write_atomic};

/// Shared state for one invocation.
pub struct Ctx {
    pub cfg: Config,
    pub workdir: PathBuf,
}

impl Ctx {
    /// Relative paths resolve against the work directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; scenes go to `<out>/scene-<seed>`.
    #[arg(long, default_value = "scenes")]
    pub out: PathBuf,
    /// Number of consecutive seeds to generate, starting at `seed`.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let mut base = SceneSpec { scale: ctx.cfg.parse("scale")?, ..SceneSpec::default() };
    for (k, _) in SceneSpec::default().to_pairs() {
        if let Some(v) = ctx.cfg.get(&format!("scene.{k}")) {
            base.set(k, v).map_err(|e| ConfigError(e.to_string()))?;
        }
    }
    let seed0 = ctx.cfg.seed()?;
    base.validate().map_err(|e| ConfigError(e.to_string()))?;
    let out = ctx.path(&a.out);
    for i in 0..a.count {
        let spec = SceneSpec { seed: seed0 + i, ..base };
        let dir = out.join(format!("scene-{:04}", spec.seed));
        generate_scene(&spec)?.save(&dir).with_context(|| format!("saving {}", dir.display()))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Pre-event image: one NDVI band, or two bands ordered red, NIR.
    #[arg(long)]
    pub pre: PathBuf,
    /// Post-event image, same layout as `--pre`.
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long)]
    pub pre_quality: Option<PathBuf>,
    #[arg(long)]
    pub post_quality: Option<PathBuf>,
    /// Resample both images onto this raster's grid.
    #[arg(long)]
    pub target_grid: Option<PathBuf>,
    /// Nonzero on cropland, on the output grid.
    #[arg(long)]
    pub cropland: Option<PathBuf>,
    #[arg(long, default_value = "preprocessed")]
    pub out_dir: PathBuf,
}

fn to_ndvi(r: &Raster, what: &str) -> Result<Raster> {
    match r.bands() {
        1 => Ok(r.clone()),
        2 => {
            let band = |b: usize| Raster::with_mask(*r.grid(), 1, r.band(b).to_vec(), r.nodata_mask().to_vec());
            Ok(compute_ndvi(&band(1)?, &band(0)?)?)
        }
        n => Err(ConfigError(format!("{what}: expected 1 (NDVI) or 2 (red, NIR) bands, found {n}")).into()),
    }
}

fn quality_masked(ctx: &Ctx, r: Raster, mask: Option<&PathBuf>) -> Result<Raster> {
    let Some(path) = mask else { return Ok(r) };
    let q = QualityMask::from_raster(&load_raster(&ctx.path(path))?)?;
    if q.grid() != r.grid() {
        return Err(RasterError::GridMismatch(format!("quality mask {} does not match its image", path.display())).into());
    }
    Ok(r.masked(|i| q.is_flagged(i)))
}

pub fn preprocess(ctx: &Ctx, a: &PreprocessArgs) -> Result<()> {
    let pre = to_ndvi(&load_raster(&ctx.path(&a.pre))?, "pre")?;
    let post = to_ndvi(&load_raster(&ctx.path(&a.post))?, "post")?;
    pre.require_cogridded(&post, "pre/post images")?;
    let target = a.target_grid.as_ref().map(|p| load_raster(&ctx.path(p))).transpose()?;
    let cropland = a.cropland.as_ref().map(|p| load_raster(&ctx.path(p))).transpose()?;
    let out_grid = target.as_ref().map_or(*pre.grid(), |t| *t.grid());
    if let Some(c) = &cropland {
        if *c.grid() != out_grid {
            return Err(RasterError::GridMismatch("cropland mask is not on the output grid".into()).into());
        }
    }
    let method = ctx.cfg.resampling()?;
    let max_shift: usize = ctx.cfg.parse("preprocess.max_shift")?;

    let pre = quality_masked(ctx, pre, a.pre_quality.as_ref())?;
    let mut post = quality_masked(ctx, post, a.post_quality.as_ref())?;
    let mut log = String::new();
    if max_shift > 0 {
        let reg = coregister_translation(&pre, &post, max_shift)?;
        log.push_str(&format!("dx={}\ndy={}\nscore={}\n", reg.dx, reg.dy, reg.score));
        if reg.dx != 0.0 || reg.dy != 0.0 {
            post = shift_raster(&post, reg.dx, reg.dy)?;
        }
    }
    let finish = |r: &Raster| -> Result<Raster> {
        let r = if *r.grid() == out_grid { r.clone() } else { resample(r, &out_grid, method)? };
        Ok(match &cropland {
            Some(c) => r.masked(|i| c.is_nodata(i) || c.band(0)[i] == 0.0),
            None => r,
        })
    };
    let (pre, post) = (finish(&pre)?, finish(&post)?);
    let out = ctx.path(&a.out_dir);
    save_raster(&pre, &out.join("pre_ndvi.fr1"))?;
    save_raster(&post, &out.join("post_ndvi.fr1"))?;
    write_atomic(&out.join("registration.txt"), log.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_scenes(ctx: &Ctx, data: &Path) -> Result<(Vec<SceneBundle>, Vec<SceneBundle>)> {
    let dirs = scene_dirs(&ctx.path(data))?;
    let (train, val) = split_scenes(&dirs, ctx.cfg.parse("split.val_fraction")?)?;
    let load = |ds: &[PathBuf]| -> Result<Vec<SceneBundle>> {
        ds.iter().map(|d| SceneBundle::load(d).with_context(|| format!("loading scene {}", d.display()))).collect()
    };
    Ok((load(&train)?, load(&val)?))
}

fn save_checkpoint(params: &ParamStore<f32>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    write_atomic(path, &bytes)
}

fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    require_file(path)?;
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice()).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

/// Training produced a non-finite loss or gradient.
#[derive(Debug)]
pub struct Diverged {
    pub epoch: usize,
    pub step: usize,
}

impl fmt::Display for Diverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training diverged at epoch {}, step {}", self.epoch, self.step)
    }
}

impl std::error::Error for Diverged {}

/// Saves the outcome; on divergence keeps the last good parameters and fails.
fn finish_training(result: Result<TrainOutcome, TrainError>, out: &Path) -> Result<TrainOutcome> {
    let (outcome, diverged) = match result {
        Ok(o) => (o, None),
        Err(TrainError::Diverged { epoch, step, last_good }) => (*last_good, Some(Diverged { epoch, step })),
        Err(e) => return Err(e.into()),
    };
    let mut csv = Vec::new();
    flnet_autodiff::train::write_history_csv(&outcome.history, &mut csv)?;
    write_atomic(&history_path(out), &csv)?;
    if let Some(e) = diverged {
        if outcome.best_epoch > 0 {
            save_checkpoint(&outcome.best_params, out)?;
        }
        return Err(e.into());
    }
    save_checkpoint(&outcome.best_params, out)?;
    Ok(outcome)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of scene bundles; split by whole scene.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output; the epoch history goes to `<out>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_sr(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.cfg.edsr()?;
    let schedule = ctx.cfg.schedule("sr")?;
    let (chip, stride, max_nodata) = (ctx.cfg.parse("sr.hr_chip")?, ctx.cfg.parse("sr.stride")?, ctx.cfg.parse("sr.max_nodata")?);
    if chip % cfg.scale != 0 {
        return Err(ConfigError(format!("sr.hr_chip {chip} is not divisible by scale {}", cfg.scale)).into());
    }
    let (train_scenes, val_scenes) = load_scenes(ctx, &a.data)?;
    let train = make_sr_dataset(&train_scenes, chip, stride, max_nodata)?;
    let val = make_sr_dataset(&val_scenes, chip, stride, max_nodata)?;
    if train.is_empty() || val.is_empty() {
        return Err(ConfigError(format!("no usable SR chips (train {}, val {})", train.len(), val.len())).into());
    }
    println!("sr chips: train {} ({} scenes), val {} ({} scenes)", train.len(), train_scenes.len(), val.len(), val_scenes.len());
    let (model, params) = Edsr::build(cfg, ctx.cfg.seed()?)?;
    let out = ctx.path(&a.out);
    let outcome = finish_training(train_edsr(&model, params, &train, &val, &schedule), &out)?;
    let (m, _) = sr_mse(&model, &outcome.best_params, &val)?;
    let (b, _) = interpolation_mse(&val, flnet_core::raster::Resampling::Bicubic)?;
    println!(
        "best epoch {} of {}: val psnr {:.3} dB (bicubic {:.3} dB); wrote {}",
        outcome.best_epoch,
        outcome.history.len(),
        psnr_from_mse(m, NDVI_RANGE),
        psnr_from_mse(b, NDVI_RANGE),
        out.display()
    );
    Ok(())
}

pub fn train_seg(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.cfg.unet()?;
    let schedule = ctx.cfg.schedule("seg")?;
    let (chip, stride, max_nodata): (usize, usize, f64) = (ctx.cfg.parse("seg.chip")?, ctx.cfg.parse("seg.stride")?, ctx.cfg.parse("seg.max_nodata")?);
    if chip % cfg.divisor() != 0 {
        return Err(ConfigError(format!("seg.chip {chip} is not a multiple of {}", cfg.divisor())).into());
    }
    let (train_scenes, val_scenes) = load_scenes(ctx, &a.data)?;
    let train = make_seg_dataset(&train_scenes, chip, stride, max_nodata)?;
    let val = make_seg_dataset(&val_scenes, chip, stride, max_nodata)?;
    if train.is_empty() || val.is_empty() {
        return Err(ConfigError(format!("no usable segmentation chips (train {}, val {})", train.len(), val.len())).into());
    }
    println!("seg chips: train {}, val {}", train.len(), val.len());
    let (model, params) = Unet::build(cfg, ctx.cfg.seed()?)?;
    let out = ctx.path(&a.out);
    let outcome = finish_training(train_unet(&model, params, &train, &val, &schedule), &out)?;
    let last = outcome.history.iter().find(|r| r.epoch == outcome.best_epoch);
    let f1 = last.and_then(|r| r.metrics.iter().find(|(k, _)| k == "macro_f1")).map_or(f64::NAN, |(_, v)| *v);
    println!("best epoch {}: val macro-F1 {:.4}; wrote {}", outcome.best_epoch, f1, out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferSrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Low-resolution NDVI raster.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn infer_sr_cmd(ctx: &Ctx, a: &InferSrArgs) -> Result<()> {
    let params = load_checkpoint(&ctx.path(&a.checkpoint))?;
    let lr = load_raster(&ctx.path(&a.input))?;
    let model = Edsr::from_params(&params, ctx.cfg.parse("sr.residual_scale")?)?;
    let hr = infer_sr(&model, &params, &lr, ctx.cfg.tiles("sr")?)?;
    let out = ctx.path(&a.out);
    save_raster(&hr, &out)?;
    println!("wrote {} ({}x{})", out.display(), hr.width(), hr.height());
    Ok(())
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Pre-event NDVI.
    #[arg(long)]
    pub pre: PathBuf,
    /// Post-event NDVI on the same grid.
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long)]
    pub cropland: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the change map.
    #[arg(long)]
    pub delta_out: Option<PathBuf>,
}

fn change_map(ctx: &Ctx, pre: &Path, post: &Path, cropland: Option<&PathBuf>) -> Result<Raster> {
    let d = delta_ndvi(&load_raster(&ctx.path(pre))?, &load_raster(&ctx.path(post))?)?;
    match cropland {
        Some(p) => {
            let c = load_raster(&ctx.path(p))?;
            d.require_cogridded(&c, "cropland mask")?;
            Ok(d.masked(|i| c.is_nodata(i) || c.band(0)[i] == 0.0))
        }
        None => Ok(d),
    }
}

pub fn label(ctx: &Ctx, a: &LabelArgs) -> Result<()> {
    let delta = change_map(ctx, &a.pre, &a.post, a.cropland.as_ref())?;
    let labels = morphological_smooth(&threshold_label(&delta, &ctx.cfg.thresholds()?)?, ctx.cfg.parse("label.window")?)?;
    if let Some(p) = &a.delta_out {
        save_raster(&delta, &ctx.path(p))?;
    }
    save_raster(&labels, &ctx.path(&a.out))?;
    println!("wrote {}", ctx.path(&a.out).display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Segmentation checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pre: PathBuf,
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long)]
    pub cropland: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn infer(ctx: &Ctx, a: &InferArgs) -> Result<()> {
    let params = load_checkpoint(&ctx.path(&a.checkpoint))?;
    let model = Unet::from_params(&params, ctx.cfg.unet()?)?;
    let delta = change_map(ctx, &a.pre, &a.post, a.cropland.as_ref())?;
    let opts = DamageOptions { tiles: ctx.cfg.tiles("seg")?, min_object_size: ctx.cfg.parse("label.min_object_size")? };
    let out = predict_damage(&model, &params, &delta, opts)?;
    save_raster(&out, &ctx.path(&a.out))?;
    println!("wrote {}", ctx.path(&a.out).display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted damage labels.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Reference damage labels.
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    /// Super-resolved NDVI; pairs with the `--hr` at the same position.
    #[arg(long)]
    pub sr: Vec<PathBuf>,
    /// Reference high-resolution NDVI.
    #[arg(long)]
    pub hr: Vec<PathBuf>,
    #[arg(long, default_value = "evaluation")]
    pub out_dir: PathBuf,
}

pub fn evaluate(ctx: &Ctx, a: &EvaluateArgs, command_line: &str) -> Result<()> {
    if a.sr.len() != a.hr.len() {
        return Err(ConfigError(format!("{} --sr inputs but {} --hr inputs", a.sr.len(), a.hr.len())).into());
    }
    if a.pred.is_none() && a.sr.is_empty() {
        return Err(ConfigError("nothing to evaluate: give --pred/--truth and/or --sr/--hr".into()).into());
    }
    let ssim_params = ctx.cfg.ssim()?;
    let labels = match (&a.pred, &a.truth) {
        (Some(p), Some(t)) => {
            let (p, t) = (load_raster(&ctx.path(p))?, load_raster(&ctx.path(t))?);
            t.require_cogridded(&p, "prediction vs truth")?;
            Some((p, t))
        }
        _ => None,
    };
    let mut pairs = Vec::new();
    for (s, h) in a.sr.iter().zip(&a.hr) {
        let (s, h) = (load_raster(&ctx.path(s))?, load_raster(&ctx.path(h))?);
        h.require_cogridded(&s, "super-resolved vs reference")?;
        pairs.push((s, h));
    }

    let mut report = Report::default();
    report.header = vec![
        ("config_sha256".into(), ctx.cfg.hash()),
        ("command".into(), command_line.to_string()),
        ("platform".into(), format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)),
        ("reproducibility".into(), "bit-identical for the same binary, inputs and CPU; other platforms may differ in floating-point rounding".into()),
    ];
    let mut maps: Vec<(String, Vec<u8>)> = Vec::new();
    if let Some((pred, truth)) = &labels {
        let cm = confusion(truth, pred)?;
        let s = f1_scores(&cm);
        let n = cm.total();
        for (k, name) in ["no", "partial", "full"].iter().enumerate() {
            report.push(format!("f1_{name}"), s.f1[k], n);
            report.push(format!("precision_{name}"), s.precision[k], n);
            report.push(format!("recall_{name}"), s.recall[k], n);
        }
        report.push("macro_f1", s.macro_f1, n);
        maps.push(("pred_damage.ppm".into(), render_map(pred, RenderStyle::DamageClasses)?));
        maps.push(("truth_damage.ppm".into(), render_map(truth, RenderStyle::DamageClasses)?));
    }
    for (i, (s, h)) in pairs.iter().enumerate() {
        let suffix = if pairs.len() == 1 { String::new() } else { format!("_{i}") };
        let n = (0..s.pixels()).filter(|&j| s.is_valid(j) && h.is_valid(j)).count() as u64;
        report.push(format!("psnr{suffix}"), psnr_from_mse(mse(s, h)?, NDVI_RANGE), n);
        report.push(format!("ssim{suffix}"), ssim(s, h, &ssim_params)?, n);
        maps.push((format!("sr{suffix}.ppm"), render_map(s, RenderStyle::NdviDiverging)?));
    }

    let out = ctx.path(&a.out_dir);
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let table = report.to_table();
    for (name, bytes) in &maps {
        write_atomic(&out.join(name), bytes)?;
    }
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    write_atomic(&out.join("report.csv"), &csv)?;
    print!("{table}");
    Ok(())
}
