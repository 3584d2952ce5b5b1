//! Acceptance criteria for the whole workspace, one PASS/FAIL line each.
//!
//! Runs every criterion by default; numeric arguments select a subset
//! (`cargo test --test acceptance -- 4 6`).

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flnet_autodiff::gradcheck::suite;
use flnet_autodiff::{read_checkpoint, write_checkpoint, ParamStore, TrainSchedule};
use flnet_core::change::{label_indices, morphological_smooth, small_object_removal, threshold_label, ThresholdConfig};
use flnet_core::metrics::{confusion, f1_scores, psnr, psnr_from_mse, ssim, ssim_values, SsimParams, NDVI_RANGE};
use flnet_core::raster::{coregister_translation, decode_raster, encode_raster, read_raster, resample, shift_raster, write_raster, Resampling};
use flnet_core::synth::{generate_scene, SceneBundle, SceneSpec};
use flnet_core::{GeoTransform, Grid, Raster};
use flnet_models::dataset::{make_seg_dataset, make_sr_dataset};
use flnet_models::train::{interpolation_mse, seg_confusion, sr_mse, train_edsr, train_unet};
use flnet_models::{infer_sr, predict_damage, DamageOptions, Edsr, EdsrConfig, TileOptions, Unet, UnetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Synthetic corpus shared by the learning criteria. Splits are by whole scene.
struct Corpus {
    train: Vec<SceneBundle>,
    val: Vec<SceneBundle>,
    test: Vec<SceneBundle>,
}

fn scene_spec(seed: u64) -> SceneSpec {
    SceneSpec { seed, hr_size: 192, parcel_count: 16, narrow_feature_count: 4, ..SceneSpec::default() }
}

impl Corpus {
    fn build() -> Self {
        let gen = |seeds: std::ops::Range<u64>| seeds.map(|s| generate_scene(&scene_spec(s)).expect("scene")).collect::<Vec<_>>();
        Self { train: gen(1000..1016), val: gen(1016..1020), test: gen(2000..2005) }
    }
}

struct TrainedSr {
    model: Edsr,
    params: ParamStore<f32>,
}

struct TrainedSeg {
    model: Unet,
    params: ParamStore<f32>,
}

#[derive(Default)]
struct Shared {
    corpus: Option<Corpus>,
    sr: Option<(TrainedSr, Verdict)>,
    seg: Option<(TrainedSeg, Verdict)>,
}

impl Shared {
    fn corpus(&mut self) -> &Corpus {
        self.corpus.get_or_insert_with(Corpus::build)
    }
}

const SR_HR_CHIP: usize = 48;
const SEG_CHIP: usize = 64;

// ---------------------------------------------------------------- 1

fn gradients(_: &mut Shared) -> Verdict {
    let start = Instant::now();
    let checks = suite::run(20_241_014, 5).expect("gradient suite");
    let elapsed = start.elapsed();
    let mut per_op: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for c in &checks {
        let e = per_op.entry(c.op).or_default();
        e.0 += 1;
        e.1 = e.1.max(c.report.max_rel_error);
    }
    let worst = per_op.values().map(|v| v.1).fold(0.0, f64::max);
    let all_ops = suite::OPS.iter().all(|op| per_op.get(op).is_some_and(|v| v.0 >= 5));
    let pass = all_ops && worst < 1e-4 && elapsed < Duration::from_secs(120);
    let ops: Vec<String> = per_op.iter().map(|(k, v)| format!("{k}:{}x{:.1e}", v.0, v.1)).collect();
    verdict(pass, format!("max rel error {worst:.2e} (< 1e-4), {:.1}s (< 120s); {}", elapsed.as_secs_f64(), ops.join(" ")))
}

// ---------------------------------------------------------------- 2

fn raster_of(w: usize, h: usize, v: Vec<f32>) -> Raster {
    Raster::new(Grid::pixel(w, h), 1, v).unwrap()
}

/// Per-window SSIM with explicit 2-D Gaussian weights.
fn brute_ssim(x: &[f32], y: &[f32], w: usize, h: usize) -> f64 {
    let (size, sigma, c) = (11usize, 1.5f64, 5.0f64);
    let mut wts = vec![0f64; size * size];
    for j in 0..size {
        for i in 0..size {
            wts[j * size + i] = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01f64 * 2.0).powi(2), (0.03f64 * 2.0).powi(2));
    let mut total = 0.0;
    let mut n = 0;
    for oy in 0..=h - size {
        for ox in 0..=w - size {
            let at = |v: &[f32], i: usize, j: usize| v[(oy + j) * w + ox + i] as f64;
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..size {
                for i in 0..size {
                    mx += wts[j * size + i] * at(x, i, j);
                    my += wts[j * size + i] * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..size {
                for i in 0..size {
                    let (a, b) = (at(x, i, j) - mx, at(y, i, j) - my);
                    vx += wts[j * size + i] * a * a;
                    vy += wts[j * size + i] * b * b;
                    cxy += wts[j * size + i] * a * b;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    total / n as f64
}

fn metric_oracles(_: &mut Shared) -> Verdict {
    let mut notes = Vec::new();
    let closed = psnr_from_mse(0.04, NDVI_RANGE);
    let x = raster_of(8, 8, vec![0.25; 64]);
    let y = raster_of(8, 8, vec![0.05; 64]);
    let p = psnr(&x, &y, NDVI_RANGE).unwrap();
    // 0.2 has no exact f32 form; the raster value carries that representation error.
    let psnr_ok = closed == 20.0 && (p - 20.0).abs() < 1e-6;
    notes.push(format!("psnr {closed} (raster {p:.9})"));

    let tex: Vec<f32> = (0..32 * 32).map(|i| ((i % 32) as f32 * 0.3).sin() * 0.4 + ((i / 32) as f32 * 0.17).cos() * 0.3).collect();
    let t = raster_of(32, 32, tex);
    let s_win = ssim(&t, &t, &SsimParams::default()).unwrap();
    let s_glob = ssim(&t, &t, &SsimParams::global()).unwrap();
    let ssim_ok = s_win == 1.0 && s_glob == 1.0;
    notes.push(format!("ssim(x,x) {s_win}/{s_glob}"));

    let a: Vec<f32> = (0..256).map(|i| ((i % 16) as f32 * 0.07).sin() * 0.6 + (i / 16) as f32 * 0.02).collect();
    let b: Vec<f32> = a.iter().enumerate().map(|(i, v)| v * 0.8 + ((i * 7919) % 13) as f32 * 0.01 - 0.05).collect();
    let fast = ssim_values(&a, &b, 16, 16, None, &SsimParams::default()).unwrap();
    let slow = brute_ssim(&a, &b, 16, 16);
    let window_ok = (fast - slow).abs() < 1e-6;
    notes.push(format!("windowed ssim diff {:.1e}", (fast - slow).abs()));

    let truth = raster_of(6, 1, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    let pred = raster_of(6, 1, vec![0.0, 1.0, 1.0, 1.0, 2.0, 0.0]);
    let f1 = f1_scores(&confusion(&truth, &pred).unwrap()).f1;
    let f1_ok = [0.5, 0.8, 2.0 / 3.0].iter().zip(f1).all(|(e, g)| (e - g).abs() < 1e-4);
    notes.push(format!("f1 ({:.4}, {:.4}, {:.4})", f1[0], f1[1], f1[2]));
    verdict(psnr_ok && ssim_ok && window_ok && f1_ok, notes.join("; "))
}

// ---------------------------------------------------------------- 3

fn registration(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut integer_ok = 0;
    let mut integer_total = 0;
    let mut worst_sub = 0f64;
    for k in 0..10u64 {
        let scene = generate_scene(&scene_spec(3000 + k)).unwrap();
        let reference = &scene.pre_hr;
        let corner = if k % 2 == 0 { (8, -8) } else { (-8, 8) };
        let random = (rng.gen_range(-8i32..=8), rng.gen_range(-8i32..=8));
        for (dx, dy) in [corner, random] {
            let moving = shift_raster(reference, -dx as f64, -dy as f64).unwrap();
            let r = coregister_translation(reference, &moving, 8).unwrap();
            integer_total += 1;
            if r.dx == dx as f64 && r.dy == dy as f64 {
                integer_ok += 1;
            }
        }
        let moving = shift_raster(reference, -1.5, 1.5).unwrap();
        let r = coregister_translation(reference, &moving, 8).unwrap();
        worst_sub = worst_sub.max((r.dx - 1.5).abs()).max((r.dy + 1.5).abs());
    }
    verdict(
        integer_ok == integer_total && worst_sub < 0.5,
        format!("{integer_ok}/{integer_total} integer shifts exact; subpixel 1.5 px worst error {worst_sub:.3} px (< 0.5) over 10 scenes"),
    )
}

// ---------------------------------------------------------------- 4

fn train_sr_model(shared: &mut Shared) -> (TrainedSr, Verdict) {
    let corpus = shared.corpus();
    let train = make_sr_dataset(&corpus.train, SR_HR_CHIP, SR_HR_CHIP, 0.2).unwrap();
    let val = make_sr_dataset(&corpus.val, SR_HR_CHIP, SR_HR_CHIP, 0.2).unwrap();
    let (model, params) = Edsr::build(EdsrConfig::default(), 7).unwrap();
    let schedule = TrainSchedule { max_epochs: 15, learning_rate: 1e-4, seed: 3, ..TrainSchedule::default() };
    let start = Instant::now();
    let out = train_edsr(&model, params, &train, &val, &schedule).unwrap();
    let elapsed = start.elapsed();
    let (m, _) = sr_mse(&model, &out.best_params, &val).unwrap();
    let (b, _) = interpolation_mse(&val, Resampling::Bicubic).unwrap();
    let (sr_db, bicubic_db) = (psnr_from_mse(m, NDVI_RANGE), psnr_from_mse(b, NDVI_RANGE));
    let gain = sr_db - bicubic_db;
    let v = verdict(
        gain >= 0.5 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "val PSNR {sr_db:.3} dB vs bicubic {bicubic_db:.3} dB (gain {gain:+.3}, need >= +0.5); {} train / {} val chips from {}/{} scenes; training {:.1} min (< 30), best epoch {}/{}",
            train.len(),
            val.len(),
            corpus.train.len(),
            corpus.val.len(),
            elapsed.as_secs_f64() / 60.0,
            out.best_epoch,
            out.history.len()
        ),
    );
    (TrainedSr { model, params: out.best_params }, v)
}

fn sr_quality(shared: &mut Shared) -> Verdict {
    if shared.sr.is_none() {
        let t = train_sr_model(shared);
        shared.sr = Some(t);
    }
    let v = &shared.sr.as_ref().unwrap().1;
    verdict(v.pass, v.detail.clone())
}

// ---------------------------------------------------------------- 5

fn train_seg_model(shared: &mut Shared) -> (TrainedSeg, Verdict) {
    let corpus = shared.corpus();
    let train = make_seg_dataset(&corpus.train, SEG_CHIP, SEG_CHIP, 0.2).unwrap();
    let val = make_seg_dataset(&corpus.val, SEG_CHIP, SEG_CHIP, 0.2).unwrap();
    let test = make_seg_dataset(&corpus.test, SEG_CHIP, SEG_CHIP, 0.2).unwrap();
    let (model, params) = Unet::build(UnetConfig::default(), 11).unwrap();
    let schedule = TrainSchedule { max_epochs: 30, learning_rate: 1e-3, seed: 5, ..TrainSchedule::default() };
    let start = Instant::now();
    let out = train_unet(&model, params, &train, &val, &schedule).unwrap();
    let elapsed = start.elapsed();
    let scores = f1_scores(&seg_confusion(&model, &out.best_params, &test).unwrap());
    let v = verdict(
        scores.macro_f1 >= 0.90,
        format!(
            "held-out macro-F1 {:.4} (>= 0.90; No {:.3}, Partial {:.3}, Full {:.3}) on {} chips from {} test scenes; {} train chips, {:.1} min, best epoch {}/{}",
            scores.macro_f1,
            scores.f1[0],
            scores.f1[1],
            scores.f1[2],
            test.len(),
            corpus.test.len(),
            train.len(),
            elapsed.as_secs_f64() / 60.0,
            out.best_epoch,
            out.history.len()
        ),
    );
    (TrainedSeg { model, params: out.best_params }, v)
}

fn seg_quality(shared: &mut Shared) -> Verdict {
    if shared.seg.is_none() {
        let t = train_seg_model(shared);
        shared.seg = Some(t);
    }
    let v = &shared.seg.as_ref().unwrap().1;
    verdict(v.pass, v.detail.clone())
}

// ---------------------------------------------------------------- 6

fn cropland_only(r: &Raster, cropland: &Raster) -> Raster {
    r.masked(|i| cropland.is_nodata(i) || cropland.band(0)[i] == 0.0)
}

fn full_damage_f1(seg: &TrainedSeg, pre: &Raster, post: &Raster, scene: &SceneBundle) -> f64 {
    let delta = cropland_only(&flnet_core::change::delta_ndvi(pre, post).unwrap(), &scene.cropland);
    let damage = predict_damage(&seg.model, &seg.params, &delta, DamageOptions::default()).unwrap();
    let truth = cropland_only(&scene.truth, &scene.cropland);
    f1_scores(&confusion(&truth, &damage).unwrap()).f1[2]
}

fn directional(shared: &mut Shared) -> Verdict {
    if shared.sr.is_none() {
        let t = train_sr_model(shared);
        shared.sr = Some(t);
    }
    if shared.seg.is_none() {
        let t = train_seg_model(shared);
        shared.seg = Some(t);
    }
    let (sr, _) = shared.sr.as_ref().unwrap();
    let (seg, _) = shared.seg.as_ref().unwrap();
    let corpus = shared.corpus.as_ref().unwrap();
    let mut rows = Vec::new();
    for scene in &corpus.test {
        let pre_lr = scene.pre_lr.masked(|i| scene.pre_lr_quality.is_flagged(i));
        let post_lr = scene.post_lr.masked(|i| scene.post_lr_quality.is_flagged(i));
        let up = |r: &Raster| infer_sr(&sr.model, &sr.params, r, TileOptions::SR).unwrap();
        let nn = |r: &Raster| resample(r, scene.pre_hr.grid(), Resampling::Nearest).unwrap();
        let f_sr = full_damage_f1(seg, &up(&pre_lr), &up(&post_lr), scene);
        let f_lr = full_damage_f1(seg, &nn(&pre_lr), &nn(&post_lr), scene);
        rows.push((scene.spec.seed, f_sr, f_lr));
    }
    let mean_gain = rows.iter().map(|r| r.1 - r.2).sum::<f64>() / rows.len() as f64;
    let wins = rows.iter().filter(|r| r.1 > r.2).count();
    let per: Vec<String> = rows.iter().map(|(s, a, b)| format!("{s}: SR {a:.3} / LR {b:.3}")).collect();
    verdict(
        mean_gain >= 0.03 && wins >= 4,
        format!("Full-damage F1 mean gain {mean_gain:+.4} (>= 0.03), SR ahead on {wins}/5 (>= 4); {}", per.join(", ")),
    )
}

// ---------------------------------------------------------------- 7

const PIPELINE_CONFIG: &str = "\
seed = 5
scene.hr_size = 96
scene.parcel_count = 8
scene.narrow_feature_count = 2
sr.n_resblocks = 2
sr.n_feats = 8
sr.hr_chip = 48
sr.stride = 48
sr.max_steps = 6
seg.depth = 2
seg.base_channels = 4
seg.chip = 32
seg.stride = 32
seg.max_steps = 6
";

fn run_pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("run.cfg"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let s = "scenes/scene-0007";
    let steps: Vec<Vec<String>> = [
        "synth --count 3 --out scenes".to_string(),
        "train-sr --data scenes --out sr.flckpt".into(),
        format!("infer-sr --checkpoint sr.flckpt --input {s}/pre_lr.fr1 --out pre_sr.fr1"),
        format!("infer-sr --checkpoint sr.flckpt --input {s}/post_lr.fr1 --out post_sr.fr1"),
        format!("preprocess --pre pre_sr.fr1 --post post_sr.fr1 --cropland {s}/cropland.fr1 --out-dir prep"),
        format!("label --pre {s}/pre_hr.fr1 --post {s}/post_hr.fr1 --cropland {s}/cropland.fr1 --out truth.fr1"),
        "train-seg --data scenes --out seg.flckpt".into(),
        "infer --checkpoint seg.flckpt --pre prep/pre_ndvi.fr1 --post prep/post_ndvi.fr1 --out damage.fr1".into(),
        format!("evaluate --pred damage.fr1 --truth truth.fr1 --sr pre_sr.fr1 --hr {s}/pre_hr.fr1 --out-dir eval"),
    ]
    .iter()
    .map(|c| c.split_whitespace().map(String::from).collect())
    .collect();
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_flnet"))
            .arg("--config")
            .arg("run.cfg")
            .args(&args)
            .env("FLNET_WORKDIR", dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

/// Relative path to contents of every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(_: &mut Shared) -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = run_pipeline(d.path()) {
            return verdict(false, e);
        }
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let fr1: Vec<&String> = ta.keys().filter(|k| k.ends_with(".fr1")).collect();
    let differing: Vec<&String> = ta.keys().filter(|k| k.ends_with(".fr1") && tb.get(*k) != ta.get(*k)).collect();
    let same_set = ta.keys().eq(tb.keys());
    let checkpoints_equal = ["sr.flckpt", "seg.flckpt"].iter().all(|k| ta.get(*k) == tb.get(*k));
    let report = String::from_utf8_lossy(&ta["eval/report.csv"]).into_owned();
    let has_f1 = ["f1_no,", "f1_partial,", "f1_full,"].iter().all(|m| report.contains(m));
    verdict(
        same_set && differing.is_empty() && checkpoints_equal && has_f1 && fr1.len() >= 30,
        format!(
            "{} FR1 outputs compared, {} differ; checkpoints identical: {checkpoints_equal}; report has all class F1: {has_f1}",
            fr1.len(),
            differing.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

type Labels = Vec<Option<u8>>;

/// Exhaustive 3x3 vote; the centre wins ties it takes part in, else the lowest class.
fn reference_smooth(w: usize, h: usize, l: &Labels) -> Labels {
    let mut out = l.clone();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let Some(centre) = l[(y * w as i64 + x) as usize] else { continue };
            let mut counts = [0; 3];
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    if let Some(c) = l[(yy * w as i64 + xx) as usize] {
                        counts[c as usize] += 1;
                    }
                }
            }
            let best = *counts.iter().max().unwrap();
            let winners: Vec<u8> = (0..3u8).filter(|&c| counts[c as usize] == best).collect();
            out[(y * w as i64 + x) as usize] = Some(if winners.contains(&centre) { centre } else { winners[0] });
        }
    }
    out
}

/// Flood-fill components; small ones take the majority label of their
/// valid boundary pixels, ties going to No.
fn reference_removal(w: usize, h: usize, l: &Labels, min_size: usize) -> Labels {
    let mut out = l.clone();
    let mut visited = vec![false; w * h];
    let nbrs = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut v = Vec::new();
        if x > 0 {
            v.push(i - 1);
        }
        if x + 1 < w {
            v.push(i + 1);
        }
        if y > 0 {
            v.push(i - w);
        }
        if y + 1 < h {
            v.push(i + w);
        }
        v
    };
    for start in 0..w * h {
        let Some(c) = l[start] else { continue };
        if visited[start] {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(i) = queue.pop_front() {
            for j in nbrs(i) {
                if !visited[j] && l[j] == Some(c) {
                    visited[j] = true;
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        if comp.len() >= min_size {
            continue;
        }
        let members: HashSet<usize> = comp.iter().copied().collect();
        let boundary: HashSet<usize> = comp.iter().flat_map(|&i| nbrs(i)).filter(|j| !members.contains(j) && l[*j].is_some()).collect();
        if boundary.is_empty() {
            continue;
        }
        let mut counts = [0; 3];
        for &j in &boundary {
            counts[l[j].unwrap() as usize] += 1;
        }
        let best = *counts.iter().max().unwrap();
        let winners: Vec<u8> = (0..3u8).filter(|&k| counts[k as usize] == best).collect();
        let new = if winners.len() > 1 { 0 } else { winners[0] };
        for &i in &comp {
            out[i] = Some(new);
        }
    }
    out
}

/// Random rectangles of change over a random background, with noise and holes.
fn random_delta(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Raster {
    let levels = [0.05f32, 0.15, 0.27, 0.40, 0.6];
    let mut v = vec![levels[rng.gen_range(0..levels.len())]; w * h];
    for _ in 0..rng.gen_range(0..25) {
        let (x0, y0, rw, rh) = (rng.gen_range(0..w), rng.gen_range(0..h), rng.gen_range(1..8), rng.gen_range(1..8));
        let level = levels[rng.gen_range(0..levels.len())];
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                v[y * w + x] = level;
            }
        }
    }
    for x in v.iter_mut() {
        if rng.gen_bool(0.1) {
            *x = rng.gen_range(-0.2..0.8);
        }
    }
    let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.05)).collect();
    Raster::with_mask(Grid::pixel(w, h), 1, v, mask).unwrap()
}

fn label_oracles(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let cfg = ThresholdConfig::default();
    let (w, h) = (32, 32);
    let mut mismatches = 0;
    let cases = 120;
    for _ in 0..cases {
        let delta = random_delta(&mut rng, w, h);
        let min_size = rng.gen_range(2..14);
        let got = label_indices(&small_object_removal(&morphological_smooth(&threshold_label(&delta, &cfg).unwrap(), 3).unwrap(), min_size).unwrap()).unwrap();
        let thresholded: Labels = (0..w * h)
            .map(|i| {
                delta.is_valid(i).then(|| {
                    let d = delta.band(0)[i];
                    if d >= cfg.t_full {
                        2
                    } else if d >= cfg.t_partial {
                        1
                    } else {
                        0
                    }
                })
            })
            .collect();
        let want = reference_removal(w, h, &reference_smooth(w, h, &thresholded), min_size);
        if got != want {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{} of {cases} random 32x32 grids match the brute-force references exactly", cases - mismatches))
}

// ---------------------------------------------------------------- 9

fn bits(r: &Raster) -> Vec<u32> {
    r.data().iter().map(|v| v.to_bits()).collect()
}

fn same_raster(a: &Raster, b: &Raster) -> bool {
    a.grid() == b.grid() && a.bands() == b.bands() && bits(a) == bits(b) && a.nodata_mask() == b.nodata_mask() && a.nodata_value().to_bits() == b.nodata_value().to_bits() && a.flags() == b.flags()
}

fn random_raster(rng: &mut ChaCha8Rng) -> Raster {
    let (w, h, bands) = (rng.gen_range(1..48), rng.gen_range(1..48), rng.gen_range(1..4));
    let psize = rng.gen_range(0.5..30.0);
    let geo = GeoTransform::new(rng.gen_range(-1e6..1e6), psize, rng.gen_range(-1e6..1e6), -psize).unwrap();
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-42, f32::MAX, -1.0, 1.0];
    let data: Vec<f32> =
        (0..w * h * bands).map(|_| if rng.gen_bool(0.05) { specials[rng.gen_range(0..specials.len())] } else { rng.gen_range(-1.0f32..1.0) }).collect();
    let density = [0.0, 0.1, 0.5, 1.0][rng.gen_range(0..4)];
    let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    let mut r = Raster::with_mask(Grid::new(w, h, geo), bands, data, mask).unwrap();
    r.set_flags(rng.gen());
    r
}

fn round_trips(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dir = tempfile::tempdir().unwrap();
    let cases = 150;
    let mut ok = 0;
    for k in 0..cases {
        let r = random_raster(&mut rng);
        let mut good = decode_raster(&encode_raster(&r)).is_ok_and(|d| same_raster(&d, &r));
        if k % 5 == 0 {
            let p = dir.path().join(format!("r{k}.fr1"));
            write_raster(&r, &p).unwrap();
            good &= same_raster(&read_raster(&p).unwrap(), &r);
        }
        ok += good as usize;
    }
    let mut ckpt_ok = true;
    let mut scalars = 0;
    for params in [Edsr::build(EdsrConfig::default(), 3).unwrap().1, Unet::build(UnetConfig::default(), 4).unwrap().1] {
        let mut buf = Vec::new();
        write_checkpoint(&params, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        scalars += params.num_scalars();
        ckpt_ok &= back.len() == params.len()
            && params.iter().zip(back.iter()).all(|((na, ta), (nb, tb))| {
                na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
    }
    verdict(ok == cases && ckpt_ok, format!("{ok}/{cases} FR1 rasters bit-exact; checkpoints ({scalars} parameters) bit-exact: {ckpt_ok}"))
}

// ----------------------------------------------------------------

type Criterion = (usize, &'static str, fn(&mut Shared) -> Verdict);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient correctness", gradients),
    (2, "metric oracles", metric_oracles),
    (3, "registration recovery", registration),
    (4, "SR beats bicubic", sr_quality),
    (5, "segmentation quality", seg_quality),
    (6, "SR improves full-damage F1", directional),
    (7, "CLI determinism", determinism),
    (8, "label pipeline oracles", label_oracles),
    (9, "round-trip integrity", round_trips),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _) in CRITERIA {
            println!("criterion_{n}_{}: test", name.replace(' ', "_"));
        }
        return ExitCode::SUCCESS;
    }
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, f) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| f(&mut shared))).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!("{} criterion {n} ({name}): {} [{:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
