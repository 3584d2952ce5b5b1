//! UNet for 3-class damage segmentation of a single-channel change map.

use flnet_autodiff::{CrossEntropyOptions, Float, Graph, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};
use crate::layers::Conv;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ClassWeighting {
    #[default]
    None,
    /// Inverse class frequency over the training split.
    InverseFrequency,
    Fixed([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub class_weighting: ClassWeighting,
    pub focal_gamma: Option<f64>,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 32, in_channels: 1, class_weighting: ClassWeighting::None, focal_gamma: None }
    }
}

impl UnetConfig {
    pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(ModelError::Config("depth, base_channels and in_channels must be >= 1".into()));
        }
        if self.depth > 8 {
            return Err(ModelError::Config(format!("depth {} too large", self.depth)));
        }
        if let Some(g) = self.focal_gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(ModelError::Config(format!("focal gamma {g} must be non-negative")));
            }
        }
        if let ClassWeighting::Fixed(w) = self.class_weighting {
            if !w.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!("class weights {w:?} must be positive")));
            }
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Loss options given the (possibly frequency-derived) class weights.
    pub fn loss_options(&self, class_counts: Option<[u64; 3]>) -> CrossEntropyOptions {
        let class_weights = match self.class_weighting {
            ClassWeighting::None => None,
            ClassWeighting::Fixed(w) => Some(w),
            ClassWeighting::InverseFrequency => class_counts.map(inverse_frequency),
        };
        CrossEntropyOptions { class_weights, focal_gamma: self.focal_gamma }
    }
}

/// `w_k = N / (3 n_k)`; classes absent from the split get weight 1.
pub fn inverse_frequency(counts: [u64; 3]) -> [f64; 3] {
    let total: u64 = counts.iter().sum();
    std::array::from_fn(|k| if counts[k] == 0 { 1.0 } else { total as f64 / (3.0 * counts[k] as f64) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DoubleConv(Conv, Conv);

impl DoubleConv {
    fn create(p: &mut ParamStore<f32>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self(Conv::create(p, rng, &format!("{name}.conv1"), cin, cout, 3), Conv::create(p, rng, &format!("{name}.conv2"), cout, cout, 3))
    }

    fn find<T: Float>(p: &ParamStore<T>, name: &str, cin: usize) -> Result<Self> {
        let a = Conv::find(p, &format!("{name}.conv1"), Some(cin))?;
        let b = Conv::find(p, &format!("{name}.conv2"), Some(a.cout))?;
        Ok(Self(a, b))
    }

    fn apply<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let t = self.0.apply(g, p, x)?;
        let t = g.relu(t);
        let t = self.1.apply(g, p, t)?;
        Ok(g.relu(t))
    }

    fn num_params(&self) -> usize {
        self.0.num_params() + self.1.num_params()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unet {
    pub config: UnetConfig,
    encoder: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    /// Deepest level first.
    decoder: Vec<(Conv, DoubleConv)>,
    head: Conv,
}

impl Unet {
    pub fn build(config: UnetConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = config.depth;
        let mut encoder = Vec::new();
        for l in 0..d {
            let cin = if l == 0 { config.in_channels } else { config.channels(l - 1) };
            encoder.push(DoubleConv::create(&mut p, &mut rng, &format!("enc.{l}"), cin, config.channels(l)));
        }
        let bottleneck = DoubleConv::create(&mut p, &mut rng, "bottleneck", config.channels(d - 1), config.channels(d));
        let mut decoder = Vec::new();
        for l in (0..d).rev() {
            let c = config.channels(l);
            let up = Conv::create(&mut p, &mut rng, &format!("dec.{l}.up"), config.channels(l + 1), c, 3);
            decoder.push((up, DoubleConv::create(&mut p, &mut rng, &format!("dec.{l}"), 2 * c, c)));
        }
        let head = Conv::create(&mut p, &mut rng, "head", config.channels(0), N_CLASSES, 1);
        Ok((Self { config, encoder, bottleneck, decoder, head }, p))
    }

    /// Architecture from a checkpoint; loss settings come from `template`.
    pub fn from_params<T: Float>(p: &ParamStore<T>, template: UnetConfig) -> Result<Self> {
        let first = Conv::find(p, "enc.0.conv1", None)?;
        let (in_channels, base) = (first.cin, first.cout);
        let mut depth = 0;
        while p.find(&format!("enc.{depth}.conv1.weight")).is_some() {
            depth += 1;
        }
        let config = UnetConfig { depth, base_channels: base, in_channels, ..template };
        config.validate()?;
        let mut encoder = Vec::new();
        for l in 0..depth {
            let cin = if l == 0 { in_channels } else { config.channels(l - 1) };
            let blk = DoubleConv::find(p, &format!("enc.{l}"), cin)?;
            if blk.1.cout != config.channels(l) {
                return Err(ModelError::Checkpoint(format!("enc.{l} width {}", blk.1.cout)));
            }
            encoder.push(blk);
        }
        let bottleneck = DoubleConv::find(p, "bottleneck", config.channels(depth - 1))?;
        let mut decoder = Vec::new();
        for l in (0..depth).rev() {
            let up = Conv::find(p, &format!("dec.{l}.up"), Some(config.channels(l + 1)))?;
            decoder.push((up, DoubleConv::find(p, &format!("dec.{l}"), 2 * config.channels(l))?));
        }
        let head = Conv::find(p, "head", Some(base))?;
        if head.cout != N_CLASSES {
            return Err(ModelError::Checkpoint(format!("head produces {} classes", head.cout)));
        }
        let model = Self { config, encoder, bottleneck, decoder, head };
        if model.num_params() != p.num_scalars() {
            return Err(ModelError::Checkpoint("parameter set has unexpected extra entries".into()));
        }
        Ok(model)
    }

    /// `[B, C, H, W]` to `[B, 3, H, W]` logits; H and W must be multiples of `2^depth`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let m = self.config.divisor();
        if shape.len() != 4 || shape[1] != self.config.in_channels || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(ModelError::Shape(format!(
                "UNet input {shape:?} needs {} channels and sides divisible by {m}",
                self.config.in_channels
            )));
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for blk in &self.encoder {
            let s = blk.apply(g, p, h)?;
            skips.push(s);
            h = g.max_pool2d(s)?;
        }
        h = self.bottleneck.apply(g, p, h)?;
        for (up, blk) in &self.decoder {
            let u = g.upsample_nearest(h, 2)?;
            let u = up.apply(g, p, u)?;
            let cat = g.concat_channels(u, skips.pop().expect("one skip per level"))?;
            h = blk.apply(g, p, cat)?;
        }
        self.head.apply(g, p, h)
    }

    pub fn num_params(&self) -> usize {
        self.encoder.iter().map(DoubleConv::num_params).sum::<usize>()
            + self.bottleneck.num_params()
            + self.decoder.iter().map(|(u, b)| u.num_params() + b.num_params()).sum::<usize>()
            + self.head.num_params()
    }
}
