//! Single-band EDSR: residual conv body, global skip, pixel-shuffle upsampler.

use flnet_autodiff::{Float, Graph, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};
use crate::layers::Conv;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdsrConfig {
    pub n_resblocks: usize,
    pub n_feats: usize,
    pub scale: usize,
    pub residual_scale: f64,
}

impl Default for EdsrConfig {
    fn default() -> Self {
        Self { n_resblocks: 16, n_feats: 64, scale: 3, residual_scale: 1.0 }
    }
}

impl EdsrConfig {
    pub const KERNEL: usize = 3;
    /// Fixed NDVI offset removed before the head and restored after the tail,
    /// so zero padding looks like typical vegetation rather than bare soil.
    pub const MEAN_SHIFT: f64 = 0.5;

    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(ModelError::Config(format!("scale must be >= 2, got {}", self.scale)));
        }
        if self.n_resblocks == 0 || self.n_feats == 0 {
            return Err(ModelError::Config("n_resblocks and n_feats must be >= 1".into()));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale.is_finite()) {
            return Err(ModelError::Config(format!("residual_scale {} must be positive", self.residual_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edsr {
    pub config: EdsrConfig,
    head: Conv,
    blocks: Vec<(Conv, Conv)>,
    body_end: Conv,
    upsample: Conv,
    tail: Conv,
}

impl Edsr {
    /// Fresh model with seeded weights.
    pub fn build(config: EdsrConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (f, k, r) = (config.n_feats, EdsrConfig::KERNEL, config.scale);
        let head = Conv::create(&mut p, &mut rng, "head", 1, f, k);
        let blocks = (0..config.n_resblocks)
            .map(|i| {
                (
                    Conv::create(&mut p, &mut rng, &format!("body.{i}.conv1"), f, f, k),
                    Conv::create(&mut p, &mut rng, &format!("body.{i}.conv2"), f, f, k),
                )
            })
            .collect();
        let body_end = Conv::create(&mut p, &mut rng, "body_end", f, f, k);
        let upsample = Conv::create(&mut p, &mut rng, "upsample", f, f * r * r, k);
        let tail = Conv::create(&mut p, &mut rng, "tail", f, 1, k);
        Ok((Self { config, head, blocks, body_end, upsample, tail }, p))
    }

    /// Recovers the architecture from parameter names and shapes.
    pub fn from_params<T: Float>(store: &ParamStore<T>, residual_scale: f64) -> Result<Self> {
        let head = Conv::find(store, "head", Some(1))?;
        let f = head.cout;
        let mut blocks = Vec::new();
        while store.find(&format!("body.{}.conv1.weight", blocks.len())).is_some() {
            let i = blocks.len();
            blocks.push((Conv::find(store, &format!("body.{i}.conv1"), Some(f))?, Conv::find(store, &format!("body.{i}.conv2"), Some(f))?));
        }
        let body_end = Conv::find(store, "body_end", Some(f))?;
        let upsample = Conv::find(store, "upsample", Some(f))?;
        let r2 = upsample.cout / f;
        let scale = (r2 as f64).sqrt().round() as usize;
        if scale * scale * f != upsample.cout {
            return Err(ModelError::Checkpoint(format!("upsampler width {} is not {f} x r^2", upsample.cout)));
        }
        let tail = Conv::find(store, "tail", Some(f))?;
        if tail.cout != 1 {
            return Err(ModelError::Checkpoint(format!("tail produces {} channels", tail.cout)));
        }
        let n_params: usize = [head, body_end, upsample, tail].iter().map(Conv::num_params).sum::<usize>()
            + blocks.iter().map(|(a, b)| a.num_params() + b.num_params()).sum::<usize>();
        if n_params != store.num_scalars() {
            return Err(ModelError::Checkpoint(format!("{} unexpected scalars", store.num_scalars().abs_diff(n_params))));
        }
        let config = EdsrConfig { n_resblocks: blocks.len(), n_feats: f, scale, residual_scale };
        config.validate()?;
        Ok(Self { config, head, blocks, body_end, upsample, tail })
    }

    /// `[B, 1, H, W]` to `[B, 1, rH, rW]`; unclamped.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.value(x).shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(ModelError::Shape(format!("EDSR input must be [B,1,H,W], got {shape:?}")));
        }
        let shape = shape.to_vec();
        let shift = T::from_f64_lossy(EdsrConfig::MEAN_SHIFT);
        let centre = g.input(flnet_autodiff::Tensor::full(&shape, -shift));
        let x = g.add(x, centre)?;
        let h = self.head.apply(g, p, x)?;
        let mut b = h;
        for (c1, c2) in &self.blocks {
            let t = c1.apply(g, p, b)?;
            let t = g.relu(t);
            let mut t = c2.apply(g, p, t)?;
            if self.config.residual_scale != 1.0 {
                t = g.scale(t, T::from_f64_lossy(self.config.residual_scale));
            }
            b = g.add(b, t)?;
        }
        let body = self.body_end.apply(g, p, b)?;
        let s = g.add(body, h)?;
        let u = self.upsample.apply(g, p, s)?;
        let u = g.pixel_shuffle(u, self.config.scale)?;
        let y = self.tail.apply(g, p, u)?;
        let out_shape = g.value(y).shape().to_vec();
        let restore = g.input(flnet_autodiff::Tensor::full(&out_shape, shift));
        Ok(g.add(y, restore)?)
    }

    /// Low-resolution pixels of context that can influence one output pixel:
    /// one per LR conv plus the HR tail conv rounded up.
    pub fn receptive_radius(&self) -> usize {
        2 * self.config.n_resblocks + 4
    }

    pub fn num_params(&self) -> usize {
        [self.head, self.body_end, self.upsample, self.tail].iter().map(Conv::num_params).sum::<usize>()
            + self.blocks.iter().map(|(a, b)| a.num_params() + b.num_params()).sum::<usize>()
    }
}
