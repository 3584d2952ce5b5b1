//! Plain-text `key = value` run configuration.
//!
//! One setting per line. Leading and trailing whitespace is ignored, lines
//! that are empty or start with `#` are skipped, and the first `=` separates
//! key from value. Unknown and repeated keys are rejected. Command-line
//! `--set key=value` overrides are applied after the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use flnet_autodiff::TrainSchedule;
use flnet_core::change::ThresholdConfig;
use flnet_core::metrics::SsimParams;
use flnet_core::raster::Resampling;
use flnet_models::{ClassWeighting, EdsrConfig, TileOptions, UnetConfig};
use sha2::{Digest, Sha256};

/// Malformed configuration or arguments.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("scale", "3"),
    ("split.val_fraction", "0.2"),
    ("preprocess.max_shift", "8"),
    ("preprocess.resampling", "bilinear"),
    ("sr.n_resblocks", "16"),
    ("sr.n_feats", "64"),
    ("sr.residual_scale", "1.0"),
    ("sr.hr_chip", "192"),
    ("sr.stride", "192"),
    ("sr.max_nodata", "0.2"),
    ("sr.epochs", "100"),
    ("sr.batch_size", "8"),
    ("sr.learning_rate", "1e-4"),
    ("sr.early_stop_patience", "10"),
    ("sr.plateau_patience", "5"),
    ("sr.plateau_factor", "0.5"),
    ("sr.min_delta", "1e-5"),
    ("sr.max_steps", "none"),
    ("sr.tile", "64"),
    ("sr.overlap", "8"),
    ("seg.depth", "4"),
    ("seg.base_channels", "32"),
    ("seg.class_weighting", "none"),
    ("seg.focal_gamma", "none"),
    ("seg.chip", "64"),
    ("seg.stride", "64"),
    ("seg.max_nodata", "0.2"),
    ("seg.epochs", "100"),
    ("seg.batch_size", "8"),
    ("seg.learning_rate", "1e-3"),
    ("seg.early_stop_patience", "10"),
    ("seg.plateau_patience", "5"),
    ("seg.plateau_factor", "0.5"),
    ("seg.min_delta", "1e-5"),
    ("seg.max_steps", "none"),
    ("seg.tile", "256"),
    ("seg.overlap", "32"),
    ("label.t_partial", "0.15"),
    ("label.t_full", "0.40"),
    ("label.window", "3"),
    ("label.min_object_size", "10"),
    ("evaluate.ssim", "windowed"),
];

/// Effective settings: defaults, then file, then overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    DEFAULTS.iter().any(|(k, _)| *k == key) || key.strip_prefix("scene.").is_some_and(|k| {
        flnet_core::synth::SceneSpec::default().to_pairs().iter().any(|(name, _)| *name == k)
    })
}

impl Default for Config {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), ()).is_some() {
                return Err(bad(format!("line {}: key `{k}` repeated", n + 1)));
            }
            out.push((k, v));
        }
        Ok(out)
    }

    pub fn load(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            crate::fsutil::require_file(path)?;
            let text = std::fs::read_to_string(path)?;
            for (k, v) in Self::parse_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| bad(format!("override `{o}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known(key) {
            return Err(bad(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn raw(&self, key: &str) -> &str {
        self.get(key).unwrap_or_else(|| panic!("no default for `{key}`"))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse().map_err(|_| bad(format!("`{key}`: cannot parse `{v}`")))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            "none" | "" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    /// Every sub-configuration must build.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        self.edsr()?.validate().map_err(|e| bad(e.to_string()))?;
        self.unet()?.validate().map_err(|e| bad(e.to_string()))?;
        self.schedule("sr")?.validate().map_err(|e| bad(e.to_string()))?;
        self.schedule("seg")?.validate().map_err(|e| bad(e.to_string()))?;
        self.thresholds()?;
        self.tiles("sr")?;
        self.tiles("seg")?;
        self.resampling()?;
        self.ssim()?;
        let f: f64 = self.parse("split.val_fraction")?;
        if !(f > 0.0 && f < 1.0) {
            return Err(bad("split.val_fraction must lie in (0, 1)"));
        }
        for key in ["sr.max_nodata", "seg.max_nodata"] {
            let v: f64 = self.parse(key)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{key} must lie in [0, 1]")));
            }
        }
        for key in ["sr.hr_chip", "sr.stride", "seg.chip", "seg.stride", "label.window"] {
            if self.parse::<usize>(key)? == 0 {
                return Err(bad(format!("{key} must be positive")));
            }
        }
        self.parse::<usize>("preprocess.max_shift")?;
        self.parse::<usize>("label.min_object_size")?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.parse("seed")
    }

    pub fn edsr(&self) -> Result<EdsrConfig, ConfigError> {
        Ok(EdsrConfig {
            n_resblocks: self.parse("sr.n_resblocks")?,
            n_feats: self.parse("sr.n_feats")?,
            scale: self.parse("scale")?,
            residual_scale: self.parse("sr.residual_scale")?,
        })
    }

    pub fn unet(&self) -> Result<UnetConfig, ConfigError> {
        let class_weighting = match self.raw("seg.class_weighting") {
            "none" => ClassWeighting::None,
            "inverse-frequency" => ClassWeighting::InverseFrequency,
            list => {
                let w: Vec<f64> = list.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| {
                    bad(format!("seg.class_weighting: expected none, inverse-frequency or three comma-separated weights, got `{list}`"))
                })?;
                let w: [f64; 3] = w.try_into().map_err(|_| bad("seg.class_weighting needs exactly three weights"))?;
                ClassWeighting::Fixed(w)
            }
        };
        Ok(UnetConfig {
            depth: self.parse("seg.depth")?,
            base_channels: self.parse("seg.base_channels")?,
            in_channels: 1,
            class_weighting,
            focal_gamma: self.optional("seg.focal_gamma")?,
        })
    }

    /// Training schedule for prefix `sr` or `seg`.
    pub fn schedule(&self, prefix: &str) -> Result<TrainSchedule, ConfigError> {
        let k = |s: &str| format!("{prefix}.{s}");
        Ok(TrainSchedule {
            max_epochs: self.parse(&k("epochs"))?,
            batch_size: self.parse(&k("batch_size"))?,
            learning_rate: self.parse(&k("learning_rate"))?,
            early_stop_patience: self.parse(&k("early_stop_patience"))?,
            min_delta: self.parse(&k("min_delta"))?,
            plateau_factor: self.parse(&k("plateau_factor"))?,
            plateau_patience: self.parse(&k("plateau_patience"))?,
            seed: self.seed()?,
            max_steps: self.optional(&k("max_steps"))?,
        })
    }

    pub fn tiles(&self, prefix: &str) -> Result<TileOptions, ConfigError> {
        let t = TileOptions { tile: self.parse(&format!("{prefix}.tile"))?, overlap: self.parse(&format!("{prefix}.overlap"))? };
        t.validate().map_err(|e| bad(e.to_string()))?;
        Ok(t)
    }

    pub fn thresholds(&self) -> Result<ThresholdConfig, ConfigError> {
        ThresholdConfig::new(self.parse("label.t_partial")?, self.parse("label.t_full")?).map_err(|e| bad(e.to_string()))
    }

    pub fn resampling(&self) -> Result<Resampling, ConfigError> {
        self.raw("preprocess.resampling").parse().map_err(|_| bad("preprocess.resampling must be nearest, bilinear or bicubic"))
    }

    pub fn ssim(&self) -> Result<SsimParams, ConfigError> {
        match self.raw("evaluate.ssim") {
            "windowed" => Ok(SsimParams::default()),
            "global" => Ok(SsimParams::global()),
            other => Err(bad(format!("evaluate.ssim must be windowed or global, got `{other}`"))),
        }
    }

    /// Canonical `key=value` lines of every effective setting, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of [`Config::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        assert_eq!(Config::default().edsr().unwrap(), EdsrConfig::default());
        assert_eq!(Config::default().unet().unwrap(), UnetConfig::default());
    }

    #[test]
    fn parses_comments_and_rejects_repeats() {
        let kv = Config::parse_text("# c\n\n seed = 4 \nsr.epochs=2\n").unwrap();
        assert_eq!(kv, vec![("seed".into(), "4".into()), ("sr.epochs".into(), "2".into())]);
        assert!(Config::parse_text("seed=1\nseed=2\n").is_err());
        assert!(Config::parse_text("seed\n").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let mut a = Config::default();
        let h = a.hash();
        assert_eq!(h.len(), 64);
        a.set("seed", "9").unwrap();
        assert_ne!(a.hash(), h);
        assert!(a.set("nope", "1").is_err());
        a.set("scene.parcel_count", "5").unwrap();
    }

    #[test]
    fn class_weights_forms() {
        let mut c = Config::default();
        c.set("seg.class_weighting", "1, 2,3").unwrap();
        assert_eq!(c.unet().unwrap().class_weighting, ClassWeighting::Fixed([1.0, 2.0, 3.0]));
        c.set("seg.class_weighting", "1,2").unwrap();
        assert!(c.validate().is_err());
    }
}
