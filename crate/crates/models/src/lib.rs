//! The two learned components of FLNet: EDSR super-resolution of NDVI and a
//! UNet that maps change maps to {No, Partial, Full} damage.

pub mod dataset;
pub mod edsr;
pub mod error;
pub mod infer;
pub mod layers;
pub mod tiling;
pub mod train;
pub mod unet;

pub use edsr::{Edsr, EdsrConfig};
pub use error::{ModelError, Result};
pub use infer::{infer_sr, predict_damage, predict_logits, DamageOptions, TileOptions};
pub use unet::{ClassWeighting, Unet, UnetConfig};
