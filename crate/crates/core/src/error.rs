use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("bad magic: expected FLRASTR1")]
    BadMagic,
    #[error("truncated {section}: need {needed} bytes, {available} available")]
    Truncated { section: &'static str, needed: usize, available: usize },
    #[error("raster dimensions {width}x{height}x{bands} overflow")]
    DimensionOverflow { width: u64, height: u64, bands: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("source and target grids do not overlap")]
    EmptyOverlap,
    #[error("insufficient valid overlap for registration: {0}")]
    InsufficientOverlap(String),
    #[error("unknown render style `{0}`")]
    UnknownStyle(String),
    #[error("no jointly valid pixels")]
    NoValidPixels,
    #[error("image {width}x{height} smaller than {window}x{window} window")]
    WindowTooLarge { width: usize, height: usize, window: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;
