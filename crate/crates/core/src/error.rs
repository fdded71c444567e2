use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("table is all zeros")]
    AllZero,
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("threshold must be nonnegative, got {0}")]
    BadThreshold(f64),
    #[error("step size {step} exceeds stability bound {bound}")]
    StepTooLarge { step: f64, bound: f64 },
    #[error("quantized symbol out of 32-bit range at channel {channel}")]
    Overflow { channel: usize },
    #[error("quantization step must be positive, got {0}")]
    BadStep(f64),
    #[error("entropy decode failed: {0}")]
    Decode(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error("not an SHTC bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u16),
    #[error("checksum mismatch in {0} block")]
    Checksum(&'static str),
    #[error("truncated bitstream")]
    Truncated,
    #[error("inconsistent bundle: {0}")]
    Inconsistent(String),
    #[error("rate-distortion curves do not overlap in distortion")]
    NoOverlap,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
