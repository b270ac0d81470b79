use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty or zero extent in shape {0:?}")]
    EmptyShape(Vec<usize>),
    #[error("non-finite value produced by op `{0}`")]
    NonFinite(&'static str),
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("cycle detected in computation graph")]
    GraphCycle,
    #[error("kernel (effective {kernel}) larger than padded input ({padded})")]
    KernelTooLarge { kernel: usize, padded: usize },
    #[error("reflect padding {pad} too wide for extent {extent}")]
    BadReflectPad { pad: usize, extent: usize },
    #[error("inconsistent out_width {out_width} for half-spectrum width {half_width}")]
    BadOutWidth { out_width: usize, half_width: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("config parse error: {0}")]
    Config(String),
}
