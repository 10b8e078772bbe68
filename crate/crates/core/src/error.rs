use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("bit-width {0} outside the supported range [1, 32]")]
    Bits(u32),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// An I/O failure on `path`.
    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| {
            Error::Load(LoadError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    }
}

/// Failures while reading MNIST IDX or CIFAR-10 binary files.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    Magic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, needed {needed} bytes but found {found}")]
    Truncated {
        path: String,
        needed: usize,
        found: usize,
    },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: length {len} is not a multiple of the {record}-byte record size")]
    RecordLength {
        path: String,
        len: usize,
        record: usize,
    },

    #[error("{path}: label byte {label} at record {index} exceeds 9")]
    Label {
        path: String,
        index: usize,
        label: u8,
    },

    #[error("{path}: unexpected image dimensions {rows}x{cols}")]
    Dimensions {
        path: String,
        rows: usize,
        cols: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Failures while decoding a packed model.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"BTQ1\"")]
    Magic([u8; 4]),

    #[error("unsupported format version {0}")]
    Version(u32),

    #[error("truncated model: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("layer {layer}: bin index {index} exceeds 2^{bits}")]
    IndexOutOfRange { layer: usize, index: u64, bits: u8 },

    #[error("layer {layer}: bit-width {bits} outside [1, 32]")]
    Bits { layer: usize, bits: u8 },

    #[error("layer {layer}: stores {found} parameters, architecture expects {expected}")]
    ParamCount {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("{0} trailing bytes after the last layer")]
    Trailing(usize),

    #[error("architecture header: {0}")]
    Architecture(String),
}
