use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Error, Debug)]
pub enum CoadError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("{0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {detail}")]
    Image { path: String, detail: String },

    #[error("checkpoint has bad magic bytes")]
    CheckpointBadMagic,

    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointBadVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading parameter `{name}`")]
    CheckpointTruncated { name: String },

    #[error("checkpoint entry `{name}` does not match model parameter: {detail}")]
    CheckpointMismatch { name: String, detail: String },

    #[error("check failure: {0}")]
    CheckFailure(String),
}

pub type Result<T> = std::result::Result<T, CoadError>;

impl CoadError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoadError::Io {
            path: path.into(),
            source,
        }
    }
}
