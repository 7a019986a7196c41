use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: rasters are not aligned")]
    Misaligned { op: &'static str },
    #[error("{op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },
    #[error("{op}: label {label} out of range (n = {n})")]
    LabelOutOfRange { op: &'static str, label: u32, n: usize },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::InvalidInput {
        op,
        detail: detail.into(),
    })
}
