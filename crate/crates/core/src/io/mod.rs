//! File formats at the pipeline boundary: 8-bit PNG frames, PFM depth maps,
//! Middlebury `.flo` flow fields, and the plain-text intrinsics, trajectory,
//! config and report files.

pub mod codec;
pub mod flo;
pub mod pfm;
pub mod png;
pub mod text;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl IoError {
    pub(crate) fn format(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_string(), message: message.into() }
    }
}
