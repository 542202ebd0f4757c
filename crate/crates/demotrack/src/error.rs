use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] demotrack_core::Error),

    /// A file exists but its contents do not follow the expected layout.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    /// Inputs are readable but disagree with each other (digests, ids).
    #[error("integrity: {0}")]
    Integrity(String),

    #[error("{0}")]
    Invalid(String),

    #[error("worker thread panicked")]
    Panicked,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_at(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_at(path))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_at(path))
}
