//! Loading of the conceptual model document that every stage sends as context.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default cap on the size of a document file, 2 MiB.
pub const DEFAULT_MAX_BYTES: u64 = 2 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("document not found: {0}")]
    NotFound(PathBuf),
    #[error("document {path} is {size} bytes, exceeding the {limit} byte limit")]
    TooLarge {
        path: PathBuf,
        size: u64,
        limit: u64,
    },
    #[error("document {0} is not valid UTF-8")]
    InvalidEncoding(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// A normalized text document.
///
/// `text` never contains carriage returns and never starts with a byte order
/// mark. `content_hash` depends on `text` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub source_path: PathBuf,
    pub text: String,
    pub byte_length: usize,
    pub content_hash: String,
}

impl Document {
    /// Builds a document from in-memory text, applying the same
    /// normalization as [`load_document`].
    pub fn from_text(source_path: impl Into<PathBuf>, text: &str) -> Self {
        let text = normalize_text(text);
        let content_hash = content_hash(&text);
        Document {
            source_path: source_path.into(),
            byte_length: text.len(),
            text,
            content_hash,
        }
    }

    /// True when the text has nothing but whitespace.
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// Reads `path` as UTF-8, strips a leading BOM and normalizes line endings to LF.
pub fn load_document(path: &Path, max_bytes: u64) -> Result<Document, DocumentError> {
    let meta = fs::metadata(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DocumentError::NotFound(path.to_path_buf()),
        _ => DocumentError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    if !meta.is_file() {
        return Err(DocumentError::NotFound(path.to_path_buf()));
    }
    if meta.len() > max_bytes {
        return Err(DocumentError::TooLarge {
            path: path.to_path_buf(),
            size: meta.len(),
            limit: max_bytes,
        });
    }
    let bytes = fs::read(path).map_err(|e| DocumentError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let raw =
        String::from_utf8(bytes).map_err(|_| DocumentError::InvalidEncoding(path.to_path_buf()))?;
    Ok(Document::from_text(path, &raw))
}

fn normalize_text(raw: &str) -> String {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    raw.replace("\r\n", "\n").replace('\r', "\n")
}

/// `sha256:<hex>` digest of the normalized text.
pub fn content_hash(text: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(text.as_bytes())))
}
