//! Precomputed window embeddings on disk.
//!
//! Binary variant (`<doc_id>.emb`): a one-line JSON header
//! `{doc_id, d, windows: [{start, end, global_index, marker_positions}]}`,
//! a newline, then row-major little-endian `f32` values, one
//! `(end - start) x d` block per window in header order.
//!
//! JSON variant (`<doc_id>.emb.json`): the same header where every window
//! also carries `embeddings`, a list of `end - start` rows of `d` numbers.

use std::collections::BTreeMap;
use std::fs;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use ergo_core::corpus::Document;
use ergo_core::encoding::{aggregate_markers, EmbeddingSource, EncodingError, EventEmbeddings, WindowEmbeddings};
use ergo_core::tensor::Matrix;
use ergo_core::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum InterchangeError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: payload has {found} bytes, header promises {expected}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: embedding dimension {found}, expected {expected}")]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("no embedding file for document {0}")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Binary,
    Json,
}

impl Variant {
    pub fn extension(self) -> &'static str {
        match self {
            Variant::Binary => "emb",
            Variant::Json => "emb.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowHeader {
    start: usize,
    end: usize,
    global_index: usize,
    marker_positions: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<Vec<Vec<f32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    doc_id: String,
    d: usize,
    windows: Vec<WindowHeader>,
}

/// Contents of one interchange file.
#[derive(Debug, Clone, PartialEq)]
pub struct DocWindows {
    pub doc_id: String,
    pub d: usize,
    pub windows: Vec<WindowEmbeddings<f32>>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> InterchangeError {
    InterchangeError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn check_span(path: &Path, w: &WindowHeader, k: usize) -> Result<usize, InterchangeError> {
    if w.end < w.start {
        return Err(malformed(path, format!("window {k} ends before it starts")));
    }
    Ok(w.end - w.start)
}

pub fn read_windows(path: &Path) -> Result<DocWindows, InterchangeError> {
    let bytes = fs::read(path).map_err(|source| InterchangeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if let Ok(header) = serde_json::from_slice::<Header>(&bytes) {
        if header.windows.iter().all(|w| w.embeddings.is_some()) {
            return from_json(path, header);
        }
    }
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed(path, "missing header line"))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| malformed(path, format!("header: {e}")))?;
    let payload = &bytes[split + 1..];
    let mut expected = 0;
    for (k, w) in header.windows.iter().enumerate() {
        expected += check_span(path, w, k)? * header.d * 4;
    }
    if payload.len() < expected {
        return Err(InterchangeError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(malformed(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut windows = Vec::with_capacity(header.windows.len());
    for w in header.windows {
        let rows = w.end - w.start;
        let data: Vec<f32> = floats.by_ref().take(rows * header.d).collect();
        windows.push(WindowEmbeddings {
            start: w.start,
            end: w.end,
            global_index: w.global_index,
            markers: w.marker_positions,
            tokens: Matrix::from_vec(rows, header.d, data).expect("sized from header"),
        });
    }
    Ok(DocWindows {
        doc_id: header.doc_id,
        d: header.d,
        windows,
    })
}

fn from_json(path: &Path, header: Header) -> Result<DocWindows, InterchangeError> {
    let d = header.d;
    let mut windows = Vec::with_capacity(header.windows.len());
    for (k, w) in header.windows.into_iter().enumerate() {
        let rows = check_span(path, &w, k)?;
        let emb = w.embeddings.unwrap_or_default();
        if emb.len() != rows {
            return Err(malformed(
                path,
                format!("window {k} has {} rows, span covers {rows}", emb.len()),
            ));
        }
        if let Some(bad) = emb.iter().find(|r| r.len() != d) {
            return Err(InterchangeError::DimensionMismatch {
                path: path.to_path_buf(),
                expected: d,
                found: bad.len(),
            });
        }
        windows.push(WindowEmbeddings {
            start: w.start,
            end: w.end,
            global_index: w.global_index,
            markers: w.marker_positions,
            tokens: Matrix::from_vec(rows, d, emb.concat()).expect("rows checked"),
        });
    }
    Ok(DocWindows {
        doc_id: header.doc_id,
        d,
        windows,
    })
}

/// Writes `<dir>/<doc_id>.<ext>` and returns its path.
pub fn write_windows(dir: &Path, doc: &DocWindows, variant: Variant) -> Result<PathBuf, InterchangeError> {
    let path = dir.join(format!("{}.{}", doc.doc_id, variant.extension()));
    for w in &doc.windows {
        if w.tokens.cols() != doc.d {
            return Err(InterchangeError::DimensionMismatch {
                path,
                expected: doc.d,
                found: w.tokens.cols(),
            });
        }
        if w.tokens.rows() != w.end.saturating_sub(w.start) {
            return Err(malformed(&path, "token rows differ from window span"));
        }
    }
    let header = |with_rows: bool| Header {
        doc_id: doc.doc_id.clone(),
        d: doc.d,
        windows: doc
            .windows
            .iter()
            .map(|w| WindowHeader {
                start: w.start,
                end: w.end,
                global_index: w.global_index,
                marker_positions: w.markers.clone(),
                embeddings: with_rows.then(|| (0..w.tokens.rows()).map(|r| w.tokens.row(r).to_vec()).collect()),
            })
            .collect(),
    };
    let bytes = match variant {
        Variant::Binary => {
            let mut out = serde_json::to_vec(&header(false)).expect("header serializes");
            out.push(b'\n');
            for w in &doc.windows {
                for x in w.tokens.as_slice() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            out
        }
        Variant::Json => serde_json::to_vec(&header(true)).expect("header serializes"),
    };
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, bytes))
        .map_err(|source| InterchangeError::Io {
            path: path.clone(),
            source,
        })?;
    Ok(path)
}

/// Embedding source backed by a directory of interchange files.
#[derive(Debug, Clone)]
pub struct PrecomputedSource<T> {
    pub dir: PathBuf,
    pub dim: usize,
    /// Longest window accepted.
    pub window_size: usize,
    _real: PhantomData<fn() -> T>,
}

impl<T: Real> PrecomputedSource<T> {
    pub fn new(dir: PathBuf, dim: usize, window_size: usize) -> Self {
        Self {
            dir,
            dim,
            window_size,
            _real: PhantomData,
        }
    }

    pub fn load(&self, doc_id: &str) -> Result<DocWindows, InterchangeError> {
        let path = [Variant::Binary, Variant::Json]
            .iter()
            .map(|v| self.dir.join(format!("{doc_id}.{}", v.extension())))
            .find(|p| p.is_file())
            .ok_or_else(|| InterchangeError::UnknownDocument(doc_id.to_string()))?;
        let doc = read_windows(&path)?;
        if doc.doc_id != doc_id {
            return Err(malformed(&path, format!("header names document {}", doc.doc_id)));
        }
        if doc.d != self.dim {
            return Err(InterchangeError::DimensionMismatch {
                path,
                expected: self.dim,
                found: doc.d,
            });
        }
        if let Some(w) = doc.windows.iter().find(|w| w.end - w.start > self.window_size) {
            return Err(malformed(
                &path,
                format!(
                    "window [{}, {}) exceeds window size {}",
                    w.start, w.end, self.window_size
                ),
            ));
        }
        Ok(doc)
    }
}

impl From<InterchangeError> for EncodingError {
    fn from(e: InterchangeError) -> Self {
        match e {
            InterchangeError::DimensionMismatch { expected, found, .. } => {
                EncodingError::DimensionMismatch { expected, found }
            }
            InterchangeError::UnknownDocument(id) => EncodingError::UnknownDocument(id),
            other => EncodingError::Source(other.to_string()),
        }
    }
}

impl<T: Real> EmbeddingSource<T> for PrecomputedSource<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc: &Document) -> Result<EventEmbeddings<T>, EncodingError> {
        let loaded = self.load(&doc.doc_id)?;
        let windows: Vec<WindowEmbeddings<T>> = loaded
            .windows
            .into_iter()
            .map(|w| WindowEmbeddings {
                start: w.start,
                end: w.end,
                global_index: w.global_index,
                markers: w.markers,
                tokens: w.tokens.cast(),
            })
            .collect();
        aggregate_markers(doc.events.iter().map(|e| e.event_id.as_str()), &windows)
    }
}
