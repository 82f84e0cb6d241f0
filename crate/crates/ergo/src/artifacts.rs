//! Writers for the files commands leave behind.

use std::fs;
use std::path::{Path, PathBuf};

use ergo_core::corpus::{Label, Scope};
use ergo_core::evaluation::PredictionRecord;
use ergo_core::relgraph::RelationalGraph;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error};

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf, Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<PathBuf, Error> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    write_text(path, &(text + "\n"))
}

/// One compact JSON value per line.
pub fn write_jsonl<S: Serialize>(path: &Path, values: &[S]) -> Result<PathBuf, Error> {
    let mut text = String::new();
    for v in values {
        text.push_str(&serde_json::to_string(v).expect("artifact serializes"));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, Error> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

/// `make-graph` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub doc_id: String,
    pub strategy: String,
    pub nodes: Vec<(String, String, Label, Scope)>,
    pub edges: Vec<(usize, usize)>,
}

impl GraphDump {
    pub fn new(graph: &RelationalGraph) -> Self {
        Self {
            doc_id: graph.doc_id().to_string(),
            strategy: graph.strategy().name().to_string(),
            nodes: graph
                .nodes()
                .iter()
                .map(|p| (p.event_a.clone(), p.event_b.clone(), p.label, p.scope))
                .collect(),
            edges: graph.edges(),
        }
    }
}
