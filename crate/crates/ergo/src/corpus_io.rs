//! One JSON file per document.

use std::fs;
use std::path::{Path, PathBuf};

use ergo_core::corpus::{Corpus, CorpusError, Document};

#[derive(Debug, thiserror::Error)]
pub enum CorpusLoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Invalid(#[from] CorpusError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusLoadError + '_ {
    move |source| CorpusLoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_document(path: &Path) -> Result<Document, CorpusLoadError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| CorpusLoadError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads every `*.json` file in `dir` and validates the result.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusLoadError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let docs = paths.iter().map(|p| read_document(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(docs)?)
}

/// Writes `doc` as `<dir>/<doc_id>.json`.
pub fn write_document(dir: &Path, doc: &Document) -> Result<PathBuf, CorpusLoadError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(format!("{}.json", doc.doc_id));
    let text = serde_json::to_string_pretty(doc).expect("documents serialize");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(path)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<(), CorpusLoadError> {
    for doc in corpus.documents() {
        write_document(dir, doc)?;
    }
    Ok(())
}

/// Conversion of a native annotation release into [`Document`]s.
///
/// Implement this for a corpus distribution (for example an XML release
/// with its own event and link markup), then write the documents with
/// [`write_document`] so the rest of the tool chain can read them.
pub trait CorpusConverter {
    fn name(&self) -> &str;
    fn convert(&self, source: &Path) -> Result<Vec<Document>, CorpusLoadError>;
}

/// Placeholder for the XML releases of the two benchmark corpora. Those
/// releases are licensed separately and are not parsed here.
#[derive(Debug, Clone, Copy, Default)]
pub struct XmlConverter;

impl CorpusConverter for XmlConverter {
    fn name(&self) -> &str {
        "xml"
    }

    fn convert(&self, source: &Path) -> Result<Vec<Document>, CorpusLoadError> {
        Err(CorpusLoadError::Malformed {
            path: source.to_path_buf(),
            reason: "XML conversion is not implemented; convert to the JSON document format first".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ergo_core::corpus::{enumerate_pairs, CausalLink, EventMention};

    fn fixture() -> Document {
        let event = |id: &str, s: usize, at: usize| EventMention {
            event_id: id.into(),
            sentence_index: s,
            token_span: [at, at + 1],
            surface: format!("t{at}"),
        };
        Document {
            doc_id: "7_1".into(),
            topic_id: "7".into(),
            tokens: (0..6).map(|i| format!("t{i}")).collect(),
            sentence_boundaries: vec![0, 3],
            events: vec![event("e1", 0, 0), event("e2", 0, 2), event("e3", 1, 4)],
            links: vec![CausalLink {
                source: "e1".into(),
                target: "e3".into(),
                direction: None,
            }],
        }
    }

    #[test]
    fn empty_directory_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_corpus(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_document(dir.path(), &fixture()).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.documents()[0], fixture());
        assert_eq!(enumerate_pairs(&corpus.documents()[0]).len(), 3);
    }

    #[test]
    fn reads_the_documented_layout() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"doc_id": "a", "topic_id": "1", "tokens": ["x", "y"],
            "sentence_boundaries": [0],
            "events": [{"event_id": "p", "sentence_index": 0, "token_span": [0, 1], "surface": "x"},
                       {"event_id": "q", "sentence_index": 0, "token_span": [1, 2], "surface": "y"}],
            "links": [{"source": "q", "target": "p"}]}"#;
        fs::write(dir.path().join("a.json"), text).unwrap();
        let corpus = load_corpus(dir.path()).unwrap();
        let pairs = enumerate_pairs(&corpus.documents()[0]);
        assert!(pairs[0].label.is_positive());
    }

    #[test]
    fn dangling_link_names_the_event() {
        let dir = tempfile::tempdir().unwrap();
        let mut doc = fixture();
        doc.links[0].target = "e9".into();
        write_document(dir.path(), &doc).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("e9"), "{err}");
    }

    #[test]
    fn malformed_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.json"), "{").unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, CorpusLoadError::Malformed { .. }));
        assert!(err.to_string().contains("bad.json"));
        assert!(XmlConverter.convert(dir.path()).is_err());
    }
}
