//! Documents, event pairs, fold planning and corpus statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("document {doc_id}: {reason}")]
    Invalid { doc_id: String, reason: String },
    #[error("document {doc_id}: link references unknown event {event_id}")]
    DanglingEvent { doc_id: String, event_id: String },
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("{scheme} needs at least {needed} {unit}, corpus has {found}")]
    TooSmall {
        scheme: &'static str,
        needed: usize,
        found: usize,
        unit: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub event_id: String,
    pub sentence_index: usize,
    /// `[start, end)` token offsets.
    pub token_span: [usize; 2],
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalLink {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub topic_id: String,
    pub tokens: Vec<String>,
    /// Token offset at which each sentence starts.
    pub sentence_boundaries: Vec<usize>,
    pub events: Vec<EventMention>,
    #[serde(default)]
    pub links: Vec<CausalLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Intra,
    Inter,
}

/// Unordered pair of events; `event_a` precedes `event_b` in mention order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPair {
    pub doc_id: String,
    pub event_a: String,
    pub event_b: String,
    pub label: Label,
    pub scope: Scope,
}

impl EventPair {
    pub fn shares_event(&self, other: &EventPair) -> bool {
        self.event_a == other.event_a
            || self.event_a == other.event_b
            || self.event_b == other.event_a
            || self.event_b == other.event_b
    }
}

impl Document {
    pub fn sentence_count(&self) -> usize {
        self.sentence_boundaries.len()
    }

    /// Token range `[start, end)` of sentence `index`.
    pub fn sentence_range(&self, index: usize) -> Option<(usize, usize)> {
        let start = *self.sentence_boundaries.get(index)?;
        let end = self
            .sentence_boundaries
            .get(index + 1)
            .copied()
            .unwrap_or(self.tokens.len());
        Some((start, end))
    }

    pub fn event(&self, event_id: &str) -> Option<&EventMention> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    /// Events sorted by where they start in the text.
    pub fn events_in_mention_order(&self) -> Vec<&EventMention> {
        let mut events: Vec<&EventMention> = self.events.iter().collect();
        events.sort_by_key(|e| e.token_span[0]);
        events
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            doc_id: self.doc_id.clone(),
            reason,
        };
        let len = self.tokens.len();

        if len > 0 && self.sentence_boundaries.first() != Some(&0) {
            return Err(invalid("sentence_boundaries must start at 0".to_string()));
        }
        if self.sentence_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sentence_boundaries must be strictly increasing".to_string()));
        }
        if let Some(&last) = self.sentence_boundaries.last() {
            if last >= len {
                return Err(invalid(format!("sentence boundary {last} is past the last token")));
            }
        }

        let mut ids = BTreeSet::new();
        for e in &self.events {
            if !ids.insert(e.event_id.as_str()) {
                return Err(invalid(format!("duplicate event id {}", e.event_id)));
            }
            let [start, end] = e.token_span;
            if start >= end || end > len {
                return Err(invalid(format!(
                    "event {} has span [{start}, {end}) outside [0, {len})",
                    e.event_id
                )));
            }
            let Some((s_start, s_end)) = self.sentence_range(e.sentence_index) else {
                return Err(invalid(format!(
                    "event {} has sentence_index {} but there are {} sentences",
                    e.event_id,
                    e.sentence_index,
                    self.sentence_count()
                )));
            };
            if start < s_start || end > s_end {
                return Err(invalid(format!(
                    "event {} span [{start}, {end}) leaves sentence {}",
                    e.event_id, e.sentence_index
                )));
            }
        }

        let ordered = self.events_in_mention_order();
        for w in ordered.windows(2) {
            if w[0].token_span[1] > w[1].token_span[0] {
                return Err(invalid(format!(
                    "events {} and {} overlap",
                    w[0].event_id, w[1].event_id
                )));
            }
        }

        for link in &self.links {
            for id in [&link.source, &link.target] {
                if !ids.contains(id.as_str()) {
                    return Err(CorpusError::DanglingEvent {
                        doc_id: self.doc_id.clone(),
                        event_id: id.clone(),
                    });
                }
            }
            if link.source == link.target {
                return Err(invalid(format!("self link on event {}", link.source)));
            }
        }
        Ok(())
    }
}

/// All `C(m, 2)` event pairs of a document, ordered lexicographically by
/// mention order. Link direction is ignored when labelling.
pub fn enumerate_pairs(doc: &Document) -> Vec<EventPair> {
    let linked: BTreeSet<(&str, &str)> = doc
        .links
        .iter()
        .flat_map(|l| {
            [
                (l.source.as_str(), l.target.as_str()),
                (l.target.as_str(), l.source.as_str()),
            ]
        })
        .collect();
    let events = doc.events_in_mention_order();
    let m = events.len();
    let mut pairs = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (events[i], events[j]);
            let label = if linked.contains(&(a.event_id.as_str(), b.event_id.as_str())) {
                Label::Positive
            } else {
                Label::Negative
            };
            let scope = if a.sentence_index == b.sentence_index {
                Scope::Intra
            } else {
                Scope::Inter
            };
            pairs.push(EventPair {
                doc_id: doc.doc_id.clone(),
                event_a: a.event_id.clone(),
                event_b: b.event_id.clone(),
                label,
                scope,
            });
        }
    }
    pairs
}

/// Validated, immutable collection of documents sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(mut documents: Vec<Document>) -> Result<Self, CorpusError> {
        for doc in &documents {
            doc.validate()?;
        }
        documents.sort_by(|a, b| natural_cmp(&a.doc_id, &b.doc_id));
        for w in documents.windows(2) {
            if w[0].doc_id == w[1].doc_id {
                return Err(CorpusError::DuplicateDocument(w[0].doc_id.clone()));
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Documents whose ids are in `ids`, in corpus order.
    pub fn select<'a>(&'a self, ids: &[String]) -> Vec<&'a Document> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        self.documents
            .iter()
            .filter(|d| wanted.contains(d.doc_id.as_str()))
            .collect()
    }

    pub fn topics(&self) -> Vec<&str> {
        let mut topics: Vec<&str> = self
            .documents
            .iter()
            .map(|d| d.topic_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        topics.sort_by(|a, b| natural_cmp(a, b));
        topics
    }
}

/// Orders identifiers numerically when both parse as integers, otherwise
/// lexicographically; numeric ids sort first.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Last two topics are development data, the rest are dealt round-robin
    /// into five folds of whole topics.
    #[serde(rename = "esl_5fold_topic")]
    Esl5FoldTopic,
    /// Ten contiguous, near-equal folds of documents; no development set.
    /// Only intra-sentence pairs are scored.
    #[serde(rename = "ctb_10fold_doc")]
    Ctb10FoldDoc,
}

impl FoldScheme {
    pub fn name(self) -> &'static str {
        match self {
            FoldScheme::Esl5FoldTopic => "esl_5fold_topic",
            FoldScheme::Ctb10FoldDoc => "ctb_10fold_doc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "esl_5fold_topic" | "esl" => Some(FoldScheme::Esl5FoldTopic),
            "ctb_10fold_doc" | "ctb" => Some(FoldScheme::Ctb10FoldDoc),
            _ => None,
        }
    }

    /// Whether pairs of `scope` count toward reported metrics.
    pub fn scores(self, scope: Scope) -> bool {
        match self {
            FoldScheme::Esl5FoldTopic => true,
            FoldScheme::Ctb10FoldDoc => scope == Scope::Intra,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub dev: Vec<String>,
    pub folds: Vec<Vec<String>>,
    /// Topic ids behind `dev` and each fold (empty for document folds).
    #[serde(default)]
    pub dev_topics: Vec<String>,
    #[serde(default)]
    pub fold_topics: Vec<Vec<String>>,
}

impl FoldPlan {
    /// Documents of every fold except `held_out`.
    pub fn train_ids(&self, held_out: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

pub fn split_folds(corpus: &Corpus, scheme: FoldScheme) -> Result<FoldPlan, CorpusError> {
    match scheme {
        FoldScheme::Esl5FoldTopic => split_by_topic(corpus),
        FoldScheme::Ctb10FoldDoc => split_by_document(corpus),
    }
}

fn split_by_topic(corpus: &Corpus) -> Result<FoldPlan, CorpusError> {
    const FOLDS: usize = 5;
    const DEV_TOPICS: usize = 2;
    let topics = corpus.topics();
    if topics.len() < FOLDS + DEV_TOPICS {
        return Err(CorpusError::TooSmall {
            scheme: FoldScheme::Esl5FoldTopic.name(),
            needed: FOLDS + DEV_TOPICS,
            found: topics.len(),
            unit: "topics",
        });
    }
    let (rest, dev_topics) = topics.split_at(topics.len() - DEV_TOPICS);
    let mut fold_topics: Vec<Vec<String>> = (0..FOLDS).map(|_| Vec::new()).collect();
    for (i, t) in rest.iter().enumerate() {
        fold_topics[i % FOLDS].push(t.to_string());
    }

    let mut by_topic: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for d in corpus.documents() {
        by_topic.entry(d.topic_id.as_str()).or_default().push(d.doc_id.clone());
    }
    let docs_of = |topics: &[String]| -> Vec<String> {
        topics
            .iter()
            .flat_map(|t| by_topic.get(t.as_str()).cloned().unwrap_or_default())
            .collect()
    };
    let dev_topics: Vec<String> = dev_topics.iter().map(|t| t.to_string()).collect();
    Ok(FoldPlan {
        scheme: FoldScheme::Esl5FoldTopic,
        dev: docs_of(&dev_topics),
        folds: fold_topics.iter().map(|t| docs_of(t)).collect(),
        dev_topics,
        fold_topics,
    })
}

fn split_by_document(corpus: &Corpus) -> Result<FoldPlan, CorpusError> {
    const FOLDS: usize = 10;
    let n = corpus.len();
    if n < FOLDS {
        return Err(CorpusError::TooSmall {
            scheme: FoldScheme::Ctb10FoldDoc.name(),
            needed: FOLDS,
            found: n,
            unit: "documents",
        });
    }
    let ids: Vec<String> = corpus.documents().iter().map(|d| d.doc_id.clone()).collect();
    let (base, extra) = (n / FOLDS, n % FOLDS);
    let mut folds = Vec::with_capacity(FOLDS);
    let mut start = 0;
    for f in 0..FOLDS {
        let size = base + usize::from(f < extra);
        folds.push(ids[start..start + size].to_vec());
        start += size;
    }
    Ok(FoldPlan {
        scheme: FoldScheme::Ctb10FoldDoc,
        dev: Vec::new(),
        folds,
        dev_topics: Vec::new(),
        fold_topics: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeCounts {
    pub intra: usize,
    pub inter: usize,
}

impl ScopeCounts {
    pub fn total(&self) -> usize {
        self.intra + self.inter
    }

    fn bump(&mut self, scope: Scope) {
        match scope {
            Scope::Intra => self.intra += 1,
            Scope::Inter => self.inter += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub topics: usize,
    pub documents: usize,
    pub events: usize,
    pub links: usize,
    pub pairs: ScopeCounts,
    pub positives: ScopeCounts,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        topics: corpus.topics().len(),
        documents: corpus.len(),
        ..CorpusStats::default()
    };
    for doc in corpus.documents() {
        stats.events += doc.events.len();
        stats.links += doc.links.len();
        for pair in enumerate_pairs(doc) {
            stats.pairs.bump(pair.scope);
            if pair.label.is_positive() {
                stats.positives.bump(pair.scope);
            }
        }
    }
    stats
}
