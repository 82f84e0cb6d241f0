#![allow(dead_code)]

use std::path::Path;

use ergo_core::corpus::{CausalLink, Corpus, Document, EventMention};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Document of `m` events spread over sentences of up to three, with a
/// causal clique over `k` randomly chosen events.
pub fn toy_document(doc_id: &str, topic: &str, rng: &mut ChaCha8Rng) -> Document {
    let m = rng.random_range(4..=6);
    let per_sentence = rng.random_range(2..=3);
    let mut tokens = Vec::new();
    let mut sentence_boundaries = Vec::new();
    let mut events = Vec::new();
    for i in 0..m {
        if i % per_sentence == 0 {
            sentence_boundaries.push(tokens.len());
        }
        let start = tokens.len();
        tokens.push(format!("v{i}"));
        tokens.push(".".into());
        events.push(EventMention {
            event_id: format!("e{i}"),
            sentence_index: i / per_sentence,
            token_span: [start, start + 1],
            surface: format!("v{i}"),
        });
    }
    let k = rng.random_range(2..=3);
    let mut chosen = sample(rng, m, k).into_vec();
    chosen.sort_unstable();
    let mut links = Vec::new();
    for (x, &a) in chosen.iter().enumerate() {
        for &b in &chosen[x + 1..] {
            links.push(CausalLink {
                source: format!("e{a}"),
                target: format!("e{b}"),
                direction: None,
            });
        }
    }
    Document {
        doc_id: doc_id.into(),
        topic_id: topic.into(),
        tokens,
        sentence_boundaries,
        events,
        links,
    }
}

/// `docs` documents dealt over `topics` topics.
pub fn toy_corpus(docs: usize, topics: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = (0..docs)
        .map(|i| toy_document(&format!("doc{i}"), &format!("t{}", i % topics), &mut rng))
        .collect();
    Corpus::new(documents).expect("toy corpus is valid")
}

pub fn write_toy_corpus(dir: &Path, docs: usize, topics: usize, seed: u64) -> Corpus {
    let corpus = toy_corpus(docs, topics, seed);
    ergo::corpus_io::write_corpus(dir, &corpus).expect("corpus writes");
    corpus
}

/// Document of `m` one-token events over up to three sentences, each event
/// pair linked with probability `link_p`.
pub fn random_document(rng: &mut ChaCha8Rng, id: usize, m: usize, link_p: f64) -> Document {
    let sentences = rng.random_range(1..=3);
    let per = m.max(1);
    let tokens = (0..sentences * per).map(|i| format!("w{i}")).collect();
    let events = (0..m)
        .map(|i| {
            let s = rng.random_range(0..sentences);
            let start = s * per + i;
            EventMention {
                event_id: format!("e{i}"),
                sentence_index: s,
                token_span: [start, start + 1],
                surface: format!("w{start}"),
            }
        })
        .collect();
    let mut links = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if rng.random_bool(link_p) {
                links.push(CausalLink {
                    source: format!("e{a}"),
                    target: format!("e{b}"),
                    direction: None,
                });
            }
        }
    }
    Document {
        doc_id: format!("doc{id}"),
        topic_id: "t0".into(),
        tokens,
        sentence_boundaries: (0..sentences).map(|s| s * per).collect(),
        events,
        links,
    }
}
