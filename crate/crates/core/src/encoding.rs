//! Document and event representations.
//!
//! Long documents are encoded as overlapping windows. Each window yields
//! one embedding for the global token and one for every `<t>` marker it
//! contains; an event's vector is the mean over the windows that saw it,
//! and the document vector is the mean over all windows. The encoder
//! itself runs elsewhere and hands its output over through
//! [`WindowEmbeddings`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::tensor::Matrix;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodingError {
    #[error("invalid window plan: {0}")]
    InvalidPlan(&'static str),
    #[error("event {0} does not appear in any window")]
    EventNotCovered(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("window {window}: {what} index {index} outside window of {len} tokens")]
    PositionOutOfWindow {
        window: usize,
        what: String,
        index: usize,
        len: usize,
    },
    #[error("no windows supplied")]
    NoWindows,
    #[error("no embeddings for document {0}")]
    UnknownDocument(String),
    #[error("{0}")]
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_size: usize,
    pub step: usize,
    /// `[start, end)` token ranges.
    pub windows: Vec<(usize, usize)>,
}

/// Window starts `0, step, 2*step, ...` while the window ends before the
/// document does, plus one final window flush with the end of the document.
pub fn plan_windows(doc_len: usize, window_size: usize, step: usize) -> Result<WindowPlan, EncodingError> {
    if window_size == 0 {
        return Err(EncodingError::InvalidPlan("window_size must be positive"));
    }
    if step == 0 || step > window_size {
        return Err(EncodingError::InvalidPlan("step must lie in 1..=window_size"));
    }
    let mut windows = Vec::new();
    if doc_len <= window_size {
        windows.push((0, doc_len));
    } else {
        let mut start = 0;
        while start + window_size < doc_len {
            windows.push((start, start + window_size));
            start += step;
        }
        let last = doc_len - window_size;
        if windows.last().map(|w| w.0) != Some(last) {
            windows.push((last, doc_len));
        }
    }
    Ok(WindowPlan {
        window_size,
        step,
        windows,
    })
}

/// Encoder output for one window: a `len x d` token matrix, the row of the
/// global token, and the row of each event's `<t>` marker.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEmbeddings<T> {
    pub start: usize,
    pub end: usize,
    pub global_index: usize,
    pub markers: BTreeMap<String, usize>,
    pub tokens: Matrix<T>,
}

impl<T: Real> WindowEmbeddings<T> {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEmbeddings<T> {
    pub global: Vec<T>,
    pub events: BTreeMap<String, Vec<T>>,
}

impl<T: Real> EventEmbeddings<T> {
    pub fn dim(&self) -> usize {
        self.global.len()
    }

    pub fn event(&self, event_id: &str) -> Option<&[T]> {
        self.events.get(event_id).map(Vec::as_slice)
    }
}

/// Running mean; exact when every sample is identical.
struct MeanAcc<T> {
    mean: Vec<T>,
    count: usize,
}

impl<T: Real> MeanAcc<T> {
    fn new(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            count: 0,
        }
    }

    fn push(&mut self, x: &[T]) {
        self.count += 1;
        if self.count == 1 {
            self.mean.copy_from_slice(x);
            return;
        }
        let n = T::of_usize(self.count);
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m = *m + (v - *m) / n;
        }
    }
}

/// Averages the global token over all windows and each event's marker over
/// the windows containing it. Every id in `event_ids` must be covered.
pub fn aggregate_markers<'a, T: Real>(
    event_ids: impl IntoIterator<Item = &'a str>,
    windows: &[WindowEmbeddings<T>],
) -> Result<EventEmbeddings<T>, EncodingError> {
    let first = windows.first().ok_or(EncodingError::NoWindows)?;
    let dim = first.dim();
    let mut global = MeanAcc::new(dim);
    let mut events: BTreeMap<String, MeanAcc<T>> = BTreeMap::new();

    for (w, window) in windows.iter().enumerate() {
        if window.dim() != dim {
            return Err(EncodingError::DimensionMismatch {
                expected: dim,
                found: window.dim(),
            });
        }
        let row = |what: &str, index: usize| {
            if index < window.len() {
                Ok(window.tokens.row(index))
            } else {
                Err(EncodingError::PositionOutOfWindow {
                    window: w,
                    what: what.into(),
                    index,
                    len: window.len(),
                })
            }
        };
        global.push(row("global token", window.global_index)?);
        for (event_id, &pos) in &window.markers {
            let v = row(event_id, pos)?;
            events
                .entry(event_id.clone())
                .or_insert_with(|| MeanAcc::new(dim))
                .push(v);
        }
    }

    let mut out = BTreeMap::new();
    for id in event_ids {
        let acc = events
            .remove(id)
            .ok_or_else(|| EncodingError::EventNotCovered(id.into()))?;
        out.insert(String::from(id), acc.mean);
    }
    Ok(EventEmbeddings {
        global: global.mean,
        events: out,
    })
}

/// Anything able to produce [`EventEmbeddings`] for a document.
pub trait EmbeddingSource<T> {
    fn dim(&self) -> usize;
    fn embed(&self, doc: &Document) -> Result<EventEmbeddings<T>, EncodingError>;
}

/// Deterministic pseudo-random embeddings keyed on `(doc_id, event_id,
/// seed)`, entries uniform in `[-1, 1]`.
///
/// With `leak` set, every event taking part in at least one causal link also
/// gets `leak * s` added, where `s` is a fixed random ±1 vector. Positive
/// pairs then carry the signal in both halves of their node vector, which
/// makes the labels learnable when linked events form cliques.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvider {
    pub dim: usize,
    pub seed: u64,
    pub leak: Option<f64>,
}

impl SyntheticProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, leak: None }
    }

    pub fn leaky(dim: usize, seed: u64, strength: f64) -> Self {
        Self {
            dim,
            seed,
            leak: Some(strength),
        }
    }

    fn vector<T: Real>(&self, parts: &[&str]) -> Vec<T> {
        let mut h = FnvHasher::default();
        for p in parts {
            h.write(p.as_bytes());
            h.write_u8(0xff);
        }
        h.write_u64(self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        (0..self.dim).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect()
    }

    fn signal<T: Real>(&self) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5167_a1ca_fe00);
        (0..self.dim)
            .map(|_| if rng.random_bool(0.5) { T::one() } else { -T::one() })
            .collect()
    }
}

impl<T: Real> EmbeddingSource<T> for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc: &Document) -> Result<EventEmbeddings<T>, EncodingError> {
        let global = self.vector(&[doc.doc_id.as_str(), "<global>"]);
        let linked: Vec<&str> = doc
            .links
            .iter()
            .flat_map(|l| [l.source.as_str(), l.target.as_str()])
            .collect();
        let signal: Option<(T, Vec<T>)> = self.leak.map(|s| (T::of(s), self.signal()));
        let mut events = BTreeMap::new();
        for e in &doc.events {
            let mut v: Vec<T> = self.vector(&[doc.doc_id.as_str(), e.event_id.as_str()]);
            if let Some((strength, s)) = &signal {
                if linked.contains(&e.event_id.as_str()) {
                    for (x, &d) in v.iter_mut().zip(s) {
                        *x = *x + *strength * d;
                    }
                }
            }
            events.insert(e.event_id.clone(), v);
        }
        Ok(EventEmbeddings { global, events })
    }
}

#[cfg(test)]
mod tests {
    use alloc::string::ToString;

    use proptest::prelude::*;

    use super::*;
    use crate::corpus::fixtures::document;

    fn starts(plan: &WindowPlan) -> Vec<usize> {
        plan.windows.iter().map(|w| w.0).collect()
    }

    #[test]
    fn window_plans() {
        assert_eq!(plan_windows(100, 256, 32).unwrap().windows, vec![(0, 100)]);
        assert_eq!(starts(&plan_windows(300, 256, 32).unwrap()), vec![0, 32, 44]);
        assert_eq!(
            starts(&plan_windows(512, 256, 32).unwrap()),
            vec![0, 32, 64, 96, 128, 160, 192, 224, 256]
        );
        assert_eq!(plan_windows(256, 256, 32).unwrap().windows, vec![(0, 256)]);
        assert!(plan_windows(10, 0, 1).is_err());
        assert!(plan_windows(10, 4, 0).is_err());
        assert!(plan_windows(10, 4, 5).is_err());
    }

    fn window(global: &[f64], markers: &[(&str, &[f64])]) -> WindowEmbeddings<f64> {
        let mut rows: Vec<Vec<f64>> = vec![global.to_vec()];
        let mut map = BTreeMap::new();
        for (id, v) in markers {
            map.insert(id.to_string(), rows.len());
            rows.push(v.to_vec());
        }
        WindowEmbeddings {
            start: 0,
            end: rows.len(),
            global_index: 0,
            markers: map,
            tokens: Matrix::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn single_window_passes_through() {
        let w = window(&[0.0, 1.0], &[("e1", &[0.5, -0.5])]);
        let emb = aggregate_markers(["e1"], &[w]).unwrap();
        assert_eq!(emb.event("e1").unwrap(), &[0.5, -0.5]);
        assert_eq!(emb.global, vec![0.0, 1.0]);
    }

    #[test]
    fn two_windows_average() {
        let a = window(&[0.0, 0.0], &[("e", &[1.0, 3.0])]);
        let b = window(&[2.0, 2.0], &[("e", &[3.0, 5.0])]);
        let emb = aggregate_markers(["e"], &[a, b]).unwrap();
        assert_eq!(emb.event("e").unwrap(), &[2.0, 4.0]);
        assert_eq!(emb.global, vec![1.0, 1.0]);
    }

    #[test]
    fn identical_vectors_average_bit_exactly() {
        let v = [0.1, 1.0 / 3.0, -7.3e-5];
        let windows: Vec<_> = (0..7).map(|_| window(&v, &[("e", &v)])).collect();
        let emb = aggregate_markers(["e"], &windows).unwrap();
        assert_eq!(emb.event("e").unwrap(), &v);
    }

    #[test]
    fn uncovered_event_is_named() {
        let w = window(&[0.0], &[("e1", &[1.0])]);
        assert_eq!(
            aggregate_markers(["e1", "e2"], &[w]).unwrap_err(),
            EncodingError::EventNotCovered("e2".into())
        );
    }

    #[test]
    fn mismatched_dimensions() {
        let a = window(&[0.0, 0.0], &[("e", &[1.0, 3.0])]);
        let b = window(&[0.0], &[("e", &[1.0])]);
        assert!(matches!(
            aggregate_markers(["e"], &[a, b]),
            Err(EncodingError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let doc = document("d", "t", 4, 2, &[(0, 1)]);
        let p = SyntheticProvider::new(8, 7);
        let a: EventEmbeddings<f64> = p.embed(&doc).unwrap();
        let b: EventEmbeddings<f64> = p.embed(&doc).unwrap();
        assert_eq!(a, b);
        let c: EventEmbeddings<f64> = SyntheticProvider::new(8, 8).embed(&doc).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.events.len(), 4);
        assert!(a.events.values().all(|v| v.len() == 8));
    }

    #[test]
    fn leak_marks_linked_events() {
        let doc = document("d", "t", 3, 3, &[(0, 1)]);
        let plain: EventEmbeddings<f64> = SyntheticProvider::new(16, 1).embed(&doc).unwrap();
        let leaky: EventEmbeddings<f64> = SyntheticProvider::leaky(16, 1, 2.0).embed(&doc).unwrap();
        assert_eq!(plain.event("e2"), leaky.event("e2"));
        assert_ne!(plain.event("e0"), leaky.event("e0"));
        let diff: Vec<f64> = plain
            .event("e1")
            .unwrap()
            .iter()
            .zip(leaky.event("e1").unwrap())
            .map(|(a, b)| (b - a).abs())
            .collect();
        assert!(diff.iter().all(|d| (d - 2.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn windows_cover_the_document(len in 0usize..2000, size in 1usize..300, step_frac in 0.01f64..1.0) {
            let step = ((size as f64 * step_frac) as usize).clamp(1, size);
            let plan = plan_windows(len, size, step).unwrap();
            let mut covered = vec![false; len];
            for &(s, e) in &plan.windows {
                prop_assert!(e - s <= size);
                prop_assert!(e <= len);
                for c in &mut covered[s..e] {
                    *c = true;
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
            let st = starts(&plan);
            prop_assert!(st.windows(2).all(|w| w[0] < w[1]));
            if st.len() >= 3 {
                prop_assert!(st[..st.len() - 1].windows(2).all(|w| w[1] - w[0] == step));
            }
        }

        #[test]
        fn aggregation_is_order_free_and_linear(
            vals in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
            scale in -3.0f64..3.0,
            rot in 0usize..6,
        ) {
            let build = |c: f64, order: &[usize]| -> Vec<WindowEmbeddings<f64>> {
                order
                    .iter()
                    .map(|&i| {
                        let v: Vec<f64> = vals[i].iter().map(|x| x * c).collect();
                        window(&v, &[("e", &v)])
                    })
                    .collect()
            };
            let order: Vec<usize> = (0..vals.len()).collect();
            let mut rotated = order.clone();
            rotated.rotate_left(rot % vals.len());
            rotated.reverse();
            let base = aggregate_markers(["e"], &build(1.0, &order)).unwrap();
            let perm = aggregate_markers(["e"], &build(1.0, &rotated)).unwrap();
            let scaled = aggregate_markers(["e"], &build(scale, &order)).unwrap();
            for k in 0..3 {
                let b = base.event("e").unwrap()[k];
                prop_assert!((b - perm.event("e").unwrap()[k]).abs() < 1e-12);
                prop_assert!((b * scale - scaled.event("e").unwrap()[k]).abs() < 1e-12);
            }
        }
    }
}
