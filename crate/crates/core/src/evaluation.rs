//! Precision/recall/F1, cross-validation, probability histograms and
//! attention dumps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FoldPlan, FoldScheme, Label, Scope};
use crate::model::{AttentionEntry, ErgoParams, ModelConfig, ModelError};
use crate::relgraph::RelationalGraph;
use crate::tensor::Tape;
use crate::training::{train, EpochRecord, FocalConfig, PreparedDoc, TrainConfig, TrainError};
use crate::Real;

/// Which pairs a metric is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeFilter {
    Intra,
    Inter,
    #[default]
    Combined,
}

impl ScopeFilter {
    pub fn name(self) -> &'static str {
        match self {
            ScopeFilter::Intra => "intra",
            ScopeFilter::Inter => "inter",
            ScopeFilter::Combined => "combined",
        }
    }

    /// Accepts `intra`, `inter`, `combined` and `both`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intra" => Some(ScopeFilter::Intra),
            "inter" => Some(ScopeFilter::Inter),
            "combined" | "both" => Some(ScopeFilter::Combined),
            _ => None,
        }
    }

    pub fn admits(self, scope: Scope) -> bool {
        match self {
            ScopeFilter::Intra => scope == Scope::Intra,
            ScopeFilter::Inter => scope == Scope::Inter,
            ScopeFilter::Combined => true,
        }
    }

    /// Settings reported under `scheme`.
    pub fn reported(scheme: FoldScheme) -> &'static [ScopeFilter] {
        match scheme {
            FoldScheme::Esl5FoldTopic => &[ScopeFilter::Intra, ScopeFilter::Inter, ScopeFilter::Combined],
            FoldScheme::Ctb10FoldDoc => &[ScopeFilter::Intra],
        }
    }
}

/// A scored event pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub event_a: String,
    pub event_b: String,
    pub scope: Scope,
    pub gold: Label,
    pub p_positive: f64,
    pub predicted: Label,
}

impl PredictionRecord {
    /// Predicts positive iff `p_positive > 0.5`.
    pub fn new(doc_id: String, event_a: String, event_b: String, scope: Scope, gold: Label, p_positive: f64) -> Self {
        let predicted = if p_positive > 0.5 {
            Label::Positive
        } else {
            Label::Negative
        };
        Self {
            doc_id,
            event_a,
            event_b,
            scope,
            gold,
            p_positive,
            predicted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setting: ScopeFilter,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "TP")]
    pub tp: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "FN")]
    pub fn_: usize,
}

impl MetricReport {
    /// Metrics from confusion counts; every ratio with a zero denominator
    /// is 0.
    pub fn from_counts(setting: ScopeFilter, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        Self {
            setting,
            p,
            r,
            f1: f1_score(p, r),
            tp,
            fp,
            fn_,
        }
    }
}

/// Harmonic mean of `p` and `r`, 0 when both are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro-averaged metrics over the records admitted by `filter`.
pub fn prf1(records: &[PredictionRecord], filter: ScopeFilter) -> MetricReport {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for rec in records.iter().filter(|r| filter.admits(r.scope)) {
        match (rec.predicted, rec.gold) {
            (Label::Positive, Label::Positive) => tp += 1,
            (Label::Positive, Label::Negative) => fp += 1,
            (Label::Negative, Label::Positive) => fn_ += 1,
            (Label::Negative, Label::Negative) => {}
        }
    }
    MetricReport::from_counts(filter, tp, fp, fn_)
}

/// Evaluation-mode predictions for every pair of a prepared document.
pub fn predict_prepared<T: Real>(
    params: &ErgoParams<T>,
    doc: &PreparedDoc<T>,
) -> Result<Vec<PredictionRecord>, ModelError> {
    let mut tape = Tape::new();
    let pass = params.forward::<ChaCha8Rng>(&mut tape, &doc.graph, &doc.node_init, &doc.global, None)?;
    let probs = tape.value(pass.probs);
    Ok(doc
        .graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            PredictionRecord::new(
                pair.doc_id.clone(),
                pair.event_a.clone(),
                pair.event_b.clone(),
                pair.scope,
                pair.label,
                probs.get(i, 1).as_f64(),
            )
        })
        .collect())
}

/// Attention that `node` gives its neighbors in `layer`/`head`, strongest
/// first (ties by neighbor id).
pub fn dump_attention<T: Real>(
    params: &ErgoParams<T>,
    doc: &PreparedDoc<T>,
    node: usize,
    layer: usize,
    head: usize,
) -> Result<Vec<AttentionEntry<T>>, ModelError> {
    let mut tape = Tape::new();
    let pass = params.forward::<ChaCha8Rng>(&mut tape, &doc.graph, &doc.node_init, &doc.global, None)?;
    let mut entries = pass.attention_of(&tape, layer, head, node)?;
    entries.sort_by(|a, b| b.alpha.partial_cmp(&a.alpha).unwrap_or(core::cmp::Ordering::Equal));
    Ok(entries)
}

/// `neighbor_a,neighbor_b,alpha` rows naming each neighbor node by its
/// event pair.
pub fn attention_csv<T: Real>(graph: &RelationalGraph, entries: &[AttentionEntry<T>]) -> String {
    let mut out = String::from("neighbor_a,neighbor_b,alpha\n");
    for e in entries {
        let pair = &graph.nodes()[e.neighbor];
        let _ = writeln!(out, "{},{},{}", pair.event_a, pair.event_b, e.alpha.as_f64());
    }
    out
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub pos_count: usize,
    pub neg_count: usize,
}

/// Counts of `p_positive` per gold class in 20 bins of width 0.05 over
/// `[0, 1]`; bins are half-open except the last, which includes 1.
pub fn probability_histogram(records: &[PredictionRecord]) -> Vec<HistogramBin> {
    let n = HISTOGRAM_BINS;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            bin_lo: i as f64 / n as f64,
            bin_hi: (i + 1) as f64 / n as f64,
            pos_count: 0,
            neg_count: 0,
        })
        .collect();
    for rec in records {
        let p = rec.p_positive.clamp(0.0, 1.0);
        let mut i = ((p * n as f64) as usize).min(n - 1);
        // Guard against the product rounding across a bin edge.
        if p < bins[i].bin_lo {
            i -= 1;
        } else if i + 1 < n && p >= bins[i].bin_hi {
            i += 1;
        }
        match rec.gold {
            Label::Positive => bins[i].pos_count += 1,
            Label::Negative => bins[i].neg_count += 1,
        }
    }
    bins
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,pos_count,neg_count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.bin_lo, b.bin_hi, b.pos_count, b.neg_count);
    }
    out
}

/// Everything a cross-validation run needs. Documents are looked up by id
/// in `prepared`; ids missing there (fewer than two events) are skipped.
#[derive(Debug, Clone, Copy)]
pub struct CvSetup<'a, T> {
    pub plan: &'a FoldPlan,
    pub prepared: &'a BTreeMap<String, PreparedDoc<T>>,
    pub model: &'a ModelConfig,
    pub focal: &'a FocalConfig,
    pub train: &'a TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub metrics: Vec<MetricReport>,
    pub log: Vec<EpochRecord>,
    /// Scored test-fold predictions.
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub scheme: FoldScheme,
    /// Micro metrics over the union of all test-fold records.
    pub pooled: Vec<MetricReport>,
    /// Per-setting mean of the per-fold P, R and F1 (counts are summed).
    pub fold_mean: Vec<MetricReport>,
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    pub fn records(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.folds.iter().flat_map(|f| f.records.iter())
    }

    pub fn pooled(&self, setting: ScopeFilter) -> Option<&MetricReport> {
        self.pooled.iter().find(|m| m.setting == setting)
    }
}

fn lookup<'a, T>(prepared: &'a BTreeMap<String, PreparedDoc<T>>, ids: &[String]) -> Vec<&'a PreparedDoc<T>> {
    ids.iter().filter_map(|id| prepared.get(id)).collect()
}

/// Trains on every fold but `fold` (seed `train.seed + fold`), early-stops
/// on the plan's dev documents when there are any, and predicts `fold`.
/// Only records in scopes the scheme scores are kept.
pub fn run_fold<T: Real>(setup: &CvSetup<'_, T>, fold: usize) -> Result<FoldResult, TrainError> {
    let plan = setup.plan;
    if fold >= plan.folds.len() {
        return Err(ModelError::OutOfRange {
            what: "fold",
            index: fold,
            len: plan.folds.len(),
        }
        .into());
    }
    let train_docs = lookup(setup.prepared, &plan.train_ids(fold));
    let dev_docs = lookup(setup.prepared, &plan.dev);
    let mut config = setup.train.clone();
    config.seed = config.seed.wrapping_add(fold as u64);
    if dev_docs.is_empty() {
        config.patience = None;
    }
    let outcome = train(&train_docs, &dev_docs, setup.model, setup.focal, &config)?;
    let mut records = Vec::new();
    for doc in lookup(setup.prepared, &plan.folds[fold]) {
        records.extend(
            predict_prepared(&outcome.params, doc)?
                .into_iter()
                .filter(|r| plan.scheme.scores(r.scope)),
        );
    }
    let metrics = ScopeFilter::reported(plan.scheme)
        .iter()
        .map(|&s| prf1(&records, s))
        .collect();
    Ok(FoldResult {
        fold,
        seed: config.seed,
        best_epoch: outcome.best_epoch,
        metrics,
        log: outcome.log,
        records,
    })
}

/// Combines fold results (in any order) into pooled and fold-mean metrics.
pub fn pool_folds(scheme: FoldScheme, mut folds: Vec<FoldResult>) -> CvReport {
    folds.sort_by_key(|f| f.fold);
    let all: Vec<PredictionRecord> = folds.iter().flat_map(|f| f.records.iter().cloned()).collect();
    let settings = ScopeFilter::reported(scheme);
    let pooled = settings.iter().map(|&s| prf1(&all, s)).collect();
    let fold_mean = settings
        .iter()
        .map(|&s| {
            let per: Vec<MetricReport> = folds.iter().map(|f| prf1(&f.records, s)).collect();
            let k = per.len().max(1) as f64;
            MetricReport {
                setting: s,
                p: per.iter().map(|m| m.p).sum::<f64>() / k,
                r: per.iter().map(|m| m.r).sum::<f64>() / k,
                f1: per.iter().map(|m| m.f1).sum::<f64>() / k,
                tp: per.iter().map(|m| m.tp).sum(),
                fp: per.iter().map(|m| m.fp).sum(),
                fn_: per.iter().map(|m| m.fn_).sum(),
            }
        })
        .collect();
    CvReport {
        scheme,
        pooled,
        fold_mean,
        folds,
    }
}

/// Runs every fold in order and pools the results.
pub fn run_cross_validation<T: Real>(setup: &CvSetup<'_, T>) -> Result<CvReport, TrainError> {
    let folds = (0..setup.plan.folds.len())
        .map(|f| run_fold(setup, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pool_folds(setup.plan.scheme, folds))
}
