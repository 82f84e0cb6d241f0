//! Focal loss, learning-rate schedule, AdamW and the per-document training
//! loop with early stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Label};
use crate::encoding::{EmbeddingSource, EncodingError};
use crate::evaluation::{predict_prepared, prf1, PredictionRecord, ScopeFilter};
use crate::model::{init_node_embeddings, ErgoParams, ModelConfig, ModelError};
use crate::relgraph::{build_graph, GraphError, GraphStrategy, RelationalGraph};
use crate::tensor::{clip_global_norm, Matrix, Tape, Tensor, TensorError};
use crate::Real;

/// Probabilities below this are clamped before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training split has no document with at least two events")]
    EmptyTrainSplit,
    #[error("early stopping is enabled but the dev split is empty")]
    MissingDev,
    #[error("non-finite loss in epoch {epoch} on document {doc_id}")]
    NonFiniteLoss { epoch: usize, doc_id: String },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("{labels} labels for {rows} prediction rows")]
    LabelMismatch { labels: usize, rows: usize },
}

/// Focusing parameter `gamma` and the positive-class weight `alpha`
/// (negatives get `1 - alpha`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.75,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `-sum_i alpha_t (1 - p_t)^gamma ln p_t` over the `N x 2` probabilities,
/// where `p_t` is the probability of the gold class of row `i`.
///
/// `p_t` is clamped at [`PROB_FLOOR`]; a warning is logged when that happens.
pub fn focal_loss<T: Real>(
    tape: &mut Tape<T>,
    probs: Tensor,
    labels: &[Label],
    config: &FocalConfig,
) -> Result<Tensor, TrainError> {
    config.validate()?;
    let (rows, cols) = tape.shape(probs);
    if rows != labels.len() {
        return Err(TrainError::LabelMismatch {
            labels: labels.len(),
            rows,
        });
    }
    if cols != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "focal_loss",
            left: (rows, cols),
            right: (rows, 2),
        }
        .into());
    }
    let mut gold = Matrix::zeros(rows, 2);
    let mut weights = Vec::with_capacity(rows);
    for (i, label) in labels.iter().enumerate() {
        let (col, w) = match label {
            Label::Positive => (1, config.alpha),
            Label::Negative => (0, 1.0 - config.alpha),
        };
        gold.set(i, col, T::one());
        weights.push(T::of(w));
    }
    let gold = tape.constant(gold);
    let picked = tape.mul(probs, gold)?;
    let p_t = tape.sum_cols(picked);
    let floor = T::of(PROB_FLOOR);
    let clamped = tape.value(p_t).as_slice().iter().filter(|&&p| p < floor).count();
    if clamped > 0 {
        log::warn!("focal loss: clamped {clamped} gold-class probabilities at {PROB_FLOOR:e}");
    }
    let p_t = tape.clamp_min(p_t, floor);
    let log_p = tape.ln(p_t);
    let neg = tape.scale(p_t, -T::one());
    let miss = tape.add_scalar(neg, T::one());
    let modulation = tape.powf(miss, T::of(config.gamma));
    let weights = tape.constant(Matrix::column_vector(&weights));
    let weighted = tape.mul(weights, modulation)?;
    let terms = tape.mul(weighted, log_p)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, -T::one()))
}

/// Linear warmup from 0 to `peak` over the first `ceil(warmup_fraction *
/// total)` steps, then linear decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup_fraction: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let step = step.min(total);
    let warmup = Float::ceil(warmup_fraction * total as f64) as usize;
    if step < warmup {
        peak * (step as f64 / warmup as f64)
    } else if warmup == total {
        peak
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates of AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    steps: u32,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Real> AdamW<T> {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamWConfig, params: &[&Matrix<T>]) -> Self {
        let zeros: Vec<Matrix<T>> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// `theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)`.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix<T>],
        grads: &[Matrix<T>],
        names: &[String],
        lr: T,
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::InvalidConfig(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.m[i].shape() || params[i].shape() != self.m[i].shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw",
                    left: params[i].shape(),
                    right: g.shape(),
                }
                .into());
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(TrainError::NonFiniteGradient { name });
            }
        }
        self.steps += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (eps, wd) = (T::of(c.eps), T::of(c.weight_decay));
        let t = self.steps as i32;
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let theta = params[i].as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                theta[k] = theta[k] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[k]);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping; `None` disables early
    /// stopping and keeps the final parameters.
    pub patience: Option<usize>,
    pub clip_norm: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Which pairs the dev F1 used for early stopping is computed over.
    pub early_stop_scope: ScopeFilter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            warmup_fraction: 0.08,
            max_epochs: 50,
            patience: Some(5),
            clip_norm: 1.0,
            seed: 0,
            weight_decay: 0.01,
            early_stop_scope: ScopeFilter::Combined,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }
}

/// A document turned into model inputs: its graph, initial node vectors,
/// global vector and gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc<T> {
    pub graph: RelationalGraph,
    pub node_init: Matrix<T>,
    pub global: Vec<T>,
    pub labels: Vec<Label>,
}

impl<T> PreparedDoc<T> {
    pub fn doc_id(&self) -> &str {
        self.graph.doc_id()
    }
}

/// Graph construction options shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub strategy: GraphStrategy,
    pub self_loops: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            strategy: GraphStrategy::SharedEvent,
            self_loops: true,
        }
    }
}

/// Builds model inputs for `doc`, or `None` when it has fewer than two
/// events and therefore no pairs.
pub fn prepare<T: Real, S: EmbeddingSource<T> + ?Sized>(
    doc: &Document,
    source: &S,
    options: GraphOptions,
) -> Result<Option<PreparedDoc<T>>, TrainError> {
    let graph = match build_graph(doc, options.strategy, options.self_loops) {
        Ok(g) => g,
        Err(GraphError::NoPairs { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let embeddings = source.embed(doc)?;
    let node_init = init_node_embeddings(&embeddings, &graph)?;
    let labels = graph.nodes().iter().map(|p| p.label).collect();
    Ok(Some(PreparedDoc {
        graph,
        node_init,
        global: embeddings.global,
        labels,
    }))
}

/// [`prepare`] over many documents, dropping those without pairs.
pub fn prepare_all<'a, T: Real, S: EmbeddingSource<T> + ?Sized>(
    docs: impl IntoIterator<Item = &'a Document>,
    source: &S,
    options: GraphOptions,
) -> Result<Vec<PreparedDoc<T>>, TrainError> {
    let mut out = Vec::new();
    for doc in docs {
        if let Some(p) = prepare(doc, source, options)? {
            out.push(p);
        }
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-document loss over the epoch.
    pub train_loss: f64,
    pub dev_p: Option<f64>,
    pub dev_r: Option<f64>,
    pub dev_f1: Option<f64>,
    /// Learning rate of the last update in the epoch.
    pub lr: f64,
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Best-dev-F1 parameters, or the final ones without early stopping.
    pub params: ErgoParams<T>,
    pub log: Vec<EpochRecord>,
    /// 1-based epoch the returned parameters come from.
    pub best_epoch: usize,
}

/// Mean focal loss over `docs` in evaluation mode.
pub fn evaluate_loss<T: Real>(
    params: &ErgoParams<T>,
    docs: &[&PreparedDoc<T>],
    focal: &FocalConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for doc in docs {
        let mut tape = Tape::new();
        let pass = params.forward::<ChaCha8Rng>(&mut tape, &doc.graph, &doc.node_init, &doc.global, None)?;
        let loss = focal_loss(&mut tape, pass.probs, &doc.labels, focal)?;
        total += tape.scalar(loss).as_f64();
    }
    Ok(if docs.is_empty() {
        0.0
    } else {
        total / docs.len() as f64
    })
}

fn dev_records<T: Real>(params: &ErgoParams<T>, dev: &[&PreparedDoc<T>]) -> Result<Vec<PredictionRecord>, TrainError> {
    let mut out = Vec::new();
    for doc in dev {
        out.extend(predict_prepared(params, doc)?);
    }
    Ok(out)
}

/// Trains a freshly initialized model, one document graph per update.
pub fn train<T: Real>(
    train_docs: &[&PreparedDoc<T>],
    dev_docs: &[&PreparedDoc<T>],
    model: &ModelConfig,
    focal: &FocalConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ErgoParams::init(model.clone(), &mut rng)?;
    train_from(params, train_docs, dev_docs, focal, config, &mut rng)
}

/// Continues training `params`, drawing shuffles and dropout masks from
/// `rng`.
pub fn train_from<T: Real>(
    mut params: ErgoParams<T>,
    train_docs: &[&PreparedDoc<T>],
    dev_docs: &[&PreparedDoc<T>],
    focal: &FocalConfig,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    focal.validate()?;
    if train_docs.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    if config.patience.is_some() && dev_docs.is_empty() {
        return Err(TrainError::MissingDev);
    }
    let names = params.names();
    let mut optimizer = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &params.matrices(),
    );
    let total_steps = config.max_epochs * train_docs.len();
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut log = Vec::new();
    let mut best_f1 = -1.0;
    let mut best: Option<(ErgoParams<T>, usize)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for &d in &order {
            let doc = train_docs[d];
            let mut tape = Tape::new();
            let pass = params.forward(&mut tape, &doc.graph, &doc.node_init, &doc.global, Some(&mut *rng))?;
            let loss = focal_loss(&mut tape, pass.probs, &doc.labels, focal)?;
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    doc_id: String::from(doc.doc_id()),
                });
            }
            epoch_loss += value;
            tape.backward(loss)?;
            let mut grads: Vec<Matrix<T>> = pass
                .params
                .iter()
                .map(|&p| {
                    let (r, c) = tape.shape(p);
                    tape.take_grad(p).unwrap_or_else(|| Matrix::zeros(r, c))
                })
                .collect();
            clip_global_norm(&mut grads, T::of(config.clip_norm));
            lr = lr_at(
                optimizer.steps() as usize + 1,
                total_steps,
                config.learning_rate,
                config.warmup_fraction,
            );
            optimizer.step(&mut params.matrices_mut(), &grads, &names, T::of(lr))?;
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_docs.len() as f64,
            dev_p: None,
            dev_r: None,
            dev_f1: None,
            lr,
            best_so_far: None,
        };
        if config.patience.is_none() {
            log::debug!("epoch {epoch}: loss {:.6}", record.train_loss);
            log.push(record);
            continue;
        }
        let report = prf1(&dev_records(&params, dev_docs)?, config.early_stop_scope);
        record.dev_p = Some(report.p);
        record.dev_r = Some(report.r);
        record.dev_f1 = Some(report.f1);
        if report.f1 > best_f1 {
            best_f1 = report.f1;
            best = Some((params.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        record.best_so_far = Some(best_f1);
        log::debug!(
            "epoch {epoch}: loss {:.6} dev f1 {:.4} best {:.4}",
            record.train_loss,
            report.f1,
            best_f1
        );
        log.push(record);
        if config.patience.is_some_and(|p| stale > p) {
            break;
        }
    }
    let (params, best_epoch) = best.unwrap_or_else(|| {
        let last = log.len();
        (params, last)
    });
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
    })
}
