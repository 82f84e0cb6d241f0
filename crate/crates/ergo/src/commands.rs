//! The work behind each subcommand, generic over the numeric profile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ergo_core::corpus::{corpus_stats, split_folds, Corpus, CorpusStats, FoldPlan};
use ergo_core::encoding::{EmbeddingSource, SyntheticProvider};
use ergo_core::evaluation::{
    attention_csv, dump_attention, histogram_csv, pool_folds, predict_prepared, prf1, probability_histogram, run_fold,
    CvReport, CvSetup, HistogramBin, MetricReport, PredictionRecord, ScopeFilter,
};
use ergo_core::model::{gat_param_count, param_count, ErgoParams, LayerKind, ModelConfig, ParamCount};
use ergo_core::relgraph::build_graph;
use ergo_core::training::{prepare_all, train, GraphOptions, PreparedDoc, TrainConfig};
use ergo_core::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_predictions, write_json, write_jsonl, write_text, GraphDump};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{EmbeddingSpec, RawConfig, RunConfig};
use crate::corpus_io::load_corpus;
use crate::error::Error;
use crate::interchange::PrecomputedSource;

/// Resolved configuration plus the raw values it came from.
#[derive(Debug, Clone)]
pub struct Context {
    pub raw: RawConfig,
    pub config: RunConfig,
}

impl Context {
    pub fn new(raw: RawConfig) -> Result<Self, Error> {
        let config = RunConfig::from_raw(&raw)?;
        Ok(Self { raw, config })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn corpus(&self) -> Result<Corpus, Error> {
        Ok(load_corpus(self.config.corpus_path()?)?)
    }

    fn save_config(&self) -> Result<PathBuf, Error> {
        write_text(&self.out("config.cfg"), &self.raw.render())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, Error> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {} worker threads: {e}", self.config.jobs)))
    }
}

pub fn embedding_source<T: Real>(spec: &EmbeddingSpec) -> Box<dyn EmbeddingSource<T> + Send + Sync> {
    match spec {
        EmbeddingSpec::Synthetic { dim, seed, leak } => Box::new(SyntheticProvider {
            dim: *dim,
            seed: *seed,
            leak: *leak,
        }),
        EmbeddingSpec::Precomputed { dir, dim, window_size } => {
            Box::new(PrecomputedSource::<T>::new(dir.clone(), *dim, *window_size))
        }
    }
}

/// Model inputs for every document with at least two events, by id.
pub fn prepare_corpus<T: Real>(
    corpus: &Corpus,
    spec: &EmbeddingSpec,
    graph: GraphOptions,
) -> Result<BTreeMap<String, PreparedDoc<T>>, Error> {
    let source = embedding_source::<T>(spec);
    Ok(prepare_all(corpus.documents(), source.as_ref(), graph)?
        .into_iter()
        .map(|d| (d.doc_id().to_string(), d))
        .collect())
}

fn select<'a, T>(prepared: &'a BTreeMap<String, PreparedDoc<T>>, ids: &[String]) -> Vec<&'a PreparedDoc<T>> {
    ids.iter().filter_map(|id| prepared.get(id)).collect()
}

/// Training and dev ids used for model selection: the plan's dev set when
/// it has one, otherwise fold 0.
pub fn selection_split(plan: &FoldPlan) -> (Vec<String>, Vec<String>) {
    if plan.dev.is_empty() {
        (plan.train_ids(0), plan.folds[0].clone())
    } else {
        (plan.folds.concat(), plan.dev.clone())
    }
}

fn without_dev(mut train: TrainConfig, dev: &[&PreparedDoc<impl Real>]) -> TrainConfig {
    if dev.is_empty() && train.patience.is_some() {
        log::warn!("no dev documents; early stopping disabled");
        train.patience = None;
    }
    train
}

pub fn stats(ctx: &Context) -> Result<CorpusStats, Error> {
    let stats = corpus_stats(&ctx.corpus()?);
    write_json(&ctx.out("stats.json"), &stats)?;
    Ok(stats)
}

pub fn make_graph(ctx: &Context, doc_id: &str) -> Result<GraphDump, Error> {
    let corpus = ctx.corpus()?;
    let doc = corpus
        .get(doc_id)
        .ok_or_else(|| Error::Data(format!("no document {doc_id}")))?;
    let g = ctx.config.graph;
    let dump = GraphDump::new(&build_graph(doc, g.strategy, g.self_loops)?);
    write_json(&ctx.out(&format!("graph_{doc_id}.json")), &dump)?;
    Ok(dump)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub profile: String,
    pub fold: Option<usize>,
    pub train_documents: usize,
    pub dev_documents: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains on every fold but `fold` (or on all folds), early-stopping on the
/// plan's dev set, and writes `best.ckpt` plus the epoch log.
pub fn train_command<T: Real>(ctx: &Context, fold: Option<usize>) -> Result<TrainSummary, Error> {
    let cfg = &ctx.config;
    let corpus = ctx.corpus()?;
    let plan = split_folds(&corpus, cfg.fold_scheme)?;
    let train_ids = match fold {
        Some(k) if k >= plan.folds.len() => {
            return Err(Error::Usage(format!("fold {k} out of range ({})", plan.folds.len())))
        }
        Some(k) => plan.train_ids(k),
        None => plan.folds.concat(),
    };
    let prepared = prepare_corpus::<T>(&corpus, &cfg.embeddings, cfg.graph)?;
    let train_docs = select(&prepared, &train_ids);
    let dev_docs = select(&prepared, &plan.dev);
    let train_cfg = without_dev(cfg.train.clone(), &dev_docs);
    let outcome = train(&train_docs, &dev_docs, &cfg.model, &cfg.focal, &train_cfg)?;
    let ckpt_path = ctx.out(checkpoint::FILE_NAME);
    Checkpoint::new(&outcome.params, cfg.graph, cfg.embeddings.clone(), outcome.best_epoch).save(&ckpt_path)?;
    write_jsonl(&ctx.out("train_log.jsonl"), &outcome.log)?;
    ctx.save_config()?;
    let summary = TrainSummary {
        profile: T::PROFILE.into(),
        fold,
        train_documents: train_docs.len(),
        dev_documents: dev_docs.len(),
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_dev_f1: outcome.log.last().and_then(|r| r.best_so_far),
        checkpoint: ckpt_path,
    };
    write_json(&ctx.out("train_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub metrics: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub profile: String,
    pub scheme: String,
    pub pooled: Vec<MetricReport>,
    pub fold_mean: Vec<MetricReport>,
    pub folds: Vec<FoldSummary>,
}

/// Full cross-validation; folds run in parallel up to `jobs`.
pub fn cv<T: Real>(ctx: &Context) -> Result<CvReport, Error> {
    let cfg = &ctx.config;
    let corpus = ctx.corpus()?;
    let plan = split_folds(&corpus, cfg.fold_scheme)?;
    let prepared = prepare_corpus::<T>(&corpus, &cfg.embeddings, cfg.graph)?;
    let setup = CvSetup {
        plan: &plan,
        prepared: &prepared,
        model: &cfg.model,
        focal: &cfg.focal,
        train: &cfg.train,
    };
    let folds = ctx.pool()?.install(|| {
        (0..plan.folds.len())
            .into_par_iter()
            .map(|f| run_fold(&setup, f))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = pool_folds(plan.scheme, folds);

    for f in &report.folds {
        write_jsonl(&ctx.out(&format!("fold{}/train_log.jsonl", f.fold)), &f.log)?;
    }
    let records: Vec<PredictionRecord> = report.records().cloned().collect();
    write_jsonl(&ctx.out("predictions.jsonl"), &records)?;
    write_text(
        &ctx.out("histogram.csv"),
        &histogram_csv(&probability_histogram(&records)),
    )?;
    write_json(&ctx.out("pooled.json"), &report.pooled)?;
    let summary = CvSummary {
        profile: T::PROFILE.into(),
        scheme: plan.scheme.name().into(),
        pooled: report.pooled.clone(),
        fold_mean: report.fold_mean.clone(),
        folds: report
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                seed: f.seed,
                best_epoch: f.best_epoch,
                metrics: f.metrics.clone(),
            })
            .collect(),
    };
    write_json(&ctx.out("cv_report.json"), &summary)?;
    ctx.save_config()?;
    Ok(report)
}

fn load_model<T: Real>(path: &Path) -> Result<(Checkpoint, ErgoParams<T>), Error> {
    let ckpt = Checkpoint::load(path)?;
    let params = ckpt.params::<T>()?;
    Ok((ckpt, params))
}

fn predict_ids<T: Real>(
    ctx: &Context,
    ckpt_path: &Path,
    ids: impl Fn(&Corpus) -> Result<Vec<String>, Error>,
) -> Result<Vec<PredictionRecord>, Error> {
    let (ckpt, params) = load_model::<T>(ckpt_path)?;
    let corpus = ctx.corpus()?;
    let ids = ids(&corpus)?;
    let docs: Vec<_> = ids.iter().filter_map(|id| corpus.get(id)).collect();
    let source = embedding_source::<T>(&ckpt.embeddings);
    let prepared = prepare_all(docs, source.as_ref(), ckpt.graph)?;
    let mut records = Vec::new();
    for doc in &prepared {
        records.extend(predict_prepared(&params, doc)?);
    }
    Ok(records)
}

/// Scores a checkpoint on fold `fold` (or the whole corpus).
pub fn eval<T: Real>(ctx: &Context, ckpt_path: &Path, fold: Option<usize>) -> Result<Vec<MetricReport>, Error> {
    let scheme = ctx.config.fold_scheme;
    let records = predict_ids::<T>(ctx, ckpt_path, |corpus| match fold {
        None => Ok(corpus.documents().iter().map(|d| d.doc_id.clone()).collect()),
        Some(k) => {
            let plan = split_folds(corpus, scheme)?;
            plan.folds
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Usage(format!("fold {k} out of range ({})", plan.folds.len())))
        }
    })?;
    let records: Vec<PredictionRecord> = records.into_iter().filter(|r| scheme.scores(r.scope)).collect();
    let reports: Vec<MetricReport> = ScopeFilter::reported(scheme)
        .iter()
        .map(|&s| prf1(&records, s))
        .collect();
    write_jsonl(&ctx.out("predictions.jsonl"), &records)?;
    write_json(&ctx.out("eval_report.json"), &reports)?;
    Ok(reports)
}

/// Pair probabilities for one document or the whole corpus.
pub fn predict<T: Real>(ctx: &Context, ckpt_path: &Path, doc: Option<&str>) -> Result<Vec<PredictionRecord>, Error> {
    let records = predict_ids::<T>(ctx, ckpt_path, |corpus| match doc {
        None => Ok(corpus.documents().iter().map(|d| d.doc_id.clone()).collect()),
        Some(id) if corpus.get(id).is_some() => Ok(vec![id.to_string()]),
        Some(id) => Err(Error::Data(format!("no document {id}"))),
    })?;
    write_jsonl(&ctx.out("predictions.jsonl"), &records)?;
    Ok(records)
}

pub fn hist(ctx: &Context, predictions: &Path) -> Result<Vec<HistogramBin>, Error> {
    let bins = probability_histogram(&read_predictions(predictions)?);
    write_text(&ctx.out("histogram.csv"), &histogram_csv(&bins))?;
    write_json(&ctx.out("histogram.json"), &bins)?;
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub neighbor: usize,
    pub neighbor_a: String,
    pub neighbor_b: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionQuery<'a> {
    pub doc: &'a str,
    pub node: usize,
    pub layer: usize,
    pub head: usize,
}

pub fn dump_attention_command<T: Real>(
    ctx: &Context,
    ckpt_path: &Path,
    q: AttentionQuery<'_>,
) -> Result<Vec<AttentionRow>, Error> {
    let (ckpt, params) = load_model::<T>(ckpt_path)?;
    let corpus = ctx.corpus()?;
    let doc = corpus
        .get(q.doc)
        .ok_or_else(|| Error::Data(format!("no document {}", q.doc)))?;
    let source = embedding_source::<T>(&ckpt.embeddings);
    let prepared = ergo_core::training::prepare(doc, source.as_ref(), ckpt.graph)?
        .ok_or_else(|| Error::Data(format!("document {} has fewer than two events", q.doc)))?;
    let entries = dump_attention(&params, &prepared, q.node, q.layer, q.head)?;
    let rows: Vec<AttentionRow> = entries
        .iter()
        .map(|e| {
            let pair = &prepared.graph.nodes()[e.neighbor];
            AttentionRow {
                neighbor: e.neighbor,
                neighbor_a: pair.event_a.clone(),
                neighbor_b: pair.event_b.clone(),
                alpha: e.alpha.as_f64(),
            }
        })
        .collect();
    write_text(&ctx.out("attention.csv"), &attention_csv(&prepared.graph, &entries))?;
    write_json(&ctx.out("attention.json"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTable {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub dk: usize,
    pub rgt: ParamCount,
    pub gat: ParamCount,
    pub gcn: ParamCount,
}

impl ParamTable {
    pub fn new(layers: usize, heads: usize, dim: usize, dk: Option<usize>) -> Result<Self, Error> {
        if heads == 0 || dim == 0 {
            return Err(Error::Usage("heads and dim must be positive".into()));
        }
        let dk = dk.unwrap_or(dim / heads).max(1);
        let base = ModelConfig {
            input_dim: dim,
            global_dim: dim,
            layers,
            heads,
            hidden_dim: dim,
            head_dim: Some(dk),
            dropout: 0.0,
            layer_kind: LayerKind::Rgt,
        };
        let gcn = ModelConfig {
            layer_kind: LayerKind::Gcn,
            ..base.clone()
        };
        Ok(Self {
            layers,
            heads,
            dim,
            dk,
            rgt: param_count(&base, false),
            gat: gat_param_count(layers, heads, dim, dk, dim),
            gcn: param_count(&gcn, false),
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<6}{:>12}  {}\n", "layer", "params", "class");
        for (name, c) in [("rgt", &self.rgt), ("gat", &self.gat), ("gcn", &self.gcn)] {
            out.push_str(&format!("{:<6}{:>12}  {}\n", name, c.exact, c.class.notation()));
        }
        out
    }
}

pub fn param_count_command(
    ctx: &Context,
    layers: usize,
    heads: usize,
    dim: usize,
    dk: Option<usize>,
) -> Result<ParamTable, Error> {
    let table = ParamTable::new(layers, heads, dim, dk)?;
    write_json(&ctx.out("param_count.json"), &table)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub gamma: f64,
    pub best_epoch: usize,
    pub dev: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub profile: String,
    pub setting: ScopeFilter,
    pub entries: Vec<GridEntry>,
    /// Index of the entry with the highest dev F1 (first on ties).
    pub best: usize,
}

/// Trains one model per grid point on the selection split and scores it on
/// the held-out documents.
pub fn gridsearch<T: Real>(ctx: &Context) -> Result<GridReport, Error> {
    let cfg = &ctx.config;
    let corpus = ctx.corpus()?;
    let plan = split_folds(&corpus, cfg.fold_scheme)?;
    let prepared = prepare_corpus::<T>(&corpus, &cfg.embeddings, cfg.graph)?;
    let (train_ids, dev_ids) = selection_split(&plan);
    let train_docs = select(&prepared, &train_ids);
    let dev_docs = select(&prepared, &dev_ids);
    let setting = if plan.scheme.scores(ergo_core::corpus::Scope::Inter) {
        cfg.train.early_stop_scope
    } else {
        ScopeFilter::Intra
    };
    let mut points = Vec::new();
    for &layers in &cfg.grid.layers {
        for &heads in &cfg.grid.heads {
            for &dropout in &cfg.grid.dropout {
                for &gamma in &cfg.grid.gamma {
                    points.push((layers, heads, dropout, gamma));
                }
            }
        }
    }
    let entries = ctx.pool()?.install(|| {
        points
            .par_iter()
            .map(|&(layers, heads, dropout, gamma)| {
                let model = ModelConfig {
                    layers,
                    heads,
                    dropout,
                    ..cfg.model.clone()
                };
                let focal = ergo_core::training::FocalConfig { gamma, ..cfg.focal };
                let train_cfg = TrainConfig {
                    early_stop_scope: setting,
                    ..cfg.train.clone()
                };
                let outcome = train(&train_docs, &dev_docs, &model, &focal, &train_cfg)?;
                let mut records = Vec::new();
                for doc in &dev_docs {
                    records.extend(predict_prepared(&outcome.params, doc)?);
                }
                Ok(GridEntry {
                    layers,
                    heads,
                    dropout,
                    gamma,
                    best_epoch: outcome.best_epoch,
                    dev: prf1(&records, setting),
                })
            })
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let best = entries
        .iter()
        .enumerate()
        .fold(0, |best, (i, e)| if e.dev.f1 > entries[best].dev.f1 { i } else { best });
    let report = GridReport {
        profile: T::PROFILE.into(),
        setting,
        entries,
        best,
    };
    write_json(&ctx.out("gridsearch.json"), &report)?;
    ctx.save_config()?;
    Ok(report)
}
