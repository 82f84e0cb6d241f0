//! Flat `key = value` experiment files.
//!
//! Lines are `key = value`; `#` starts a comment. `include = other.cfg`
//! (relative to the including file) pulls in another file whose values act
//! as defaults for the including one. Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ergo_core::corpus::FoldScheme;
use ergo_core::evaluation::ScopeFilter;
use ergo_core::model::{LayerKind, ModelConfig};
use ergo_core::relgraph::GraphStrategy;
use ergo_core::training::{FocalConfig, GraphOptions, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: PathBuf, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` set twice in {path}")]
    Duplicate { key: String, path: PathBuf },
    #[error("include cycle through {0}")]
    IncludeCycle(PathBuf),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("`{0}` must be set")]
    Missing(&'static str),
}

/// Every accepted key with its default (`None` when it has none).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("corpus", None),
    ("fold_scheme", Some("esl_5fold_topic")),
    ("embeddings", Some("synthetic")),
    ("embeddings_dir", None),
    ("embed_dim", Some("16")),
    ("synthetic_leak", Some("none")),
    ("window_size", Some("256")),
    ("window_step", Some("32")),
    ("graph_strategy", Some("shared_event")),
    ("self_loops", Some("true")),
    ("layer_kind", Some("rgt")),
    ("layers", Some("2")),
    ("heads", Some("4")),
    ("hidden_dim", Some("auto")),
    ("head_dim", Some("auto")),
    ("dropout", Some("0.2")),
    ("gamma", Some("2")),
    ("alpha", Some("0.75")),
    ("learning_rate", Some("0.001")),
    ("warmup_fraction", Some("0.08")),
    ("max_epochs", Some("50")),
    ("patience", Some("5")),
    ("clip_norm", Some("1.0")),
    ("weight_decay", Some("0.01")),
    ("early_stop_scope", Some("combined")),
    ("seed", Some("0")),
    ("output_dir", Some("out")),
    ("jobs", Some("1")),
    ("grid_layers", Some("1,2,3")),
    ("grid_heads", Some("1,2,4,8")),
    ("grid_dropout", Some("0.1,0.2,0.3")),
    ("grid_gamma", Some("0,1,2,3")),
];

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Raw key/value pairs, before typing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string())))
            .collect();
        Self { values }
    }

    /// Defaults overlaid with `path` and whatever it includes.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut raw = Self::defaults();
        let mut stack = BTreeSet::new();
        raw.merge_file(path, &mut stack)?;
        Ok(raw)
    }

    fn merge_file(&mut self, path: &Path, stack: &mut BTreeSet<PathBuf>) -> Result<(), ConfigError> {
        let canonical = fs::canonicalize(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !stack.insert(canonical.clone()) {
            return Err(ConfigError::IncludeCycle(canonical));
        }
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut own = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: path.to_path_buf(),
                line: n + 1,
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "include" {
                let base = path.parent().unwrap_or(Path::new("."));
                self.merge_file(&base.join(value), stack)?;
                continue;
            }
            if !known(key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            if own.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    path: path.to_path_buf(),
                });
            }
        }
        self.values.extend(own);
        stack.remove(&canonical);
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Sorted `key = value` lines that reload to the same values.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Where event vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Synthetic {
        dim: usize,
        seed: u64,
        leak: Option<f64>,
    },
    Precomputed {
        dir: PathBuf,
        dim: usize,
        window_size: usize,
    },
}

impl EmbeddingSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSpec::Synthetic { dim, .. } | EmbeddingSpec::Precomputed { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub dropout: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// A fully typed experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub fold_scheme: FoldScheme,
    pub embeddings: EmbeddingSpec,
    pub window_step: usize,
    pub graph: GraphOptions,
    pub model: ModelConfig,
    pub focal: FocalConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub grid: Grid,
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

struct Reader<'a>(&'a RawConfig);

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key).unwrap_or("");
        v.parse().map_err(|e: T::Err| bad(key, v, e.to_string()))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str, none: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) if v == none => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key).unwrap_or("");
        let items: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        match items {
            Ok(items) if !items.is_empty() => Ok(items),
            Ok(_) => Err(bad(key, v, "empty list")),
            Err(e) => Err(bad(key, v, e.to_string())),
        }
    }

    fn keyword<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>, expected: &str) -> Result<T, ConfigError> {
        let v = self.raw(key).unwrap_or("");
        parse(v).ok_or_else(|| bad(key, v, format!("expected one of {expected}")))
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let r = Reader(raw);
        let seed: u64 = r.parse("seed")?;
        let dim: usize = r.parse("embed_dim")?;
        if dim == 0 {
            return Err(bad("embed_dim", "0", "must be positive"));
        }
        let window_size: usize = r.parse("window_size")?;
        let window_step: usize = r.parse("window_step")?;
        if window_size == 0 || window_step == 0 || window_step > window_size {
            return Err(bad(
                "window_step",
                &window_step.to_string(),
                format!("must lie in 1..={window_size}"),
            ));
        }
        let embeddings = match r.raw("embeddings").unwrap_or("") {
            "synthetic" => EmbeddingSpec::Synthetic {
                dim,
                seed,
                leak: r.optional("synthetic_leak", "none")?,
            },
            "precomputed" => EmbeddingSpec::Precomputed {
                dir: r
                    .raw("embeddings_dir")
                    .map(PathBuf::from)
                    .ok_or(ConfigError::Missing("embeddings_dir"))?,
                dim,
                window_size,
            },
            other => return Err(bad("embeddings", other, "expected synthetic or precomputed")),
        };
        let graph = GraphOptions {
            strategy: r.keyword("graph_strategy", GraphStrategy::parse, "shared_event, complete")?,
            self_loops: r.parse("self_loops")?,
        };
        let layer_kind = r.keyword("layer_kind", LayerKind::parse, "rgt, gcn")?;
        let model = ModelConfig {
            layers: r.parse("layers")?,
            heads: r.parse("heads")?,
            hidden_dim: r.optional("hidden_dim", "auto")?.unwrap_or(dim),
            head_dim: r.optional("head_dim", "auto")?,
            dropout: r.parse("dropout")?,
            layer_kind,
            ..ModelConfig::for_embedding_dim(dim)
        };
        model
            .validate()
            .map_err(|e| bad("layers", &model.layers.to_string(), e.to_string()))?;
        let focal = FocalConfig {
            gamma: r.parse("gamma")?,
            alpha: r.parse("alpha")?,
        };
        focal
            .validate()
            .map_err(|e| bad("gamma", &focal.gamma.to_string(), e.to_string()))?;
        let train = TrainConfig {
            learning_rate: r.parse("learning_rate")?,
            warmup_fraction: r.parse("warmup_fraction")?,
            max_epochs: r.parse("max_epochs")?,
            patience: r.optional("patience", "none")?,
            clip_norm: r.parse("clip_norm")?,
            seed,
            weight_decay: r.parse("weight_decay")?,
            early_stop_scope: r.keyword("early_stop_scope", ScopeFilter::parse, "intra, inter, combined")?,
        };
        train
            .validate()
            .map_err(|e| bad("learning_rate", &train.learning_rate.to_string(), e.to_string()))?;
        let jobs: usize = r.parse("jobs")?;
        Ok(Self {
            corpus: r.raw("corpus").map(PathBuf::from),
            fold_scheme: r.keyword("fold_scheme", FoldScheme::parse, "esl_5fold_topic, ctb_10fold_doc")?,
            embeddings,
            window_step,
            graph,
            model,
            focal,
            train,
            output_dir: PathBuf::from(r.raw("output_dir").unwrap_or("out")),
            jobs: jobs.max(1),
            grid: Grid {
                layers: r.list("grid_layers")?,
                heads: r.list("grid_heads")?,
                dropout: r.list("grid_dropout")?,
                gamma: r.list("grid_gamma")?,
            },
        })
    }

    pub fn corpus_path(&self) -> Result<&Path, ConfigError> {
        self.corpus.as_deref().ok_or(ConfigError::Missing("corpus"))
    }
}
