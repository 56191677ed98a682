//! Flat `key = value` experiment files with dotted keys.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use ctxprobe::analysis::F1Scheme;
use ctxprobe::models::{ClassifierKind, CrfKind, ExtractorKind};
use ctxprobe::perturb::PerturbationSpec;
use ctxprobe::trainer::{Batching, TrainConfig};
use serde::de::DeserializeOwned;

/// A rejected configuration entry. `line` is 0 for command-line overrides.
#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

const KEYS: &[&str] = &[
    "seed",
    "runs",
    "threads",
    "corpus",
    "embeddings",
    "features",
    "out",
    "lexicon.substitution",
    "lexicon.sentiment",
    "train.batching",
    "train.batch_size",
    "train.lr",
    "train.epochs",
    "train.order_lambda",
    "train.selection_metric",
    "train.min_freq",
    "train.perturbation",
    "val.perturbation",
    "model.extractor",
    "model.classifier",
    "model.residual",
    "model.d_h",
    "model.d_g",
    "model.d_p",
    "model.d_e",
    "model.cnn_filter_sizes",
    "model.cnn_maps_per_size",
    "model.cnn_out",
    "model.embed_dim",
    "model.trainable_embeddings",
    "model.max_tokens",
    "model.feature_dim",
    "model.dropout",
    "model.order_prediction",
    "model.max_dialogue_len",
    "model.listener_update",
    "model.crf",
    "probe.train",
    "probe.test",
    "probe.checkpoint",
];

const PATH_KEYS: &[&str] = &[
    "corpus",
    "embeddings",
    "features",
    "out",
    "lexicon.substitution",
    "lexicon.sentiment",
    "probe.checkpoint",
];

/// Raw entries keyed by name, each with the line it came from.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    /// Parses `text`; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim();
            if raw.entries.contains_key(key) {
                return Err(ConfigError {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            raw.insert(line_no, key, v.trim(), base)?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let base = std::path::absolute(path)
            .with_context(|| format!("cannot resolve {}", path.display()))?;
        let base = base.parent().unwrap_or(Path::new("/"));
        Ok(Self::parse(&text, base)?)
    }

    /// Replaces `key`; relative paths are taken from the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let cwd = std::env::current_dir().unwrap_or_default();
        self.insert(0, key, value, &cwd)
    }

    fn insert(
        &mut self,
        line: usize,
        key: &str,
        value: &str,
        base: &Path,
    ) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        let value = if PATH_KEYS.contains(&key) {
            resolve(base, value).display().to_string()
        } else {
            value.to_string()
        };
        self.entries.insert(key.to_string(), (line, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// One `key = value` line per entry, sorted by key.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, (_, v))| format!("{k} = {v}\n"))
            .collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.entries
            .get(key)
            .map(|(line, v)| {
                v.parse().map_err(|e: T::Err| ConfigError {
                    line: *line,
                    message: format!("{key}: {e}"),
                })
            })
            .transpose()
    }

    fn named<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.entries
            .get(key)
            .map(|(line, v)| {
                serde_json::from_value(serde_json::Value::String(v.clone())).map_err(|_| {
                    ConfigError {
                        line: *line,
                        message: format!("{key}: unknown value `{v}`"),
                    }
                })
            })
            .transpose()
    }

    fn spec(
        &self,
        key: &str,
        text: &str,
        seed: u64,
    ) -> Result<Option<PerturbationSpec>, ConfigError> {
        let text = text.trim();
        if text == "none" {
            return Ok(None);
        }
        PerturbationSpec::parse_with_default_seed(text, seed)
            .map(Some)
            .map_err(|e| ConfigError {
                line: self.entries.get(key).map_or(0, |e| e.0),
                message: e.to_string(),
            })
    }

    fn specs(&self, key: &str, seed: u64) -> Result<Vec<Option<PerturbationSpec>>, ConfigError> {
        match self.get(key) {
            None => Ok(vec![None]),
            Some(v) => v.split('|').map(|s| self.spec(key, s, seed)).collect(),
        }
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A fully interpreted experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub substitution_lexicon: Option<PathBuf>,
    pub sentiment_lexicon: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs: usize,
    pub threads: usize,
    pub train: TrainConfig,
    /// Train-time perturbations of the probe grid; `None` is unperturbed.
    pub probe_train: Vec<Option<PerturbationSpec>>,
    pub probe_test: Vec<Option<PerturbationSpec>>,
    pub probe_checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let seed = raw.parsed::<u64>("seed")?.unwrap_or(0);
        let mut t = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        macro_rules! set {
            ($field:expr, $key:literal) => {
                if let Some(v) = raw.parsed($key)? {
                    $field = v;
                }
            };
        }
        set!(t.batch_size, "train.batch_size");
        set!(t.lr, "train.lr");
        set!(t.epochs, "train.epochs");
        set!(t.order_lambda, "train.order_lambda");
        set!(t.min_freq, "train.min_freq");
        let m = &mut t.model;
        set!(m.residual, "model.residual");
        set!(m.d_h, "model.d_h");
        set!(m.d_g, "model.d_g");
        set!(m.d_p, "model.d_p");
        set!(m.d_e, "model.d_e");
        set!(m.cnn_maps_per_size, "model.cnn_maps_per_size");
        set!(m.cnn_out, "model.cnn_out");
        set!(m.embed_dim, "model.embed_dim");
        set!(m.trainable_embeddings, "model.trainable_embeddings");
        set!(m.max_tokens, "model.max_tokens");
        set!(m.feature_dim, "model.feature_dim");
        set!(m.dropout, "model.dropout");
        set!(m.order_prediction, "model.order_prediction");
        set!(m.max_dialogue_len, "model.max_dialogue_len");
        set!(m.listener_update, "model.listener_update");
        if let Some(v) = raw.named::<ExtractorKind>("model.extractor")? {
            m.extractor = v;
        }
        if let Some(v) = raw.named::<ClassifierKind>("model.classifier")? {
            m.classifier = v;
        }
        if let Some(v) = raw.get("model.crf") {
            m.crf = if v == "none" {
                None
            } else {
                raw.named::<CrfKind>("model.crf")?
            };
        }
        if let Some(v) = raw.get("model.cnn_filter_sizes") {
            m.cnn_filter_sizes = v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError {
                    line: raw.entries["model.cnn_filter_sizes"].0,
                    message: format!("model.cnn_filter_sizes: {e}"),
                })?;
        }
        if let Some(v) = raw.named::<Batching>("train.batching")? {
            t.batching = v;
        }
        if let Some(v) = raw.named::<F1Scheme>("train.selection_metric")? {
            t.selection_metric = v;
        }
        if let Some(v) = raw.get("train.perturbation") {
            t.train_perturbation = raw.spec("train.perturbation", v, seed)?;
        }
        if let Some(v) = raw.get("val.perturbation") {
            t.val_perturbation = raw.spec("val.perturbation", v, seed)?;
        }
        t.validate().map_err(|e| ConfigError {
            line: 0,
            message: e.to_string(),
        })?;

        let path = |k: &str| raw.get(k).map(PathBuf::from);
        let cfg = ExperimentConfig {
            corpus: path("corpus"),
            embeddings: path("embeddings"),
            features: path("features"),
            substitution_lexicon: path("lexicon.substitution"),
            sentiment_lexicon: path("lexicon.sentiment"),
            out: path("out"),
            runs: raw.parsed("runs")?.unwrap_or(1),
            threads: raw.parsed("threads")?.unwrap_or(1),
            probe_train: raw.specs("probe.train", seed)?,
            probe_test: raw.specs("probe.test", seed)?,
            probe_checkpoint: path("probe.checkpoint"),
            train: t,
        };
        if cfg.runs == 0 || cfg.threads == 0 {
            return Err(ConfigError {
                line: 0,
                message: "runs and threads must be at least 1".into(),
            });
        }
        for spec in cfg.probe_train.iter().flatten() {
            let probe = TrainConfig {
                train_perturbation: Some(*spec),
                ..cfg.train.clone()
            };
            probe.validate().map_err(|e| ConfigError {
                line: raw.entries["probe.train"].0,
                message: format!("probe.train `{spec}`: {e}"),
            })?;
        }
        Ok(cfg)
    }
}
