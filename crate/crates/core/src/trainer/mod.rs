//! Training and evaluation: both mini-batch paradigms, model selection on the
//! validation split, perturbation-aware data views and multi-run aggregation.

mod checkpoint;
mod multi;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, EvalReport, EvalRow, F1Scheme};
use crate::corpus::{Corpus, Dialogue, Split};
use crate::diffcore::{AdamConfig, AdamState, DiffError, Graph, Tensor, Var};
use crate::embed::{build_vocab, read_embeddings_into, EmbedError, EmbeddingTable};
use crate::models::{
    speaker_indices, ExtractorKind, FeatureFile, ForwardOut, Model, ModelConfig, ModelError,
    UtteranceInput,
};
use crate::perturb::{
    expand_dialogue, identity_view, utterance_views, ContextView, DonorPool, PerturbError,
    PerturbationKind, PerturbationSpec, PlanResources,
};
use crate::rng::{derive_seed, rng_for, Tag};
use crate::scalar::Scalar;

pub use checkpoint::Checkpoint;
pub use multi::{aggregate, multi_run, run_seeds, MultiRunResult, RunSummary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("no precomputed feature for {dialogue_id}#{index}")]
    MissingFeature { dialogue_id: String, index: usize },
    #[error(
        "dialogue {0}: a text-rewriting perturbation cannot be applied to precomputed features"
    )]
    TextOnPrecomputed(String),
    #[error("checkpoint does not match the corpus: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batching {
    /// Whole dialogues per batch; one recurrent pass per dialogue.
    #[default]
    Dialogue,
    /// (dialogue, target) pairs per batch; loss only at the target.
    Utterance,
}

impl Batching {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dialogue" => Some(Batching::Dialogue),
            "utterance" => Some(Batching::Utterance),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Includes the optional CRF decoder.
    pub model: ModelConfig,
    pub batching: Batching,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub train_perturbation: Option<PerturbationSpec>,
    pub val_perturbation: Option<PerturbationSpec>,
    /// Weight of the order-prediction loss.
    pub order_lambda: f64,
    /// Metric maximised on the validation split.
    pub selection_metric: F1Scheme,
    /// Minimum train-split frequency for a token to enter the vocabulary.
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batching: Batching::Dialogue,
            batch_size: 32,
            lr: 1e-3,
            epochs: 100,
            seed: 0,
            train_perturbation: None,
            val_perturbation: None,
            order_lambda: 1.0,
            selection_metric: F1Scheme::Weighted,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.order_lambda >= 0.0 && self.order_lambda.is_finite()) {
            return bad("order_lambda must be non-negative");
        }
        if self.min_freq == 0 {
            return bad("min_freq must be at least 1");
        }
        if let Some(p) = &self.train_perturbation {
            if self.batching == Batching::Dialogue
                && !matches!(p.kind, PerturbationKind::Shuffle { .. })
            {
                return bad("per-target train perturbations need utterance batching");
            }
            if self.model.extractor == ExtractorKind::Precomputed && p.rewrites_text() {
                return bad("text-rewriting perturbations need the cnn extractor");
            }
        }
        self.model.validate()?;
        Ok(())
    }
}

/// One step of a mini-batch: a dialogue, and for utterance batching the target inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BatchItem {
    pub dialogue: usize,
    pub target: Option<usize>,
}

/// Shuffled batches of `size` items drawn from `seed`.
pub fn make_batches(
    split: &[Dialogue],
    mode: Batching,
    size: usize,
    seed: u64,
) -> Vec<Vec<BatchItem>> {
    assert!(size >= 1, "batch size must be positive");
    let mut items: Vec<BatchItem> = match mode {
        Batching::Dialogue => (0..split.len())
            .map(|d| BatchItem {
                dialogue: d,
                target: None,
            })
            .collect(),
        Batching::Utterance => split
            .iter()
            .enumerate()
            .flat_map(|(d, dl)| {
                dl.targets().map(move |t| BatchItem {
                    dialogue: d,
                    target: Some(t),
                })
            })
            .collect(),
    };
    items.shuffle(&mut rng_for(seed, &[Tag::from("batches")]));
    items.chunks(size).map(<[BatchItem]>::to_vec).collect()
}

/// Everything besides the configuration that a run reads.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    /// Text of a pretrained embedding file (`token v1 .. v_dim` lines).
    pub pretrained: Option<&'a str>,
    pub features: Option<&'a FeatureFile>,
    pub resources: &'a PlanResources,
}

impl<'a> TrainInputs<'a> {
    pub fn eval_inputs(&self) -> EvalInputs<'a> {
        EvalInputs {
            features: self.features,
            resources: self.resources,
        }
    }
}

#[derive(Clone, Copy)]
pub struct EvalInputs<'a> {
    pub features: Option<&'a FeatureFile>,
    pub resources: &'a PlanResources,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed loss divided by the number of scored targets.
    pub train_loss: f64,
    pub val_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation score (earliest on ties).
    pub best_epoch: usize,
    /// Unperturbed test report of the best checkpoint.
    pub test_report: EvalReport,
}

impl RunResult {
    /// `epoch,train_loss,val_score` per epoch.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_score\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_score);
        }
        s
    }

    /// Writes `metrics.csv`, `checkpoint.json` and `test_report.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), TrainError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| TrainError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let files = [
            ("metrics.csv", self.metrics_csv()),
            ("checkpoint.json", serde_json::to_string(&self.checkpoint)?),
            ("test_report.json", self.test_report.to_json()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        Ok(())
    }
}

fn view_inputs<T: Scalar>(
    model: &Model<T>,
    view: &ContextView,
    features: Option<&FeatureFile>,
) -> Result<Vec<UtteranceInput<T>>, TrainError> {
    view.utterances
        .iter()
        .map(|u| match model.config.extractor {
            ExtractorKind::Cnn => Ok(UtteranceInput::Text(u.text.clone())),
            ExtractorKind::Precomputed => {
                if u.text_modified {
                    return Err(TrainError::TextOnPrecomputed(view.dialogue_id.clone()));
                }
                let missing = || TrainError::MissingFeature {
                    dialogue_id: view.dialogue_id.clone(),
                    index: u.origin,
                };
                let v = features
                    .ok_or_else(missing)?
                    .get(&view.dialogue_id, u.origin)
                    .ok_or_else(missing)?;
                Ok(UtteranceInput::Feature(
                    v.iter().map(|&x| T::lit(x)).collect(),
                ))
            }
        })
        .collect()
}

fn run_view<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<'_, T>,
    view: &ContextView,
    features: Option<&FeatureFile>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardOut, Vec<String>), TrainError> {
    let inputs = view_inputs(model, view, features)?;
    let feats: Vec<Var> = inputs
        .iter()
        .map(|i| model.extract(g, i))
        .collect::<Result<_, _>>()?;
    let speakers: Vec<String> = view.utterances.iter().map(|u| u.speaker.clone()).collect();
    let out = model.forward(g, &feats, &speaker_indices(&speakers), rng)?;
    Ok((out, speakers))
}

fn scored_positions(view: &ContextView) -> Vec<bool> {
    view.utterances.iter().map(|u| u.label.is_some()).collect()
}

/// Views for every split dialogue. Without a perturbation, dialogue batching reads whole
/// dialogues and utterance batching reads one full-context view per target.
fn split_views(
    split: &[Dialogue],
    corpus: &Corpus,
    spec: Option<&PerturbationSpec>,
    mode: Batching,
    resources: &PlanResources,
) -> Result<Vec<Vec<ContextView>>, TrainError> {
    let pool = DonorPool::new(split, &corpus.label_set);
    let groups = corpus.sentiment_groups.as_deref();
    split
        .iter()
        .map(|d| match (spec, mode) {
            (None, Batching::Dialogue) => Ok(vec![identity_view(d)]),
            (None, Batching::Utterance) => Ok(utterance_views(d)),
            (Some(s), _) => Ok(expand_dialogue(s, d, groups, &pool, resources)?),
        })
        .collect()
}

/// Classifies every eval-masked utterance of `split`, optionally under a perturbation.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    corpus: &Corpus,
    split: Split,
    perturbation: Option<&PerturbationSpec>,
    mode: Batching,
    inputs: EvalInputs<'_>,
) -> Result<EvalReport, TrainError> {
    if model.num_labels != corpus.num_labels() {
        return Err(TrainError::Incompatible(format!(
            "model has {} labels, corpus has {}",
            model.num_labels,
            corpus.num_labels()
        )));
    }
    let dialogues = corpus.split(split);
    let views = split_views(dialogues, corpus, perturbation, mode, inputs.resources)?;
    let mut preds: HashMap<(usize, usize), usize> = HashMap::new();
    for (di, vs) in views.iter().enumerate() {
        for v in vs {
            let mut g = Graph::new(&model.params);
            let (out, speakers) = run_view(model, &mut g, v, inputs.features, None)?;
            let labels = model.predict(&mut g, &out, &speakers, &scored_positions(v))?;
            for t in &v.targets {
                preds.insert((di, t.origin), labels[t.position]);
            }
        }
    }
    let rows = dialogues
        .iter()
        .enumerate()
        .flat_map(|(di, d)| {
            let preds = &preds;
            d.utterances.iter().enumerate().map(move |(i, u)| EvalRow {
                dialogue_id: d.id.clone(),
                index: i,
                gold: u.label,
                pred: preds.get(&(di, i)).copied(),
                eval_mask: u.eval_mask,
            })
        })
        .collect();
    Ok(EvalReport::new(corpus.label_set.clone(), rows)?)
}

/// Fresh model for `cfg`: vocabulary from the train split, embeddings random then
/// overwritten by any pretrained rows.
pub fn init_model<T: Scalar>(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
) -> Result<Model<T>, TrainError> {
    let corpus = inputs.corpus;
    let (vocab, table) = match cfg.model.extractor {
        ExtractorKind::Cnn => {
            let vocab = build_vocab(corpus, cfg.min_freq)?;
            let mut table = EmbeddingTable::random(
                &vocab,
                cfg.model.embed_dim,
                derive_seed(cfg.seed, &[Tag::from("embeddings")]),
            );
            if let Some(text) = inputs.pretrained {
                read_embeddings_into(text, &vocab, &mut table)?;
            }
            (Some(vocab), Some(table))
        }
        ExtractorKind::Precomputed => (None, None),
    };
    Ok(Model::new(
        cfg.model.clone(),
        corpus.num_labels(),
        vocab,
        table,
        derive_seed(cfg.seed, &[Tag::from("init")]),
    )?)
}

/// Sum of task (and weighted order) losses over one batch; gradients are accumulated.
#[allow(clippy::too_many_arguments)]
fn batch_step<T: Scalar>(
    model: &mut Model<T>,
    cfg: &TrainConfig,
    views: &[Vec<ContextView>],
    batch: &[BatchItem],
    features: Option<&FeatureFile>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    batch_index: usize,
) -> Result<(f64, usize), TrainError> {
    let mut total = 0.0;
    let mut targets = 0;
    for item in batch {
        let (view, only) = match item.target {
            None => (&views[item.dialogue][0], None),
            Some(t) => {
                let v = views[item.dialogue]
                    .iter()
                    .find(|v| v.targets.iter().any(|x| x.origin == t))
                    .expect("every target has a view");
                let pos = v
                    .targets
                    .iter()
                    .find(|x| x.origin == t)
                    .expect("target in view")
                    .position;
                (v, Some(pos))
            }
        };
        let grads = {
            let mut g = Graph::new(&model.params);
            let (out, speakers) = run_view(model, &mut g, view, features, Some(rng))?;
            let gold: Vec<Option<usize>> = match only {
                None => view
                    .utterances
                    .iter()
                    .map(|u| if u.eval_mask { u.label } else { None })
                    .collect(),
                Some(p) => (0..view.utterances.len())
                    .map(|i| {
                        if i == p {
                            view.utterances[i].label
                        } else {
                            None
                        }
                    })
                    .collect(),
            };
            targets += gold.iter().flatten().count();
            let mut loss =
                model.task_loss(&mut g, &out, &gold, &speakers, &scored_positions(view))?;
            if cfg.model.order_prediction && cfg.order_lambda > 0.0 {
                let positions: Vec<usize> = view.utterances.iter().map(|u| u.origin).collect();
                let order = model.order_loss(&mut g, &out, &positions)?;
                let order = g.scale(order, T::lit(cfg.order_lambda));
                loss = g.add(loss, order)?;
            }
            let value = g.value(loss).get(0, 0).to_f64_lossy();
            if !value.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: batch_index,
                });
            }
            total += value;
            g.backward(loss)?
        };
        model.params.accumulate(&grads);
    }
    Ok((total, targets))
}

/// Trains with Adam, keeps the parameters of the best validation epoch and reports the
/// unperturbed test split at that epoch.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
) -> Result<RunResult, TrainError> {
    cfg.validate()?;
    let corpus = inputs.corpus;
    for (name, split) in [
        ("train", &corpus.train),
        ("val", &corpus.val),
        ("test", &corpus.test),
    ] {
        if split.is_empty() {
            return Err(TrainError::EmptySplit(name));
        }
    }
    let mut model: Model<T> = init_model(cfg, inputs)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let shuffled_train = matches!(
        cfg.train_perturbation.map(|p| p.kind),
        Some(PerturbationKind::Shuffle { .. })
    );
    let mut fixed_views = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Tensors<T>)> = None;
    for epoch in 1..=cfg.epochs {
        // A shuffled regime draws a fresh order every epoch; other views are fixed.
        let epoch_views;
        let views = if shuffled_train {
            let mut spec = cfg.train_perturbation.expect("shuffle spec");
            spec.seed = derive_seed(spec.seed, &[Tag::from("epoch"), epoch.into()]);
            epoch_views = split_views(
                &corpus.train,
                corpus,
                Some(&spec),
                cfg.batching,
                inputs.resources,
            )?;
            &epoch_views
        } else {
            fixed_views.get_or_insert(split_views(
                &corpus.train,
                corpus,
                cfg.train_perturbation.as_ref(),
                cfg.batching,
                inputs.resources,
            )?)
        };
        let epoch_seed = derive_seed(cfg.seed, &[Tag::from("epoch"), epoch.into()]);
        let batches = make_batches(&corpus.train, cfg.batching, cfg.batch_size, epoch_seed);
        let (mut loss, mut targets) = (0.0, 0);
        for (bi, batch) in batches.iter().enumerate() {
            let mut rng = rng_for(epoch_seed, &[Tag::from("dropout"), bi.into()]);
            let (l, t) = batch_step(
                &mut model,
                cfg,
                views,
                batch,
                inputs.features,
                &mut rng,
                epoch,
                bi,
            )?;
            adam.step(&mut model.params);
            loss += l;
            targets += t;
        }
        let val = evaluate(
            &model,
            corpus,
            Split::Val,
            cfg.val_perturbation.as_ref(),
            Batching::Dialogue,
            inputs.eval_inputs(),
        )?;
        let score = val.score(cfg.selection_metric);
        history.push(EpochRecord {
            epoch,
            train_loss: loss / targets.max(1) as f64,
            val_score: score,
        });
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, snapshot(&model)));
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    restore(&mut model, values);
    let test_report = evaluate(
        &model,
        corpus,
        Split::Test,
        None,
        Batching::Dialogue,
        inputs.eval_inputs(),
    )?;
    Ok(RunResult {
        seed: cfg.seed,
        checkpoint: Checkpoint::capture(cfg, &model, &corpus.label_set),
        history,
        best_epoch,
        test_report,
    })
}

type Tensors<T> = Vec<Tensor<T>>;

fn snapshot<T: Scalar>(model: &Model<T>) -> Tensors<T> {
    model.params.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore<T: Scalar>(model: &mut Model<T>, values: Tensors<T>) {
    for (p, v) in model.params.iter_mut().zip(values) {
        p.value = v;
    }
}
