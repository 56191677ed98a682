//! Feature extractors and utterance classifiers.
//!
//! A [`Model`] maps a sequence of utterances (a dialogue or a perturbed view of
//! one) to per-position class logits. Extraction and classification are split
//! so callers can share extracted features between positions that carry the
//! same text.

mod cnn;
mod features;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{assign_roles, CrfLayer, CrfLayerError, CrfOrder, SpeakerCrfLayer};
use crate::diffcore::{
    gru_cell, lstm_cell, Dense, DiffError, Graph, GruParams, LstmParams, ParamSet, Tensor, Var,
};
use crate::embed::{token_ids, tokenize, EmbeddingTable, Vocab};
use crate::scalar::Scalar;

pub use cnn::CnnExtractor;
pub use features::{load_feature_file, read_feature_file_str, FeatureError, FeatureFile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Cnn,
    Precomputed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logreg,
    Clstm,
    Bclstm,
    DialogueRnn,
}

impl ClassifierKind {
    pub fn is_recurrent(self) -> bool {
        !matches!(self, ClassifierKind::Logreg)
    }
}

/// CRF decoding layer placed on top of the classifier head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfKind {
    /// First-order chain over the whole dialogue.
    Global,
    /// Second-order chain over the whole dialogue.
    GlobalExt,
    /// One first-order chain per speaker role.
    Speaker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorKind,
    pub classifier: ClassifierKind,
    pub residual: bool,
    pub d_h: usize,
    pub d_g: usize,
    pub d_p: usize,
    pub d_e: usize,
    pub cnn_filter_sizes: Vec<usize>,
    pub cnn_maps_per_size: usize,
    pub cnn_out: usize,
    pub embed_dim: usize,
    pub trainable_embeddings: bool,
    /// Tokens kept per utterance.
    pub max_tokens: usize,
    /// Input width for the precomputed extractor.
    pub feature_dim: usize,
    /// Dropout rate on extractor output during training.
    pub dropout: f64,
    pub order_prediction: bool,
    pub max_dialogue_len: usize,
    /// Update listener party states in DialogueRNN.
    pub listener_update: bool,
    pub crf: Option<CrfKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::Cnn,
            classifier: ClassifierKind::Bclstm,
            residual: false,
            d_h: 100,
            d_g: 100,
            d_p: 100,
            d_e: 100,
            cnn_filter_sizes: vec![1, 2, 3],
            cnn_maps_per_size: 100,
            cnn_out: 100,
            embed_dim: 300,
            trainable_embeddings: false,
            max_tokens: 60,
            feature_dim: 0,
            dropout: 0.5,
            order_prediction: false,
            max_dialogue_len: 110,
            listener_update: false,
            crf: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("d_h", self.d_h),
            ("d_g", self.d_g),
            ("d_p", self.d_p),
            ("d_e", self.d_e),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        match self.extractor {
            ExtractorKind::Cnn => {
                if self.cnn_filter_sizes.is_empty() || self.cnn_filter_sizes.contains(&0) {
                    return bad("cnn_filter_sizes must be non-empty and positive".into());
                }
                if self.cnn_maps_per_size == 0 || self.cnn_out == 0 || self.embed_dim == 0 {
                    return bad("cnn_maps_per_size, cnn_out and embed_dim must be positive".into());
                }
                if self.max_tokens == 0 {
                    return bad("max_tokens must be positive".into());
                }
            }
            ExtractorKind::Precomputed if self.feature_dim == 0 => {
                return bad("feature_dim must be positive for precomputed features".into());
            }
            ExtractorKind::Precomputed => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if self.order_prediction && !self.classifier.is_recurrent() {
            return bad("order prediction needs a recurrent classifier".into());
        }
        if self.order_prediction && self.max_dialogue_len == 0 {
            return bad("max_dialogue_len must be positive".into());
        }
        Ok(())
    }

    /// Width of one extracted utterance feature.
    pub fn feature_width(&self) -> usize {
        match self.extractor {
            ExtractorKind::Cnn => self.cnn_out,
            ExtractorKind::Precomputed => self.feature_dim,
        }
    }

    /// Width of the per-position vector read by the classification head.
    pub fn head_width(&self) -> usize {
        match self.classifier {
            ClassifierKind::Logreg | ClassifierKind::Clstm => self.d_h,
            ClassifierKind::Bclstm => 2 * self.d_h,
            ClassifierKind::DialogueRnn => 2 * self.d_e,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("bad model input: {0}")]
    Input(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Crf(#[from] CrfLayerError),
}

/// What the extractor consumes for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub enum UtteranceInput<T> {
    Text(String),
    Feature(Vec<T>),
}

#[derive(Clone, Debug)]
struct DrnnDirection {
    global: GruParams,
    attention: crate::diffcore::ParamId,
    party: GruParams,
    listener: Option<GruParams>,
    emotion: GruParams,
}

#[derive(Clone, Debug)]
enum Classifier {
    Logreg {
        hidden: Dense,
    },
    Clstm {
        fwd: LstmParams,
    },
    Bclstm {
        fwd: LstmParams,
        bwd: LstmParams,
    },
    DialogueRnn {
        fwd: DrnnDirection,
        bwd: DrnnDirection,
    },
}

#[derive(Clone, Debug)]
enum CrfHead {
    Global(CrfLayer),
    Speaker(SpeakerCrfLayer),
}

/// Number of CRF roles in Speaker-CRF; extra speakers share the last role.
pub const SPEAKER_CRF_ROLES: usize = 2;

/// Result of [`Model::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    /// `n × K` class scores (CRF emissions when a CRF is configured).
    pub logits: Var,
    /// `n × head_width` vectors the heads read.
    pub head_input: Var,
    /// `n × max_dialogue_len` position scores when order prediction is on.
    pub order_logits: Option<Var>,
}

/// Classifier parameters plus the pieces needed to encode raw text.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub num_labels: usize,
    pub params: ParamSet<T>,
    pub vocab: Option<Vocab>,
    cnn: Option<CnnExtractor>,
    classifier: Classifier,
    residual_proj: Option<Dense>,
    head: Dense,
    order_head: Option<Dense>,
    crf: Option<CrfHead>,
}

fn zeros<T: Scalar>(g: &mut Graph<'_, T>, cols: usize) -> Var {
    g.constant(Tensor::zeros(1, cols))
}

fn register_drnn<T: Scalar>(
    params: &mut ParamSet<T>,
    prefix: &str,
    cfg: &ModelConfig,
) -> Result<DrnnDirection, DiffError> {
    let f = cfg.feature_width();
    Ok(DrnnDirection {
        global: GruParams::register(params, &format!("{prefix}.global"), f + cfg.d_p, cfg.d_g)?,
        attention: params.add_glorot(format!("{prefix}.attention"), f, cfg.d_g)?,
        party: GruParams::register(params, &format!("{prefix}.party"), f + cfg.d_g, cfg.d_p)?,
        listener: if cfg.listener_update {
            Some(GruParams::register(
                params,
                &format!("{prefix}.listener"),
                f + cfg.d_g,
                cfg.d_p,
            )?)
        } else {
            None
        },
        emotion: GruParams::register(params, &format!("{prefix}.emotion"), cfg.d_p, cfg.d_e)?,
    })
}

/// Local speaker indices by order of first appearance.
pub fn speaker_indices(speakers: &[String]) -> Vec<usize> {
    let mut seen: Vec<&str> = Vec::new();
    speakers
        .iter()
        .map(|s| match seen.iter().position(|x| *x == s.as_str()) {
            Some(i) => i,
            None => {
                seen.push(s);
                seen.len() - 1
            }
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialised model.
    ///
    /// The CNN extractor needs `vocab` and `embeddings`; the table becomes a
    /// parameter that is trainable when the config says so.
    pub fn new(
        config: ModelConfig,
        num_labels: usize,
        vocab: Option<Vocab>,
        embeddings: Option<EmbeddingTable<T>>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if num_labels == 0 {
            return Err(ModelError::Config("label set is empty".into()));
        }
        let mut params = ParamSet::new(seed);
        let cnn = match config.extractor {
            ExtractorKind::Cnn => {
                let (Some(v), Some(table)) = (&vocab, embeddings) else {
                    return Err(ModelError::Config(
                        "cnn extractor needs a vocabulary and embeddings".into(),
                    ));
                };
                if table.matrix.rows() != v.len() || table.dim != config.embed_dim {
                    return Err(ModelError::Config(format!(
                        "embedding table is {}x{}, expected {}x{}",
                        table.matrix.rows(),
                        table.dim,
                        v.len(),
                        config.embed_dim
                    )));
                }
                Some(CnnExtractor::register(
                    &mut params,
                    table.matrix,
                    config.trainable_embeddings,
                    &config.cnn_filter_sizes,
                    config.cnn_maps_per_size,
                    config.cnn_out,
                )?)
            }
            ExtractorKind::Precomputed => None,
        };
        let f = config.feature_width();
        let classifier = match config.classifier {
            ClassifierKind::Logreg => Classifier::Logreg {
                hidden: Dense::register(&mut params, "logreg.hidden", f, config.d_h)?,
            },
            ClassifierKind::Clstm => Classifier::Clstm {
                fwd: LstmParams::register(&mut params, "lstm.fwd", f, config.d_h)?,
            },
            ClassifierKind::Bclstm => Classifier::Bclstm {
                fwd: LstmParams::register(&mut params, "lstm.fwd", f, config.d_h)?,
                bwd: LstmParams::register(&mut params, "lstm.bwd", f, config.d_h)?,
            },
            ClassifierKind::DialogueRnn => Classifier::DialogueRnn {
                fwd: register_drnn(&mut params, "drnn.fwd", &config)?,
                bwd: register_drnn(&mut params, "drnn.bwd", &config)?,
            },
        };
        let hw = config.head_width();
        let residual_proj = if config.residual && config.classifier.is_recurrent() && f != hw {
            Some(Dense::register(&mut params, "residual.proj", f, hw)?)
        } else {
            None
        };
        let head = Dense::register(&mut params, "head", hw, num_labels)?;
        let order_head = if config.order_prediction {
            Some(Dense::register(
                &mut params,
                "order_head",
                hw,
                config.max_dialogue_len,
            )?)
        } else {
            None
        };
        let crf = match config.crf {
            None => None,
            Some(CrfKind::Global) => Some(CrfHead::Global(CrfLayer::register(
                &mut params,
                "crf",
                CrfOrder::First,
                num_labels,
            )?)),
            Some(CrfKind::GlobalExt) => Some(CrfHead::Global(CrfLayer::register(
                &mut params,
                "crf",
                CrfOrder::Second,
                num_labels,
            )?)),
            Some(CrfKind::Speaker) => Some(CrfHead::Speaker(SpeakerCrfLayer::register(
                &mut params,
                "crf",
                CrfOrder::First,
                num_labels,
                SPEAKER_CRF_ROLES,
            )?)),
        };
        Ok(Self {
            config,
            num_labels,
            params,
            vocab,
            cnn,
            classifier,
            residual_proj,
            head,
            order_head,
            crf,
        })
    }

    /// Extracted feature for one utterance (before dropout).
    pub fn extract(
        &self,
        g: &mut Graph<'_, T>,
        input: &UtteranceInput<T>,
    ) -> Result<Var, ModelError> {
        match (input, &self.cnn) {
            (UtteranceInput::Text(text), Some(cnn)) => {
                let vocab = self.vocab.as_ref().expect("cnn models carry a vocabulary");
                let (ids, len) = token_ids(&tokenize(text), vocab, self.config.max_tokens);
                Ok(cnn.forward(g, &ids, len)?)
            }
            (UtteranceInput::Feature(v), None) => {
                if v.len() != self.config.feature_dim {
                    return Err(ModelError::Input(format!(
                        "feature has {} values, expected {}",
                        v.len(),
                        self.config.feature_dim
                    )));
                }
                Ok(g.constant(Tensor::row_vector(v.clone())))
            }
            (UtteranceInput::Text(_), None) => Err(ModelError::Input(
                "precomputed-feature model received raw text".into(),
            )),
            (UtteranceInput::Feature(_), Some(_)) => Err(ModelError::Input(
                "cnn model received a precomputed feature".into(),
            )),
        }
    }

    fn lstm_pass(
        g: &mut Graph<'_, T>,
        p: &LstmParams,
        feats: &[Var],
    ) -> Result<Vec<Var>, DiffError> {
        let mut h = zeros(g, p.hidden);
        let mut c = zeros(g, p.hidden);
        let mut out = Vec::with_capacity(feats.len());
        for &x in feats {
            (h, c) = lstm_cell(g, x, h, c, p)?;
            out.push(h);
        }
        Ok(out)
    }

    fn drnn_pass(
        &self,
        g: &mut Graph<'_, T>,
        p: &DrnnDirection,
        feats: &[Var],
        speakers: &[usize],
    ) -> Result<Vec<Var>, DiffError> {
        let cfg = &self.config;
        let mut party: Vec<Option<Var>> = Vec::new();
        let mut history: Vec<Var> = Vec::with_capacity(feats.len());
        let mut g_prev = zeros(g, cfg.d_g);
        let mut e = zeros(g, cfg.d_e);
        let mut out = Vec::with_capacity(feats.len());
        for (&f, &s) in feats.iter().zip(speakers) {
            if party.len() <= s {
                party.resize(s + 1, None);
            }
            let q_prev = match party[s] {
                Some(q) => q,
                None => zeros(g, cfg.d_p),
            };
            let gin = g.concat_cols(&[f, q_prev])?;
            let g_t = gru_cell(g, gin, g_prev, &p.global)?;

            let c_t = if history.is_empty() {
                zeros(g, cfg.d_g)
            } else {
                let hist = g.concat_rows(&history)?;
                let w = g.param(p.attention);
                let query = g.matmul(f, w)?;
                let hist_t = g.transpose(hist);
                let scores = g.matmul(query, hist_t)?;
                let alpha = g.softmax_rows(scores);
                g.matmul(alpha, hist)?
            };

            let pin = g.concat_cols(&[f, c_t])?;
            let q_new = gru_cell(g, pin, q_prev, &p.party)?;
            if let Some(lp) = &p.listener {
                for (l, slot) in party.iter_mut().enumerate() {
                    if l != s {
                        if let Some(q) = *slot {
                            *slot = Some(gru_cell(g, pin, q, lp)?);
                        }
                    }
                }
            }
            party[s] = Some(q_new);
            e = gru_cell(g, q_new, e, &p.emotion)?;
            history.push(g_t);
            g_prev = g_t;
            out.push(e);
        }
        Ok(out)
    }

    /// Runs the classifier over one sequence of extracted features.
    ///
    /// `speakers` are local indices (see [`speaker_indices`]). When `rng` is
    /// given, dropout is applied to every feature at the configured rate.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        feats: &[Var],
        speakers: &[usize],
        rng: Option<&mut R>,
    ) -> Result<ForwardOut, ModelError> {
        if feats.is_empty() || feats.len() != speakers.len() {
            return Err(ModelError::Input(format!(
                "{} features for {} speakers",
                feats.len(),
                speakers.len()
            )));
        }
        let feats: Vec<Var> = match rng {
            Some(rng) if self.config.dropout > 0.0 => feats
                .iter()
                .map(|&f| g.dropout(f, self.config.dropout, rng))
                .collect::<Result<_, _>>()?,
            _ => feats.to_vec(),
        };
        let states: Vec<Var> = match &self.classifier {
            Classifier::Logreg { hidden } => {
                let x = g.concat_rows(&feats)?;
                let h = hidden.forward(g, x)?;
                vec![g.relu(h)]
            }
            Classifier::Clstm { fwd } => Self::lstm_pass(g, fwd, &feats)?,
            Classifier::Bclstm { fwd, bwd } => {
                let f = Self::lstm_pass(g, fwd, &feats)?;
                let rev: Vec<Var> = feats.iter().rev().copied().collect();
                let mut b = Self::lstm_pass(g, bwd, &rev)?;
                b.reverse();
                f.iter()
                    .zip(&b)
                    .map(|(&x, &y)| g.concat_cols(&[x, y]))
                    .collect::<Result<_, _>>()?
            }
            Classifier::DialogueRnn { fwd, bwd } => {
                let f = self.drnn_pass(g, fwd, &feats, speakers)?;
                let rev: Vec<Var> = feats.iter().rev().copied().collect();
                let rev_spk: Vec<usize> = speakers.iter().rev().copied().collect();
                let mut b = self.drnn_pass(g, bwd, &rev, &rev_spk)?;
                b.reverse();
                f.iter()
                    .zip(&b)
                    .map(|(&x, &y)| g.concat_cols(&[x, y]))
                    .collect::<Result<_, _>>()?
            }
        };
        let mut head_input = g.concat_rows(&states)?;
        if self.config.residual && self.config.classifier.is_recurrent() {
            let x = g.concat_rows(&feats)?;
            let skip = match &self.residual_proj {
                Some(p) => p.forward(g, x)?,
                None => x,
            };
            head_input = g.add(head_input, skip)?;
        }
        let logits = self.head.forward(g, head_input)?;
        let order_logits = match &self.order_head {
            Some(h) => Some(h.forward(g, head_input)?),
            None => None,
        };
        Ok(ForwardOut {
            logits,
            head_input,
            order_logits,
        })
    }

    /// CRF emissions: logits with rows outside `scored` set to zero (uniform).
    fn emissions(
        &self,
        g: &mut Graph<'_, T>,
        logits: Var,
        scored: &[bool],
    ) -> Result<Var, DiffError> {
        if scored.iter().all(|&s| s) {
            return Ok(logits);
        }
        let (n, k) = g.shape(logits);
        let mut mask = Tensor::zeros(n, k);
        for (r, &s) in scored.iter().enumerate() {
            if s {
                mask.row_mut(r).fill(T::one());
            }
        }
        let m = g.constant(mask);
        g.mul(logits, m)
    }

    /// Summed task loss over positions with a gold label.
    ///
    /// `scored` marks positions whose emissions are meaningful (labelled
    /// utterances); it only matters for CRF heads.
    pub fn task_loss(
        &self,
        g: &mut Graph<'_, T>,
        out: &ForwardOut,
        gold: &[Option<usize>],
        speakers: &[String],
        scored: &[bool],
    ) -> Result<Var, ModelError> {
        match &self.crf {
            None => Ok(g.softmax_cross_entropy(out.logits, gold)?),
            Some(head) => {
                let e = self.emissions(g, out.logits, scored)?;
                match head {
                    CrfHead::Global(layer) => Ok(layer.nll(g, e, gold)?),
                    CrfHead::Speaker(layer) => {
                        let roles = assign_roles(speakers, SPEAKER_CRF_ROLES);
                        Ok(layer.nll(g, e, &roles, gold)?)
                    }
                }
            }
        }
    }

    /// Cross-entropy of the order head against shuffled positions.
    ///
    /// `positions[i]` is the original index of the utterance now at `i`;
    /// positions at or beyond `max_dialogue_len` are left out.
    pub fn order_loss(
        &self,
        g: &mut Graph<'_, T>,
        out: &ForwardOut,
        positions: &[usize],
    ) -> Result<Var, ModelError> {
        let logits = out
            .order_logits
            .ok_or_else(|| ModelError::Config("order prediction is disabled".into()))?;
        let targets: Vec<Option<usize>> = positions
            .iter()
            .map(|&p| (p < self.config.max_dialogue_len).then_some(p))
            .collect();
        Ok(g.softmax_cross_entropy(logits, &targets)?)
    }

    /// Predicted label per position: row argmax, or Viterbi under a CRF.
    pub fn predict(
        &self,
        g: &mut Graph<'_, T>,
        out: &ForwardOut,
        speakers: &[String],
        scored: &[bool],
    ) -> Result<Vec<usize>, ModelError> {
        match &self.crf {
            None => {
                let l = g.value(out.logits);
                Ok((0..l.rows()).map(|r| l.argmax_row(r)).collect())
            }
            Some(head) => {
                let e = self.emissions(g, out.logits, scored)?;
                let ev = g.value(e).clone();
                let labels = match head {
                    CrfHead::Global(layer) => layer.decode(&self.params, &ev),
                    CrfHead::Speaker(layer) => layer.decode(
                        &self.params,
                        &ev,
                        &assign_roles(speakers, SPEAKER_CRF_ROLES),
                    ),
                };
                Ok(labels.map_err(CrfLayerError::from)?)
            }
        }
    }
}

#[cfg(test)]
mod tests;
