use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Dialogue, SentimentGroup, Split, Utterance};

const FILLER_VOCAB: usize = 40;
const LABEL_VOCAB: usize = 8;
const TOKENS_PER_UTTERANCE: (usize, usize) = (4, 7);

/// Parameters of the label-copying generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCopyConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Inclusive dialogue length range.
    pub len_range: (usize, usize),
    pub n_labels: usize,
    /// Probability that a label repeats the previous utterance's label.
    pub copy_prob: f64,
    /// Probability that an utterance's tokens reveal its own label.
    pub text_informativeness: f64,
    pub seed: u64,
}

impl Default for SynthCopyConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_val: 60,
            n_test: 200,
            len_range: (6, 12),
            n_labels: 4,
            copy_prob: 0.9,
            text_informativeness: 0.2,
            seed: 0,
        }
    }
}

impl SynthCopyConfig {
    fn check(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSynth(m.to_string()));
        if self.n_labels < 2 {
            return bad("n_labels must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.copy_prob) {
            return bad("copy_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.text_informativeness) {
            return bad("text_informativeness must lie in [0, 1]");
        }
        if self.len_range.0 == 0 || self.len_range.0 > self.len_range.1 {
            return bad("len_range must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

fn label_name(k: usize) -> String {
    format!("l{k}")
}

fn utterance_text(rng: &mut ChaCha8Rng, label: usize, informative: bool) -> String {
    let n = rng.gen_range(TOKENS_PER_UTTERANCE.0..=TOKENS_PER_UTTERANCE.1);
    let forced = rng.gen_range(0..n);
    (0..n)
        .map(|i| {
            if informative && (i == forced || rng.gen_bool(0.5)) {
                format!("l{label}w{}", rng.gen_range(0..LABEL_VOCAB))
            } else {
                format!("f{}", rng.gen_range(0..FILLER_VOCAB))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn dialogue(rng: &mut ChaCha8Rng, cfg: &SynthCopyConfig, id: String) -> Dialogue {
    let n = rng.gen_range(cfg.len_range.0..=cfg.len_range.1);
    let k = cfg.n_labels;
    let mut label = rng.gen_range(0..k);
    let mut utterances = Vec::with_capacity(n);
    for t in 0..n {
        if t > 0 && !rng.gen_bool(cfg.copy_prob) {
            let other = rng.gen_range(0..k - 1);
            label = if other >= label { other + 1 } else { other };
        }
        let informative = rng.gen_bool(cfg.text_informativeness);
        let speaker = if t % 2 == 0 { "A" } else { "B" };
        utterances.push(Utterance::labeled(
            utterance_text(rng, label, informative),
            speaker,
            label,
        ));
    }
    Dialogue { id, utterances }
}

/// Two-speaker alternating dialogues whose labels follow a copy chain.
///
/// Label words look like `l2w5` (label 2) and fillers like `f17`. Labels are
/// named `l0..l{K-1}`; `l0` is grouped neutral, odd labels positive and the
/// remaining even labels negative.
pub fn synth_copy_corpus(cfg: &SynthCopyConfig) -> Result<Corpus, CorpusError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corpus = Corpus {
        task_name: "synth_copy".into(),
        label_set: (0..cfg.n_labels).map(label_name).collect(),
        sentiment_groups: Some(
            (0..cfg.n_labels)
                .map(|k| match k {
                    0 => SentimentGroup::Neutral,
                    k if k % 2 == 1 => SentimentGroup::Positive,
                    _ => SentimentGroup::Negative,
                })
                .collect(),
        ),
        ..Default::default()
    };
    for (split, n) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        for i in 0..n {
            let d = dialogue(&mut rng, cfg, format!("{split}_{i:05}"));
            corpus.split_mut(split).push(d);
        }
    }
    Ok(corpus)
}
