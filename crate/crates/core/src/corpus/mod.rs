//! Labeled dialogue corpora: data model, JSONL ingestion, validation and the
//! synthetic label-copying generator.

mod jsonl;
mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{load_corpus, read_corpus, read_corpus_str, write_corpus, write_corpus_string};
pub use synth::{synth_copy_corpus, SynthCopyConfig};

/// Dense index into [`Corpus::label_set`].
pub type LabelId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub speaker: String,
    pub label: Option<LabelId>,
    /// Whether the utterance contributes to loss and metrics.
    pub eval_mask: bool,
}

impl Utterance {
    pub fn labeled(text: impl Into<String>, speaker: impl Into<String>, label: LabelId) -> Self {
        Self {
            text: text.into(),
            speaker: speaker.into(),
            label: Some(label),
            eval_mask: true,
        }
    }

    pub fn unlabeled(text: impl Into<String>, speaker: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            speaker: speaker.into(),
            label: None,
            eval_mask: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn speakers(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.speaker.clone()).collect()
    }

    /// Indices of utterances with `eval_mask` set.
    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.eval_mask)
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentGroup {
    Positive,
    Negative,
    Neutral,
}

impl SentimentGroup {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "positive" => Some(Self::Positive),
            "negative" => Some(Self::Negative),
            "neutral" => Some(Self::Neutral),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub task_name: String,
    pub label_set: Vec<String>,
    pub train: Vec<Dialogue>,
    pub val: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    /// Indexed by label id when present.
    pub sentiment_groups: Option<Vec<SentimentGroup>>,
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[Dialogue] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, s: Split) -> &mut Vec<Dialogue> {
        match s {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_id(&self, name: &str) -> Option<LabelId> {
        self.label_set.iter().position(|l| l == name)
    }

    pub fn group_of(&self, label: LabelId) -> Option<SentimentGroup> {
        self.sentiment_groups
            .as_ref()
            .and_then(|g| g.get(label).copied())
    }

    pub fn dialogues(&self) -> impl Iterator<Item = (Split, &Dialogue)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |d| (s, d)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyText,
    MaskWithoutLabel,
    LabelOutOfRange(LabelId),
    EmptyDialogue,
    NoEvalUtterance,
    DuplicateDialogueId,
    IncompleteSentimentGroups { covered: usize, labels: usize },
    DuplicateLabel(String),
}

/// One broken invariant, located by dialogue id and utterance index where applicable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub dialogue_id: Option<String>,
    pub index: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = &self.dialogue_id {
            write!(f, "dialogue {d}")?;
            if let Some(i) = self.index {
                write!(f, " utterance {i}")?;
            }
            f.write_str(": ")?;
        }
        match &self.kind {
            ViolationKind::EmptyText => f.write_str("empty text"),
            ViolationKind::MaskWithoutLabel => f.write_str("eval_mask set but label absent"),
            ViolationKind::LabelOutOfRange(l) => write!(f, "label id {l} not in label set"),
            ViolationKind::EmptyDialogue => f.write_str("dialogue has no utterances"),
            ViolationKind::NoEvalUtterance => f.write_str("no utterance has eval_mask set"),
            ViolationKind::DuplicateDialogueId => f.write_str("dialogue id used more than once"),
            ViolationKind::IncompleteSentimentGroups { covered, labels } => {
                write!(f, "sentiment groups cover {covered} of {labels} labels")
            }
            ViolationKind::DuplicateLabel(l) => write!(f, "label `{l}` declared twice"),
        }
    }
}

/// Lists every invariant violation; an empty list means the corpus is well formed.
pub fn validate(c: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen_labels = HashSet::new();
    for l in &c.label_set {
        if !seen_labels.insert(l.as_str()) {
            out.push(Violation {
                dialogue_id: None,
                index: None,
                kind: ViolationKind::DuplicateLabel(l.clone()),
            });
        }
    }
    if let Some(g) = &c.sentiment_groups {
        if g.len() != c.label_set.len() {
            out.push(Violation {
                dialogue_id: None,
                index: None,
                kind: ViolationKind::IncompleteSentimentGroups {
                    covered: g.len(),
                    labels: c.label_set.len(),
                },
            });
        }
    }
    let mut ids = HashSet::new();
    for (_, d) in c.dialogues() {
        let at = |index: Option<usize>, kind| Violation {
            dialogue_id: Some(d.id.clone()),
            index,
            kind,
        };
        if !ids.insert(d.id.as_str()) {
            out.push(at(None, ViolationKind::DuplicateDialogueId));
        }
        if d.utterances.is_empty() {
            out.push(at(None, ViolationKind::EmptyDialogue));
            continue;
        }
        for (i, u) in d.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                out.push(at(Some(i), ViolationKind::EmptyText));
            }
            if u.eval_mask && u.label.is_none() {
                out.push(at(Some(i), ViolationKind::MaskWithoutLabel));
            }
            if let Some(l) = u.label {
                if l >= c.label_set.len() {
                    out.push(at(Some(i), ViolationKind::LabelOutOfRange(l)));
                }
            }
        }
        if !d.utterances.iter().any(|u| u.eval_mask) {
            out.push(at(None, ViolationKind::NoEvalUtterance));
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: dialogue `{id}` has no utterances")]
    EmptyDialogue { line: usize, id: String },
    #[error("line {line}: unknown split `{split}`")]
    UnknownSplit { line: usize, split: String },
    #[error("corpus fails validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("invalid synthetic corpus parameters: {0}")]
    InvalidSynth(String),
}
