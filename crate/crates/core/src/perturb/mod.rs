//! Context perturbations. Each procedure turns a dialogue into one or more
//! [`ContextView`]s: the utterances a model sees while classifying its targets.

mod plan;
mod spec;
mod text;
mod window;

use thiserror::Error;

pub use plan::{
    apply_permutation, expand_dialogue, flip_context_style, identity_view, lca_augment,
    plan_expand, shuffle_dialogue, utterance_views, ContextView, DonorPool, DonorRef, Plan,
    PlanResources, ViewTarget, ViewUtterance,
};
pub use spec::{Directions, LcaConstraint, LcaStrategy, PerturbationKind, PerturbationSpec};
pub use text::{
    spelling_attack, word_substitution_attack, LexiconFlipper, LexiconProvider, NoSubstitution,
    SentimentFlipper, WordCount, WordSubstitutionProvider,
};
pub use window::{apply_window, speaker_filter, ContextWindowSpec, SpeakerMode, WindowSide};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid perturbation `{spec}`: {message}")]
    Spec { spec: String, message: String },
    #[error("no eligible donor for label `{label}`")]
    NoEligibleDonor { label: String },
    #[error("style flipping needs sentiment groups in the corpus header")]
    MissingSentimentGroups,
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
