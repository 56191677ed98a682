use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;

/// Visibility rule for one side (past or future) of a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowSide {
    KeepAll,
    /// Hide the `k` utterances nearest to the target.
    DropNearest(usize),
    DropAll,
    /// Show only the `k` utterances nearest to the target.
    KeepNearest(usize),
}

impl WindowSide {
    /// Whether the utterance at `distance ≥ 1` from the target stays visible.
    fn keeps(self, distance: usize) -> bool {
        match self {
            WindowSide::KeepAll => true,
            WindowSide::DropNearest(k) => distance > k,
            WindowSide::DropAll => false,
            WindowSide::KeepNearest(k) => distance <= k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindowSpec {
    pub past: WindowSide,
    pub future: WindowSide,
}

impl ContextWindowSpec {
    pub const KEEP_ALL: Self = Self {
        past: WindowSide::KeepAll,
        future: WindowSide::KeepAll,
    };
}

/// Indices (0-based, ascending) visible when classifying `t` in a dialogue of length `n`.
pub fn apply_window(n: usize, t: usize, spec: ContextWindowSpec) -> Vec<usize> {
    assert!(t < n, "target {t} outside dialogue of length {n}");
    (0..n)
        .filter(|&i| match i.cmp(&t) {
            std::cmp::Ordering::Less => spec.past.keeps(t - i),
            std::cmp::Ordering::Equal => true,
            std::cmp::Ordering::Greater => spec.future.keeps(i - t),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerMode {
    /// Keep the target speaker's own utterances only.
    WoInter,
    /// Keep the other speakers' utterances only.
    WoIntra,
}

/// Indices visible when classifying `t` under a speaker filter. The target is always kept.
pub fn speaker_filter(d: &Dialogue, t: usize, mode: SpeakerMode) -> Vec<usize> {
    let who = &d.utterances[t].speaker;
    (0..d.len())
        .filter(|&i| {
            i == t
                || match mode {
                    SpeakerMode::WoInter => &d.utterances[i].speaker == who,
                    SpeakerMode::WoIntra => &d.utterances[i].speaker != who,
                }
        })
        .collect()
}
