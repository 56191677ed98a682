use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Directions, LcaConstraint, LcaStrategy, PerturbationKind, PerturbationSpec};
use super::text::{
    spelling_attack, word_substitution_attack, LexiconFlipper, NoSubstitution, SentimentFlipper,
    WordSubstitutionProvider,
};
use super::window::{apply_window, speaker_filter};
use super::PerturbError;
use crate::corpus::{Corpus, Dialogue, LabelId, SentimentGroup, Split};
use crate::rng::{rng_for, Tag};

/// Where a replaced or appended context utterance came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DonorRef {
    pub dialogue_id: String,
    pub index: usize,
    pub label: LabelId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewUtterance {
    pub text: String,
    pub speaker: String,
    pub label: Option<LabelId>,
    pub eval_mask: bool,
    /// Index of the utterance in the original dialogue.
    pub origin: usize,
    pub text_modified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor: Option<DonorRef>,
}

/// A target utterance and its position inside a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewTarget {
    pub origin: usize,
    pub position: usize,
}

/// The sequence a model reads, plus the targets it is read for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextView {
    pub dialogue_id: String,
    pub utterances: Vec<ViewUtterance>,
    pub targets: Vec<ViewTarget>,
    /// Set for shuffled views: `utterances[i]` is original utterance `permutation[i]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

impl ContextView {
    pub fn any_text_modified(&self) -> bool {
        self.utterances.iter().any(|u| u.text_modified)
    }
}

fn view_utterance(d: &Dialogue, i: usize) -> ViewUtterance {
    let u = &d.utterances[i];
    ViewUtterance {
        text: u.text.clone(),
        speaker: u.speaker.clone(),
        label: u.label,
        eval_mask: u.eval_mask,
        origin: i,
        text_modified: false,
        donor: None,
    }
}

/// View of the indices `visible` (ascending, containing `t`) for the single target `t`.
fn subset_view(d: &Dialogue, t: usize, visible: &[usize]) -> ContextView {
    ContextView {
        dialogue_id: d.id.clone(),
        utterances: visible.iter().map(|&i| view_utterance(d, i)).collect(),
        targets: vec![ViewTarget {
            origin: t,
            position: visible.binary_search(&t).expect("target is always visible"),
        }],
        permutation: None,
    }
}

fn full_view(d: &Dialogue, t: usize) -> ContextView {
    subset_view(d, t, &(0..d.len()).collect::<Vec<_>>())
}

/// The unperturbed dialogue as one view serving all of its eval-masked utterances.
pub fn identity_view(d: &Dialogue) -> ContextView {
    ContextView {
        dialogue_id: d.id.clone(),
        utterances: (0..d.len()).map(|i| view_utterance(d, i)).collect(),
        targets: d
            .targets()
            .map(|t| ViewTarget {
                origin: t,
                position: t,
            })
            .collect(),
        permutation: None,
    }
}

/// One unperturbed full-dialogue view per eval-masked utterance.
pub fn utterance_views(d: &Dialogue) -> Vec<ContextView> {
    d.targets().map(|t| full_view(d, t)).collect()
}

/// Reorders so that `out[i] = d[perm[i]]`; labels travel with their utterances.
pub fn apply_permutation(d: &Dialogue, perm: &[usize]) -> Dialogue {
    assert_eq!(perm.len(), d.len(), "permutation length");
    Dialogue {
        id: d.id.clone(),
        utterances: perm.iter().map(|&p| d.utterances[p].clone()).collect(),
    }
}

/// Uniformly random reordering drawn from `seed` and the dialogue id.
pub fn shuffle_dialogue(d: &Dialogue, seed: u64) -> (Dialogue, Vec<usize>) {
    let mut perm: Vec<usize> = (0..d.len()).collect();
    perm.shuffle(&mut rng_for(
        seed,
        &[Tag::from("shuffle"), Tag::from(&d.id)],
    ));
    (apply_permutation(d, &perm), perm)
}

fn permuted_view(d: &Dialogue, perm: Vec<usize>) -> ContextView {
    let mut position = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        position[p] = i;
    }
    ContextView {
        dialogue_id: d.id.clone(),
        utterances: perm.iter().map(|&p| view_utterance(d, p)).collect(),
        targets: d
            .targets()
            .map(|t| ViewTarget {
                origin: t,
                position: position[t],
            })
            .collect(),
        permutation: Some(perm),
    }
}

/// Context positions within `w` of `t` on the requested sides, ascending.
fn window_positions(n: usize, t: usize, w: usize, past: bool, future: bool) -> Vec<usize> {
    let mut out = Vec::new();
    if past {
        out.extend(t.saturating_sub(w)..t);
    }
    if future {
        out.extend((t + 1)..(t + 1 + w).min(n));
    }
    out
}

/// Flips the polarity of positive and negative context utterances within `w` of `t`.
pub fn flip_context_style(
    d: &Dialogue,
    t: usize,
    w: usize,
    dirs: Directions,
    flipper: &dyn SentimentFlipper,
    groups: Option<&[SentimentGroup]>,
) -> Result<ContextView, PerturbError> {
    let groups = groups.ok_or(PerturbError::MissingSentimentGroups)?;
    let mut view = full_view(d, t);
    for i in window_positions(d.len(), t, w, dirs.past, dirs.future) {
        let group = d.utterances[i].label.and_then(|l| groups.get(l).copied());
        if let Some(g @ (SentimentGroup::Positive | SentimentGroup::Negative)) = group {
            let u = &mut view.utterances[i];
            let flipped = flipper.flip(&u.text, g);
            u.text_modified = flipped != u.text;
            u.text = flipped;
        }
    }
    Ok(view)
}

/// Labeled utterances available as donors, indexed for constrained uniform sampling.
pub struct DonorPool<'a> {
    dialogues: &'a [Dialogue],
    label_names: &'a [String],
    index_of: HashMap<&'a str, usize>,
    all: Vec<(usize, usize)>,
    by_label: Vec<Vec<(usize, usize)>>,
    /// Per dialogue, the number of labeled utterances with each label.
    counts: Vec<Vec<usize>>,
}

impl<'a> DonorPool<'a> {
    pub fn new(dialogues: &'a [Dialogue], label_names: &'a [String]) -> Self {
        let k = label_names.len();
        let mut all = Vec::new();
        let mut by_label = vec![Vec::new(); k];
        let mut counts = vec![vec![0; k]; dialogues.len()];
        for (di, d) in dialogues.iter().enumerate() {
            for (ui, u) in d.utterances.iter().enumerate() {
                if let Some(l) = u.label.filter(|&l| l < k) {
                    all.push((di, ui));
                    by_label[l].push((di, ui));
                    counts[di][l] += 1;
                }
            }
        }
        Self {
            dialogues,
            label_names,
            index_of: dialogues
                .iter()
                .enumerate()
                .map(|(i, d)| (d.id.as_str(), i))
                .collect(),
            all,
            by_label,
            counts,
        }
    }

    fn eligible_count(&self, exclude: Option<usize>, label: LabelId, c: LcaConstraint) -> usize {
        let own = exclude.map(|d| &self.counts[d]);
        match c {
            LcaConstraint::Sl => self.by_label[label].len() - own.map_or(0, |o| o[label]),
            LcaConstraint::Dl => {
                let own_other = own.map_or(0, |o| o.iter().sum::<usize>() - o[label]);
                self.all.len() - self.by_label[label].len() - own_other
            }
        }
    }

    /// Uniform draw among labeled utterances outside `dialogue_id` meeting `constraint`.
    fn draw<R: Rng>(
        &self,
        dialogue_id: &str,
        label: LabelId,
        constraint: LcaConstraint,
        rng: &mut R,
    ) -> Result<(usize, usize), PerturbError> {
        let exclude = self.index_of.get(dialogue_id).copied();
        let no_donor = || PerturbError::NoEligibleDonor {
            label: self
                .label_names
                .get(label)
                .cloned()
                .unwrap_or_else(|| label.to_string()),
        };
        if label >= self.by_label.len() || self.eligible_count(exclude, label, constraint) == 0 {
            return Err(no_donor());
        }
        let candidates = match constraint {
            LcaConstraint::Sl => &self.by_label[label],
            LcaConstraint::Dl => &self.all,
        };
        // Rejection keeps the draw uniform over the eligible subset, which is known to be non-empty.
        loop {
            let (di, ui) = candidates[rng.gen_range(0..candidates.len())];
            let l = self.dialogues[di].utterances[ui]
                .label
                .expect("pool holds labeled utterances");
            if Some(di) != exclude && (l == label) == (constraint == LcaConstraint::Sl) {
                return Ok((di, ui));
            }
        }
    }
}

/// Replaces or extends every labeled context utterance within `w` of `t` (both sides)
/// with a donor from another dialogue of the pool.
pub fn lca_augment(
    pool: &DonorPool<'_>,
    d: &Dialogue,
    t: usize,
    w: usize,
    constraint: LcaConstraint,
    strategy: LcaStrategy,
    seed: u64,
) -> Result<ContextView, PerturbError> {
    let mut view = full_view(d, t);
    for i in window_positions(d.len(), t, w, true, true) {
        let Some(label) = d.utterances[i].label else {
            continue;
        };
        let mut rng = rng_for(
            seed,
            &[Tag::from("lca"), Tag::from(&d.id), t.into(), i.into()],
        );
        let (di, ui) = pool.draw(&d.id, label, constraint, &mut rng)?;
        let donor = &pool.dialogues[di].utterances[ui];
        let u = &mut view.utterances[i];
        match strategy {
            LcaStrategy::Concat => u.text = format!("{} {}", u.text, donor.text),
            LcaStrategy::Replace => {
                u.text = donor.text.clone();
                u.label = donor.label;
            }
        }
        u.text_modified = true;
        u.donor = Some(DonorRef {
            dialogue_id: pool.dialogues[di].id.clone(),
            index: ui,
            label: donor.label.expect("pool holds labeled utterances"),
        });
    }
    Ok(view)
}

/// External text resources used by the rewriting perturbations.
pub struct PlanResources {
    pub provider: Box<dyn WordSubstitutionProvider>,
    pub flipper: Box<dyn SentimentFlipper>,
}

impl Default for PlanResources {
    fn default() -> Self {
        Self {
            provider: Box::new(NoSubstitution),
            flipper: Box::new(LexiconFlipper::default()),
        }
    }
}

fn attack_view<F>(
    d: &Dialogue,
    t: usize,
    w: usize,
    dirs: Directions,
    name: &str,
    seed: u64,
    mut f: F,
) -> ContextView
where
    F: FnMut(&str, &mut rand_chacha::ChaCha8Rng) -> String,
{
    let mut view = full_view(d, t);
    let mut positions = window_positions(d.len(), t, w, dirs.past, dirs.future);
    if dirs.target {
        positions.push(t);
    }
    for i in positions {
        let mut rng = rng_for(
            seed,
            &[Tag::from(name), Tag::from(&d.id), t.into(), i.into()],
        );
        let u = &mut view.utterances[i];
        let new = f(&u.text, &mut rng);
        u.text_modified = new != u.text;
        u.text = new;
    }
    view
}

/// All views `spec` produces for the eval-masked utterances of `d`. Shuffling yields a
/// single view shared by every target; the other kinds yield one view per target.
pub fn expand_dialogue(
    spec: &PerturbationSpec,
    d: &Dialogue,
    groups: Option<&[SentimentGroup]>,
    pool: &DonorPool<'_>,
    resources: &PlanResources,
) -> Result<Vec<ContextView>, PerturbError> {
    let seed = spec.seed;
    let targets: Vec<usize> = d.targets().collect();
    Ok(match spec.kind {
        PerturbationKind::Shuffle { identity } => {
            let perm = if identity {
                (0..d.len()).collect()
            } else {
                shuffle_dialogue(d, seed).1
            };
            vec![permuted_view(d, perm)]
        }
        PerturbationKind::Drop(w) => targets
            .iter()
            .map(|&t| subset_view(d, t, &apply_window(d.len(), t, w)))
            .collect(),
        PerturbationKind::SpeakerFilter(m) => targets
            .iter()
            .map(|&t| subset_view(d, t, &speaker_filter(d, t, m)))
            .collect(),
        PerturbationKind::SpellingAttack {
            window,
            dirs,
            words,
        } => targets
            .iter()
            .map(|&t| {
                attack_view(d, t, window, dirs, "spelling_attack", seed, |s, r| {
                    spelling_attack(s, words, r)
                })
            })
            .collect(),
        PerturbationKind::WordSubstitution {
            window,
            dirs,
            words,
        } => targets
            .iter()
            .map(|&t| {
                attack_view(d, t, window, dirs, "word_substitution", seed, |s, r| {
                    word_substitution_attack(s, resources.provider.as_ref(), words, r)
                })
            })
            .collect(),
        PerturbationKind::StyleFlip { window, dirs } => targets
            .iter()
            .map(|&t| flip_context_style(d, t, window, dirs, resources.flipper.as_ref(), groups))
            .collect::<Result<_, _>>()?,
        PerturbationKind::Lca {
            window,
            constraint,
            strategy,
        } => targets
            .iter()
            .map(|&t| lca_augment(pool, d, t, window, constraint, strategy, seed))
            .collect::<Result<_, _>>()?,
    })
}

/// Every view of one split under one perturbation; a pure description for audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub spec: String,
    pub split: Split,
    pub views: Vec<ContextView>,
}

impl Plan {
    pub fn permutations(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.views.iter().filter_map(|v| {
            v.permutation
                .as_deref()
                .map(|p| (v.dialogue_id.as_str(), p))
        })
    }

    /// One JSON object per view.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.views {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Expands `spec` over `split`; LCA donors come from the other dialogues of the same split.
pub fn plan_expand(
    spec: &PerturbationSpec,
    corpus: &Corpus,
    split: Split,
    resources: &PlanResources,
) -> Result<Plan, PerturbError> {
    let dialogues = corpus.split(split);
    let pool = DonorPool::new(dialogues, &corpus.label_set);
    let groups = corpus.sentiment_groups.as_deref();
    let mut views = Vec::new();
    for d in dialogues {
        views.extend(expand_dialogue(spec, d, groups, &pool, resources)?);
    }
    Ok(Plan {
        spec: spec.to_string(),
        split,
        views,
    })
}
