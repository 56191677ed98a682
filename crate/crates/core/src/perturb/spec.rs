use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::text::WordCount;
use super::window::{ContextWindowSpec, SpeakerMode, WindowSide};
use super::PerturbError;

/// Which neighbours of the target (and the target itself) an attack touches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directions {
    pub past: bool,
    pub future: bool,
    pub target: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcaConstraint {
    /// Donor carries the same label.
    Sl,
    /// Donor carries a different label.
    Dl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcaStrategy {
    Concat,
    Replace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// `identity` forces the identity permutation.
    Shuffle {
        identity: bool,
    },
    Drop(ContextWindowSpec),
    SpeakerFilter(SpeakerMode),
    SpellingAttack {
        window: usize,
        dirs: Directions,
        words: WordCount,
    },
    WordSubstitution {
        window: usize,
        dirs: Directions,
        words: WordCount,
    },
    /// The target is never flipped; `dirs.target` is ignored.
    StyleFlip {
        window: usize,
        dirs: Directions,
    },
    Lca {
        window: usize,
        constraint: LcaConstraint,
        strategy: LcaStrategy,
    },
}

/// A perturbation together with the seed that makes it reproducible.
///
/// Textual form: `kind;key=value;...`, for example `drop;past=-5;future=--;seed=1`,
/// `spelling_attack;w=3;dirs=past+future;words=3-4;seed=2` or
/// `lca;w=5;constraint=dl;strategy=replace;seed=0`. Window sides use the notation
/// `--` (keep all), `-ALL` (drop all), `-k` (drop nearest k) and `+k` (keep nearest k).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Whether the perturbation rewrites utterance text (as opposed to reordering or hiding).
    pub fn rewrites_text(&self) -> bool {
        matches!(
            self.kind,
            PerturbationKind::SpellingAttack { .. }
                | PerturbationKind::WordSubstitution { .. }
                | PerturbationKind::StyleFlip { .. }
                | PerturbationKind::Lca { .. }
        )
    }

    /// Parses the textual form, using `default_seed` when no `seed=` key is given.
    pub fn parse_with_default_seed(s: &str, default_seed: u64) -> Result<Self, PerturbError> {
        parse(s, Some(default_seed))
    }
}

impl FromStr for PerturbationSpec {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s, None)
    }
}

fn side_str(s: WindowSide) -> String {
    match s {
        WindowSide::KeepAll => "--".into(),
        WindowSide::DropAll => "-ALL".into(),
        WindowSide::DropNearest(k) => format!("-{k}"),
        WindowSide::KeepNearest(k) => format!("+{k}"),
    }
}

fn dirs_str(d: Directions) -> String {
    let parts: Vec<&str> = [(d.past, "past"), (d.future, "future"), (d.target, "target")]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("+")
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PerturbationKind::Shuffle { identity } => {
                write!(f, "shuffle")?;
                if identity {
                    write!(f, ";identity")?;
                }
            }
            PerturbationKind::Drop(w) => write!(
                f,
                "drop;past={};future={}",
                side_str(w.past),
                side_str(w.future)
            )?,
            PerturbationKind::SpeakerFilter(m) => write!(
                f,
                "speaker_filter;mode={}",
                match m {
                    SpeakerMode::WoInter => "wo_inter",
                    SpeakerMode::WoIntra => "wo_intra",
                }
            )?,
            PerturbationKind::SpellingAttack {
                window,
                dirs,
                words,
            }
            | PerturbationKind::WordSubstitution {
                window,
                dirs,
                words,
            } => {
                let name = if matches!(self.kind, PerturbationKind::SpellingAttack { .. }) {
                    "spelling_attack"
                } else {
                    "word_substitution"
                };
                write!(
                    f,
                    "{name};w={window};dirs={};words={}-{}",
                    dirs_str(dirs),
                    words.min,
                    words.max
                )?
            }
            PerturbationKind::StyleFlip { window, dirs } => {
                write!(f, "style_flip;w={window};dirs={}", dirs_str(dirs))?
            }
            PerturbationKind::Lca {
                window,
                constraint,
                strategy,
            } => write!(
                f,
                "lca;w={window};constraint={};strategy={}",
                match constraint {
                    LcaConstraint::Sl => "sl",
                    LcaConstraint::Dl => "dl",
                },
                match strategy {
                    LcaStrategy::Concat => "concat",
                    LcaStrategy::Replace => "replace",
                }
            )?,
        }
        write!(f, ";seed={}", self.seed)
    }
}

struct Fields<'a> {
    spec: &'a str,
    pairs: Vec<(&'a str, Option<&'a str>)>,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> PerturbError {
        PerturbError::Spec {
            spec: self.spec.to_string(),
            message: message.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<Option<&'a str>> {
        let i = self.pairs.iter().position(|(k, _)| *k == key)?;
        Some(self.pairs.remove(i).1)
    }

    fn value(&mut self, key: &str) -> Result<Option<&'a str>, PerturbError> {
        match self.take(key) {
            None => Ok(None),
            Some(Some(v)) => Ok(Some(v)),
            Some(None) => Err(self.err(format!("`{key}` needs a value"))),
        }
    }

    fn required(&mut self, key: &str) -> Result<&'a str, PerturbError> {
        self.value(key)?
            .ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn flag(&mut self, key: &str) -> Result<bool, PerturbError> {
        match self.take(key) {
            None => Ok(false),
            Some(None) => Ok(true),
            Some(Some(_)) => Err(self.err(format!("`{key}` takes no value"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<usize, PerturbError> {
        let v = self.required(key)?;
        v.parse()
            .map_err(|_| self.err(format!("`{key}` must be a count, got `{v}`")))
    }

    fn finish(self) -> Result<(), PerturbError> {
        match self.pairs.first() {
            Some((k, _)) => Err(self.err(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    fn side(&mut self, key: &str) -> Result<WindowSide, PerturbError> {
        let v = self.value(key)?.unwrap_or("--");
        let count = |s: &str| s.parse::<usize>().ok().filter(|&k| k >= 1);
        let side = match v {
            "--" => Some(WindowSide::KeepAll),
            s if s.eq_ignore_ascii_case("-all") => Some(WindowSide::DropAll),
            s if s.starts_with('-') => count(&s[1..]).map(WindowSide::DropNearest),
            s if s.starts_with('+') => count(&s[1..]).map(WindowSide::KeepNearest),
            _ => None,
        };
        side.ok_or_else(|| {
            self.err(format!(
                "`{key}={v}` is not one of --, -ALL, -k, +k with k ≥ 1"
            ))
        })
    }

    fn dirs(&mut self) -> Result<Directions, PerturbError> {
        let v = self.required("dirs")?;
        let mut d = Directions::default();
        if v == "none" {
            return Ok(d);
        }
        for part in v.split('+') {
            match part {
                "past" => d.past = true,
                "future" => d.future = true,
                "target" => d.target = true,
                other => return Err(self.err(format!("unknown direction `{other}`"))),
            }
        }
        Ok(d)
    }

    fn words(&mut self) -> Result<WordCount, PerturbError> {
        let Some(v) = self.value("words")? else {
            return Ok(WordCount::default());
        };
        let parsed = match v.split_once('-') {
            Some((a, b)) => a.parse().ok().zip(b.parse().ok()),
            None => v.parse().ok().map(|k| (k, k)),
        };
        match parsed {
            Some((min, max)) if min <= max => Ok(WordCount { min, max }),
            _ => Err(self.err(format!("`words={v}` must be `k` or `min-max`"))),
        }
    }
}

fn parse(s: &str, default_seed: Option<u64>) -> Result<PerturbationSpec, PerturbError> {
    let mut parts = s.trim().split(';').map(str::trim);
    let name = parts.next().unwrap_or_default();
    let mut f = Fields {
        spec: s,
        pairs: parts
            .filter(|p| !p.is_empty())
            .map(|p| match p.split_once('=') {
                Some((k, v)) => (k.trim(), Some(v.trim())),
                None => (p, None),
            })
            .collect(),
    };
    let seed = match f.value("seed")? {
        Some(v) => v
            .parse()
            .map_err(|_| f.err(format!("seed `{v}` is not an integer")))?,
        None => default_seed.ok_or_else(|| f.err("missing `seed`"))?,
    };
    let kind = match name {
        "shuffle" => PerturbationKind::Shuffle {
            identity: f.flag("identity")?,
        },
        "drop" => PerturbationKind::Drop(ContextWindowSpec {
            past: f.side("past")?,
            future: f.side("future")?,
        }),
        "speaker_filter" => PerturbationKind::SpeakerFilter(match f.required("mode")? {
            "wo_inter" => SpeakerMode::WoInter,
            "wo_intra" => SpeakerMode::WoIntra,
            m => return Err(f.err(format!("unknown speaker mode `{m}`"))),
        }),
        "spelling_attack" => PerturbationKind::SpellingAttack {
            window: f.number("w")?,
            dirs: f.dirs()?,
            words: f.words()?,
        },
        "word_substitution" => PerturbationKind::WordSubstitution {
            window: f.number("w")?,
            dirs: f.dirs()?,
            words: f.words()?,
        },
        "style_flip" => {
            let window = f.number("w")?;
            let dirs = f.dirs()?;
            if dirs.target {
                return Err(f.err("style_flip never rewrites the target"));
            }
            PerturbationKind::StyleFlip { window, dirs }
        }
        "lca" => PerturbationKind::Lca {
            window: f.number("w")?,
            constraint: match f.required("constraint")? {
                c if c.eq_ignore_ascii_case("sl") => LcaConstraint::Sl,
                c if c.eq_ignore_ascii_case("dl") => LcaConstraint::Dl,
                c => return Err(f.err(format!("unknown constraint `{c}`"))),
            },
            strategy: match f.required("strategy")? {
                c if c.eq_ignore_ascii_case("concat") => LcaStrategy::Concat,
                c if c.eq_ignore_ascii_case("replace") => LcaStrategy::Replace,
                c => return Err(f.err(format!("unknown strategy `{c}`"))),
            },
        },
        other => return Err(f.err(format!("unknown kind `{other}`"))),
    };
    f.finish()?;
    Ok(PerturbationSpec { kind, seed })
}
