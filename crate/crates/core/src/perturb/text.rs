use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PerturbError;
use crate::corpus::SentimentGroup;

/// Inclusive range of words to attack per utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCount {
    pub min: usize,
    pub max: usize,
}

impl Default for WordCount {
    fn default() -> Self {
        Self { min: 3, max: 4 }
    }
}

impl WordCount {
    fn draw<R: Rng>(self, rng: &mut R, available: usize) -> usize {
        rng.gen_range(self.min..=self.max).min(available)
    }
}

/// Byte ranges of the whitespace-delimited words of `text`.
fn word_spans(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..text.len());
    }
    out
}

/// Replaces the given spans (ascending, disjoint) and keeps everything else byte-identical.
fn splice(text: &str, edits: &[(Range<usize>, String)]) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut at = 0;
    for (r, rep) in edits {
        out.push_str(&text[at..r.start]);
        out.push_str(rep);
        at = r.end;
    }
    out.push_str(&text[at..]);
    out
}

/// Splits a word into leading punctuation, alphanumeric core and trailing punctuation.
fn core_of(word: &str) -> (&str, &str, &str) {
    let start = word
        .find(|c: char| c.is_alphanumeric())
        .unwrap_or(word.len());
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(start);
    (&word[..start], &word[start..end], &word[end..])
}

fn edit_word<R: Rng>(word: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let swappable: Vec<usize> = (0..chars.len() - 1)
        .filter(|&i| chars[i] != chars[i + 1])
        .collect();
    let op = rng.gen_range(0..3);
    match op {
        0 if !swappable.is_empty() => {
            let i = swappable[rng.gen_range(0..swappable.len())];
            chars.swap(i, i + 1);
        }
        1 => {
            chars.remove(rng.gen_range(0..chars.len()));
        }
        _ => {
            let i = rng.gen_range(0..chars.len());
            chars.insert(i, chars[i]);
        }
    }
    chars.into_iter().collect()
}

/// Misspells `count` words of at least three characters with one swap, deletion or duplication each.
pub fn spelling_attack<R: Rng>(text: &str, count: WordCount, rng: &mut R) -> String {
    let spans: Vec<_> = word_spans(text)
        .into_iter()
        .filter(|r| text[r.clone()].chars().count() >= 3)
        .collect();
    let k = count.draw(rng, spans.len());
    if k == 0 {
        return text.to_string();
    }
    let mut picked = sample(rng, spans.len(), k).into_vec();
    picked.sort_unstable();
    let edits: Vec<_> = picked
        .into_iter()
        .map(|i| {
            let r = spans[i].clone();
            let rep = edit_word(&text[r.clone()], rng);
            (r, rep)
        })
        .collect();
    splice(text, &edits)
}

/// Supplies replacements for masked words.
pub trait WordSubstitutionProvider: Send + Sync {
    /// Replacement for `word` given the words of its sentence, or `None` to leave it.
    fn substitute(&self, word: &str, sentence: &[&str]) -> Option<String>;
}

/// Never substitutes.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoSubstitution;

impl WordSubstitutionProvider for NoSubstitution {
    fn substitute(&self, _: &str, _: &[&str]) -> Option<String> {
        None
    }
}

/// Case-insensitive word-to-word table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LexiconProvider {
    pub map: HashMap<String, String>,
}

impl LexiconProvider {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        Self {
            map: pairs
                .into_iter()
                .map(|(a, b)| (a.into().to_lowercase(), b.into()))
                .collect(),
        }
    }

    /// Parses `source<TAB>replacement` lines; blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, PerturbError> {
        Ok(Self::from_pairs(parse_tsv(text)?))
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        Self::from_tsv(&read(path)?)
    }
}

impl WordSubstitutionProvider for LexiconProvider {
    fn substitute(&self, word: &str, _: &[&str]) -> Option<String> {
        self.map.get(&word.to_lowercase()).cloned()
    }
}

fn read(path: &Path) -> Result<String, PerturbError> {
    fs::read_to_string(path).map_err(|source| PerturbError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_tsv(text: &str) -> Result<Vec<(String, String)>, PerturbError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((a.trim().to_string(), b.trim().to_string()))
            }
            _ => {
                return Err(PerturbError::Lexicon {
                    line: i + 1,
                    message: "expected `source<TAB>replacement`".into(),
                })
            }
        }
    }
    Ok(out)
}

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "are", "but", "not", "you", "all", "any", "can", "her", "was", "one",
    "our", "out", "his", "has", "had", "him", "how", "its", "who", "did", "yes", "she", "too",
    "use", "that", "with", "have", "this", "will", "your", "from", "they", "them", "then", "than",
    "been", "were", "what", "when", "which", "there", "their", "would", "could", "should", "about",
    "into", "just", "also", "some",
];

fn is_content(core: &str) -> bool {
    core.chars().count() >= 3 && !STOPWORDS.contains(&core.to_lowercase().as_str())
}

/// Masks `count` content words and refills them through `provider`. Words without a
/// single-token replacement stay as they are, so the word count never changes.
pub fn word_substitution_attack<R: Rng>(
    text: &str,
    provider: &dyn WordSubstitutionProvider,
    count: WordCount,
    rng: &mut R,
) -> String {
    let spans = word_spans(text);
    let words: Vec<&str> = spans.iter().map(|r| &text[r.clone()]).collect();
    let content: Vec<usize> = (0..spans.len())
        .filter(|&i| is_content(core_of(words[i]).1))
        .collect();
    let k = count.draw(rng, content.len());
    if k == 0 {
        return text.to_string();
    }
    let mut picked: Vec<usize> = sample(rng, content.len(), k)
        .into_iter()
        .map(|j| content[j])
        .collect();
    picked.sort_unstable();
    let edits: Vec<_> = picked
        .into_iter()
        .filter_map(|i| {
            let (pre, core, post) = core_of(words[i]);
            let rep = provider.substitute(core, &words)?;
            if rep.is_empty() || rep.contains(char::is_whitespace) {
                return None;
            }
            Some((spans[i].clone(), format!("{pre}{rep}{post}")))
        })
        .collect();
    splice(text, &edits)
}

/// Rewrites text of one polarity into the opposite one.
pub trait SentimentFlipper: Send + Sync {
    /// Must return `text` unchanged when `source` is neutral.
    fn flip(&self, text: &str, source: SentimentGroup) -> String;
}

const ANTONYMS: &[(&str, &str)] = &[
    ("good", "bad"),
    ("great", "terrible"),
    ("happy", "sad"),
    ("love", "hate"),
    ("loved", "hated"),
    ("like", "dislike"),
    ("best", "worst"),
    ("better", "worse"),
    ("nice", "awful"),
    ("wonderful", "horrible"),
    ("glad", "sorry"),
    ("excited", "bored"),
    ("exciting", "boring"),
    ("fun", "dull"),
    ("beautiful", "ugly"),
    ("amazing", "dreadful"),
    ("awesome", "lousy"),
    ("pleased", "upset"),
    ("calm", "angry"),
    ("relaxed", "annoyed"),
    ("thanks", "whatever"),
    ("perfect", "flawed"),
    ("right", "wrong"),
    ("friendly", "hostile"),
    ("fantastic", "miserable"),
    ("enjoy", "resent"),
    ("laugh", "cry"),
    ("hope", "fear"),
    ("win", "lose"),
    ("easy", "hard"),
    ("safe", "dangerous"),
    ("proud", "ashamed"),
    ("success", "failure"),
    ("yes", "no"),
];

/// Word-level antonym substitution in both directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconFlipper {
    to_negative: HashMap<String, String>,
    to_positive: HashMap<String, String>,
}

impl Default for LexiconFlipper {
    fn default() -> Self {
        Self::from_pairs(
            ANTONYMS
                .iter()
                .map(|&(p, n)| (p.to_string(), n.to_string())),
        )
    }
}

impl LexiconFlipper {
    /// Builds from `(positive, negative)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> Self {
        let mut to_negative = HashMap::new();
        let mut to_positive = HashMap::new();
        for (p, n) in pairs {
            let (p, n) = (p.to_lowercase(), n.to_lowercase());
            to_negative.entry(p.clone()).or_insert_with(|| n.clone());
            to_positive.entry(n).or_insert(p);
        }
        Self {
            to_negative,
            to_positive,
        }
    }

    /// Parses `positive<TAB>negative` lines.
    pub fn from_tsv(text: &str) -> Result<Self, PerturbError> {
        Ok(Self::from_pairs(parse_tsv(text)?))
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        Self::from_tsv(&read(path)?)
    }
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default()
    } else {
        word.to_string()
    }
}

impl SentimentFlipper for LexiconFlipper {
    fn flip(&self, text: &str, source: SentimentGroup) -> String {
        let table = match source {
            SentimentGroup::Positive => &self.to_negative,
            SentimentGroup::Negative => &self.to_positive,
            SentimentGroup::Neutral => return text.to_string(),
        };
        let edits: Vec<_> = word_spans(text)
            .into_iter()
            .filter_map(|r| {
                let (pre, core, post) = core_of(&text[r.clone()]);
                let rep = table.get(&core.to_lowercase())?;
                Some((r, format!("{pre}{}{post}", match_case(core, rep))))
            })
            .collect();
        splice(text, &edits)
    }
}
