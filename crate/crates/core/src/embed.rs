//! Tokenization, vocabularies and word-embedding tables.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::diffcore::Tensor;
use crate::scalar::Scalar;

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
/// Half-width of the uniform range used for tokens without a pretrained vector.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("training split has no tokens")]
    EmptyTrain,
    #[error("min_freq must be at least 1")]
    MinFreq,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: bad number `{value}`")]
    Number { line: usize, value: String },
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases and splits on whitespace, emitting each punctuation character as
/// its own token. An apostrophe between a letter and further letters starts a
/// clitic token (`"I'm"` gives `i`, `'m`).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        if !cur.is_empty() {
            out.push(std::mem::take(cur));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut cur, &mut out);
        } else if c == '\'' {
            let prev_alpha = i > 0 && chars[i - 1].is_alphabetic();
            let next_alpha = chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
            flush(&mut cur, &mut out);
            if prev_alpha && next_alpha {
                cur.push(c);
            } else {
                out.push(c.to_string());
            }
        } else if is_punct(c) {
            flush(&mut cur, &mut out);
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    flush(&mut cur, &mut out);
    out
}

/// Token index with `PAD = 0` and `OOV = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials followed by `words` in the given order; repeated words are dropped.
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        let mut seen: HashMap<String, usize> = HashMap::new();
        for w in words {
            let w = w.into();
            if w == PAD_TOKEN || w == OOV_TOKEN || seen.contains_key(&w) {
                continue;
            }
            seen.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of `token`, falling back to [`OOV`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Vocabulary over train-split tokens occurring at least `min_freq` times,
/// ordered by decreasing frequency then lexicographically.
pub fn build_vocab(c: &Corpus, min_freq: usize) -> Result<Vocab, EmbedError> {
    if min_freq == 0 {
        return Err(EmbedError::MinFreq);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for d in &c.train {
        for u in &d.utterances {
            for t in tokenize(&u.text) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(EmbedError::EmptyTrain);
    }
    let mut kept: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_words(kept.into_iter().map(|(t, _)| t)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable<T> {
    pub dim: usize,
    /// `|vocab| × dim`.
    pub matrix: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Uniform `±INIT_RANGE` rows from `seed`, with a zero PAD row.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<T> = (0..vocab.len() * dim)
            .map(|_| T::lit(rng.gen_range(-INIT_RANGE..=INIT_RANGE)))
            .collect();
        data[PAD * dim..(PAD + 1) * dim].fill(T::zero());
        Self {
            dim,
            matrix: Tensor::from_vec(vocab.len(), dim, data),
            trainable: false,
        }
    }

    pub fn row(&self, id: usize) -> &[T] {
        self.matrix.row(id)
    }
}

/// Parses GloVe-style text (`token v1 .. v_dim` per line) into `table`,
/// overwriting rows of tokens present in `vocab`. A leading two-field
/// `count dim` header line is skipped. Returns the number of rows copied.
pub fn read_embeddings_into<T: Scalar>(
    text: &str,
    vocab: &Vocab,
    table: &mut EmbeddingTable<T>,
) -> Result<usize, EmbedError> {
    let dim = table.dim;
    let mut copied = vec![false; vocab.len()];
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if lineno == 1
            && values.len() == 1
            && token.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            continue;
        }
        if values.len() != dim {
            return Err(EmbedError::Dimension {
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.get(token) else { continue };
        if id == PAD || copied[id] {
            continue;
        }
        let row = table.matrix.row_mut(id);
        for (slot, v) in row.iter_mut().zip(&values) {
            let x: f64 = v.parse().map_err(|_| EmbedError::Number {
                line: lineno,
                value: v.to_string(),
            })?;
            *slot = T::lit(x);
        }
        copied[id] = true;
    }
    Ok(copied.iter().filter(|&&c| c).count())
}

/// Random table from `seed` with rows found in the file at `path` copied verbatim.
pub fn load_embeddings<T: Scalar>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable<T>, EmbedError> {
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut table = EmbeddingTable::random(vocab, dim, seed);
    read_embeddings_into(&text, vocab, &mut table)?;
    Ok(table)
}

/// Token ids truncated or PAD-padded to `max_len`, plus the true length.
pub fn token_ids(tokens: &[String], vocab: &Vocab, max_len: usize) -> (Vec<usize>, usize) {
    let length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..length].iter().map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD);
    (ids, length)
}

/// `max_len × dim` matrix of token rows (OOV fallback, PAD padding) and the true length.
pub fn embed_utterance<T: Scalar>(
    tokens: &[String],
    vocab: &Vocab,
    table: &EmbeddingTable<T>,
    max_len: usize,
) -> (Tensor<T>, usize) {
    assert!(max_len >= 1, "max_len must be positive");
    let (ids, length) = token_ids(tokens, vocab, max_len);
    let mut out = Tensor::zeros(max_len, table.dim);
    for (r, &id) in ids.iter().enumerate().take(length) {
        out.row_mut(r).copy_from_slice(table.row(id));
    }
    (out, length)
}
