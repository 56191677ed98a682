use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Corpus;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: vector of width {found}, expected {expected}")]
    Width {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("dialogue `{id}` has {found} feature vectors for {expected} utterances")]
    Count {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("no features for dialogue `{0}`")]
    Missing(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    dialogue_id: String,
    features: Vec<Vec<f64>>,
}

/// Precomputed utterance vectors keyed by dialogue id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub dialogues: HashMap<String, Vec<Vec<f64>>>,
}

impl FeatureFile {
    pub fn get(&self, dialogue_id: &str, index: usize) -> Option<&[f64]> {
        self.dialogues
            .get(dialogue_id)
            .and_then(|v| v.get(index))
            .map(Vec::as_slice)
    }

    /// Checks that every dialogue of `corpus` has one vector per utterance.
    pub fn check_against(&self, corpus: &Corpus) -> Result<(), FeatureError> {
        for (_, d) in corpus.dialogues() {
            let v = self
                .dialogues
                .get(&d.id)
                .ok_or_else(|| FeatureError::Missing(d.id.clone()))?;
            if v.len() != d.len() {
                return Err(FeatureError::Count {
                    id: d.id.clone(),
                    expected: d.len(),
                    found: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Parses JSONL lines `{dialogue_id, features: [[..], ..]}`; all vectors must share one width.
pub fn read_feature_file_str(text: &str) -> Result<FeatureFile, FeatureError> {
    let mut out = FeatureFile::default();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| FeatureError::Parse {
            line,
            message: e.to_string(),
        })?;
        for v in &parsed.features {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(FeatureError::Width {
                    line,
                    expected,
                    found: v.len(),
                });
            }
        }
        out.dialogues.insert(parsed.dialogue_id, parsed.features);
    }
    out.dim = dim.unwrap_or(0);
    Ok(out)
}

pub fn load_feature_file(path: &Path) -> Result<FeatureFile, FeatureError> {
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_feature_file_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_width() {
        let f =
            read_feature_file_str("{\"dialogue_id\":\"d\",\"features\":[[1,2],[3,4]]}\n").unwrap();
        assert_eq!(f.dim, 2);
        assert_eq!(f.get("d", 1), Some(&[3.0, 4.0][..]));
        let err =
            read_feature_file_str("{\"dialogue_id\":\"d\",\"features\":[[1,2],[3]]}").unwrap_err();
        assert!(matches!(
            err,
            FeatureError::Width {
                line: 1,
                expected: 2,
                found: 1
            }
        ));
    }
}
