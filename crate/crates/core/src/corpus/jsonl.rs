use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate, Corpus, CorpusError, Dialogue, SentimentGroup, Split, Utterance};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    task: String,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentiment_groups: Option<BTreeMap<String, SentimentGroup>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceLine {
    text: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval_mask: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueLine {
    dialogue_id: String,
    split: String,
    utterances: Vec<UtteranceLine>,
}

fn parse_err(line: usize, e: serde_json::Error) -> CorpusError {
    CorpusError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Parses the JSONL text without checking corpus invariants.
///
/// Structural problems (bad JSON, missing fields, unknown labels or splits,
/// empty dialogues) are errors; everything else is left to [`validate`].
pub fn read_corpus_str(text: &str) -> Result<Corpus, CorpusError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or(CorpusError::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let header: Header = serde_json::from_str(htext).map_err(|e| parse_err(hline, e))?;

    let mut corpus = Corpus {
        task_name: header.task,
        label_set: header.labels,
        ..Default::default()
    };
    if let Some(groups) = header.sentiment_groups {
        let mut by_id = Vec::with_capacity(corpus.label_set.len());
        for l in &corpus.label_set {
            match groups.get(l) {
                Some(g) => by_id.push(*g),
                None => break,
            }
        }
        if let Some(extra) = groups.keys().find(|k| !corpus.label_set.contains(k)) {
            return Err(CorpusError::UnknownLabel {
                line: hline,
                label: extra.clone(),
            });
        }
        corpus.sentiment_groups = Some(by_id);
    }

    for (lineno, line) in lines {
        let d: DialogueLine = serde_json::from_str(line).map_err(|e| parse_err(lineno, e))?;
        let split = Split::parse(&d.split).ok_or_else(|| CorpusError::UnknownSplit {
            line: lineno,
            split: d.split.clone(),
        })?;
        if d.utterances.is_empty() {
            return Err(CorpusError::EmptyDialogue {
                line: lineno,
                id: d.dialogue_id,
            });
        }
        let mut utterances = Vec::with_capacity(d.utterances.len());
        for u in d.utterances {
            let label = match &u.label {
                Some(name) => {
                    Some(
                        corpus
                            .label_id(name)
                            .ok_or_else(|| CorpusError::UnknownLabel {
                                line: lineno,
                                label: name.clone(),
                            })?,
                    )
                }
                None => None,
            };
            utterances.push(Utterance {
                text: u.text,
                speaker: u.speaker,
                eval_mask: u.eval_mask.unwrap_or(label.is_some()),
                label,
            });
        }
        corpus.split_mut(split).push(Dialogue {
            id: d.dialogue_id,
            utterances,
        });
    }
    Ok(corpus)
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus_str(&text)
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let c = read_corpus(path)?;
    let v = validate(&c);
    if v.is_empty() {
        Ok(c)
    } else {
        Err(CorpusError::Invalid(v))
    }
}

/// Serializes in split order train, val, test. `eval_mask` is written only when
/// it differs from its default.
pub fn write_corpus_string(c: &Corpus) -> String {
    let header = Header {
        task: c.task_name.clone(),
        labels: c.label_set.clone(),
        sentiment_groups: c
            .sentiment_groups
            .as_ref()
            .map(|g| c.label_set.iter().cloned().zip(g.iter().copied()).collect()),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (split, d) in c.dialogues() {
        let line = DialogueLine {
            dialogue_id: d.id.clone(),
            split: split.as_str().to_string(),
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceLine {
                    text: u.text.clone(),
                    speaker: u.speaker.clone(),
                    label: u.label.map(|l| c.label_set[l].clone()),
                    eval_mask: (u.eval_mask != u.label.is_some()).then_some(u.eval_mask),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(c: &Corpus, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, write_corpus_string(c)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
