use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{f1, AnalysisError, EvalReport, EvalRow, F1Scheme};
use crate::corpus::{Dialogue, LabelId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternScope {
    Intra,
    Inter,
}

impl PatternScope {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternScope::Intra => "intra",
            PatternScope::Inter => "inter",
        }
    }
}

/// Each speaker's labeled utterances in order, as `(index, label)`.
fn speaker_chains(d: &Dialogue) -> Vec<Vec<(usize, LabelId)>> {
    let mut order: Vec<&str> = Vec::new();
    let mut chains: Vec<Vec<(usize, LabelId)>> = Vec::new();
    for (i, u) in d.utterances.iter().enumerate() {
        let Some(l) = u.label else { continue };
        let s = match order.iter().position(|s| *s == u.speaker) {
            Some(s) => s,
            None => {
                order.push(&u.speaker);
                chains.push(Vec::new());
                order.len() - 1
            }
        };
        chains[s].push((i, l));
    }
    chains
}

/// Adjacent labeled utterances (skipping unlabeled ones) spoken by different speakers.
fn inter_pairs(d: &Dialogue) -> Vec<[(usize, LabelId); 2]> {
    let labeled: Vec<(usize, LabelId)> = d
        .utterances
        .iter()
        .enumerate()
        .filter_map(|(i, u)| u.label.map(|l| (i, l)))
        .collect();
    labeled
        .windows(2)
        .filter(|w| d.utterances[w[0].0].speaker != d.utterances[w[1].0].speaker)
        .map(|w| [w[0], w[1]])
        .collect()
}

/// Label n-gram occurrences as (labels, index of the final utterance).
fn occurrences(d: &Dialogue, n: usize, scope: PatternScope) -> Vec<(Vec<LabelId>, usize)> {
    match scope {
        PatternScope::Intra => speaker_chains(d)
            .iter()
            .flat_map(|c| {
                c.windows(n)
                    .map(|w| (w.iter().map(|x| x.1).collect(), w[n - 1].0))
            })
            .collect(),
        PatternScope::Inter => inter_pairs(d)
            .into_iter()
            .map(|[a, b]| (vec![a.1, b.1], b.0))
            .collect(),
    }
}

/// Normalized counts of label pairs `(previous, next)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub mode: PatternScope,
    pub counts: Vec<Vec<u64>>,
    /// `counts / total`; all zeros when there are no transitions.
    pub freq: Vec<Vec<f64>>,
    pub total: u64,
}

impl TransitionMatrix {
    pub fn diagonal_mass(&self) -> f64 {
        (0..self.freq.len()).map(|i| self.freq[i][i]).sum()
    }

    pub fn freq_sum(&self) -> f64 {
        self.freq.iter().flatten().sum()
    }

    /// Header `from,<label>...`; one row of frequencies per previous label.
    pub fn write_csv<W: Write>(&self, labels: &[String], w: W) -> Result<(), AnalysisError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["from".to_string()];
        header.extend(labels.iter().cloned());
        out.write_record(&header)?;
        for (i, row) in self.freq.iter().enumerate() {
            let mut rec = vec![labels[i].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Intra pairs join consecutive labeled utterances of one speaker; inter pairs join
/// adjacent labeled utterances of two different speakers.
pub fn transition_matrix(
    dialogues: &[Dialogue],
    num_labels: usize,
    mode: PatternScope,
) -> TransitionMatrix {
    let mut counts = vec![vec![0u64; num_labels]; num_labels];
    for d in dialogues {
        for (p, _) in occurrences(d, 2, mode) {
            counts[p[0]][p[1]] += 1;
        }
    }
    let total: u64 = counts.iter().flatten().sum();
    let freq = counts
        .iter()
        .map(|r| {
            r.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    TransitionMatrix {
        mode,
        counts,
        freq,
        total,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: Vec<LabelId>,
    pub train_count: usize,
    pub train_pct: f64,
    pub test_count: usize,
    pub test_pct: f64,
    /// Weighted F1 at the final utterance of scored test occurrences.
    pub test_score: Option<f64>,
    pub test_support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub n: usize,
    pub scope: PatternScope,
    /// Sorted by descending train frequency, then pattern.
    pub rows: Vec<PatternRow>,
}

impl PatternStats {
    pub fn train_pct_sum(&self) -> f64 {
        self.rows.iter().map(|r| r.train_pct).sum()
    }

    pub fn write_csv<W: Write>(&self, labels: &[String], w: W) -> Result<(), AnalysisError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "pattern",
            "train_count",
            "train_pct",
            "test_count",
            "test_pct",
            "test_score",
            "test_support",
        ])?;
        for r in &self.rows {
            let name: Vec<&str> = r.pattern.iter().map(|&l| labels[l].as_str()).collect();
            out.write_record([
                name.join(" "),
                r.train_count.to_string(),
                r.train_pct.to_string(),
                r.test_count.to_string(),
                r.test_pct.to_string(),
                r.test_score.map(|s| s.to_string()).unwrap_or_default(),
                r.test_support.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn tally(dialogues: &[Dialogue], n: usize, scope: PatternScope) -> BTreeMap<Vec<LabelId>, usize> {
    let mut m = BTreeMap::new();
    for d in dialogues {
        for (p, _) in occurrences(d, n, scope) {
            *m.entry(p).or_default() += 1;
        }
    }
    m
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Label n-grams of `train` (typically train plus validation) with their frequencies
/// there and in `test`, scored on `report` at the final position of each test occurrence.
pub fn ngram_patterns(
    train: &[Dialogue],
    test: &[Dialogue],
    report: &EvalReport,
    n: usize,
    scope: PatternScope,
) -> Result<PatternStats, AnalysisError> {
    if n < 2 {
        return Err(AnalysisError::NgramSize(n));
    }
    if scope == PatternScope::Inter && n != 2 {
        return Err(AnalysisError::InterScope(n));
    }
    let train_counts = tally(train, n, scope);
    let train_total: usize = train_counts.values().sum();
    let rows_by_key: HashMap<(&str, usize), &EvalRow> = report
        .rows
        .iter()
        .map(|r| ((r.dialogue_id.as_str(), r.index), r))
        .collect();
    let mut test_rows: BTreeMap<Vec<LabelId>, (usize, Vec<&EvalRow>)> = BTreeMap::new();
    for d in test {
        for (p, last) in occurrences(d, n, scope) {
            let e = test_rows.entry(p).or_default();
            e.0 += 1;
            if let Some(r) = rows_by_key
                .get(&(d.id.as_str(), last))
                .filter(|r| r.scored())
            {
                e.1.push(r);
            }
        }
    }
    let test_total: usize = test_rows.values().map(|e| e.0).sum();
    let mut keys: Vec<&Vec<LabelId>> = train_counts.keys().chain(test_rows.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::with_capacity(keys.len());
    for k in keys {
        let train_count = train_counts.get(k).copied().unwrap_or(0);
        let (test_count, scored) = test_rows
            .get(k)
            .map(|(c, r)| (*c, r.as_slice()))
            .unwrap_or((0, &[]));
        let test_score = if scored.is_empty() {
            None
        } else {
            Some(f1(scored.iter().copied(), F1Scheme::Weighted)?)
        };
        rows.push(PatternRow {
            pattern: k.clone(),
            train_count,
            train_pct: pct(train_count, train_total),
            test_count,
            test_pct: pct(test_count, test_total),
            test_score,
            test_support: scored.len(),
        });
    }
    rows.sort_by(|a, b| {
        b.train_count
            .cmp(&a.train_count)
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    Ok(PatternStats { n, scope, rows })
}
