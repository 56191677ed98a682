//! Scores and corpus analyses: the masked F1 family, label transition
//! matrices, label n-gram patterns, shift slices and position slices.

mod slices;
mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelId;

pub use slices::{
    format_score_with_count, label_shift_report, position_report, sentiment_shift_report,
    write_position_csv, write_shift_csv, PositionBuckets, PositionSlice, ShiftMode, ShiftReport,
};
pub use stats::{
    ngram_patterns, transition_matrix, PatternRow, PatternScope, PatternStats, TransitionMatrix,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no scored rows")]
    NoScoredRows,
    #[error("row {dialogue_id}#{index} is scored but has no prediction")]
    MissingPrediction { dialogue_id: String, index: usize },
    #[error("n-gram size must be at least 2, got {0}")]
    NgramSize(usize),
    #[error("inter-speaker patterns exist only for n = 2, got {0}")]
    InterScope(usize),
    #[error("sentiment analysis needs sentiment groups in the corpus header")]
    MissingSentimentGroups,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One utterance of an evaluated split. Only rows with `eval_mask` and a gold label are scored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dialogue_id: String,
    pub index: usize,
    pub gold: Option<LabelId>,
    pub pred: Option<LabelId>,
    pub eval_mask: bool,
}

impl EvalRow {
    pub fn scored(&self) -> bool {
        self.eval_mask && self.gold.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Scheme {
    Weighted,
    Macro,
    Micro,
}

impl F1Scheme {
    pub const ALL: [F1Scheme; 3] = [F1Scheme::Weighted, F1Scheme::Macro, F1Scheme::Micro];

    pub fn key(self) -> &'static str {
        match self {
            F1Scheme::Weighted => "weighted_f1",
            F1Scheme::Macro => "macro_f1",
            F1Scheme::Micro => "micro_f1",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

fn class_counts<'a, I>(rows: I) -> Result<BTreeMap<LabelId, Counts>, AnalysisError>
where
    I: IntoIterator<Item = &'a EvalRow>,
{
    let mut counts: BTreeMap<LabelId, Counts> = BTreeMap::new();
    let mut any = false;
    for r in rows.into_iter().filter(|r| r.scored()) {
        any = true;
        let gold = r.gold.expect("scored rows have gold");
        let pred = r.pred.ok_or_else(|| AnalysisError::MissingPrediction {
            dialogue_id: r.dialogue_id.clone(),
            index: r.index,
        })?;
        if gold == pred {
            counts.entry(gold).or_default().tp += 1;
        } else {
            counts.entry(gold).or_default().fn_ += 1;
            counts.entry(pred).or_default().fp += 1;
        }
    }
    if !any {
        return Err(AnalysisError::NoScoredRows);
    }
    Ok(counts)
}

/// F1 over the scored rows, in `[0, 1]`. Macro averages over classes present in gold.
pub fn f1<'a, I>(rows: I, scheme: F1Scheme) -> Result<f64, AnalysisError>
where
    I: IntoIterator<Item = &'a EvalRow>,
{
    let counts = class_counts(rows)?;
    let support = |c: &Counts| c.tp + c.fn_;
    Ok(match scheme {
        F1Scheme::Weighted => {
            let total: usize = counts.values().map(support).sum();
            counts
                .values()
                .map(|c| support(c) as f64 * c.f1())
                .sum::<f64>()
                / total as f64
        }
        F1Scheme::Macro => {
            let present: Vec<f64> = counts
                .values()
                .filter(|c| support(c) > 0)
                .map(|c| c.f1())
                .collect();
            present.iter().sum::<f64>() / present.len() as f64
        }
        F1Scheme::Micro => {
            let pooled = counts.values().fold(Counts::default(), |a, c| Counts {
                tp: a.tp + c.tp,
                fp: a.fp + c.fp,
                fn_: a.fn_ + c.fn_,
            });
            pooled.f1()
        }
    })
}

/// Per-utterance predictions of one split with their aggregate scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label_set: Vec<String>,
    pub rows: Vec<EvalRow>,
    /// Metric name to value in `[0, 1]`.
    pub scores: BTreeMap<String, f64>,
}

impl EvalReport {
    /// Builds the report and computes every F1 scheme plus accuracy from `rows`.
    pub fn new(label_set: Vec<String>, rows: Vec<EvalRow>) -> Result<Self, AnalysisError> {
        let mut scores = BTreeMap::new();
        for s in F1Scheme::ALL {
            scores.insert(s.key().to_string(), f1(&rows, s)?);
        }
        let scored: Vec<&EvalRow> = rows.iter().filter(|r| r.scored()).collect();
        let correct = scored.iter().filter(|r| r.gold == r.pred).count();
        scores.insert("accuracy".into(), correct as f64 / scored.len() as f64);
        Ok(Self {
            label_set,
            rows,
            scores,
        })
    }

    pub fn score(&self, scheme: F1Scheme) -> f64 {
        self.scores[scheme.key()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows as CSV: `dialogue_id,index,gold,pred,eval_mask` with label names.
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dialogue_id", "index", "gold", "pred", "eval_mask"])?;
        let name = |l: Option<LabelId>| l.map(|l| self.label_set[l].clone()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.dialogue_id.clone(),
                r.index.to_string(),
                name(r.gold),
                name(r.pred),
                r.eval_mask.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(gold: &[usize], pred: &[usize]) -> Vec<EvalRow> {
        gold.iter()
            .zip(pred)
            .enumerate()
            .map(|(i, (&g, &p))| EvalRow {
                dialogue_id: "d".into(),
                index: i,
                gold: Some(g),
                pred: Some(p),
                eval_mask: true,
            })
            .collect()
    }

    #[test]
    fn two_class_example() {
        // Class a: P=1, R=1/2. Class b: P=1/2, R=1. Both F1 = 2/3.
        let r = rows(&[0, 0, 1], &[0, 1, 1]);
        for s in F1Scheme::ALL {
            assert!((f1(&r, s).unwrap() - 2.0 / 3.0).abs() < 1e-15, "{s:?}");
        }
    }

    #[test]
    fn perfect_and_masked() {
        let r = rows(&[0, 1, 2, 2], &[0, 1, 2, 2]);
        for s in F1Scheme::ALL {
            assert_eq!(f1(&r, s).unwrap(), 1.0);
        }
        let mut masked = r.clone();
        for row in &mut masked {
            row.eval_mask = false;
        }
        assert!(matches!(
            f1(&masked, F1Scheme::Macro),
            Err(AnalysisError::NoScoredRows)
        ));
    }

    #[test]
    fn report_scores_and_csv() {
        let mut r = rows(&[0, 1, 1], &[0, 1, 0]);
        r.push(EvalRow {
            dialogue_id: "d".into(),
            index: 3,
            gold: None,
            pred: None,
            eval_mask: false,
        });
        let rep = EvalReport::new(vec!["a".into(), "b".into()], r).unwrap();
        assert!((rep.scores["accuracy"] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.scores["accuracy"], rep.score(F1Scheme::Micro));
        let mut buf = Vec::new();
        rep.write_rows_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dialogue_id,index,gold,pred,eval_mask\nd,0,a,a,true\n"));
        assert!(text.ends_with("d,3,,,false\n"));
    }
}
