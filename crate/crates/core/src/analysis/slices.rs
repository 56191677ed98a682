use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{f1, AnalysisError, EvalReport, EvalRow, F1Scheme, PatternScope};
use crate::corpus::{Dialogue, LabelId, SentimentGroup};

pub type ShiftMode = PatternScope;

/// Score restricted to shift utterances, with how often shifts occur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Weighted F1 over scored shift utterances; `None` when there are none.
    pub score: Option<f64>,
    pub support: usize,
    pub shifts: usize,
    pub dialogues: usize,
    pub shifts_per_dialogue: f64,
}

/// `"52.01 (13.2)"`: a `[0, 1]` score as a percentage with an average count.
pub fn format_score_with_count(score: f64, count: f64) -> String {
    format!("{:.2} ({:.1})", 100.0 * score, count)
}

fn rows_by_key(report: &EvalReport) -> HashMap<(&str, usize), &EvalRow> {
    report
        .rows
        .iter()
        .map(|r| ((r.dialogue_id.as_str(), r.index), r))
        .collect()
}

/// Marks every utterance whose key differs from the reference key chosen by `mode`.
/// `is_shift(prev, cur)` decides whether a pair of keys counts.
fn shifts_in<K: Copy>(
    d: &Dialogue,
    key: impl Fn(LabelId) -> K,
    mode: ShiftMode,
    is_shift: impl Fn(K, K) -> bool,
) -> Vec<usize> {
    let mut last: Vec<(&str, usize, K)> = Vec::new();
    let mut out = Vec::new();
    for (i, u) in d.utterances.iter().enumerate() {
        let Some(l) = u.label else { continue };
        let cur = key(l);
        let prev = match mode {
            ShiftMode::Intra => last.iter().find(|e| e.0 == u.speaker).map(|e| e.2),
            ShiftMode::Inter => last
                .iter()
                .filter(|e| e.0 != u.speaker)
                .max_by_key(|e| e.1)
                .map(|e| e.2),
        };
        if prev.is_some_and(|p| is_shift(p, cur)) {
            out.push(i);
        }
        match last.iter_mut().find(|e| e.0 == u.speaker) {
            Some(e) => *e = (&u.speaker, i, cur),
            None => last.push((&u.speaker, i, cur)),
        }
    }
    out
}

fn summarize(
    report: &EvalReport,
    dialogues: &[Dialogue],
    shifts: Vec<(usize, Vec<usize>)>,
) -> Result<ShiftReport, AnalysisError> {
    let rows = rows_by_key(report);
    let mut scored = Vec::new();
    let mut total = 0;
    for (di, idx) in &shifts {
        total += idx.len();
        for &i in idx {
            if let Some(r) = rows
                .get(&(dialogues[*di].id.as_str(), i))
                .filter(|r| r.scored())
            {
                scored.push(*r);
            }
        }
    }
    let score = if scored.is_empty() {
        None
    } else {
        Some(f1(scored.iter().copied(), F1Scheme::Weighted)?)
    };
    Ok(ShiftReport {
        score,
        support: scored.len(),
        shifts: total,
        dialogues: dialogues.len(),
        shifts_per_dialogue: if dialogues.is_empty() {
            0.0
        } else {
            total as f64 / dialogues.len() as f64
        },
    })
}

/// Scores utterances whose label differs from the previous labeled utterance of the
/// same speaker (intra) or of the most recent other speaker (inter).
pub fn label_shift_report(
    report: &EvalReport,
    dialogues: &[Dialogue],
    mode: ShiftMode,
) -> Result<ShiftReport, AnalysisError> {
    let shifts = dialogues
        .iter()
        .enumerate()
        .map(|(di, d)| (di, shifts_in(d, |l| l, mode, |a, b| a != b)))
        .collect();
    summarize(report, dialogues, shifts)
}

/// Same-speaker sentiment-group changes. Without neutral, only positive/negative swaps count.
pub fn sentiment_shift_report(
    report: &EvalReport,
    dialogues: &[Dialogue],
    groups: Option<&[SentimentGroup]>,
    include_neutral: bool,
) -> Result<ShiftReport, AnalysisError> {
    let groups = groups.ok_or(AnalysisError::MissingSentimentGroups)?;
    let group = |l: LabelId| groups.get(l).copied().unwrap_or(SentimentGroup::Neutral);
    let shifts = dialogues
        .iter()
        .enumerate()
        .map(|(di, d)| {
            let s = shifts_in(d, group, ShiftMode::Intra, |a, b| {
                a != b
                    && (include_neutral
                        || (a != SentimentGroup::Neutral && b != SentimentGroup::Neutral))
            });
            (di, s)
        })
        .collect();
    summarize(report, dialogues, shifts)
}

/// Exact 1-based positions up to `exact_up_to`, then buckets `width` wide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionBuckets {
    pub exact_up_to: usize,
    pub width: usize,
}

impl Default for PositionBuckets {
    fn default() -> Self {
        Self {
            exact_up_to: 30,
            width: 10,
        }
    }
}

impl PositionBuckets {
    /// Inclusive 1-based range holding `position`.
    pub fn bucket(self, position: usize) -> (usize, usize) {
        if position <= self.exact_up_to {
            (position, position)
        } else {
            let w = self.width.max(1);
            let start = self.exact_up_to + 1 + (position - self.exact_up_to - 1) / w * w;
            (start, start + w - 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionSlice {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub support: usize,
}

impl PositionSlice {
    pub fn label(&self) -> String {
        if self.start == self.end {
            self.start.to_string()
        } else {
            format!("{}-{}", self.start, self.end)
        }
    }
}

/// Weighted F1 of the scored rows grouped by 1-based position in their dialogue.
pub fn position_report(
    report: &EvalReport,
    buckets: PositionBuckets,
) -> Result<Vec<PositionSlice>, AnalysisError> {
    let mut groups: BTreeMap<(usize, usize), Vec<&EvalRow>> = BTreeMap::new();
    for r in report.rows.iter().filter(|r| r.scored()) {
        groups
            .entry(buckets.bucket(r.index + 1))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((start, end), rows)| {
            Ok(PositionSlice {
                start,
                end,
                score: f1(rows.iter().copied(), F1Scheme::Weighted)?,
                support: rows.len(),
            })
        })
        .collect()
}

/// Header `position,start,end,score,support`.
pub fn write_position_csv<W: Write>(slices: &[PositionSlice], w: W) -> Result<(), AnalysisError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["position", "start", "end", "score", "support"])?;
    for s in slices {
        out.write_record([
            s.label(),
            s.start.to_string(),
            s.end.to_string(),
            s.score.to_string(),
            s.support.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Header `slice,score,support,shifts,dialogues,shifts_per_dialogue,formatted`; the score
/// and formatted cells are empty for slices without scored rows.
pub fn write_shift_csv<W: Write>(
    slices: &[(String, ShiftReport)],
    w: W,
) -> Result<(), AnalysisError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "slice",
        "score",
        "support",
        "shifts",
        "dialogues",
        "shifts_per_dialogue",
        "formatted",
    ])?;
    for (name, s) in slices {
        out.write_record([
            name.clone(),
            s.score.map(|v| v.to_string()).unwrap_or_default(),
            s.support.to_string(),
            s.shifts.to_string(),
            s.dialogues.to_string(),
            s.shifts_per_dialogue.to_string(),
            s.score
                .map(|v| format_score_with_count(v, s.shifts_per_dialogue))
                .unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;

    fn dialogue(labels: &[(&str, usize)]) -> Dialogue {
        Dialogue {
            id: "d".into(),
            utterances: labels
                .iter()
                .map(|&(s, l)| Utterance::labeled("x", s, l))
                .collect(),
        }
    }

    fn perfect(d: &Dialogue) -> EvalReport {
        let rows = d
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| EvalRow {
                dialogue_id: d.id.clone(),
                index: i,
                gold: u.label,
                pred: u.label,
                eval_mask: true,
            })
            .collect();
        EvalReport::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap()
    }

    #[test]
    fn label_shift_examples() {
        let constant = dialogue(&[("A", 0), ("B", 0), ("A", 0)]);
        let r = label_shift_report(
            &perfect(&constant),
            std::slice::from_ref(&constant),
            ShiftMode::Intra,
        )
        .unwrap();
        assert_eq!((r.shifts, r.score, r.support), (0, None, 0));
        let alt = dialogue(&[("A", 0), ("A", 1), ("A", 0), ("A", 1)]);
        let r = label_shift_report(&perfect(&alt), std::slice::from_ref(&alt), ShiftMode::Intra)
            .unwrap();
        assert_eq!((r.shifts, r.score, r.support), (3, Some(1.0), 3));
        assert_eq!(r.shifts_per_dialogue, 3.0);
        // Inter compares with the latest other speaker: B1|A0 and A0|B1 shift, A1|B1 and B1|A1 do not.
        let d = dialogue(&[("A", 0), ("B", 1), ("A", 0), ("A", 1), ("B", 1)]);
        let r =
            label_shift_report(&perfect(&d), std::slice::from_ref(&d), ShiftMode::Inter).unwrap();
        assert_eq!(r.shifts, 2);
    }

    #[test]
    fn sentiment_shift_examples() {
        use SentimentGroup::*;
        let groups = [Positive, Negative, Neutral];
        let pnp = dialogue(&[("A", 0), ("A", 1), ("A", 0)]);
        for include in [true, false] {
            let r = sentiment_shift_report(
                &perfect(&pnp),
                std::slice::from_ref(&pnp),
                Some(&groups),
                include,
            )
            .unwrap();
            assert_eq!(r.shifts, 2);
        }
        let p_neu_p = dialogue(&[("A", 0), ("A", 2), ("A", 0)]);
        let r = sentiment_shift_report(
            &perfect(&p_neu_p),
            std::slice::from_ref(&p_neu_p),
            Some(&groups),
            false,
        )
        .unwrap();
        assert_eq!(r.shifts, 0);
        let r = sentiment_shift_report(
            &perfect(&p_neu_p),
            std::slice::from_ref(&p_neu_p),
            Some(&groups),
            true,
        )
        .unwrap();
        assert_eq!(r.shifts, 2);
        let same = [Positive, Positive, Positive];
        let r = sentiment_shift_report(
            &perfect(&pnp),
            std::slice::from_ref(&pnp),
            Some(&same),
            true,
        )
        .unwrap();
        assert_eq!(r.shifts, 0);
        assert!(
            sentiment_shift_report(&perfect(&pnp), std::slice::from_ref(&pnp), None, true).is_err()
        );
    }

    #[test]
    fn buckets_and_formatting() {
        let b = PositionBuckets::default();
        assert_eq!(b.bucket(30), (30, 30));
        assert_eq!(b.bucket(31), (31, 40));
        assert_eq!(b.bucket(40), (31, 40));
        assert_eq!(b.bucket(41), (41, 50));
        assert_eq!(format_score_with_count(0.52011, 13.2), "52.01 (13.2)");
        let d = dialogue(&[("A", 0), ("B", 1), ("A", 2)]);
        let slices = position_report(&perfect(&d), b).unwrap();
        assert_eq!(slices.len(), 3);
        assert!(slices.iter().all(|s| s.score == 1.0 && s.support == 1));
        let mut buf = Vec::new();
        write_shift_csv(
            &[(
                "intra".into(),
                ShiftReport {
                    score: None,
                    support: 0,
                    shifts: 0,
                    dialogues: 2,
                    shifts_per_dialogue: 0.0,
                },
            )],
            &mut buf,
        )
        .unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .ends_with("intra,,0,0,2,0,\n"));
    }
}
