use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use ctxprobe::analysis::{
    label_shift_report, ngram_patterns, position_report, sentiment_shift_report, transition_matrix,
    write_position_csv, write_shift_csv, EvalReport, F1Scheme, PatternScope, PositionBuckets,
};
use ctxprobe::corpus::{
    load_corpus, read_corpus, synth_copy_corpus, validate, write_corpus, Corpus, Dialogue, Split,
    SynthCopyConfig,
};
use ctxprobe::models::{load_feature_file, FeatureFile};
use ctxprobe::perturb::{LexiconFlipper, LexiconProvider, PerturbationSpec, PlanResources};
use ctxprobe::trainer::{
    evaluate, run_seeds, Batching, Checkpoint, EvalInputs, RunResult, TrainConfig, TrainInputs,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, RawConfig};
use crate::UsageError;

/// N-gram sizes of the emitted pattern tables.
pub const PATTERN_SIZES: [usize; 3] = [2, 3, 5];

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Prints every violation on standard error; returns whether the corpus is clean.
pub fn cmd_validate(path: &Path) -> Result<bool> {
    let corpus = read_corpus(path)?;
    let violations = validate(&corpus);
    for v in &violations {
        eprintln!("{}: {v}", path.display());
    }
    Ok(violations.is_empty())
}

fn write_patterns(corpus: &Corpus, report: &EvalReport, out: &Path) -> Result<()> {
    let train: Vec<Dialogue> = corpus.train.iter().chain(&corpus.val).cloned().collect();
    let mut tables: Vec<(usize, PatternScope)> = PATTERN_SIZES
        .iter()
        .map(|&n| (n, PatternScope::Intra))
        .collect();
    tables.push((2, PatternScope::Inter));
    for (n, scope) in tables {
        let stats = ngram_patterns(&train, &corpus.test, report, n, scope)?;
        let path = out.join(format!("patterns_{}_{n}.csv", scope.as_str()));
        stats.write_csv(&corpus.label_set, create(&path)?)?;
    }
    Ok(())
}

/// Transition matrices over all splits and n-gram tables (train+val against test).
pub fn cmd_stats(corpus_path: &Path, out: &Path, report: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus_path)?;
    make_dir(out)?;
    let all: Vec<Dialogue> = corpus.dialogues().map(|(_, d)| d.clone()).collect();
    for scope in [PatternScope::Intra, PatternScope::Inter] {
        let m = transition_matrix(&all, corpus.num_labels(), scope);
        let path = out.join(format!("transition_{}.csv", scope.as_str()));
        m.write_csv(&corpus.label_set, create(&path)?)?;
    }
    let report = match report {
        Some(p) => read_report(p)?,
        None => EvalReport {
            label_set: corpus.label_set.clone(),
            rows: Vec::new(),
            scores: BTreeMap::new(),
        },
    };
    write_patterns(&corpus, &report, out)
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("{} is not an evaluation report", path.display()))
}

/// Corpus, embeddings, features and lexicons named by the config.
pub struct Loaded {
    pub corpus: Corpus,
    pub pretrained: Option<String>,
    pub features: Option<FeatureFile>,
    pub resources: PlanResources,
}

impl Loaded {
    pub fn read(cfg: &ExperimentConfig) -> Result<Self> {
        let Some(path) = &cfg.corpus else {
            return Err(
                UsageError("no corpus given (set `corpus` or pass --corpus)".into()).into(),
            );
        };
        let corpus = load_corpus(path)?;
        let pretrained = match &cfg.embeddings {
            Some(p) => Some(
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
            ),
            None => None,
        };
        let features = match &cfg.features {
            Some(p) => {
                let f = load_feature_file(p)?;
                f.check_against(&corpus)?;
                Some(f)
            }
            None => None,
        };
        let mut resources = PlanResources::default();
        if let Some(p) = &cfg.substitution_lexicon {
            resources.provider = Box::new(LexiconProvider::load(p)?);
        }
        if let Some(p) = &cfg.sentiment_lexicon {
            resources.flipper = Box::new(LexiconFlipper::load(p)?);
        }
        Ok(Self {
            corpus,
            pretrained,
            features,
            resources,
        })
    }

    pub fn inputs(&self) -> TrainInputs<'_> {
        TrainInputs {
            corpus: &self.corpus,
            pretrained: self.pretrained.as_deref(),
            features: self.features.as_ref(),
            resources: &self.resources,
        }
    }
}

pub fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.out.clone().ok_or_else(|| {
        UsageError("no output directory (set `out`, pass --out or set CTXPROBE_OUT)".into()).into()
    })
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.runs as u64)
        .map(|i| cfg.train.seed.wrapping_add(i))
        .collect()
}

fn write_run(dir: &Path, run: &RunResult, raw: &RawConfig) -> Result<()> {
    run.write_dir(dir)?;
    run.test_report
        .write_rows_csv(create(&dir.join("test_rows.csv"))?)?;
    write_text(&dir.join("config.resolved"), &raw.render())
}

/// Trains once or once per seed and writes the run directory.
pub fn cmd_train(raw: &RawConfig) -> Result<PathBuf> {
    let cfg = ExperimentConfig::from_raw(raw)?;
    let out = out_dir(&cfg)?;
    let data = Loaded::read(&cfg)?;
    let result = run_seeds(&cfg.train, &data.inputs(), &seeds(&cfg), cfg.threads)?;
    make_dir(&out)?;
    if cfg.runs == 1 {
        write_run(&out, &result.runs[0], raw)?;
    } else {
        for run in &result.runs {
            let mut per_seed = raw.clone();
            per_seed.set("seed", &run.seed.to_string())?;
            write_run(&out.join(format!("seed_{}", run.seed)), run, &per_seed)?;
        }
        write_text(
            &out.join("summary.json"),
            &serde_json::to_string_pretty(&result.summary)?,
        )?;
    }
    Ok(out)
}

fn spec_name(spec: &Option<PerturbationSpec>) -> String {
    spec.map_or_else(|| "none".to_string(), |s| s.to_string())
}

#[derive(Serialize)]
struct CellSummary {
    train: String,
    test: String,
    runs: usize,
    mean: BTreeMap<String, f64>,
    std: BTreeMap<String, f64>,
}

fn mean_std(reports: &[EvalReport]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let scores: Vec<BTreeMap<String, f64>> = reports.iter().map(|r| r.scores.clone()).collect();
    ctxprobe::trainer::aggregate(&scores)
}

/// Evaluates every (train-time, test-time) perturbation pair. Each train row is trained
/// inline unless `probe.checkpoint` names an existing model.
pub fn cmd_probe(raw: &RawConfig) -> Result<PathBuf> {
    let cfg = ExperimentConfig::from_raw(raw)?;
    let out = out_dir(&cfg)?;
    let data = Loaded::read(&cfg)?;
    let fixed = match &cfg.probe_checkpoint {
        Some(p) => {
            if cfg.probe_train.iter().any(Option::is_some) {
                return Err(UsageError(
                    "probe.train cannot be combined with probe.checkpoint".into(),
                )
                .into());
            }
            let file = if p.is_dir() {
                p.join("checkpoint.json")
            } else {
                p.clone()
            };
            Some(Checkpoint::load(&file)?)
        }
        None => None,
    };
    make_dir(&out)?;
    let mut cells = Vec::new();
    for (i, train_spec) in cfg.probe_train.iter().enumerate() {
        let checkpoints: Vec<Checkpoint> = match &fixed {
            Some(c) => vec![c.clone()],
            None => {
                let tc = TrainConfig {
                    train_perturbation: *train_spec,
                    ..cfg.train.clone()
                };
                run_seeds(&tc, &data.inputs(), &seeds(&cfg), cfg.threads)?
                    .runs
                    .into_iter()
                    .map(|r| r.checkpoint)
                    .collect()
            }
        };
        let models = checkpoints
            .iter()
            .map(|c| c.model::<f64>(&data.corpus))
            .collect::<Result<Vec<_>, _>>()?;
        let eval = EvalInputs {
            features: data.features.as_ref(),
            resources: &data.resources,
        };
        let reports = probe_row(&models, &data.corpus, &cfg.probe_test, eval, cfg.threads)?;
        for (j, (test_spec, row)) in cfg.probe_test.iter().zip(reports).enumerate() {
            let dir = out.join(format!("cell_{i}_{j}"));
            make_dir(&dir)?;
            for (c, r) in checkpoints.iter().zip(&row) {
                let name = if row.len() == 1 {
                    "report.json".to_string()
                } else {
                    format!("report_seed_{}.json", c.config.seed)
                };
                write_text(&dir.join(name), &r.to_json())?;
            }
            let (mean, std) = mean_std(&row);
            cells.push(CellSummary {
                train: spec_name(train_spec),
                test: spec_name(test_spec),
                runs: row.len(),
                mean,
                std,
            });
        }
    }
    write_probe_summary(&out, &cells, &cfg)?;
    Ok(out)
}

/// Reports for each test spec (outer) and model (inner); test specs run in parallel.
fn probe_row(
    models: &[ctxprobe::Model],
    corpus: &Corpus,
    specs: &[Option<PerturbationSpec>],
    eval: EvalInputs<'_>,
    threads: usize,
) -> Result<Vec<Vec<EvalReport>>> {
    let threads = threads.clamp(1, specs.len().max(1));
    let mut slots: Vec<Option<Result<Vec<EvalReport>, ctxprobe::trainer::TrainError>>> =
        (0..specs.len()).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                s.spawn(move || {
                    (w..specs.len())
                        .step_by(threads)
                        .map(|j| {
                            let reports = models
                                .iter()
                                .map(|m| {
                                    evaluate(
                                        m,
                                        corpus,
                                        Split::Test,
                                        specs[j].as_ref(),
                                        Batching::Dialogue,
                                        eval,
                                    )
                                })
                                .collect();
                            (j, reports)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (j, r) in h.join().expect("probe thread panicked") {
                slots[j] = Some(r);
            }
        }
    });
    Ok(slots
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<_, _>>()?)
}

const METRICS: [&str; 4] = ["weighted_f1", "macro_f1", "micro_f1", "accuracy"];

fn write_probe_summary(out: &Path, cells: &[CellSummary], cfg: &ExperimentConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    let mut header = vec!["train".to_string(), "test".to_string(), "runs".to_string()];
    for m in METRICS {
        header.push(m.to_string());
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for c in cells {
        let mut rec = vec![c.train.clone(), c.test.clone(), c.runs.to_string()];
        for m in METRICS {
            rec.push(c.mean.get(m).map(f64::to_string).unwrap_or_default());
            rec.push(c.std.get(m).map(f64::to_string).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    // Train rows by test columns of the selection metric.
    let metric = cfg.train.selection_metric.key();
    let mut g = csv::Writer::from_writer(create(&out.join("grid.csv"))?);
    let mut header = vec![format!("{metric}: train \\ test")];
    header.extend(cfg.probe_test.iter().map(spec_name));
    g.write_record(&header)?;
    for row in cells.chunks(cfg.probe_test.len()) {
        let mut rec = vec![row[0].train.clone()];
        rec.extend(
            row.iter()
                .map(|c| c.mean.get(metric).map(f64::to_string).unwrap_or_default()),
        );
        g.write_record(&rec)?;
    }
    g.flush()?;
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(cells)?,
    )
}

#[derive(Serialize)]
struct RunTables {
    scores: BTreeMap<String, f64>,
    shifts: BTreeMap<String, ctxprobe::analysis::ShiftReport>,
}

fn corpus_for_run(dir: &Path, corpus: Option<&Path>) -> Result<PathBuf> {
    if let Some(c) = corpus {
        return Ok(c.to_path_buf());
    }
    let raw = RawConfig::load(&dir.join("config.resolved"))?;
    raw.get("corpus").map(PathBuf::from).ok_or_else(|| {
        UsageError(format!(
            "{}: no corpus recorded; pass --corpus",
            dir.display()
        ))
        .into()
    })
}

/// Position, shift and pattern tables for each run directory, plus `summary.json`.
pub fn cmd_report(runs: &[PathBuf], corpus: Option<&Path>, out: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(UsageError("no run directories given".into()).into());
    }
    make_dir(out)?;
    let mut summary = BTreeMap::new();
    for (i, dir) in runs.iter().enumerate() {
        let report = read_report(&dir.join("test_report.json"))?;
        let corpus = load_corpus(&corpus_for_run(dir, corpus)?)?;
        if corpus.label_set != report.label_set {
            bail!("{}: report labels do not match the corpus", dir.display());
        }
        let base = dir
            .file_name()
            .map_or_else(|| format!("run{i}"), |n| n.to_string_lossy().into_owned());
        let name = if summary.contains_key(&base) {
            format!("{base}_{i}")
        } else {
            base
        };
        let target = out.join(&name);
        make_dir(&target)?;

        let slices = position_report(&report, PositionBuckets::default())?;
        write_position_csv(&slices, create(&target.join("position.csv"))?)?;

        let test = &corpus.test;
        let mut shifts = vec![
            (
                "label_intra".to_string(),
                label_shift_report(&report, test, PatternScope::Intra)?,
            ),
            (
                "label_inter".to_string(),
                label_shift_report(&report, test, PatternScope::Inter)?,
            ),
        ];
        if let Some(groups) = corpus.sentiment_groups.as_deref() {
            shifts.push((
                "sentiment".into(),
                sentiment_shift_report(&report, test, Some(groups), true)?,
            ));
            shifts.push((
                "sentiment_polar".into(),
                sentiment_shift_report(&report, test, Some(groups), false)?,
            ));
        }
        write_shift_csv(&shifts, create(&target.join("shifts.csv"))?)?;
        write_patterns(&corpus, &report, &target)?;
        summary.insert(
            name,
            RunTables {
                scores: report.scores.clone(),
                shifts: shifts.into_iter().collect(),
            },
        );
    }
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )
}

pub fn cmd_synth(cfg: &SynthCopyConfig, out: &Path) -> Result<()> {
    let corpus = synth_copy_corpus(cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        make_dir(parent)?;
    }
    write_corpus(&corpus, out)?;
    Ok(())
}

/// Scores of `report` under every F1 scheme, as `name=value` pairs.
pub fn score_line(report: &EvalReport) -> String {
    F1Scheme::ALL
        .iter()
        .map(|s| format!("{}={:.4}", s.key(), report.score(*s)))
        .collect::<Vec<_>>()
        .join(" ")
}
