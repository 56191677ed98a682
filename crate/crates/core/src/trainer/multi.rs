use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{train, RunResult, TrainConfig, TrainError, TrainInputs};

/// Mean and sample standard deviation of each metric across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seeds: Vec<u64>,
    pub per_run: Vec<BTreeMap<String, f64>>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

pub struct MultiRunResult {
    pub runs: Vec<RunResult>,
    pub summary: RunSummary,
}

/// Per-metric mean and sample standard deviation (zero for a single run).
pub fn aggregate(
    scores: &[BTreeMap<String, f64>],
) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    let Some(first) = scores.first() else {
        return (mean, std);
    };
    let n = scores.len() as f64;
    for key in first.keys() {
        let vals: Vec<f64> = scores.iter().filter_map(|s| s.get(key).copied()).collect();
        let m = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.insert(key.clone(), m);
        std.insert(key.clone(), var.sqrt());
    }
    (mean, std)
}

/// Trains once per seed on up to `threads` worker threads; results keep seed order.
pub fn run_seeds(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    seeds: &[u64],
    threads: usize,
) -> Result<MultiRunResult, TrainError> {
    let threads = threads.clamp(1, seeds.len().max(1));
    let mut slots: Vec<Option<Result<RunResult, TrainError>>> =
        (0..seeds.len()).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                s.spawn(move || {
                    (w..seeds.len())
                        .step_by(threads)
                        .map(|i| {
                            let run_cfg = TrainConfig {
                                seed: seeds[i],
                                ..cfg.clone()
                            };
                            (i, train::<f64>(&run_cfg, inputs))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("training thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let runs = slots
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let per_run: Vec<BTreeMap<String, f64>> =
        runs.iter().map(|r| r.test_report.scores.clone()).collect();
    let (mean, std) = aggregate(&per_run);
    Ok(MultiRunResult {
        summary: RunSummary {
            seeds: seeds.to_vec(),
            per_run,
            mean,
            std,
        },
        runs,
    })
}

/// Runs seeds `cfg.seed + 0 .. cfg.seed + n_runs - 1`.
pub fn multi_run(
    cfg: &TrainConfig,
    inputs: &TrainInputs<'_>,
    n_runs: usize,
    threads: usize,
) -> Result<MultiRunResult, TrainError> {
    if n_runs == 0 {
        return Err(TrainError::Config("n_runs must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_runs as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    run_seeds(cfg, inputs, &seeds, threads)
}
