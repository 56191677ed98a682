use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ctxprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxprobe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CTXPROBE_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const HEADER: &str = r#"{"task":"t","labels":["a","b"]}"#;

fn dialogue(id: &str, split: &str, texts: &[(&str, &str, &str)]) -> String {
    let us: Vec<String> = texts
        .iter()
        .map(|(t, s, l)| format!(r#"{{"text":"{t}","speaker":"{s}","label":"{l}"}}"#))
        .collect();
    format!(
        r#"{{"dialogue_id":"{id}","split":"{split}","utterances":[{}]}}"#,
        us.join(",")
    )
}

fn synth(dir: &Path) -> PathBuf {
    let o = ctxprobe(
        &[
            "synth",
            "--out",
            "c.jsonl",
            "--n-train",
            "16",
            "--n-val",
            "4",
            "--n-test",
            "4",
            "--labels",
            "3",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("c.jsonl")
}

const TINY: &str = "corpus = c.jsonl
seed = 5
train.batch_size = 4
model.d_h = 5
model.embed_dim = 6
model.cnn_maps_per_size = 3
model.cnn_out = 5
";

fn config(dir: &Path, name: &str, extra: &str) -> String {
    let epochs = if extra.contains("train.epochs") {
        ""
    } else {
        "train.epochs = 2\n"
    };
    fs::write(dir.join(name), format!("{TINY}{epochs}{extra}")).unwrap();
    name.to_string()
}

fn csv_cells(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let clean = format!(
        "{HEADER}\n{}\n",
        dialogue("d0", "train", &[("hi", "A", "a"), ("yo", "B", "b")])
    );
    fs::write(dir.path().join("clean.jsonl"), clean).unwrap();
    let o = ctxprobe(&["validate", "clean.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let broken = format!(
        "{HEADER}\n{}\n",
        dialogue("d0", "train", &[("", "A", "a"), ("yo", "B", "b")])
    );
    fs::write(dir.path().join("broken.jsonl"), broken).unwrap();
    let o = ctxprobe(&["validate", "--corpus", "broken.jsonl"], dir.path());
    assert_eq!(code(&o), 1);
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));

    assert_eq!(
        code(&ctxprobe(&["validate", "missing.jsonl"], dir.path())),
        2
    );
    assert_eq!(code(&ctxprobe(&["validate"], dir.path())), 2);
}

#[test]
fn stats_on_a_constant_corpus() {
    let dir = TempDir::new().unwrap();
    let d = |id: &str, split: &str| {
        dialogue(
            id,
            split,
            &[("x", "A", "a"), ("y", "B", "a"), ("z", "A", "a")],
        )
    };
    let text = format!("{HEADER}\n{}\n{}\n", d("d0", "train"), d("d1", "test"));
    fs::write(dir.path().join("c.jsonl"), text).unwrap();
    let o = ctxprobe(&["stats", "--corpus", "c.jsonl", "--out", "st"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = csv_cells(&dir.path().join("st/transition_intra.csv"));
    assert_eq!(m, [["from", "a", "b"], ["a", "1", "0"], ["b", "0", "0"]]);
    let p = csv_cells(&dir.path().join("st/patterns_intra_2.csv"));
    assert_eq!(p.len(), 2, "one pattern row plus header");
    assert_eq!(p[1][..2], ["a a", "1"]);
}

#[test]
fn stats_files_are_normalized_and_diagonal_dominant() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let o = ctxprobe(&["stats", "--corpus", "c.jsonl", "--out", "st"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for scope in ["intra", "inter"] {
        let m = csv_cells(&dir.path().join(format!("st/transition_{scope}.csv")));
        let vals: Vec<Vec<f64>> = m[1..]
            .iter()
            .map(|r| r[1..].iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        let sum: f64 = vals.iter().flatten().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "{scope}: {sum}");
        let diag: f64 = (0..vals.len()).map(|i| vals[i][i]).sum();
        assert!(diag > 0.5, "{scope}: {diag}");
    }
}

#[test]
fn train_is_reproducible_and_aggregates_runs() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let cfg = config(dir.path(), "t.cfg", "");
    for out in ["a", "b"] {
        let o = ctxprobe(&["train", "--config", &cfg, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/metrics.csv")).unwrap());
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("epoch,train_loss,val_score\n"));
    for f in [
        "checkpoint.json",
        "test_report.json",
        "test_rows.csv",
        "config.resolved",
    ] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }

    let o = ctxprobe(
        &[
            "train",
            "--config",
            &cfg,
            "--out",
            "multi",
            "--runs",
            "3",
            "--threads",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("multi/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([5, 6, 7]));
    assert!(summary["mean"]["weighted_f1"].is_number());
    assert!(summary["std"]["weighted_f1"].is_number());
    // The first seed of a multi-run is the single run.
    assert_eq!(
        fs::read(dir.path().join("multi/seed_5/metrics.csv")).unwrap(),
        fs::read(dir.path().join("a/metrics.csv")).unwrap()
    );
}

#[test]
fn config_errors_stop_before_any_output() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let cfg = config(dir.path(), "bad.cfg", "model.width = 3\n");
    let o = ctxprobe(&["train", "--config", &cfg, "--out", "never"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("model.width"));
    assert!(!dir.path().join("never").exists());

    let cfg = config(dir.path(), "no_out.cfg", "");
    assert_eq!(code(&ctxprobe(&["train", "--config", &cfg], dir.path())), 2);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let cfg = config(dir.path(), "t.cfg", "train.epochs = 1\n");
    let o = Command::new(env!("CARGO_BIN_EXE_ctxprobe"))
        .args(["train", "--config", &cfg])
        .current_dir(dir.path())
        .env("CTXPROBE_OUT", dir.path().join("from_env"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("from_env/metrics.csv").exists());
}

#[test]
fn probe_grids_and_neutral_cell() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let cfg = config(dir.path(), "t.cfg", "");
    assert_eq!(
        code(&ctxprobe(
            &["train", "--config", &cfg, "--out", "run"],
            dir.path()
        )),
        0
    );

    let one = config(dir.path(), "one.cfg", "probe.test = none\n");
    let o = ctxprobe(&["probe", "--config", &one, "--out", "p1"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("p1/cell_0_0/report.json")).unwrap(),
        fs::read(dir.path().join("run/test_report.json")).unwrap()
    );

    let grid = config(
        dir.path(),
        "grid.cfg",
        "train.batching = utterance\nprobe.train = none | drop;past=-ALL;future=--\n\
         probe.test = none | shuffle;seed=1\nthreads = 2\n",
    );
    let o = ctxprobe(&["probe", "--config", &grid, "--out", "p2"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for cell in ["cell_0_0", "cell_0_1", "cell_1_0", "cell_1_1"] {
        assert!(
            dir.path()
                .join("p2")
                .join(cell)
                .join("report.json")
                .exists(),
            "{cell}"
        );
    }
    let summary = csv_cells(&dir.path().join("p2/summary.csv"));
    assert_eq!(summary.len(), 5);
    assert_eq!(summary[0][..4], ["train", "test", "runs", "weighted_f1"]);
    let grid = csv_cells(&dir.path().join("p2/grid.csv"));
    assert_eq!(grid.len(), 3);
    assert_eq!(grid[0].len(), 3);

    // A saved checkpoint replaces inline training.
    let saved = config(dir.path(), "saved.cfg", "probe.checkpoint = run\n");
    let o = ctxprobe(&["probe", "--config", &saved, "--out", "p3"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("p3/cell_0_0/report.json")).unwrap(),
        fs::read(dir.path().join("run/test_report.json")).unwrap()
    );
}

#[test]
fn report_tables() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let cfg = config(dir.path(), "t.cfg", "train.epochs = 1\n");
    assert_eq!(
        code(&ctxprobe(
            &["train", "--config", &cfg, "--out", "run"],
            dir.path()
        )),
        0
    );
    let o = ctxprobe(&["report", "run", "--out", "rep"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let shifts = csv_cells(&dir.path().join("rep/run/shifts.csv"));
    assert_eq!(shifts[0][5], "shifts_per_dialogue");
    assert!(dir.path().join("rep/run/position.csv").exists());
    assert!(dir.path().join("rep/run/patterns_intra_5.csv").exists());
    assert!(dir.path().join("rep/summary.json").exists());

    assert_eq!(
        code(&ctxprobe(
            &["report", "nowhere", "--out", "rep2"],
            dir.path()
        )),
        2
    );
}

#[test]
fn report_keeps_empty_shift_slices() {
    let dir = TempDir::new().unwrap();
    let d = |id: &str, split: &str| {
        dialogue(
            id,
            split,
            &[("x", "A", "a"), ("y", "B", "b"), ("z", "A", "a")],
        )
    };
    let text = format!(
        "{HEADER}\n{}\n{}\n{}\n",
        d("d0", "train"),
        d("d1", "val"),
        d("d2", "test")
    );
    fs::write(dir.path().join("c.jsonl"), text).unwrap();
    let cfg = config(dir.path(), "t.cfg", "train.epochs = 1\n");
    let o = ctxprobe(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = ctxprobe(&["report", "run", "--out", "rep"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let shifts = csv_cells(&dir.path().join("rep/run/shifts.csv"));
    // Same-speaker labels never change here, so the intra slice is empty.
    let intra = shifts.iter().find(|r| r[0] == "label_intra").unwrap();
    assert_eq!(intra[1], "");
    assert_eq!(intra[2], "0");
}
