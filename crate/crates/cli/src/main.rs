use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ctxprobe::corpus::SynthCopyConfig;
use ctxprobe_cli::commands::{
    cmd_probe, cmd_report, cmd_stats, cmd_synth, cmd_train, cmd_validate,
};
use ctxprobe_cli::config::RawConfig;
use ctxprobe_cli::{exit_code, UsageError};

const OUT_ENV: &str = "CTXPROBE_OUT";

#[derive(Parser)]
#[command(
    name = "ctxprobe",
    version,
    about = "Train dialogue classifiers and probe how they use context"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus file; lists every violation on stderr.
    Validate {
        corpus: Option<PathBuf>,
        #[arg(long = "corpus", conflicts_with = "corpus")]
        corpus_flag: Option<PathBuf>,
    },
    /// Write label transition matrices and n-gram pattern tables.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = OUT_ENV)]
        out: PathBuf,
        /// Test report used to score the patterns.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one model per seed and write the run directory.
    Train(RunArgs),
    /// Evaluate a grid of train-time by test-time perturbations.
    Probe(RunArgs),
    /// Position, shift and pattern tables for finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Overrides the corpus recorded in each run.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, env = OUT_ENV)]
        out: PathBuf,
    },
    /// Write a synthetic label-copying corpus as JSONL.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 60)]
        n_val: usize,
        #[arg(long, default_value_t = 200)]
        n_test: usize,
        #[arg(long, default_value_t = 4)]
        labels: usize,
        #[arg(long, default_value_t = 0.9)]
        copy_prob: f64,
        #[arg(long, default_value_t = 0.2)]
        text_informativeness: f64,
        #[arg(long, default_value_t = 6)]
        min_len: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    /// Config file with flags applied on top; `CTXPROBE_OUT` fills a missing `out`.
    fn raw(&self) -> Result<RawConfig> {
        let mut raw = RawConfig::load(&self.config)?;
        let path = |p: &PathBuf| p.display().to_string();
        if let Some(c) = &self.corpus {
            raw.set("corpus", &path(c))?;
        }
        match (&self.out, std::env::var_os(OUT_ENV)) {
            (Some(o), _) => raw.set("out", &path(o))?,
            (None, Some(env)) if raw.get("out").is_none() => {
                raw.set("out", &env.to_string_lossy())?
            }
            _ => {}
        }
        if let Some(s) = self.seed {
            raw.set("seed", &s.to_string())?;
        }
        if let Some(r) = self.runs {
            raw.set("runs", &r.to_string())?;
        }
        if let Some(t) = self.threads {
            raw.set("threads", &t.to_string())?;
        }
        Ok(raw)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate {
            corpus,
            corpus_flag,
        } => {
            let path = corpus
                .or(corpus_flag)
                .ok_or_else(|| UsageError("validate needs a corpus path".into()))?;
            cmd_validate(&path)
        }
        Command::Stats {
            corpus,
            out,
            report,
        } => {
            cmd_stats(&corpus, &out, report.as_deref())?;
            println!("{}", out.display());
            Ok(true)
        }
        Command::Train(args) => {
            let out = cmd_train(&args.raw()?)?;
            println!("{}", out.display());
            Ok(true)
        }
        Command::Probe(args) => {
            let out = cmd_probe(&args.raw()?)?;
            println!("{}", out.display());
            Ok(true)
        }
        Command::Report { runs, corpus, out } => {
            cmd_report(&runs, corpus.as_deref(), &out)?;
            println!("{}", out.display());
            Ok(true)
        }
        Command::Synth {
            out,
            seed,
            n_train,
            n_val,
            n_test,
            labels,
            copy_prob,
            text_informativeness,
            min_len,
            max_len,
        } => {
            let cfg = SynthCopyConfig {
                n_train,
                n_val,
                n_test,
                len_range: (min_len, max_len),
                n_labels: labels,
                copy_prob,
                text_informativeness,
                seed,
            };
            cmd_synth(&cfg, &out)?;
            println!("{}", out.display());
            Ok(true)
        }
    }
}

/// The error chain, skipping causes already quoted by the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
