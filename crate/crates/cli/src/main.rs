//! `mlfsl` — train, evaluate and sanity-check multi-label few-shot models.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlfsl::heads::{HeadKind, RelationLoss};
use mlfsl::run::{self, Checkpoint, RunConfig};
use mlfsl::selftest;
use mlfsl::Error;

#[derive(Parser)]
#[command(name = "mlfsl", version, about = "Multi-label few-shot classification by episodic training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the training classes and write a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-episode loss CSV (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on episodes drawn from the held-out test classes.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics JSON to write; an aligned CSV row goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic multi-label dataset as JSONL.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        max_labels: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        cooccurrence: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in gradient, propagation, voting and AP checks.
    Selftest,
}

/// Flags shared by `train` and `eval`; each overrides the config file.
#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    head: Option<HeadKind>,
    #[arg(long)]
    way: Option<usize>,
    #[arg(long)]
    shot: Option<usize>,
    /// Queries per episode (default: half the way, at least one).
    #[arg(long)]
    queries: Option<usize>,
    /// Training episodes for `train`, test episodes for `eval`.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Enable the label-count module.
    #[arg(long)]
    nlc: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    relation_loss: Option<RelationLoss>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// JSONL features; a synthetic dataset is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, training: bool) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(head => head, way => way, shot => shot, seed => seed, lambda => lambda,
             alpha => alpha, sigma => sigma, relation_loss => relation_loss,
             learning_rate => learning_rate);
        if self.queries.is_some() {
            cfg.queries = self.queries;
        }
        if self.knn.is_some() {
            cfg.knn = self.knn;
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.nlc {
            cfg.nlc = true;
        }
        if let Some(e) = self.episodes {
            if training {
                cfg.episodes = e;
            } else {
                cfg.eval_episodes = e;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::Train {
            run: args,
            checkpoint,
            out,
        } => {
            let cfg = args.resolve(true)?;
            let outcome = run::train(&cfg)?;
            outcome.checkpoint.save(&checkpoint)?;
            let log_path = out.unwrap_or_else(|| sibling(&checkpoint, ".loss.csv"));
            run::write_train_log(&outcome.log, &log_path)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.loss.total);
            println!(
                "trained {} head for {} episodes (final loss {last:.6}); checkpoint {}, log {}",
                cfg.head,
                cfg.episodes,
                checkpoint.display(),
                log_path.display()
            );
        }
        Command::Eval {
            run: args,
            checkpoint,
            out,
        } => {
            let cfg = args.resolve(false)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let report = run::eval(&cfg, &ckpt)?;
            let json = run::report_json(&report)?;
            let csv = run::report_csv(&cfg, &report);
            if let Some(path) = out {
                run::write_text(&path, &json)?;
                run::write_text(path.with_extension("csv"), &csv)?;
            }
            println!("{json}");
        }
        Command::Synth {
            config,
            seed,
            classes,
            dim,
            samples_per_class,
            max_labels,
            separation,
            noise,
            cooccurrence,
            out,
        } => {
            let mut synth = match config {
                Some(path) => RunConfig::load(path)?.synth,
                None => Default::default(),
            };
            macro_rules! set {
                ($($flag:ident => $field:ident),*) => { $(if let Some(v) = $flag { synth.$field = v; })* };
            }
            set!(seed => seed, classes => num_classes, dim => feature_dim,
                 samples_per_class => samples_per_class, max_labels => max_labels,
                 separation => separation, noise => noise, cooccurrence => cooccurrence);
            let data = run::synth(&synth, &out)?;
            println!("wrote {} samples over {} classes to {}", data.len(), data.num_classes(), out.display());
        }
        Command::Selftest => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            let ok = selftest::run(&mut lock, None)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        // A failed self-check is reported like a numerical failure.
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
