use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use archbuilder::harness::metrics::read_episode_log;
use archbuilder::harness::{evaluate, load_report, train_replicas, ExperimentConfig, HarnessError, Mode, Precision};
use archbuilder::lexicon::format_sequence;
use archbuilder::miner::{mine, sequences_from_log, DEFAULT_MAX_LEN, DEFAULT_MIN_LEN};
use archbuilder::nn::Checkpoint;
use archbuilder::shapes::{builtin_default, load_catalog};
use archbuilder::BuildEnv;

#[derive(Parser)]
#[command(name = "archbuilder", version, about = "Architect-builder agent with abstraction mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeded runs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        #[arg(long)]
        max_epochs: Option<u64>,
    },
    /// Greedy evaluation of a checkpoint on a shape catalog.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Catalog file; the built-in catalog when omitted.
        #[arg(long)]
        shapes: Option<PathBuf>,
    },
    /// Rank candidate abstractions in an `episode_id,step,message_id` log.
    Mine {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_LEN)]
        min_len: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        /// Only the latest N episodes.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

/// Precision recorded in a training checkpoint's run config; f64 otherwise.
fn checkpoint_precision(path: &std::path::Path) -> Result<Precision, HarnessError> {
    let ck = Checkpoint::<f64>::read(path)?;
    let config = ck
        .training_state
        .as_ref()
        .and_then(|s| s.get("config"))
        .and_then(|c| c.as_str())
        .map(ExperimentConfig::parse)
        .transpose()?;
    Ok(config.map_or(Precision::F64, |c| c.precision))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, mode, seed, out, replicas, max_epochs } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
            }
            let out = out.or_else(|| cfg.out.clone());
            cfg.validate()?;
            let summaries = match cfg.precision {
                Precision::F64 => train_replicas::<f64>(&cfg, out.as_deref(), replicas)?,
                Precision::F32 => train_replicas::<f32>(&cfg, out.as_deref(), replicas)?,
            };
            for summary in summaries {
                let result = match summary.epochs_to_solve {
                    Some(e) => format!("solved in {e} epochs"),
                    None => format!("DNF after {} epochs", summary.max_epochs),
                };
                println!("mode={} seed={} {result}", summary.mode, summary.seed);
            }
        }
        Command::Eval { checkpoint, shapes } => {
            let catalog = match shapes {
                Some(path) => load_catalog(&path)?,
                None => builtin_default(),
            };
            let env = BuildEnv::default();
            let outcomes = match checkpoint_precision(&checkpoint)? {
                Precision::F64 => {
                    let (net, _, lexicon) = Checkpoint::<f64>::read(&checkpoint)?.restore(None)?;
                    evaluate(&net, &lexicon, &catalog, &env)
                }
                Precision::F32 => {
                    let (net, _, lexicon) = Checkpoint::<f32>::read(&checkpoint)?.restore(None)?;
                    evaluate(&net, &lexicon, &catalog, &env)
                }
            };
            for o in &outcomes {
                let verdict = if o.success { "pass" } else { "fail" };
                println!("{} {verdict} {}", o.shape, format_sequence(&o.messages));
            }
            let passed = outcomes.iter().filter(|o| o.success).count();
            println!("{passed}/{} shapes built", outcomes.len());
        }
        Command::Mine { episodes, min_len, max_len, window, top } => {
            if min_len < 2 || max_len < min_len {
                return Err(HarnessError::Config("need 2 <= min_len <= max_len".into()));
            }
            let rows = read_episode_log(&episodes)?;
            let mut seqs = sequences_from_log(&rows);
            if let Some(w) = window {
                let skip = seqs.len().saturating_sub(w);
                seqs.drain(..skip);
            }
            println!("rank,sequence,frequency,score");
            for (i, c) in mine(&seqs, min_len, max_len).iter().take(top).enumerate() {
                println!("{},\"{}\",{},{}", i + 1, format_sequence(&c.sequence), c.frequency, c.score);
            }
        }
        Command::Report { run } => print!("{}", load_report(&run)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
