//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input problem, 3 numeric failure,
//! 4 shape mismatch, 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::evaluate::{
    ablation_model, evaluate_model, mean_std, AblationMode, MetricsRecord, ProbeConfig,
};
use crate::graph::LabeledDataset;
use crate::ingest::{ingest_files, DatasetCache, SplitSizes};
use crate::matrix::Matrix;
use crate::trainer::{train_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gat-infomax", version, about = "Unsupervised graph-attention node embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw `.content`/`.cites` files into a dataset cache.
    Ingest {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset name stored in the cache (defaults to the content file stem).
        #[arg(long)]
        name: Option<String>,
        /// Seed for the train/val/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        train_per_class: usize,
        #[arg(long, default_value_t = 500)]
        val_size: usize,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
    },
    /// Train an encoder and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// `key = value` config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epoch log (`epoch<TAB>loss`); defaults to `<checkpoint>.log`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write node embeddings for a dataset.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe embeddings and print metrics as JSON lines.
    Eval {
        /// Evaluate a trained checkpoint.
        #[arg(long, conflicts_with = "mode", required_unless_present = "mode")]
        checkpoint: Option<PathBuf>,
        /// Train (or not) per ablation mode for every seed.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AblationMode>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds, counting up from the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

fn parse_mode(s: &str) -> std::result::Result<AblationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_)
        | Error::Parse { .. }
        | Error::Dataset(_)
        | Error::Config(_)
        | Error::Empty(_)
        | Error::Io { .. } => 2,
        Error::NonFinite { .. } | Error::Domain(_) => 3,
        Error::Shape { .. } => 4,
        Error::State(_) | Error::Invariant(_) => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own usage hint is omitted for invalid values; always show it
            if e.use_stderr() && e.kind() != clap::error::ErrorKind::MissingSubcommand {
                let _ = e.print();
                eprintln!("\n{}", Cli::command().render_usage());
                return ExitCode::from(2);
            }
            e.exit();
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            content,
            cites,
            out,
            name,
            seed,
            train_per_class,
            val_size,
            test_size,
        } => {
            let name = name.unwrap_or_else(|| {
                content
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let sizes = SplitSizes {
                train_per_class,
                val_size,
                test_size,
            };
            let cache = ingest_files(&name, &content, &cites, sizes, seed)?;
            cache.save(&out)?;
            println!(
                "nodes={} features={} classes={}",
                cache.num_nodes(),
                cache.num_features,
                cache.num_classes()
            );
            println!("edges={}", cache.edges.len());
            println!("skipped_citations={}", cache.skipped_citations);
            Ok(())
        }
        Command::Train {
            dataset,
            config,
            checkpoint: out,
            log,
        } => {
            let data = load_dataset(&dataset)?;
            let cfg = load_config(config.as_deref())?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log");
                PathBuf::from(p)
            });
            let mut log_text = String::new();
            let result = train_with(&cfg, &data, |epoch, loss| {
                let _ = writeln!(log_text, "{epoch}\t{loss}");
                eprintln!("epoch {epoch}\tloss {loss:.6}");
            });
            fs::write(&log_path, &log_text).map_err(|e| Error::io(&log_path, e))?;
            let (model, history) = result?;
            checkpoint::save(&model, &out)?;
            println!(
                "best_epoch={} best_loss={} epochs={}",
                history.best_epoch,
                history.best_loss,
                history.epochs_run()
            );
            Ok(())
        }
        Command::Embed {
            checkpoint: ckpt,
            dataset,
            out,
        } => {
            let model = checkpoint::load(&ckpt)?;
            let data = load_dataset(&dataset)?;
            let expected = model.encoder.input_dim();
            if expected != data.num_features() {
                return Err(Error::Shape {
                    op: "embed: checkpoint input vs dataset features",
                    left: (expected, model.encoder.embed_dim()),
                    right: (data.num_nodes(), data.num_features()),
                });
            }
            let h = model.encoder.encode(&data.features, &data.graph)?;
            write_embeddings(&h, &out)
        }
        Command::Eval {
            checkpoint: ckpt,
            mode,
            dataset,
            config,
            seeds,
        } => {
            let data = load_dataset(&dataset)?;
            let cfg = load_config(config.as_deref())?;
            let probe = ProbeConfig::default();
            let mut records = Vec::new();
            let mode_name = match mode {
                Some(m) => m.to_string(),
                None => "checkpoint".to_string(),
            };
            if let Some(path) = ckpt {
                let model = checkpoint::load(&path)?;
                let report = evaluate_model(&model, &data, &probe)?;
                records.push(MetricsRecord::new(&data.name, &mode_name, cfg.seed, &report.metrics));
            } else if let Some(mode) = mode {
                if seeds == 0 {
                    return Err(Error::Input("--seeds must be at least 1".into()));
                }
                for s in 0..seeds {
                    let seed_cfg = TrainConfig {
                        seed: cfg.seed + s,
                        ..cfg.clone()
                    };
                    let (model, _) = ablation_model(mode, &seed_cfg, &data)?;
                    let report = evaluate_model(&model, &data, &probe)?;
                    records.push(MetricsRecord::new(
                        &data.name,
                        &mode_name,
                        seed_cfg.seed,
                        &report.metrics,
                    ));
                }
            }
            let mut stdout = std::io::stdout().lock();
            for r in &records {
                let _ = writeln!(stdout, "{}", r.to_json());
            }
            let _ = writeln!(stdout, "{}", summary_json(&data.name, &mode_name, &records));
            Ok(())
        }
    }
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    DatasetCache::load(path)?.to_dataset()
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainConfig::parse(&text)
        }
    }
}

/// Header `N F'`, then one row per line in `{:.16e}` (17 significant digits).
pub fn embeddings_to_text(h: &Matrix) -> String {
    let mut s = String::with_capacity(h.len() * 24 + 16);
    let _ = writeln!(s, "{} {}", h.rows(), h.cols());
    for i in 0..h.rows() {
        for (j, v) in h.row(i).iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{v:.16e}");
        }
        s.push('\n');
    }
    s
}

fn write_embeddings(h: &Matrix, path: &Path) -> Result<()> {
    fs::write(path, embeddings_to_text(h)).map_err(|e| Error::io(path, e))
}

/// Mean and standard deviation of each scalar metric across records.
pub fn summary_json(dataset: &str, mode: &str, records: &[MetricsRecord]) -> String {
    let stat = |f: fn(&MetricsRecord) -> f64| {
        let values: Vec<f64> = records.iter().map(f).collect();
        let (mean, std) = mean_std(&values);
        json!({ "mean": mean, "std": std })
    };
    json!({
        "summary": true,
        "dataset": dataset,
        "mode": mode,
        "runs": records.len(),
        "accuracy": stat(|r| r.accuracy),
        "macro_f1": stat(|r| r.macro_f1),
        "macro_recall": stat(|r| r.macro_recall),
    })
    .to_string()
}
