use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dive_core::engine::Method;
use dive_core::harness::{self, ExperimentConfig, Selector, TrainTarget, VaeVariant};
use dive_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dive", version, about = "Counterfactual explanations with Fisher-guided latent masks")]
struct Cli {
    /// Experiment config (structured text). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. `--set engine.n=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the glyph dataset and the oracle's unbiased dataset.
    GenData {
        /// Bias strength ρ.
        #[arg(long)]
        bias: Option<f64>,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Train a model: vae, vae_pixel, vae_plain, classifier or oracle.
    Train {
        model: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Explain inputs from the explanation pool.
    Explain {
        /// A single pool record; the evaluation set when omitted.
        #[arg(long)]
        index: Option<usize>,
        /// dive, dive_minus, xgem_plus, random_masks, fisher_chunks or fisher_spectral.
        #[arg(long)]
        method: Option<String>,
        /// Also decode the perturbation whose classifier output interpolates
        /// to this value.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Score every bundle in the output directory.
    Evaluate,
    /// Run the hyperparameter sweep.
    Sweep {
        /// Worker threads (default: DIVE_THREADS, else all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write report.md from sweep and metric tables.
    Report,
}

/// Set `key` (dotted path) to `value`, parsed as a TOML value when possible.
fn apply_set(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("{assignment:?} is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, "is not a section"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if !cli.sets.is_empty() {
        let mut doc: toml::Table = toml::from_str(&cfg.to_toml()).expect("config serialises to a table");
        for s in &cli.sets {
            apply_set(&mut doc, s)?;
        }
        cfg = ExperimentConfig::from_toml(&toml::to_string(&doc).expect("table serialises"))?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData { bias, n_samples } => {
            if let Some(b) = bias {
                cfg.data.bias_strength = b;
            }
            if let Some(n) = n_samples {
                cfg.data.n_samples = n;
            }
            harness::gen_data(&cfg)?;
            cfg.save(&harness::Paths::new(&cfg.out_dir).config())?;
        }
        Command::Train { model, epochs } => {
            let target = match model.as_str() {
                "classifier" => TrainTarget::Classifier,
                "oracle" => TrainTarget::Oracle,
                other => TrainTarget::Vae(VaeVariant::parse(other).ok_or_else(|| {
                    Error::config("model", format!("{other:?}: expected vae, vae_pixel, vae_plain, classifier or oracle"))
                })?),
            };
            harness::train(&cfg, target, epochs)?;
        }
        Command::Explain { index, method, target } => {
            if let Some(m) = method {
                cfg.engine.method = Method::parse(&m).ok_or_else(|| Error::config("--method", format!("unknown method {m:?}")))?;
            }
            let selector = index.map_or(Selector::EvalSet, Selector::Index);
            for dir in harness::explain(&cfg, &selector, target)? {
                println!("{}", dir.display());
            }
        }
        Command::Evaluate => {
            let report = harness::evaluate(&cfg)?;
            print!("{}", report.summary());
        }
        Command::Sweep { threads } => {
            if threads == Some(0) {
                return Err(Error::config("--threads", "must be positive"));
            }
            let rows = harness::sweep(&cfg, threads)?;
            println!("{} row(s) in {}", rows.len(), harness::Paths::new(&cfg.out_dir).sweep().display());
        }
        Command::Report => print!("{}", harness::report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
