use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthmix::checkpoint::Checkpoint;
use synthmix::cnn::{train_cnn, Cnn};
use synthmix::data::{blend, read_dataset, train_val_split, write_dataset, BlendSpec, Label};
use synthmix::dcgan::{generate_synthetic, Generator};
use synthmix::metrics::evaluate;
use synthmix::sweep::{
    class_gan_config, derive_seed, emit_report, prepare_data, render_report, run_sweep,
    train_class_gan, ExperimentConfig, ReportFormat, SweepResult,
};
use synthmix::{Error, Result};

#[derive(Parser)]
#[command(
    name = "synthmix",
    version,
    about = "GAN/real image blend sweeps for a small CNN classifier"
)]
struct Cli {
    /// Key-value config file; `SYNTHMIX_*` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the built-in toy dataset instead of `data_root`.
    #[arg(long, global = true)]
    toy: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the generator for one class on the GAN split.
    GanTrain {
        #[arg(long)]
        label: String,
    },
    /// Sample a synthetic dataset from a generator checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        /// Defaults to the label stored in the checkpoint.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Blend the real CNN pool with a stored synthetic dataset.
    Blend {
        /// `real:synthetic` image counts, e.g. 900:100.
        #[arg(long)]
        ratio: String,
        /// Dataset path without extension, e.g. out/datasets/synthetic.
        #[arg(long)]
        synthetic: Vec<PathBuf>,
    },
    /// Train a classifier on a stored 1000-image dataset.
    CnnTrain {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a classifier checkpoint on the test split or a stored dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run every configured ratio end to end and write report.csv and report.json.
    Sweep,
    /// Re-render the report of a finished sweep.
    Report {
        /// Path to sweep.json; defaults to `<out>/sweep.json`.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_text(&text)?;
    }
    config.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if cli.toy {
        config.toy = true;
    }
    Ok(config)
}

fn parse_label(s: &str) -> Result<Label> {
    Label::parse(s)
        .ok_or_else(|| Error::Config(format!("unknown label `{s}` (expected tumor or healthy)")))
}

fn split_prefix(prefix: &Path) -> Result<(PathBuf, String)> {
    let name = prefix
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("`{}` does not name a dataset", prefix.display())))?;
    let dir = prefix.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, name.to_string()))
}

/// Returns the process exit code; non-zero only for a sweep with failed rows.
fn run(cli: &Cli) -> Result<u8> {
    let config = resolve_config(cli)?;
    let datasets = config.out.join("datasets");
    match &cli.command {
        Command::GanTrain { label } => {
            config.validate()?;
            let label = parse_label(label)?;
            let splits = prepare_data(&config)?;
            let gan = class_gan_config(&config, label);
            let dir = config.out.join("gan").join(label.as_str());
            let (_, artifacts) = train_class_gan(&splits.gan_train, label, &gan, &dir)?;
            println!("{}", artifacts.checkpoint.display());
        }
        Command::Generate {
            checkpoint,
            count,
            label,
            name,
        } => {
            let ck = Checkpoint::read(checkpoint)?;
            let stored = ck
                .header
                .get("label")
                .and_then(|v| v.as_str())
                .map(str::to_string);
            let label = match label.as_deref().or(stored.as_deref()) {
                Some(l) => parse_label(l)?,
                None => {
                    return Err(Error::Config(
                        "checkpoint has no label; pass --label".into(),
                    ))
                }
            };
            let mut generator = Generator::from_checkpoint(ck)?;
            let seed = derive_seed(config.seed, &format!("generate:{}", label.as_str()));
            let images = generate_synthetic(&mut generator, *count, label, seed)?;
            let hash = write_dataset(&datasets, name, &images, "synthetic")?;
            println!("{}\t{hash}", datasets.join(name).display());
        }
        Command::Blend { ratio, synthetic } => {
            config.validate()?;
            let spec = BlendSpec::parse(ratio)?;
            let splits = prepare_data(&config)?;
            let mut pool = Vec::new();
            for prefix in synthetic {
                let (dir, name) = split_prefix(prefix)?;
                pool.extend(read_dataset(dir, &name)?.0);
            }
            let blended = blend(
                &splits.cnn_pool,
                &pool,
                spec,
                derive_seed(config.seed, &spec.label()),
            )?;
            let name = format!("blend_{:04}_{:04}", spec.real_count, spec.gan_count);
            let hash = write_dataset(&datasets, &name, &blended, "blend")?;
            println!("{}\t{hash}", datasets.join(name).display());
        }
        Command::CnnTrain { dataset } => {
            let (dir, name) = split_prefix(dataset)?;
            let (records, _) = read_dataset(dir, &name)?;
            let tv = train_val_split(&records, derive_seed(config.seed, "split"))?;
            let cnn = synthmix::cnn::TrainConfig {
                seed: derive_seed(config.seed, "cnn"),
                ..config.cnn.clone()
            };
            let (net, history) = train_cnn(&tv.train, &tv.val, &cnn)?;
            let dir = config.out.join("cnn").join(&name);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            history.write_csv(dir.join("history.csv"))?;
            net.to_checkpoint(cnn.seed).write(dir.join("cnn.ckpt"))?;
            println!("{}", dir.join("cnn.ckpt").display());
        }
        Command::Evaluate {
            checkpoint,
            dataset,
        } => {
            let net = Cnn::from_checkpoint(Checkpoint::read(checkpoint)?)?;
            let test = match dataset {
                Some(prefix) => {
                    let (dir, name) = split_prefix(prefix)?;
                    read_dataset(dir, &name)?.0
                }
                None => {
                    config.validate()?;
                    prepare_data(&config)?.test
                }
            };
            let report = evaluate(&net, &test, config.threshold, config.auc_ties)?;
            println!("{}", report.to_json()?);
        }
        Command::Sweep => {
            let result = run_sweep(&config)?;
            emit_report(&result, ReportFormat::Csv, config.out.join("report.csv"))?;
            emit_report(&result, ReportFormat::Json, config.out.join("report.json"))?;
            print!("{}", render_report(&result, ReportFormat::Csv)?);
            let first = result.failures().find_map(|r| r.failure.clone());
            if let Some(failure) = first {
                eprintln!(
                    "{} of {} rows failed; first: {}",
                    result.failures().count(),
                    result.rows.len(),
                    failure.message
                );
                return Ok(failure.exit_code as u8);
            }
        }
        Command::Report {
            result,
            format,
            output,
        } => {
            let path = result
                .clone()
                .unwrap_or_else(|| config.out.join("sweep.json"));
            let result = SweepResult::read_json(path)?;
            let format = ReportFormat::parse(format)?;
            match output {
                Some(path) => emit_report(&result, format, path)?,
                None => print!("{}", render_report(&result, format)?),
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
