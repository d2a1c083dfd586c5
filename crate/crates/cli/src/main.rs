//! `cxrs`: summarize cohorts, cross-validate, train and predict lung-severity scores.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cxr_severity::config::ExperimentConfig;
use cxr_severity::dataset::{load_dataset, load_metadata, summarize, CxrRecord};
use cxr_severity::eval::{export_scatter, export_scatter_svg};
use cxr_severity::experiment::{run_experiment, train_final, ExperimentReport};
use cxr_severity::nn::{load_checkpoint, model_forward, network_from_checkpoint, save_checkpoint, Network};
use cxr_severity::raster::Raster;
use cxr_severity::scoring::TargetKind;
use cxr_severity::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "cxrs", version, about = "Lung-severity scoring for chest radiographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the demographic summary of a metadata CSV.
    Summarize {
        #[arg(long)]
        metadata: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Stratified Monte Carlo cross-validation; writes a JSON report and a
    /// best-trial scatter CSV per target next to it.
    Crossval {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Number of trials per target (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Trials run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Train one network on every record and save a checkpoint.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Score kind to train for; defaults to the config's first target.
        #[arg(long)]
        target: Option<TargetKind>,
    },
    /// Score one PNG with a trained checkpoint.
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Require the checkpoint to match this config's network.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the best-trial scatter of a cross-validation report.
    ExportScatter {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<TargetKind>,
        /// Also render an SVG scatter plot.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with metadata.csv and PNG images.
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Use N generated images instead of `--data`.
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<usize>,
}

impl InputArgs {
    fn load(&self) -> Result<(ExperimentConfig, Vec<CxrRecord>)> {
        let config = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        }
        .with_env_seed()?;
        let records = match (self.synthetic, &self.data) {
            (Some(n), _) => config.synthetic_records(n)?,
            (None, Some(dir)) => load_dataset(dir, &config.preprocess)?,
            (None, None) => unreachable!("clap requires --data or --synthetic"),
        };
        log::info!("{} records", records.len());
        Ok((config, records))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Summarize { metadata, json } => {
            let rows = load_metadata(&metadata)?;
            let summary = summarize(rows.iter().map(|r| &r.meta));
            print!("{}", summary.render_table());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&summary)?;
                write(&path, text + "\n")?;
            }
        }
        Command::Crossval {
            input,
            out,
            trials,
            parallel,
        } => {
            let (mut config, records) = input.load()?;
            if let Some(k) = trials {
                config.split.n_trials = k;
            }
            let report = run_experiment(&config, &records, parallel)?;
            write(&out, report.to_json())?;
            for r in &report.reports {
                let csv = scatter_path(&out, r.target_kind);
                export_scatter(r, &csv)?;
                println!(
                    "{}: R² {:.3} ± {:.3} over {} trials ({} failed), best trial {} R² {:.3}; scatter {}",
                    r.target_kind,
                    r.r2_mean,
                    r.r2_std,
                    r.trials.len(),
                    r.failures.len(),
                    r.best_trial_index,
                    r.best_trial().r2,
                    csv.display()
                );
            }
        }
        Command::Train { input, out, target } => {
            let (config, records) = input.load()?;
            let kind = target.unwrap_or(config.target.kinds()[0]);
            let (params, meta) = train_final(&config, &records, kind)?;
            save_checkpoint(&params, &meta, &out)?;
            println!(
                "{kind}: trained on {} records, checkpoint {}",
                records.len(),
                out.display()
            );
        }
        Command::Predict {
            image,
            checkpoint,
            config,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let network = match config {
                Some(p) => Network::from_params(ExperimentConfig::load(&p)?.network, ckpt.params.clone())?,
                None => network_from_checkpoint(&ckpt)?,
            };
            let kind = ckpt
                .meta
                .target
                .ok_or_else(|| Error::Format("checkpoint does not record its target kind".into()))?;
            let pixels = ckpt.meta.preprocess.apply(&Raster::load_png(&image)?)?;
            let score = model_forward(&network, &pixels, kind)?;
            println!(
                "{kind}: raw={:.3} score={:.1}/{}",
                score.value(),
                score.denormalize(),
                kind.max_total()
            );
        }
        Command::ExportScatter {
            report,
            out,
            target,
            svg,
        } => {
            let text = std::fs::read_to_string(&report).map_err(|e| Error::Io {
                path: report.clone(),
                source: e,
            })?;
            let parsed: ExperimentReport = serde_json::from_str(&text)?;
            let cv = match target {
                Some(kind) => parsed
                    .report(kind)
                    .ok_or_else(|| Error::Config(vec![format!("target: report has no {kind} results")]))?,
                None => parsed
                    .reports
                    .first()
                    .ok_or_else(|| Error::Config(vec!["report holds no results".into()]))?,
            };
            export_scatter(cv, &out)?;
            if let Some(path) = svg {
                export_scatter_svg(cv, &path)?;
            }
        }
    }
    Ok(())
}

/// `report.json` → `report.geographic.csv`.
fn scatter_path(out: &Path, kind: TargetKind) -> PathBuf {
    out.with_extension(format!("{kind}.csv"))
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
