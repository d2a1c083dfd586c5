//! End-to-end runs driven by an [`ExperimentConfig`].

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::CxrRecord;
use crate::error::{Error, Result};
use crate::eval::{run_crossval, CvReport, TrialSetup};
use crate::nn::{train, CheckpointMeta, Network, ParamStore};
use crate::raster::Raster;
use crate::scoring::TargetKind;
use crate::seed::derive_seed;

/// Cross-validation output: the configuration that produced it and one
/// report per target kind. Contains nothing that depends on thread count
/// or wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub record_count: usize,
    pub reports: Vec<CvReport>,
}

impl ExperimentReport {
    pub fn report(&self, kind: TargetKind) -> Option<&CvReport> {
        self.reports.iter().find(|r| r.target_kind == kind)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Cross-validates one network per selected target kind.
pub fn run_experiment(config: &ExperimentConfig, records: &[CxrRecord], parallel: usize) -> Result<ExperimentReport> {
    config.validate()?;
    let mut reports = Vec::new();
    for kind in config.target.kinds() {
        let setup = TrialSetup {
            kind,
            network: &config.network,
            training: &config.training,
            augment: &config.augment,
        };
        reports.push(run_crossval(records, &setup, &config.split, parallel)?);
    }
    Ok(ExperimentReport {
        config: config.clone(),
        record_count: records.len(),
        reports,
    })
}

const FINAL_INIT_STREAM: u64 = 0x4649_4E49;
const FINAL_TRAIN_STREAM: u64 = 0x4649_4E54;

/// Trains one network for `kind` on every record and returns it with the
/// metadata needed to save a checkpoint.
pub fn train_final(
    config: &ExperimentConfig,
    records: &[CxrRecord],
    kind: TargetKind,
) -> Result<(ParamStore, CheckpointMeta)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::validation("no records to train on"));
    }
    let seed = config.training.seed;
    let mut network = Network::new(config.network.clone(), derive_seed(seed, FINAL_INIT_STREAM))?;
    let images: Vec<&Raster> = records.iter().map(|r| &r.pixels).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.label(kind).value()).collect();
    train(
        &mut network,
        &images,
        &targets,
        &config.training,
        &config.augment,
        derive_seed(seed, FINAL_TRAIN_STREAM),
    )?;
    let meta = CheckpointMeta {
        target: Some(kind),
        epochs: config.training.epochs,
        seed,
        network: config.network.clone(),
        preprocess: config.preprocess.clone(),
    };
    Ok((network.into_params(), meta))
}
