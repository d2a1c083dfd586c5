//! Monte Carlo cross-validation: one fresh network per trial, aggregated R².

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean, r_squared, sample_std};
use super::split::{split_indices, Split, SplitSpec};
use crate::augment::AugmentConfig;
use crate::dataset::CxrRecord;
use crate::error::{Error, Result};
use crate::nn::{train, Network, NetworkConfig, TrainConfig};
use crate::raster::Raster;
use crate::scoring::{denormalize, TargetKind};
use crate::seed::derive_seed;

/// Everything a trial needs apart from the data and the partition.
#[derive(Debug, Clone, Copy)]
pub struct TrialSetup<'a> {
    pub kind: TargetKind,
    pub network: &'a NetworkConfig,
    pub training: &'a TrainConfig,
    pub augment: &'a AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub r2: f64,
    /// `(predicted, radiologist)` pairs in normalized units, one per test id.
    pub scatter: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub target_kind: TargetKind,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub best_trial_index: usize,
}

impl CvReport {
    pub fn best_trial(&self) -> &TrialResult {
        self.trials
            .iter()
            .find(|t| t.trial_index == self.best_trial_index)
            .expect("best trial is one of the trials")
    }
}

const INIT_STREAM: u64 = 0x494E_4954;
const TRAIN_STREAM: u64 = 0x0054_524E;

/// Trains on `split.train`, predicts `split.test`. Test records are only read
/// after training has finished.
pub fn run_trial_on_split(
    records: &[CxrRecord],
    setup: &TrialSetup<'_>,
    split: &Split,
    trial_index: usize,
) -> Result<TrialResult> {
    let n = records.len();
    if split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(Error::validation(format!(
            "split references an index beyond {n} records"
        )));
    }
    let seed = setup.training.seed;
    let mut network = Network::new(
        setup.network.clone(),
        derive_seed(derive_seed(seed, INIT_STREAM), trial_index as u64),
    )?;
    let train_images: Vec<&Raster> = split.train.iter().map(|&i| &records[i].pixels).collect();
    let train_targets: Vec<f64> = split
        .train
        .iter()
        .map(|&i| records[i].label(setup.kind).value())
        .collect();
    train(
        &mut network,
        &train_images,
        &train_targets,
        setup.training,
        setup.augment,
        derive_seed(derive_seed(seed, TRAIN_STREAM), trial_index as u64),
    )?;

    let test_images: Vec<&Raster> = split.test.iter().map(|&i| &records[i].pixels).collect();
    let predicted = network.predict(&test_images)?;
    if let Some(p) = predicted.iter().find(|p| !p.is_finite()) {
        return Err(Error::Divergence {
            param: format!("prediction {p}"),
        });
    }
    let truth: Vec<f64> = split
        .test
        .iter()
        .map(|&i| records[i].label(setup.kind).value())
        .collect();
    let r2 = r_squared(&predicted, &truth)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].id().to_string()).collect();
    Ok(TrialResult {
        trial_index,
        train_ids: ids(&split.train),
        test_ids: ids(&split.test),
        r2,
        scatter: predicted.into_iter().zip(truth).collect(),
    })
}

/// Draws the stratified partition for `trial_index` and runs the trial on it.
pub fn run_trial(
    records: &[CxrRecord],
    setup: &TrialSetup<'_>,
    spec: &SplitSpec,
    trial_index: usize,
) -> Result<TrialResult> {
    let labels: Vec<f64> = records.iter().map(|r| r.label(setup.kind).value()).collect();
    let split = split_indices(&labels, spec, trial_index)?;
    run_trial_on_split(records, setup, &split, trial_index)
}

/// Folds trial outcomes into a report. Failed trials are kept but excluded
/// from the statistics; the result does not depend on input order.
pub fn aggregate(kind: TargetKind, outcomes: Vec<Result<TrialResult, TrialFailure>>) -> Result<CvReport> {
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => trials.push(t),
            Err(f) => failures.push(f),
        }
    }
    trials.sort_by_key(|t| t.trial_index);
    failures.sort_by_key(|f| f.trial_index);
    if trials.len() < 2 {
        return Err(Error::Aggregation {
            successful: trials.len(),
        });
    }
    let r2: Vec<f64> = trials.iter().map(|t| t.r2).collect();
    let best = trials
        .iter()
        .fold(&trials[0], |best, t| if t.r2 > best.r2 { t } else { best })
        .trial_index;
    Ok(CvReport {
        target_kind: kind,
        r2_mean: mean(&r2),
        r2_std: sample_std(&r2),
        best_trial_index: best,
        trials,
        failures,
    })
}

/// Runs `spec.n_trials` trials on a pool of `parallel` threads. Each trial is
/// single-threaded and seeded from its index, so the report does not depend
/// on `parallel`.
pub fn run_crossval(
    records: &[CxrRecord],
    setup: &TrialSetup<'_>,
    spec: &SplitSpec,
    parallel: usize,
) -> Result<CvReport> {
    let problems = spec.problems("split.");
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrialResult>> = pool.install(|| {
        (0..spec.n_trials)
            .into_par_iter()
            .map(|k| {
                let out = run_trial(records, setup, spec, k);
                match &out {
                    Ok(t) => log::info!("{} trial {k}: R² = {:.4}", setup.kind, t.r2),
                    Err(e) => log::warn!("{} trial {k} failed: {e}", setup.kind),
                }
                out
            })
            .collect()
    });
    let mut outcomes = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        outcomes.push(match r {
            Ok(t) => Ok(t),
            // Configuration problems hit every trial alike; surface them directly.
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => Err(TrialFailure {
                trial_index: k,
                error: e.to_string(),
            }),
        });
    }
    aggregate(setup.kind, outcomes)
}

/// Best-trial scatter pairs in score units, one `predicted,radiologist` row each.
pub fn scatter_csv(report: &CvReport) -> Result<String> {
    let mut out = String::from("predicted,radiologist\n");
    for &(p, t) in &report.best_trial().scatter {
        let p = denormalize(p, report.target_kind)?;
        let t = denormalize(t, report.target_kind)?;
        writeln!(out, "{p:?},{t:?}").expect("writing to a String");
    }
    Ok(out)
}

pub fn export_scatter(report: &CvReport, path: &Path) -> Result<()> {
    std::fs::write(path, scatter_csv(report)?).map_err(|e| Error::io(path, e))
}

/// Reads a scatter CSV back as `(predicted, radiologist)` pairs.
pub fn read_scatter(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["predicted", "radiologist"] {
        return Err(Error::Schema {
            column: "predicted,radiologist".into(),
        });
    }
    reader
        .deserialize::<(f64, f64)>()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Row {
                line: i as u64 + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Standalone SVG scatter of the best trial with the identity line.
pub fn scatter_svg(report: &CvReport) -> Result<String> {
    let kind = report.target_kind;
    let max = kind.max_total() as f64;
    let (size, margin) = (360.0, 40.0);
    let span = size - 2.0 * margin;
    let px = |v: f64| margin + v / max * span;
    let py = |v: f64| size - margin - v / max * span;
    let best = report.best_trial();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r##"<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaa" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(max),
        py(max)
    )
    .unwrap();
    for k in 0..=kind.max_total() {
        let v = k as f64;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{k}</text>"#,
            px(v),
            size - margin + 14.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{k}</text>"#,
            margin - 6.0,
            py(v) + 3.0
        )
        .unwrap();
    }
    for &(p, t) in &best.scatter {
        let (p, t) = (denormalize(p, kind)?, denormalize(t, kind)?);
        writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" fill-opacity="0.7"/>"##,
            px(t),
            py(p)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{kind} radiologist score (trial {}, R² {:.3})</text>"#,
        size / 2.0,
        size - 8.0,
        best.trial_index,
        best.r2
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {})">predicted score</text>"#,
        size / 2.0,
        size / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn export_scatter_svg(report: &CvReport, path: &Path) -> Result<()> {
    std::fs::write(path, scatter_svg(report)?).map_err(|e| Error::io(path, e))
}
