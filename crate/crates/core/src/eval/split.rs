//! Stratified Monte Carlo train/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::CxrRecord;
use crate::error::{Error, Result};
use crate::scoring::TargetKind;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub strat_bins: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            n_trials: 50,
            seed: 0,
            strat_bins: 4,
        }
    }
}

impl SplitSpec {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            p.push(format!("{prefix}train_fraction: {} not in (0, 1)", self.train_fraction));
        }
        if self.n_trials == 0 {
            p.push(format!("{prefix}n_trials: must be positive"));
        }
        if self.strat_bins == 0 {
            p.push(format!("{prefix}strat_bins: must be positive"));
        }
        p
    }

    /// Seed of the partition drawn for `trial_index`.
    pub fn trial_seed(&self, trial_index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, SPLIT_STREAM), trial_index as u64)
    }
}

const SPLIT_STREAM: u64 = 0x5350_4C49;

/// Index partition of a dataset; both sides sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Equal-width bin of a label in [0, 1]; 1.0 falls in the last bin.
pub fn stratum(label: f64, bins: usize) -> usize {
    ((label * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Splits indices of `labels` so that every stratum contributes
/// `round(train_fraction × stratum size)` training items.
pub fn split_indices(labels: &[f64], spec: &SplitSpec, trial_index: usize) -> Result<Split> {
    let problems = spec.problems("split.");
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if labels.len() < spec.strat_bins {
        return Err(Error::Config(vec![format!(
            "split.strat_bins: {} bins for only {} records",
            spec.strat_bins,
            labels.len()
        )]));
    }
    if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::validation(format!("label {l} outside [0, 1]")));
    }
    let mut strata = vec![Vec::new(); spec.strat_bins];
    for (i, &l) in labels.iter().enumerate() {
        strata[stratum(l, spec.strat_bins)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.trial_seed(trial_index));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in strata {
        members.shuffle(&mut rng);
        let k = (spec.train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(vec![format!(
            "split.train_fraction: {} leaves an empty partition ({} train, {} test)",
            spec.train_fraction,
            train.len(),
            test.len()
        )]));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Record-level split stratified on the `kind` label; returns `(train_ids, test_ids)`.
pub fn stratified_split(
    records: &[CxrRecord],
    kind: TargetKind,
    spec: &SplitSpec,
    trial_index: usize,
) -> Result<(Vec<String>, Vec<String>)> {
    let labels: Vec<f64> = records.iter().map(|r| r.label(kind).value()).collect();
    let s = split_indices(&labels, spec, trial_index)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].id().to_string()).collect();
    Ok((ids(&s.train), ids(&s.test)))
}
