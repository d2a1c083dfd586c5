//! Minibatch training loop: augmentation, MSE on normalized scores, Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::network::Network;
use super::optim::{adam_step, AdamConfig, AdamState};
use super::tensor::Tensor;
use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push(format!("{prefix}batch_size: must be positive"));
        }
        p.extend(self.adam().problems(prefix));
        p
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Trains `network` in place on `(image, target)` pairs with targets in [0, 1].
///
/// Each image is freshly augmented every time it is drawn. Shuffling and
/// augmentation use separate streams derived from `seed` (and the augmentation
/// config's own seed), so runs with equal inputs are bit-identical.
pub fn train(
    network: &mut Network,
    images: &[&Raster],
    targets: &[f64],
    config: &TrainConfig,
    augment_cfg: &AugmentConfig,
    seed: u64,
) -> Result<TrainLog> {
    if images.len() != targets.len() {
        return Err(Error::validation(format!(
            "{} images but {} targets",
            images.len(),
            targets.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut problems = config.problems("training.");
    problems.extend(augment_cfg.problems("augment."));
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::validation(format!("training target {t} outside [0, 1]")));
    }

    let adam = config.adam();
    let mut state = AdamState::new(network.params());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM));
    let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ augment_cfg.seed, AUGMENT_STREAM));
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let augmented = batch
                .iter()
                .map(|&i| augment::apply(images[i], augment_cfg, &mut aug_rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Raster> = augmented.iter().collect();
            let batch_targets: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();

            let grads = {
                let mut g = Graph::new();
                let x = g.input(Tensor::from_rasters(&refs)?);
                let trace = network.forward(&mut g, x)?;
                let loss = g.mse(trace.output, &batch_targets)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        param: format!("loss (epoch {epoch})"),
                    });
                }
                total += value * batch.len() as f64;
                g.backward(loss)?.param_grads(network.params())
            };
            adam_step(network.params_mut(), &grads, &mut state, &adam)?;
        }
        let mean = total / images.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok(log)
}
