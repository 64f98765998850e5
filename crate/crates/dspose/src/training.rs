//! Multi-task loss and the minibatch SGD loop.
//!
//! Per patch pair the loss is `lambda_d * C_d + C_r`: a softmax
//! cross-entropy over the L+1 detection classes plus a squared-error
//! localization term that is active only when the patch is labeled with a
//! joint. Training is plain SGD (no momentum) with a step-decay learning
//! rate, fully deterministic given the seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::PatchLabel;
use crate::net::{DualInput, Gradients, NetOutput, NetworkParams, OutputGrads};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}; learning rate too high")]
    Divergence { epoch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Balance factor on the detection loss.
    pub lambda_d: f64,
    pub learning_rate: f64,
    /// Learning rate is multiplied by 0.1 after every `decay_every` epochs.
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_d: 4.0,
            learning_rate: 0.01,
            decay_every: 10,
            batch_size: 16,
            epochs: 5,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda_d > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "lambda_d must be > 0, got {}",
                self.lambda_d
            )));
        }
        // zero is allowed: it turns training into a no-op evaluation pass
        if !(self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size and decay_every must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.1f64.powi((epoch / self.decay_every) as i32)
    }
}

/// Softmax cross-entropy of the labeled class: `-log l_{i*}`.
pub fn detection_loss(likelihoods: &[f64], class: usize) -> f64 {
    -likelihoods[class].ln()
}

/// Squared error of the labeled joint's predicted location, 0 for
/// background patches.
pub fn localization_loss(locations: &[[f64; 2]], label: &PatchLabel) -> f64 {
    match (label.joint_index(), label.target) {
        (Some(i), Some(t)) => {
            let z = locations[i];
            (z[0] - t.x).powi(2) + (z[1] - t.y).powi(2)
        }
        _ => 0.0,
    }
}

/// Per-sample loss terms: (total, detection, localization) where
/// total = lambda_d * detection + localization.
pub fn sample_loss(output: &NetOutput, label: &PatchLabel, lambda_d: f64) -> (f64, f64, f64) {
    let det = detection_loss(&output.likelihoods, label.class);
    let loc = localization_loss(&output.locations, label);
    (lambda_d * det + loc, det, loc)
}

/// Sum of per-sample losses over a batch.
pub fn total_loss(samples: &[(NetOutput, PatchLabel)], lambda_d: f64) -> f64 {
    samples
        .iter()
        .map(|(out, label)| sample_loss(out, label, lambda_d).0)
        .sum()
}

/// Gradient of the per-sample loss with respect to the network outputs:
/// `lambda_d * (l - onehot)` on the detection logits and `2 (z - target)`
/// on the labeled joint's coordinates (zero elsewhere, including all of
/// them for background labels).
pub fn output_grads(output: &NetOutput, label: &PatchLabel, lambda_d: f64) -> OutputGrads {
    let logits: Vec<f64> = output
        .likelihoods
        .iter()
        .enumerate()
        .map(|(c, l)| lambda_d * (l - if c == label.class { 1.0 } else { 0.0 }))
        .collect();
    let mut locations = vec![[0.0, 0.0]; output.locations.len()];
    if let (Some(i), Some(t)) = (label.joint_index(), label.target) {
        let z = output.locations[i];
        locations[i] = [2.0 * (z[0] - t.x), 2.0 * (z[1] - t.y)];
    }
    OutputGrads { logits, locations }
}

/// A training set that materializes `(DualInput, PatchLabel)` samples on
/// demand, so pixel blocks need not all be resident at once.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, idx: usize) -> (DualInput, PatchLabel);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An in-memory sample source, used by small tests.
pub struct VecSource(pub Vec<(DualInput, PatchLabel)>);

impl SampleSource for VecSource {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, idx: usize) -> (DualInput, PatchLabel) {
        self.0[idx].clone()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub mean_det_loss: f64,
    pub mean_loc_loss: f64,
}

/// Minibatch SGD on the combined loss. The shuffle order, init and update
/// order are all fixed by `cfg.seed`, so a rerun reproduces the final
/// parameters bit-for-bit. `on_epoch` observes per-epoch statistics and
/// the current parameters (for checkpointing).
pub fn train(
    source: &dyn SampleSource,
    params: &mut NetworkParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &NetworkParams),
) -> Result<Vec<EpochStats>, TrainError> {
    cfg.validate()?;
    assert!(!source.is_empty(), "training set must be non-empty");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_det = 0.0;
        let mut sum_loc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut accum: Option<Gradients> = None;
            for &idx in batch {
                let (input, label) = source.sample(idx);
                let (output, cache) = params.forward(&input)?;
                let (total, det, loc) = sample_loss(&output, &label, cfg.lambda_d);
                sum_total += total;
                sum_det += det;
                sum_loc += loc;
                let grads = params.backward(&cache, &output_grads(&output, &label, cfg.lambda_d));
                match &mut accum {
                    Some(a) => a.add_scaled(&grads, 1.0),
                    None => accum = Some(grads),
                }
            }
            let accum = accum.expect("non-empty batch");
            params.apply_update(&accum, lr / batch.len() as f64);
        }
        let n = source.len() as f64;
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: sum_total / n,
            mean_det_loss: sum_det / n,
            mean_loc_loss: sum_loc / n,
        };
        if !stats.mean_loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        on_epoch(&stats, params);
        history.push(stats);
    }
    Ok(history)
}

/// Cap the number of background (class 0) samples at the mean per-joint
/// foreground count, keeping the earliest background samples. Returns the
/// retained indices in their original order.
pub fn balance_background(labels: &[PatchLabel]) -> Vec<usize> {
    let foreground = labels.iter().filter(|l| !l.is_background()).count();
    let joints_present: std::collections::BTreeSet<usize> = labels
        .iter()
        .filter_map(|l| l.joint_index())
        .collect();
    let cap = if joints_present.is_empty() {
        labels.len()
    } else {
        (foreground as f64 / joints_present.len() as f64).ceil() as usize
    };
    let mut kept = Vec::with_capacity(labels.len());
    let mut background_kept = 0;
    for (i, label) in labels.iter().enumerate() {
        if label.is_background() {
            if background_kept >= cap {
                continue;
            }
            background_kept += 1;
        }
        kept.push(i);
    }
    kept
}
