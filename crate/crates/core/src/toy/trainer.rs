//! Seeded SGD training with per-epoch losses and checkpoint snapshots.

use super::data::{Split, ToyDataset};
use super::net::ToyNetwork;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs at which to snapshot the network. Epoch 0 (the untrained
    /// state) is always included.
    pub checkpoint_epochs: Vec<u64>,
}

impl TrainConfig {
    pub fn new(epochs: u64, lr: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig { epochs, lr, batch_size, seed, checkpoint_epochs: checkpoint_epochs(epochs) }
    }
}

/// Default snapshot schedule: every epoch up to 32, then gaps that double
/// every 8 checkpoints (4, 8, 16, ...) out to the horizon, which is always
/// included.
pub fn checkpoint_epochs(horizon: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (0..=horizon.min(32)).collect();
    let mut gap = 4u64;
    let mut at = 32u64;
    let mut in_block = 0;
    while at < horizon {
        at = (at + gap).min(horizon);
        out.push(at);
        in_block += 1;
        if in_block == 8 {
            gap *= 2;
            in_block = 0;
        }
    }
    out.dedup();
    out
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epoch: u64,
    pub network: ToyNetwork,
}

/// Everything a training run produces: snapshots, the loss history, and a
/// divergence flag.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoints: Vec<Checkpoint>,
    /// (epoch, train_loss, test_loss) for every epoch 0..=horizon reached.
    pub losses: Vec<(u64, f64, f64)>,
    pub diverged: bool,
}

impl TrainRun {
    pub fn checkpoint_at(&self, epoch: u64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.epoch == epoch)
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("epoch 0 always present")
    }
}

/// Plain SGD with seeded per-epoch shuffling. Losses are evaluated on the
/// full train and test splits at the end of every epoch (epoch 0 being the
/// untrained network). On divergence the run stops, keeping the last finite
/// state.
pub fn train(network: ToyNetwork, dataset: &ToyDataset, cfg: &TrainConfig) -> Result<TrainRun> {
    if cfg.batch_size == 0 || !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::InvalidConfig("batch_size must be positive and lr finite >= 0".into()));
    }
    let train_set: Vec<(&[f64], usize)> =
        dataset.split(Split::Train).map(|s| (s.features.as_slice(), s.label)).collect();
    let test_set: Vec<(&[f64], usize)> =
        dataset.split(Split::Test).map(|s| (s.features.as_slice(), s.label)).collect();
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::DatasetSpec("dataset must have both splits populated".into()));
    }

    let mut net = network;
    let mut checkpoints = Vec::new();
    let mut losses = Vec::new();
    let mut diverged = false;

    let eval = |net: &ToyNetwork| {
        (
            net.mean_cross_entropy(train_set.iter().copied()),
            net.mean_cross_entropy(test_set.iter().copied()),
        )
    };

    let (tr0, te0) = eval(&net);
    if !tr0.is_finite() || !te0.is_finite() {
        return Err(Error::Diverged { epoch: 0 });
    }
    losses.push((0, tr0, te0));
    checkpoints.push(Checkpoint { epoch: 0, network: net.clone() });

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| train_set[i]).collect();
            net.sgd_step(&batch, cfg.lr);
        }
        let (tr, te) = eval(&net);
        if !tr.is_finite() || !te.is_finite() {
            diverged = true;
            break 'epochs;
        }
        losses.push((epoch, tr, te));
        if cfg.checkpoint_epochs.contains(&epoch) {
            checkpoints.push(Checkpoint { epoch, network: net.clone() });
        }
    }

    Ok(TrainRun { checkpoints, losses, diverged })
}
