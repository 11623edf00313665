use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::graph::Graph;
use super::model::{stack_specs, Model};
use super::optim::AdamConfig;
use super::NetError;
use crate::augment::{mixup, spec_augment, AugmentConfig, LabeledBatch};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub spec_augment: bool,
    pub mixup: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-4,
            batch_size: 32,
            checkpoint_every: 20,
            seed: 0,
            spec_augment: true,
            mixup: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(NetError::InvalidConfig(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.accuracy);
        }
        s
    }
}

fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.into_iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Minimizes soft-label cross-entropy with Adam. SpecAugment and Mixup are
/// drawn afresh for every batch. Checkpoints go to `checkpoint_dir` as
/// `epoch_NNN.aadm`.
pub fn train(
    model: &mut Model,
    data: &LabeledBatch,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingLog, NetError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    data.validate()?;
    let classes = model.config().num_classes;
    if data.labels.iter().any(|l| l.len() != classes) {
        return Err(NetError::ShapeMismatch(format!(
            "labels must have {classes} entries"
        )));
    }
    let present = {
        let mut seen = vec![false; classes];
        for l in &data.labels {
            seen[argmax(l.iter().copied())] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(NetError::InvalidConfig(format!(
            "training data must cover at least 2 classes, found {present}"
        )));
    }
    if cfg.spec_augment || cfg.mixup {
        augment.validate()?;
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64 + 1);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let (mut loss_sum, mut correct) = (0f64, 0usize);

        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, bi as u64));
            let mut batch = LabeledBatch {
                specs: idx.iter().map(|&i| data.specs[i].clone()).collect(),
                labels: idx.iter().map(|&i| data.labels[i].clone()).collect(),
            };
            if cfg.spec_augment {
                for s in &mut batch.specs {
                    *s = spec_augment(s, augment, &mut rng)?.0;
                }
            }
            if cfg.mixup && batch.len() >= 2 {
                batch = mixup(&batch, augment, &mut rng)?;
            }

            let refs: Vec<_> = batch.specs.iter().collect();
            let x_t = stack_specs(&refs)?;
            let (b, _, h, w) = x_t.dims4();
            let mut g = Graph::<f32>::new();
            let x = g.input(x_t);
            let out = match model.forward_graph(&mut g, x, true, true, &mut rng) {
                Err(NetError::NonFiniteActivation(_)) => {
                    return Err(NetError::DivergedLoss { epoch, batch: bi });
                }
                r => r?,
            };
            let targets: Vec<f64> = batch.labels.concat();
            let loss = g.softmax_cross_entropy(out.logits, &targets);
            let lv = f64::from(g.value(loss).data()[0]);
            if !lv.is_finite() {
                return Err(NetError::DivergedLoss { epoch, batch: bi });
            }
            let logits = g.value(out.logits).data();
            for (row, label) in logits.chunks_exact(classes).zip(&batch.labels) {
                if argmax(row.iter().map(|&v| f64::from(v))) == argmax(label.iter().copied()) {
                    correct += 1;
                }
            }
            loss_sum += lv * b as f64;

            g.backward(loss);
            let grads = g.param_grads();
            model.adam.step(&adam, &mut model.params, &grads);
            let counts = model.bn_counts(b, h, w);
            model.update_running_stats(g.bn_stats(), &counts);
        }

        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, accuracy {:.3}",
            stats.epoch,
            cfg.epochs,
            stats.loss,
            stats.accuracy
        );
        log.epochs.push(stats);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("epoch_{:03}.aadm", epoch + 1));
                save_checkpoint(model, &path)?;
                log.checkpoints.push(path);
            }
        }
    }
    Ok(log)
}
