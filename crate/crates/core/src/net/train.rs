//! Adam with global-norm clipping and validation-AUC early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::records::class_weights;
use crate::stats::auc;
use crate::temporal::ChunkSequence;
use crate::{Error, Result};

/// RNG stream for dropout masks.
const DROPOUT_STREAM: u64 = 1;
/// RNG stream for the per-epoch batch order.
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_auc: Vec<f64>,
    /// Largest post-clip global gradient norm seen in each epoch.
    pub max_grad_norm: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

/// Scales `grad` so its L2 norm is at most `max_norm`. Returns the norms
/// before and after.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> (f64, f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
        let after = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        (norm, after)
    } else {
        (norm, norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn labels_of(data: &[ChunkSequence], idx: &[usize]) -> Vec<bool> {
    idx.iter().map(|&i| data[i].label).collect()
}

/// Trains from the config's seeded initialization. Returns the weights of the
/// best validation epoch (earliest on ties).
pub fn train(
    data: &[ChunkSequence],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &ModelConfig,
) -> Result<(Model, TrainHistory)> {
    if train_idx.iter().any(|i| val_idx.contains(i)) {
        return Err(Error::Leakage("train and validation indices overlap".into()));
    }
    if train_idx.iter().chain(val_idx).any(|&i| i >= data.len()) {
        return Err(Error::InvalidArgument("split index out of range".into()));
    }
    let train_labels = labels_of(data, train_idx);
    let val_labels = labels_of(data, val_idx);
    let weights = class_weights(&train_labels).map_err(|_| degenerate("training"))?;
    if !(val_labels.iter().any(|&l| l) && val_labels.iter().any(|&l| !l)) {
        return Err(degenerate("validation"));
    }
    let mut model = Model::new(cfg.clone())?;
    let val: Vec<ChunkSequence> = val_idx.iter().map(|&i| data[i].clone()).collect();

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut adam = Adam::new(model.n_params(), cfg.learning_rate);
    let mut grad = vec![0.0; model.n_params()];
    let mut order = train_idx.to_vec();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_auc: Vec::new(),
        max_grad_norm: Vec::new(),
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
        epochs_run: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best = model.params().to_vec();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut max_norm: f64 = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (loss, _) = model.loss_and_grad(&data[i], &weights, Some(&mut dropout_rng), &mut grad, scale)?;
                loss_sum += loss;
            }
            let (_, post) = clip_global_norm(&mut grad, cfg.clip_norm);
            max_norm = max_norm.max(post);
            adam.step(model.params_mut(), &grad);
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameters diverged at epoch {epoch}")));
        }
        let val_auc = auc(&model.predict(&val)?, &val_labels)?;
        history.train_loss.push(loss_sum / order.len() as f64);
        history.val_auc.push(val_auc);
        history.max_grad_norm.push(max_norm);
        history.epochs_run = epoch;
        if val_auc > history.best_val_auc {
            history.best_val_auc = val_auc;
            history.best_epoch = epoch;
            best.copy_from_slice(model.params());
        }
        if epoch - history.best_epoch >= cfg.patience {
            history.stop_reason = StopReason::Patience;
            break;
        }
    }
    model.params_mut().copy_from_slice(&best);
    Ok((model, history))
}

fn degenerate(which: &str) -> Error {
    Error::InvalidArgument(format!("degenerate split: {which} set needs both classes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{AlarmType, ChannelKind};
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            conv_channels: [2, 4],
            lstm_hidden: 4,
            head_hidden: 4,
            input_size: 8,
            n_chunks: 3,
            channels: vec![ChannelKind::EcgII],
            batch_size: 4,
            max_epochs: 40,
            learning_rate: 1e-2,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    /// Positives carry a bright last chunk.
    fn toy_data(n: usize, seed: u64) -> Vec<ChunkSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let tensors = (0..3)
                    .map(|c| {
                        let lift = if label && c == 2 { 0.6 } else { 0.0 };
                        (0..64).map(|_| rng.random::<f64>() * 0.4 + lift).collect()
                    })
                    .collect();
                ChunkSequence {
                    record_id: format!("t{i}"),
                    alarm_type: AlarmType::Vfib,
                    label,
                    channels: vec![ChannelKind::EcgII],
                    rows: 8,
                    cols: 8,
                    tensors,
                }
            })
            .collect()
    }

    #[test]
    fn clip_bounds_a_spike() {
        let mut g = vec![1e-3; 100];
        g[7] = 1e6;
        let (pre, post) = clip_global_norm(&mut g, 1.0);
        assert!(pre > 1e5);
        assert!(post <= 1.0 + 1e-9);
        let mut small = vec![0.1, 0.2];
        let (a, b) = clip_global_norm(&mut small, 1.0);
        assert_eq!(a, b);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn learns_toy_task_deterministically() {
        let data = toy_data(48, 1);
        let train_idx: Vec<usize> = (0..32).collect();
        let val_idx: Vec<usize> = (32..48).collect();
        let (m1, h1) = train(&data, &train_idx, &val_idx, &tiny_cfg()).unwrap();
        let (m2, h2) = train(&data, &train_idx, &val_idx, &tiny_cfg()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert!(h1.best_val_auc >= 0.9, "{h1:?}");
        assert!(h1.max_grad_norm.iter().all(|&n| n <= 1.0 + 1e-9));
        assert!(h1.best_epoch <= h1.epochs_run);
        assert_eq!(h1.train_loss.len(), h1.epochs_run);
    }

    #[test]
    fn flat_validation_stops_on_patience() {
        let data = toy_data(24, 2);
        let cfg = ModelConfig {
            learning_rate: 0.0,
            ..tiny_cfg()
        };
        let (_, h) = train(&data, &(0..16).collect::<Vec<_>>(), &(16..24).collect::<Vec<_>>(), &cfg).unwrap();
        assert_eq!(h.stop_reason, StopReason::Patience);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.epochs_run, h.best_epoch + 8);
    }

    #[test]
    fn max_epochs_stop() {
        let data = toy_data(24, 3);
        let cfg = ModelConfig {
            max_epochs: 2,
            ..tiny_cfg()
        };
        let (_, h) = train(&data, &(0..16).collect::<Vec<_>>(), &(16..24).collect::<Vec<_>>(), &cfg).unwrap();
        assert_eq!(h.stop_reason, StopReason::MaxEpochs);
        assert_eq!(h.epochs_run, 2);
    }

    #[test]
    fn rejects_bad_splits() {
        let data = toy_data(12, 4);
        let cfg = tiny_cfg();
        assert!(matches!(
            train(&data, &[0, 1, 2, 3], &[3, 4, 5], &cfg),
            Err(Error::Leakage(_))
        ));
        // Validation with only positives.
        assert!(train(&data, &[1, 3, 4, 5], &[0, 2], &cfg).is_err());
    }
}
