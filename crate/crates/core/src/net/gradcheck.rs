//! Central-difference check of the analytic gradient.

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::records::{ChannelKind, ClassWeights};
use crate::temporal::ChunkSequence;
use crate::Result;

/// Small configuration for gradient checking: 8×8 inputs, D = 8, hidden 4.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        conv_channels: [2, 4],
        lstm_hidden: 4,
        lstm_layers: 2,
        head_hidden: 4,
        dropout: 0.0,
        n_chunks: 3,
        channels: vec![ChannelKind::EcgII, ChannelKind::Pleth],
        input_size: 8,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub epsilon: f64,
    /// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` per parameter group.
    pub groups: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Compares analytic gradients of the eval-mode loss against central
/// differences for every parameter.
pub fn finite_diff_check(model: &Model, seq: &ChunkSequence, weights: &ClassWeights, epsilon: f64) -> Result<GradCheck> {
    let mut analytic = vec![0.0; model.n_params()];
    model.loss_and_grad(seq, weights, None, &mut analytic, 1.0)?;
    let mut probe = model.clone();
    let mut numeric = vec![0.0; model.n_params()];
    for (j, slot) in numeric.iter_mut().enumerate() {
        let orig = probe.params[j];
        probe.params[j] = orig + epsilon;
        let up = probe.loss(seq, weights)?;
        probe.params[j] = orig - epsilon;
        let down = probe.loss(seq, weights)?;
        probe.params[j] = orig;
        *slot = (up - down) / (2.0 * epsilon);
    }
    let groups: Vec<(String, f64)> = model
        .groups()
        .iter()
        .map(|g| {
            let r = g.range();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = analytic[r.clone()].iter().zip(&numeric[r.clone()]).map(|(a, b)| a - b).collect();
            let den = norm(&analytic[r.clone()]) + norm(&numeric[r]);
            let rel = if den > 0.0 { norm(&diff) / den } else { 0.0 };
            (g.name.clone(), rel)
        })
        .collect();
    let max_rel_error = groups.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheck {
        epsilon,
        groups,
        max_rel_error,
    })
}

/// Maximum relative error at each epsilon.
pub fn epsilon_sweep(model: &Model, seq: &ChunkSequence, weights: &ClassWeights, epsilons: &[f64]) -> Result<Vec<(f64, f64)>> {
    epsilons
        .iter()
        .map(|&e| Ok((e, finite_diff_check(model, seq, weights, e)?.max_rel_error)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{class_weights, AlarmType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(cfg: &ModelConfig, seed: u64, label: bool) -> ChunkSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = cfg.channels.len() * cfg.input_size * cfg.input_size;
        ChunkSequence {
            record_id: "g".into(),
            alarm_type: AlarmType::Tachycardia,
            label,
            channels: cfg.channels.clone(),
            rows: cfg.input_size,
            cols: cfg.input_size,
            tensors: (0..cfg.n_chunks).map(|_| (0..len).map(|_| rng.random()).collect()).collect(),
        }
    }

    fn weights() -> ClassWeights {
        class_weights(&[true, false, false]).unwrap()
    }

    #[test]
    fn every_group_passes_for_both_labels() {
        for (seed, label) in [(1, true), (2, false)] {
            let cfg = ModelConfig { seed, ..reduced_config() };
            let m = Model::new(cfg.clone()).unwrap();
            let r = finite_diff_check(&m, &sample(&cfg, seed + 10, label), &weights(), 1e-6).unwrap();
            assert_eq!(r.groups.len(), m.groups().len());
            assert!(r.max_rel_error < 1e-4, "{:?}", r.groups);
        }
    }

    #[test]
    fn static_mode_gradients() {
        let cfg = ModelConfig { n_chunks: 1, ..reduced_config() };
        let m = Model::new(cfg.clone()).unwrap();
        let r = finite_diff_check(&m, &sample(&cfg, 3, true), &weights(), 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r.groups);
    }

    #[test]
    fn gradient_vanishes_at_a_saturated_fit() {
        let cfg = reduced_config();
        let mut m = Model::new(cfg.clone()).unwrap();
        m.group_mut("head.fc2.bias").unwrap().copy_from_slice(&[40.0, -40.0]);
        let mut g = vec![0.0; m.n_params()];
        m.loss_and_grad(&sample(&cfg, 4, true), &weights(), None, &mut g, 1.0).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn epsilon_sweep_is_v_shaped() {
        let cfg = reduced_config();
        let m = Model::new(cfg.clone()).unwrap();
        let eps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];
        let sweep = epsilon_sweep(&m, &sample(&cfg, 5, true), &weights(), &eps).unwrap();
        let (best, _) = sweep
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        assert!(best > 0 && best < eps.len() - 1, "{sweep:?}");
        assert!(sweep[0].1 > 10.0 * sweep[best].1);
        assert!(sweep[eps.len() - 1].1 > 10.0 * sweep[best].1);
    }
}
