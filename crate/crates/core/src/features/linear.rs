//! Class-weighted logistic regression on standardized features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::records::{class_weights, AlarmType};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearClassifier {
    /// Full-batch gradient descent from zero weights. Deterministic.
    pub fn fit(x: &[Vec<f64>], labels: &[bool], cfg: &LinearConfig) -> Result<Self> {
        if x.len() != labels.len() || x.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows vs {} labels",
                x.len(),
                labels.len()
            )));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged feature matrix".into()));
        }
        let cw = class_weights(labels)?;
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; d];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut scale {
            let sd = (*s / n).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let w_row: Vec<f64> = labels.iter().map(|&l| cw.weight(l)).collect();

        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..cfg.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for ((row, &l), &w) in z.iter().zip(labels).zip(&w_row) {
                let logit = bias + row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                let err = w * (sigmoid(logit) - f64::from(u8::from(l)));
                for (g, v) in grad.iter_mut().zip(row) {
                    *g += err * v;
                }
                grad_b += err;
            }
            for (wt, g) in weights.iter_mut().zip(&grad) {
                *wt -= cfg.learning_rate * (g / n + cfg.l2 * *wt);
            }
            bias -= cfg.learning_rate * grad_b / n;
        }
        Ok(LinearClassifier {
            mean,
            scale,
            weights,
            bias,
        })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias
            + row
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((v, m), s), w)| (v - m) / s * w)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AlarmModel {
    Linear(LinearClassifier),
    /// Training prevalence, used when a type has only one class.
    Constant(f64),
}

/// One classifier per alarm type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerAlarmClassifier {
    pub models: BTreeMap<AlarmType, AlarmModel>,
    /// Fallback for types absent from training.
    pub prevalence: f64,
}

impl PerAlarmClassifier {
    pub fn fit(x: &[Vec<f64>], labels: &[bool], types: &[AlarmType], cfg: &LinearConfig) -> Result<Self> {
        if types.len() != labels.len() {
            return Err(Error::ShapeMismatch("types vs labels".into()));
        }
        let mut groups: BTreeMap<AlarmType, Vec<usize>> = BTreeMap::new();
        for (i, t) in types.iter().enumerate() {
            groups.entry(*t).or_default().push(i);
        }
        let mut models = BTreeMap::new();
        for (t, idx) in groups {
            let ys: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let pos = ys.iter().filter(|&&l| l).count();
            let model = if pos == 0 || pos == ys.len() {
                AlarmModel::Constant(pos as f64 / ys.len() as f64)
            } else {
                let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
                AlarmModel::Linear(LinearClassifier::fit(&xs, &ys, cfg)?)
            };
            models.insert(t, model);
        }
        let prevalence = labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64;
        Ok(PerAlarmClassifier { models, prevalence })
    }

    pub fn predict_proba(&self, row: &[f64], alarm: AlarmType) -> f64 {
        match self.models.get(&alarm) {
            Some(AlarmModel::Linear(m)) => m.predict_proba(row),
            Some(AlarmModel::Constant(p)) => *p,
            None => self.prevalence,
        }
    }
}
