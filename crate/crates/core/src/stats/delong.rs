//! Paired AUC comparison: DeLong's test and a percentile bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::SQRT_2;

use super::{auc, check_scores, midranks, quantile_sorted};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    /// Has the sign of `auc_a - auc_b`.
    pub z: f64,
    pub p: f64,
}

/// Two-sided normal p-value `2·Φ(−|z|)`, kept strictly positive.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Structural components `(V10 over positives, V01 over negatives)`.
fn components(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let all = midranks(scores);
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let rp = midranks(&pos);
    let rn = midranks(&neg);
    let all_pos = all.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| *r);
    let all_neg = all.iter().zip(labels).filter(|(_, &l)| !l).map(|(r, _)| *r);
    let v10 = all_pos.zip(&rp).map(|(a, r)| (a - r) / n).collect();
    let v01 = all_neg.zip(&rn).map(|(a, r)| 1.0 - (a - r) / m).collect();
    (v10, v01)
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong test for two correlated AUCs on the same records.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult> {
    let (m, n) = check_scores(scores_a, labels)?;
    check_scores(scores_b, labels)?;
    let auc_a = auc(scores_a, labels)?;
    let auc_b = auc(scores_b, labels)?;
    let (a10, a01) = components(scores_a, labels);
    let (b10, b01) = components(scores_b, labels);
    let s10 = if m > 1 {
        cov(&a10, &a10) + cov(&b10, &b10) - 2.0 * cov(&a10, &b10)
    } else {
        0.0
    };
    let s01 = if n > 1 {
        cov(&a01, &a01) + cov(&b01, &b01) - 2.0 * cov(&a01, &b01)
    } else {
        0.0
    };
    let var = s10 / m as f64 + s01 / n as f64;
    if !(var > 0.0) {
        return Ok(DelongResult { auc_a, auc_b, z: 0.0, p: 1.0 });
    }
    let z = (auc_a - auc_b) / var.sqrt();
    Ok(DelongResult {
        auc_a,
        auc_b,
        z,
        p: normal_two_sided_p(z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    #[serde(rename = "lo")]
    pub lower: f64,
    #[serde(rename = "hi")]
    pub upper: f64,
    pub n_iter: usize,
    pub seed: u64,
}

/// Percentile 95% interval of `AUC_a − AUC_b` over record resamples. Each
/// iteration draws from its own stream of the master seed; resamples that
/// miss a class are redrawn from the same stream.
pub fn bootstrap_auc_diff(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    n_iter: usize,
    seed: u64,
) -> Result<BootstrapCI> {
    check_scores(scores_a, labels)?;
    check_scores(scores_b, labels)?;
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be > 0".into()));
    }
    let n = labels.len();
    let mut diffs: Vec<f64> = (0..n_iter)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64 + 1);
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut l = vec![false; n];
            loop {
                for j in 0..n {
                    let i = rng.random_range(0..n);
                    a[j] = scores_a[i];
                    b[j] = scores_b[i];
                    l[j] = labels[i];
                }
                if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
                    break;
                }
            }
            auc(&a, &l).expect("both classes present") - auc(&b, &l).expect("both classes present")
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    Ok(BootstrapCI {
        lower: quantile_sorted(&diffs, 0.025),
        upper: quantile_sorted(&diffs, 0.975),
        n_iter,
        seed,
    })
}
