//! Synthetic labeled four-channel records for desk-scale experiments.
//!
//! Both families share the same baseline physiology (ECG leads, pulse wave,
//! respiration, noise) and the same total anomaly energy: a ventricular-flutter
//! like oscillation added to the ECG leads. True alarms carry it in the final
//! two chunks, a progressive onset. False alarms carry it in one uniformly
//! chosen chunk at √2 the amplitude, an abrupt artifact.

use std::f64::consts::{PI, SQRT_2};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AlarmType, ChannelKind, Record};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub true_ratio: f64,
    pub fs: f64,
    pub seconds: f64,
    pub n_chunks: usize,
    /// Peak amplitude of the anomaly in each true-family chunk.
    pub anomaly_amplitude: f64,
    /// Standard deviation of additive white noise per channel.
    pub noise_std: f64,
    pub alarm_types: Vec<AlarmType>,
}

impl SynthSpec {
    pub fn new(n: usize, true_ratio: f64) -> Self {
        SynthSpec {
            n,
            true_ratio,
            fs: 250.0,
            seconds: 60.0,
            n_chunks: 6,
            anomaly_amplitude: 1.0,
            noise_std: 0.05,
            alarm_types: AlarmType::ALL.to_vec(),
        }
    }

    pub fn n_samples(&self) -> usize {
        (self.seconds * self.fs).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 {
            return bad("synthetic dataset size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.true_ratio) {
            return bad(format!("true_ratio {} outside [0, 1]", self.true_ratio));
        }
        if !(self.fs.is_finite() && self.fs > 0.0 && self.seconds.is_finite() && self.seconds > 0.0)
        {
            return bad("fs and seconds must be positive".into());
        }
        if self.n_chunks < 2 {
            return bad("at least two chunks are needed to place the onset".into());
        }
        let n = self.n_samples();
        if n < self.n_chunks || !n.is_multiple_of(self.n_chunks) {
            return Err(Error::NotDivisible {
                n,
                chunks: self.n_chunks,
            });
        }
        if !(self.anomaly_amplitude.is_finite() && self.anomaly_amplitude >= 0.0) {
            return bad("anomaly amplitude must be non-negative".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise std must be non-negative".into());
        }
        if self.alarm_types.is_empty() {
            return bad("alarm type list is empty".into());
        }
        Ok(())
    }
}

/// Ground truth kept by the generator, useful for self-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub anomaly_chunks: Vec<usize>,
    pub anomaly_freq_hz: f64,
    pub heart_rate_bpm: f64,
    pub beats: Vec<usize>,
}

fn gauss(t: f64, center: f64, sigma: f64) -> f64 {
    let z = (t - center) / sigma;
    (-0.5 * z * z).exp()
}

/// (amplitude, offset s, width s) of the P, Q, R, S and T deflections.
const LEAD_II: [(f64, f64, f64); 5] = [
    (0.12, -0.16, 0.025),
    (-0.12, -0.025, 0.008),
    (1.0, 0.0, 0.010),
    (-0.25, 0.025, 0.008),
    (0.3, 0.0, 0.040),
];
const LEAD_V: [(f64, f64, f64); 5] = [
    (0.05, -0.16, 0.025),
    (-0.3, -0.02, 0.008),
    (0.6, 0.0, 0.012),
    (-0.5, 0.03, 0.010),
    (-0.2, 0.0, 0.045),
];

fn add_beat(out: &mut [f64], fs: f64, t_beat: f64, rr: f64, waves: &[(f64, f64, f64); 5]) {
    // T-wave offset shortens with the RR interval (Bazett-like).
    let t_offset = 0.3 * rr.sqrt();
    let lo = ((t_beat - 0.3) * fs).floor().max(0.0) as usize;
    let hi = (((t_beat + t_offset + 0.2) * fs).ceil().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs;
        for (k, &(amp, off, width)) in waves.iter().enumerate() {
            let c = if k == 4 { t_beat + t_offset } else { t_beat + off };
            *v += amp * gauss(t, c, width);
        }
    }
}

fn add_pulse(out: &mut [f64], fs: f64, t_beat: f64) {
    let lo = (t_beat * fs).floor().max(0.0) as usize;
    let hi = (((t_beat + 1.0) * fs).ceil() as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs;
        *v += gauss(t, t_beat + 0.25, 0.09) + 0.3 * gauss(t, t_beat + 0.5, 0.08);
    }
}

/// Clean ECG at a fixed rate with white noise at `snr_db` relative to the
/// clean signal power. Returns the signal and the true R-peak indices.
pub fn synth_ecg<R: Rng>(
    bpm: f64,
    seconds: f64,
    fs: f64,
    snr_db: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<usize>) {
    let n = (seconds * fs).round() as usize;
    let rr = 60.0 / bpm;
    let mut signal = vec![0.0; n];
    let mut beats = Vec::new();
    let mut t = 0.5 * rr;
    while t < seconds {
        let idx = (t * fs).round() as usize;
        if idx < n {
            add_beat(&mut signal, fs, idx as f64 / fs, rr, &LEAD_II);
            beats.push(idx);
        }
        t += rr;
    }
    let power = signal.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for v in &mut signal {
            *v += normal.sample(rng);
        }
    }
    (signal, beats)
}

/// One synthetic record. `rng` drives every random choice.
pub fn synth_record<R: Rng>(
    spec: &SynthSpec,
    record_id: impl Into<String>,
    alarm_type: AlarmType,
    label: bool,
    rng: &mut R,
) -> Result<(Record, SynthTruth)> {
    spec.validate()?;
    let fs = spec.fs;
    let n = spec.n_samples();
    let chunk_len = n / spec.n_chunks;
    let seconds = n as f64 / fs;

    let hr = rng.random_range(60.0..100.0);
    let rr = 60.0 / hr;
    let jitter = Normal::new(0.0, 0.03).expect("finite std");
    let mut ecg2 = vec![0.0; n];
    let mut ecgv = vec![0.0; n];
    let mut pleth = vec![0.0; n];
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.0..rr);
    while t < seconds {
        add_beat(&mut ecg2, fs, t, rr, &LEAD_II);
        add_beat(&mut ecgv, fs, t, rr, &LEAD_V);
        add_pulse(&mut pleth, fs, t);
        beats.push((t * fs).round() as usize);
        let step: f64 = 1.0 + jitter.sample(rng);
        t += rr * step.max(0.5);
    }

    let resp_f = rng.random_range(0.2..0.35);
    let resp_phase = rng.random_range(0.0..2.0 * PI);
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let mut resp = vec![0.0; n];
    for i in 0..n {
        let t = i as f64 / fs;
        let wander = 0.1 * (2.0 * PI * 0.15 * t + wander_phase).sin();
        resp[i] = (2.0 * PI * resp_f * t + resp_phase).sin();
        ecg2[i] += wander;
        ecgv[i] += 0.8 * wander;
    }

    let anomaly_freq_hz = rng.random_range(4.0..6.0);
    let anomaly_phase = rng.random_range(0.0..2.0 * PI);
    let (anomaly_chunks, amplitude) = if label {
        (
            vec![spec.n_chunks - 2, spec.n_chunks - 1],
            spec.anomaly_amplitude,
        )
    } else {
        (
            vec![rng.random_range(0..spec.n_chunks)],
            spec.anomaly_amplitude * SQRT_2,
        )
    };
    for &c in &anomaly_chunks {
        for i in c * chunk_len..(c + 1) * chunk_len {
            let t = i as f64 / fs;
            let a = amplitude * (2.0 * PI * anomaly_freq_hz * t + anomaly_phase).sin();
            ecg2[i] += a;
            ecgv[i] += 0.8 * a;
        }
    }

    let samples: Vec<Vec<f32>> = if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
        [ecg2, ecgv, pleth, resp]
            .into_iter()
            .map(|row| row.into_iter().map(|v| (v + noise.sample(rng)) as f32).collect())
            .collect()
    } else {
        [ecg2, ecgv, pleth, resp]
            .into_iter()
            .map(|row| row.into_iter().map(|v| v as f32).collect())
            .collect()
    };

    let record = Record::new(
        record_id,
        alarm_type,
        label,
        fs,
        ChannelKind::CANONICAL.to_vec(),
        samples,
    )?;
    Ok((
        record,
        SynthTruth {
            anomaly_chunks,
            anomaly_freq_hz,
            heart_rate_bpm: hr,
            beats,
        },
    ))
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Deterministic labeled dataset; records are generated in parallel from
/// per-record RNG streams so the result does not depend on scheduling.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<Record>> {
    Ok(synth_dataset_with_truth(spec, seed)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

pub(crate) fn synth_dataset_with_truth(
    spec: &SynthSpec,
    seed: u64,
) -> Result<Vec<(Record, SynthTruth)>> {
    spec.validate()?;
    let n_true = (spec.n as f64 * spec.true_ratio).round() as usize;
    let mut master = record_rng(seed, usize::MAX - 1);
    let mut labels: Vec<bool> = (0..spec.n).map(|i| i < n_true).collect();
    labels.shuffle(&mut master);
    let alarm_types: Vec<AlarmType> = (0..spec.n)
        .map(|_| spec.alarm_types[master.random_range(0..spec.alarm_types.len())])
        .collect();
    (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = record_rng(seed, i);
            synth_record(spec, format!("syn{i:04}"), alarm_types[i], labels[i], &mut rng)
        })
        .collect()
}
