//! Pan-Tompkins QRS detection and beat-level features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanTompkinsParams {
    pub low_hz: f64,
    pub high_hz: f64,
    pub integration_ms: f64,
    pub refractory_ms: f64,
    pub learning_s: f64,
    /// Weight of a new peak in the running SPKI / NPKI estimates.
    pub peak_weight: f64,
    pub threshold_fraction: f64,
    pub searchback_factor: f64,
    pub t_wave_ms: f64,
    /// Half-width of the R-peak refinement window.
    pub refine_ms: f64,
}

impl Default for PanTompkinsParams {
    fn default() -> Self {
        PanTompkinsParams {
            low_hz: 5.0,
            high_hz: 15.0,
            integration_ms: 150.0,
            refractory_ms: 200.0,
            learning_s: 2.0,
            peak_weight: 0.125,
            threshold_fraction: 0.25,
            searchback_factor: 1.66,
            t_wave_ms: 360.0,
            refine_ms: 75.0,
        }
    }
}

impl PanTompkinsParams {
    fn samples(ms: f64, fs: f64) -> usize {
        (ms * fs / 1000.0).floor() as usize
    }

    pub fn integration_samples(&self, fs: f64) -> usize {
        Self::samples(self.integration_ms, fs).max(1)
    }

    pub fn refractory_samples(&self, fs: f64) -> usize {
        Self::samples(self.refractory_ms, fs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatAnnotations {
    pub fs: f64,
    /// Strictly increasing R-peak sample indices.
    pub r_peaks: Vec<usize>,
}

impl BeatAnnotations {
    pub fn len(&self) -> usize {
        self.r_peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_peaks.is_empty()
    }

    /// RR intervals in seconds.
    pub fn rr_intervals(&self) -> Vec<f64> {
        self.r_peaks
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 / self.fs)
            .collect()
    }
}

/// Second-order Butterworth section, `[b0, b1, b2, a1, a2]`.
fn butter2(fc: f64, fs: f64, highpass: bool) -> [f64; 5] {
    let k = (PI * fc / fs).tan();
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let norm = 1.0 / (1.0 + k / q + k * k);
    let a1 = 2.0 * (k * k - 1.0) * norm;
    let a2 = (1.0 - k / q + k * k) * norm;
    if highpass {
        [norm, -2.0 * norm, norm, a1, a2]
    } else {
        let b0 = k * k * norm;
        [b0, 2.0 * b0, b0, a1, a2]
    }
}

fn biquad(x: &[f64], c: &[f64; 5]) -> Vec<f64> {
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = c[0] * v + c[1] * x1 + c[2] * x2 - c[3] * y1 - c[4] * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Zero-phase band-pass: forward and backward passes over an odd-reflected
/// extension of the signal.
pub fn bandpass(x: &[f64], fs: f64, low: f64, high: f64) -> Vec<f64> {
    let n = x.len();
    let pad = ((fs / 2.0) as usize).min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let hp = butter2(low, fs, true);
    let lp = butter2(high, fs, false);
    let pass = |v: &[f64]| biquad(&biquad(v, &hp), &lp);
    let mut y = pass(&ext);
    y.reverse();
    let mut y = pass(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

fn derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        d[i] = (2.0 * x[i + 1] + x[i + 2] - x[i - 2] - 2.0 * x[i - 1]) / 8.0;
    }
    d
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let before = (w - 1) / 2;
    let after = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / w as f64
        })
        .collect()
}

fn max_abs_slope(d: &[f64], centre: usize, half: usize) -> f64 {
    let lo = centre.saturating_sub(half);
    let hi = (centre + half + 1).min(d.len());
    d[lo..hi].iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Detector {
    spki: f64,
    npki: f64,
}

impl Detector {
    fn threshold(&self, fraction: f64) -> f64 {
        self.npki + fraction * (self.spki - self.npki)
    }
}

/// Detects R peaks. A flat signal yields no beats.
pub fn detect_beats(signal: &[f64], fs: f64, params: &PanTompkinsParams) -> Result<BeatAnnotations> {
    if !(fs > 0.0) || signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSignal("signal must be finite with fs > 0".into()));
    }
    if !(params.low_hz > 0.0 && params.low_hz < params.high_hz && params.high_hz < fs / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "band {}..{} Hz invalid at fs {fs}",
            params.low_hz, params.high_hz
        )));
    }
    let empty = BeatAnnotations {
        fs,
        r_peaks: Vec::new(),
    };
    let n = signal.len();
    let first = match signal.first() {
        Some(&v) => v,
        None => return Ok(empty),
    };
    if n < 8 || signal.iter().all(|&v| v == first) {
        return Ok(empty);
    }

    let filtered = bandpass(signal, fs, params.low_hz, params.high_hz);
    let deriv = derivative(&filtered);
    let squared: Vec<f64> = deriv.iter().map(|v| v * v).collect();
    let w = params.integration_samples(fs);
    let mwi = moving_average(&squared, w);
    let peak_max = mwi.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak_max <= 0.0 {
        return Ok(empty);
    }

    let candidates: Vec<usize> = (1..n - 1)
        .filter(|&i| mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1])
        .collect();

    let learn = ((params.learning_s * fs) as usize).clamp(1, n);
    let learn_slice = &mwi[..learn];
    let mut det = Detector {
        spki: learn_slice.iter().fold(0.0f64, |m, &v| m.max(v)) / 3.0,
        npki: learn_slice.iter().sum::<f64>() / learn as f64 / 2.0,
    };
    let refractory = params.refractory_samples(fs);
    let t_wave = PanTompkinsParams::samples(params.t_wave_ms, fs);
    let slope_half = w / 2;
    let weight = params.peak_weight;

    // Accepted fiducial marks on the integrated signal.
    let mut beats: Vec<usize> = Vec::new();
    // Candidates rejected as noise since the last beat.
    let mut rejected: Vec<usize> = Vec::new();

    let rr_mean = |beats: &[usize]| -> Option<f64> {
        if beats.len() < 2 {
            return None;
        }
        let k = beats.len().min(9);
        let tail = &beats[beats.len() - k..];
        Some((tail[k - 1] - tail[0]) as f64 / (k - 1) as f64)
    };

    for &i in &candidates {
        // Search back over rejected peaks when a beat is overdue.
        if let (Some(&last), Some(rr)) = (beats.last(), rr_mean(&beats)) {
            if (i - last) as f64 > params.searchback_factor * rr {
                let i2 = 0.5 * det.threshold(params.threshold_fraction);
                let best = rejected
                    .iter()
                    .copied()
                    .filter(|&j| j > last + refractory && j + refractory < i && mwi[j] > i2)
                    .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]));
                if let Some(j) = best {
                    beats.push(j);
                    det.spki = 0.25 * mwi[j] + 0.75 * det.spki;
                    rejected.clear();
                }
            }
        }

        if let Some(&last) = beats.last() {
            if i - last <= refractory {
                continue;
            }
        }
        let v = mwi[i];
        let i1 = det.threshold(params.threshold_fraction);
        if v > i1 {
            let t_wave_like = match beats.last() {
                Some(&last) if i - last < t_wave => {
                    max_abs_slope(&deriv, i, slope_half) < 0.5 * max_abs_slope(&deriv, last, slope_half)
                }
                _ => false,
            };
            if t_wave_like {
                det.npki = weight * v + (1.0 - weight) * det.npki;
                rejected.push(i);
            } else {
                beats.push(i);
                det.spki = weight * v + (1.0 - weight) * det.spki;
                rejected.clear();
            }
        } else {
            det.npki = weight * v + (1.0 - weight) * det.npki;
            rejected.push(i);
        }
    }

    // Refine each mark to the largest band-passed excursion nearby.
    let half = PanTompkinsParams::samples(params.refine_ms, fs);
    let mut r_peaks: Vec<usize> = Vec::with_capacity(beats.len());
    for b in beats {
        let lo = b.saturating_sub(half);
        let hi = (b + half + 1).min(n);
        let r = (lo..hi)
            .max_by(|&a, &c| filtered[a].abs().total_cmp(&filtered[c].abs()).then(c.cmp(&a)))
            .unwrap_or(b);
        match r_peaks.last() {
            Some(&prev) if r <= prev + refractory => {}
            _ => r_peaks.push(r),
        }
    }
    Ok(BeatAnnotations { fs, r_peaks })
}

pub const BEAT_FEATURE_NAMES: [&str; 8] = [
    "rr_mean",
    "rr_std",
    "rr_min",
    "rr_max",
    "beat_count",
    "r_amp_mean",
    "r_amp_std",
    "qrs_width_mean",
];

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// RR statistics, beat count, R amplitude relative to the median baseline
/// and the mean width at half amplitude (seconds). Zero where undefined.
pub fn beat_features(signal: &[f64], beats: &BeatAnnotations) -> [f64; 8] {
    let rr = beats.rr_intervals();
    let (rr_mean, rr_std) = mean_std(&rr);
    let rr_min = rr.iter().copied().reduce(f64::min).unwrap_or(0.0);
    let rr_max = rr.iter().copied().reduce(f64::max).unwrap_or(0.0);
    let baseline = if signal.is_empty() {
        0.0
    } else {
        let mut s = signal.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let mut amps = Vec::with_capacity(beats.len());
    let mut widths = Vec::with_capacity(beats.len());
    for &r in &beats.r_peaks {
        let a = (signal[r] - baseline).abs();
        amps.push(a);
        let above = |j: usize| (signal[j] - baseline).abs() >= 0.5 * a;
        let mut lo = r;
        while lo > 0 && above(lo - 1) {
            lo -= 1;
        }
        let mut hi = r;
        while hi + 1 < signal.len() && above(hi + 1) {
            hi += 1;
        }
        widths.push((hi - lo + 1) as f64 / beats.fs);
    }
    let (amp_mean, amp_std) = mean_std(&amps);
    let (width_mean, _) = mean_std(&widths);
    [
        rr_mean,
        rr_std,
        rr_min,
        rr_max,
        beats.len() as f64,
        amp_mean,
        amp_std,
        width_mean,
    ]
}
