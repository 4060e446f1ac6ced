//! Hand-crafted per-recording features, beat detection and the linear
//! classifier used by the classical baselines.
//!
//! The catalogue is fixed at 103 values: 24 per channel for the four
//! channels in canonical order, six pairwise channel correlations and one
//! last-vs-first chunk RMS ratio. Degenerate inputs never produce NaN:
//! zero-power spectra give entropy, dominant frequency and centroid 0,
//! zero-variance channels give correlation, skewness, kurtosis, Hjorth
//! parameters and autocorrelation 0.

mod linear;
mod pan_tompkins;

use std::f64::consts::LN_10;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::records::{ChannelKind, Record};
use crate::{Error, Result};

pub use linear::{LinearClassifier, LinearConfig, PerAlarmClassifier};
pub use pan_tompkins::{beat_features, detect_beats, BeatAnnotations, PanTompkinsParams, BEAT_FEATURE_NAMES};

pub const PER_CHANNEL: [&str; 24] = [
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "rms",
    "range",
    "median",
    "mad",
    "zcr",
    "dominant_freq",
    "dominant_peak_mag",
    "spectral_entropy",
    "spectral_centroid",
    "spectral_rolloff85",
    "bp_0p5_4",
    "bp_4_15",
    "bp_15_40",
    "bp_40_100",
    "snr_db",
    "line_length",
    "hjorth_mobility",
    "hjorth_complexity",
    "energy_drift_slope",
    "lag1_autocorr",
];

pub const N_FEATURES: usize = 103;
/// Chunks used by the energy-drift and first/last RMS features.
pub const DRIFT_CHUNKS: usize = 6;

const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
const BANDS: [(f64, f64); 4] = [(0.5, 4.0), (4.0, 15.0), (15.0, 40.0), (40.0, 100.0)];
const SNR_CLIP_DB: f64 = 100.0;

/// Physiologic band used for the SNR estimate of each channel kind.
pub fn physiologic_band(kind: ChannelKind) -> (f64, f64) {
    match kind {
        ChannelKind::EcgII | ChannelKind::EcgV => (0.5, 40.0),
        ChannelKind::Pleth => (0.5, 8.0),
        ChannelKind::Resp => (0.1, 1.0),
    }
}

/// The stable 103-name registry.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names = Vec::with_capacity(N_FEATURES);
        for c in ChannelKind::CANONICAL {
            for f in PER_CHANNEL {
                names.push(format!("{}_{f}", c.slug()));
            }
        }
        for (a, b) in PAIRS {
            names.push(format!(
                "corr_{}_{}",
                ChannelKind::CANONICAL[a].slug(),
                ChannelKind::CANONICAL[b].slug()
            ));
        }
        names.push("rms_ratio_last_first".to_owned());
        names
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn names(&self) -> &'static [String] {
        feature_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// One-sided power spectrum of the mean-removed signal, `(freqs, power)`,
/// with bins 1..=N/2. Power sums to the signal variance.
fn power_spectrum(x: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let m = mean(x);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v - m, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let scale = 1.0 / (n as f64 * n as f64);
    let mut freqs = Vec::with_capacity(half);
    let mut power = Vec::with_capacity(half);
    for (k, c) in buf.iter().enumerate().take(half + 1).skip(1) {
        let twice = if 2 * k == n { 1.0 } else { 2.0 };
        freqs.push(k as f64 * fs / n as f64);
        power.push(twice * c.norm_sqr() * scale);
    }
    (freqs, power)
}

fn band_power(freqs: &[f64], power: &[f64], lo: f64, hi: f64) -> f64 {
    freqs
        .iter()
        .zip(power)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, p)| p)
        .sum()
}

fn snr_db(freqs: &[f64], power: &[f64], band: (f64, f64)) -> f64 {
    let inside = band_power(freqs, power, band.0, band.1);
    let total: f64 = power.iter().sum();
    let outside = total - inside;
    match (inside > 0.0, outside > 0.0) {
        (false, false) => 0.0,
        (true, false) => SNR_CLIP_DB,
        (false, true) => -SNR_CLIP_DB,
        (true, true) => (10.0 * (inside / outside).ln() / LN_10).clamp(-SNR_CLIP_DB, SNR_CLIP_DB),
    }
}

fn hjorth_mobility(x: &[f64]) -> f64 {
    let vx = variance(x);
    if vx == 0.0 || x.len() < 3 {
        return 0.0;
    }
    (variance(&diff(x)) / vx).sqrt()
}

/// Least-squares slope of per-chunk mean-square energy against chunk index,
/// divided by the mean chunk energy.
fn energy_drift(x: &[f64], chunks: usize) -> f64 {
    let len = x.len() / chunks;
    if len == 0 {
        return 0.0;
    }
    let m = mean(x);
    let energies: Vec<f64> = (0..chunks)
        .map(|i| {
            x[i * len..(i + 1) * len]
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>()
                / len as f64
        })
        .collect();
    let e_mean = mean(&energies);
    if e_mean == 0.0 {
        return 0.0;
    }
    let t_mean = (chunks as f64 - 1.0) / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, e) in energies.iter().enumerate() {
        let dt = i as f64 - t_mean;
        num += dt * (e - e_mean);
        den += dt * dt;
    }
    num / den / e_mean
}

/// The 24 per-channel catalogue values, in [`PER_CHANNEL`] order.
pub fn channel_features(x: &[f64], fs: f64, kind: ChannelKind) -> [f64; 24] {
    let n = x.len() as f64;
    let mu = mean(x);
    let var = variance(x);
    let sd = var.sqrt();
    let (skew, kurt) = if var > 0.0 {
        let m3 = x.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
        (m3 / (var * sd), m4 / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let med = median(x);
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&abs_dev);
    let crossings = x
        .windows(2)
        .filter(|w| ((w[0] - mu) < 0.0) != ((w[1] - mu) < 0.0))
        .count();
    let zcr = if x.len() > 1 {
        crossings as f64 / (n - 1.0)
    } else {
        0.0
    };

    let (freqs, power) = power_spectrum(x, fs);
    let total: f64 = power.iter().sum();
    let (dom_freq, dom_mag, entropy, centroid, rolloff) = if total > 0.0 && !power.is_empty() {
        let (k, &p_max) = power
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let mut h = 0.0;
        for &p in &power {
            if p > 0.0 {
                let q = p / total;
                h -= q * q.ln();
            }
        }
        let h_norm = if power.len() > 1 {
            h / (power.len() as f64).ln()
        } else {
            0.0
        };
        let centroid = freqs.iter().zip(&power).map(|(f, p)| f * p).sum::<f64>() / total;
        let mut acc = 0.0;
        let mut rolloff = freqs[freqs.len() - 1];
        for (f, p) in freqs.iter().zip(&power) {
            acc += p;
            if acc >= 0.85 * total {
                rolloff = *f;
                break;
            }
        }
        (freqs[k], p_max.sqrt(), h_norm, centroid, rolloff)
    } else {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    };
    let bands = BANDS.map(|(a, b)| band_power(&freqs, &power, a, b));
    let snr = snr_db(&freqs, &power, physiologic_band(kind));

    let dx = diff(x);
    let line_length = if dx.is_empty() {
        0.0
    } else {
        dx.iter().map(|v| v.abs()).sum::<f64>() / dx.len() as f64
    };
    let mobility = hjorth_mobility(x);
    let complexity = if mobility > 0.0 {
        hjorth_mobility(&dx) / mobility
    } else {
        0.0
    };
    let drift = energy_drift(x, DRIFT_CHUNKS);
    let lag1 = if var > 0.0 {
        x.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum::<f64>() / (var * n)
    } else {
        0.0
    };

    [
        mu, sd, skew, kurt, rms, hi - lo, med, mad, zcr, dom_freq, dom_mag, entropy, centroid,
        rolloff, bands[0], bands[1], bands[2], bands[3], snr, line_length, mobility, complexity,
        drift, lag1,
    ]
}

fn chunk_rms(channels: &[Vec<f64>], chunk: usize, chunks: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for x in channels {
        let len = x.len() / chunks;
        let m = mean(x);
        for v in &x[chunk * len..(chunk + 1) * len] {
            acc += (v - m) * (v - m);
        }
        count += len;
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

/// Full 103-value catalogue for a four-channel record.
pub fn extract_features(record: &Record) -> Result<FeatureVector> {
    if record.channels().len() != 4 {
        return Err(Error::ChannelCountMismatch {
            declared: 4,
            found: record.channels().len(),
        });
    }
    let channels: Vec<Vec<f64>> = ChannelKind::CANONICAL
        .iter()
        .map(|&c| {
            record
                .channel_f64(c)
                .ok_or_else(|| Error::MissingChannel(c.to_string()))
        })
        .collect::<Result<_>>()?;
    if record.len() < DRIFT_CHUNKS {
        return Err(Error::InvalidSignal(format!(
            "record has {} samples, need at least {DRIFT_CHUNKS}",
            record.len()
        )));
    }
    let mut values = Vec::with_capacity(N_FEATURES);
    for (x, kind) in channels.iter().zip(ChannelKind::CANONICAL) {
        values.extend_from_slice(&channel_features(x, record.fs(), kind));
    }
    for (a, b) in PAIRS {
        values.push(correlation(&channels[a], &channels[b]));
    }
    let first = chunk_rms(&channels, 0, DRIFT_CHUNKS);
    let last = chunk_rms(&channels, DRIFT_CHUNKS - 1, DRIFT_CHUNKS);
    values.push(if first > 0.0 { last / first } else { 0.0 });
    debug_assert_eq!(values.len(), N_FEATURES);
    Ok(FeatureVector { values })
}

/// Catalogue followed by ECG lead II beat features, for per-alarm models.
pub fn extract_with_beats(record: &Record, params: &PanTompkinsParams) -> Result<Vec<f64>> {
    let mut v = extract_features(record)?.values;
    let ecg = record
        .channel_f64(ChannelKind::EcgII)
        .ok_or_else(|| Error::MissingChannel("ECG_II".into()))?;
    let beats = detect_beats(&ecg, record.fs(), params)?;
    v.extend_from_slice(&beat_features(&ecg, &beats));
    Ok(v)
}

/// CSV text: 103 feature columns then `record_id,alarm_type,label`.
pub fn features_csv(rows: &[(&Record, FeatureVector)]) -> String {
    let mut out = String::new();
    out.push_str(&feature_names().join(","));
    out.push_str(",record_id,alarm_type,label\n");
    for (r, f) in rows {
        for v in &f.values {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{},{}\n", r.record_id(), r.alarm_type(), u8::from(r.label())));
    }
    out
}
