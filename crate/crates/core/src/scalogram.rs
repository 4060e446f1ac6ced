//! Morlet continuous wavelet transform and 64×64 scalograms.
//!
//! Coefficients follow
//!
//! ```text
//! W(a, b) = 1/√a · Σ_n x[n] · ψ*((n − b) / a),   ψ(t) = π^(-1/4) e^(iω0 t) e^(−t²/2)
//! ```
//!
//! with time measured in samples, so a scale `a` maps to `fc · fs / a` Hz
//! where `fc = ω0 / 2π`. The kernel is truncated at `±4a` samples. Each scale
//! is evaluated as a frequency-domain product over a zero-padded power-of-two
//! buffer long enough that the circular convolution equals the linear one.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::records::ChannelKind;
use crate::{Error, Result};

/// Kernel half-width in units of scale.
pub const KERNEL_HALF_WIDTH: f64 = 4.0;
/// Below this range a scalogram is treated as flat.
pub const FLAT_EPSILON: f64 = 1e-12;
pub const SCALOGRAM_SIZE: usize = 64;

/// Geometric sequence of scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    values: Vec<f64>,
}

impl ScaleGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn s_min(&self) -> f64 {
        self.values[0]
    }

    pub fn s_max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Ratio between consecutive scales.
    pub fn ratio(&self) -> f64 {
        (self.s_max() / self.s_min()).powf(1.0 / (self.len() - 1) as f64)
    }

    /// Single-scale grid, mainly for probing one scale at a time.
    pub fn single(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale {scale} must be > 0")));
        }
        Ok(ScaleGrid {
            values: vec![scale],
        })
    }
}

impl Default for ScaleGrid {
    fn default() -> Self {
        log_scales(SCALOGRAM_SIZE, 1.0, 128.0).expect("valid default grid")
    }
}

/// `values[i] = s_min · (s_max / s_min)^(i / (n − 1))`.
pub fn log_scales(n: usize, s_min: f64, s_max: f64) -> Result<ScaleGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 scales, got {n}")));
    }
    if !(s_min.is_finite() && s_max.is_finite() && 0.0 < s_min && s_min < s_max) {
        return Err(Error::InvalidArgument(format!(
            "scale bounds must satisfy 0 < s_min < s_max, got ({s_min}, {s_max})"
        )));
    }
    let span = s_max / s_min;
    let mut values: Vec<f64> = (0..n)
        .map(|i| s_min * span.powf(i as f64 / (n - 1) as f64))
        .collect();
    values[0] = s_min;
    values[n - 1] = s_max;
    Ok(ScaleGrid { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorletParams {
    omega0: f64,
}

impl MorletParams {
    /// `omega0 ≥ 5` keeps the uncorrected Morlet close to admissible.
    pub fn new(omega0: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 >= 5.0) {
            return Err(Error::InvalidArgument(format!(
                "omega0 {omega0} must be >= 5"
            )));
        }
        Ok(MorletParams { omega0 })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Center frequency in cycles per unit time.
    pub fn center_frequency(&self) -> f64 {
        self.omega0 / (2.0 * PI)
    }

    /// Frequency in Hz matched by `scale` at sampling rate `fs`.
    pub fn scale_to_hz(&self, scale: f64, fs: f64) -> f64 {
        self.center_frequency() * fs / scale
    }
}

impl Default for MorletParams {
    fn default() -> Self {
        MorletParams { omega0: 6.0 }
    }
}

/// Time-reversed, normalized kernel `h[m] = ψ(m / a) / √a` for `m ∈ [−K, K]`,
/// `K = ⌊4a⌋`. Index 0 of the result is `m = −K`.
fn morlet_kernel(scale: f64, params: MorletParams) -> Vec<Complex64> {
    let half = (KERNEL_HALF_WIDTH * scale).floor() as i64;
    let norm = PI.powf(-0.25) / scale.sqrt();
    (-half..=half)
        .map(|m| {
            let t = m as f64 / scale;
            Complex64::from_polar(norm * (-0.5 * t * t).exp(), params.omega0 * t)
        })
        .collect()
}

/// Complex coefficient matrix, `n_scales × n_times`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CwtMatrix {
    pub n_scales: usize,
    pub n_times: usize,
    pub data: Vec<Complex64>,
}

impl CwtMatrix {
    pub fn row(&self, scale: usize) -> &[Complex64] {
        &self.data[scale * self.n_times..(scale + 1) * self.n_times]
    }

    pub fn get(&self, scale: usize, time: usize) -> Complex64 {
        self.data[scale * self.n_times + time]
    }
}

/// CWT for one signal length with kernel spectra computed once.
pub struct CwtEngine {
    grid: ScaleGrid,
    params: MorletParams,
    n: usize,
    fft_len: usize,
    kernel_spectra: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CwtEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CwtEngine")
            .field("n", &self.n)
            .field("fft_len", &self.fft_len)
            .field("n_scales", &self.grid.len())
            .finish()
    }
}

impl CwtEngine {
    pub fn new(grid: &ScaleGrid, params: MorletParams, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSignal(format!(
                "signal length {n} is below 2"
            )));
        }
        let max_half = grid
            .values()
            .iter()
            .map(|&s| (KERNEL_HALF_WIDTH * s).floor() as usize)
            .max()
            .unwrap_or(0);
        let fft_len = (2 * n).max(n + max_half + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut scratch = vec![Complex64::default(); forward.get_inplace_scratch_len()];
        let kernel_spectra = grid
            .values()
            .iter()
            .map(|&scale| {
                let kernel = morlet_kernel(scale, params);
                let half = (kernel.len() - 1) / 2;
                let mut buf = vec![Complex64::default(); fft_len];
                for (j, &k) in kernel.iter().enumerate() {
                    // m = j − half, stored at m mod L
                    let pos = (j + fft_len - half) % fft_len;
                    buf[pos] += k;
                }
                forward.process_with_scratch(&mut buf, &mut scratch);
                buf
            })
            .collect();
        Ok(CwtEngine {
            grid: grid.clone(),
            params,
            n,
            fft_len,
            kernel_spectra,
            forward,
            inverse,
        })
    }

    pub fn signal_len(&self) -> usize {
        self.n
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn params(&self) -> MorletParams {
        self.params
    }

    pub fn transform(&self, signal: &[f64]) -> Result<CwtMatrix> {
        if signal.len() != self.n {
            return Err(Error::InvalidSignal(format!(
                "engine built for {} samples, got {}",
                self.n,
                signal.len()
            )));
        }
        if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("non-finite value at {i}")));
        }
        let l = self.fft_len;
        let mut scratch = vec![
            Complex64::default();
            self.forward
                .get_inplace_scratch_len()
                .max(self.inverse.get_inplace_scratch_len())
        ];
        let mut spectrum = vec![Complex64::default(); l];
        for (dst, &v) in spectrum.iter_mut().zip(signal) {
            dst.re = v;
        }
        self.forward.process_with_scratch(&mut spectrum, &mut scratch);

        let scale_out = 1.0 / l as f64;
        let mut data = Vec::with_capacity(self.grid.len() * self.n);
        let mut buf = vec![Complex64::default(); l];
        for kernel in &self.kernel_spectra {
            for ((b, &x), &k) in buf.iter_mut().zip(&spectrum).zip(kernel) {
                *b = x * k;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            data.extend(buf[..self.n].iter().map(|c| c * scale_out));
        }
        Ok(CwtMatrix {
            n_scales: self.grid.len(),
            n_times: self.n,
            data,
        })
    }
}

/// One-shot CWT. `fs` only has to be valid; scales are in samples.
pub fn cwt(signal: &[f64], grid: &ScaleGrid, params: MorletParams, fs: f64) -> Result<CwtMatrix> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidArgument(format!("fs {fs} must be > 0")));
    }
    if signal.is_empty() {
        return Err(Error::InvalidSignal("empty signal".into()));
    }
    CwtEngine::new(grid, params, signal.len())?.transform(signal)
}

/// Normalized time-scale magnitude image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, rows are scales.
    pub values: Vec<f64>,
    pub channel: Option<ChannelKind>,
    pub chunk: usize,
    pub grid: Option<ScaleGrid>,
}

impl Scalogram {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Contiguous bin `j` of `n` items split into `bins` nearly equal parts.
fn bin_range(j: usize, n: usize, bins: usize) -> (usize, usize) {
    let start = j * n / bins;
    let end = ((j + 1) * n / bins).max(start + 1).min(n.max(1));
    (start.min(end - 1), end)
}

/// Mean-pools each row of a `rows × n` matrix into `cols` contiguous bins.
pub fn pool_rows(values: &[f64], rows: usize, n: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &values[r * n..(r + 1) * n];
        for j in 0..cols {
            let (s, e) = bin_range(j, n, cols);
            out.push(row[s..e].iter().sum::<f64>() / (e - s) as f64);
        }
    }
    out
}

/// Min–max scales to `[0, 1]`; ranges below [`FLAT_EPSILON`] become zeros.
pub fn normalize_unit(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range >= FLAT_EPSILON) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

/// Magnitude, time pooling to `target_cols`, then min–max normalization.
pub fn to_scalogram(coeffs: &CwtMatrix, target_cols: usize) -> Scalogram {
    let magnitudes: Vec<f64> = coeffs.data.iter().map(|c| c.norm()).collect();
    let mut values = pool_rows(&magnitudes, coeffs.n_scales, coeffs.n_times, target_cols);
    normalize_unit(&mut values);
    Scalogram {
        rows: coeffs.n_scales,
        cols: target_cols,
        values,
        channel: None,
        chunk: 0,
        grid: None,
    }
}

/// Builds scalograms for arbitrary signal lengths, caching one engine per
/// length. Shareable across threads.
#[derive(Debug)]
pub struct ScalogramBuilder {
    grid: ScaleGrid,
    params: MorletParams,
    cols: usize,
    engines: Mutex<HashMap<usize, Arc<CwtEngine>>>,
}

impl ScalogramBuilder {
    pub fn new(grid: ScaleGrid, params: MorletParams) -> Self {
        ScalogramBuilder {
            grid,
            params,
            cols: SCALOGRAM_SIZE,
            engines: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_cols(mut self, cols: usize) -> Self {
        self.cols = cols.max(1);
        self
    }

    pub fn grid(&self) -> &ScaleGrid {
        &self.grid
    }

    pub fn params(&self) -> MorletParams {
        self.params
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn engine(&self, n: usize) -> Result<Arc<CwtEngine>> {
        if let Some(e) = self.engines.lock().expect("engine cache poisoned").get(&n) {
            return Ok(Arc::clone(e));
        }
        // Built outside the lock; a racing duplicate is identical and harmless.
        let engine = Arc::new(CwtEngine::new(&self.grid, self.params, n)?);
        let mut cache = self.engines.lock().expect("engine cache poisoned");
        Ok(Arc::clone(cache.entry(n).or_insert(engine)))
    }

    /// Scalogram of `signal` after removing its mean, so a flatline at any
    /// level maps to the all-zero image.
    pub fn build(&self, signal: &[f64]) -> Result<Scalogram> {
        if signal.is_empty() {
            return Err(Error::InvalidSignal("empty signal".into()));
        }
        let mean = signal.iter().sum::<f64>() / signal.len() as f64;
        let centered: Vec<f64> = signal.iter().map(|v| v - mean).collect();
        let coeffs = self.engine(signal.len())?.transform(&centered)?;
        let mut s = to_scalogram(&coeffs, self.cols);
        s.grid = Some(self.grid.clone());
        Ok(s)
    }
}

impl Default for ScalogramBuilder {
    fn default() -> Self {
        ScalogramBuilder::new(ScaleGrid::default(), MorletParams::default())
    }
}

/// File name of a cached scalogram: `chunk<k>_<CHANNEL>.f32`.
pub fn cache_file_name(chunk: usize, channel: ChannelKind) -> String {
    format!("chunk{chunk}_{}.f32", channel.as_str())
}

pub fn encode_cache(s: &Scalogram) -> Vec<u8> {
    s.values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

/// Decodes a 64×64 cache blob; values must be finite and inside `[0, 1]`.
pub fn decode_cache(bytes: &[u8]) -> Result<Vec<f32>> {
    let expected = SCALOGRAM_SIZE * SCALOGRAM_SIZE;
    if bytes.len() != expected * 4 {
        return Err(Error::SampleCountMismatch {
            expected,
            found: bytes.len() / 4,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = values
        .iter()
        .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
    {
        return Err(Error::InvalidSignal(format!(
            "scalogram value {} at {i} outside [0, 1]",
            values[i]
        )));
    }
    Ok(values)
}

pub fn write_cache(dir: &Path, s: &Scalogram, channel: ChannelKind) -> Result<PathBuf> {
    if s.rows != SCALOGRAM_SIZE || s.cols != SCALOGRAM_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "cache holds 64x64 scalograms, got {}x{}",
            s.rows, s.cols
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(cache_file_name(s.chunk, channel));
    fs::write(&path, encode_cache(s)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_cache(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Time-domain evaluation of the coefficient sum, written from the
    /// transform's definition without sharing any code with the engine.
    fn direct(signal: &[f64], scale: f64, omega0: f64) -> Vec<Complex64> {
        let half = (4.0 * scale).floor() as i64;
        let n = signal.len() as i64;
        (0..n)
            .map(|b| {
                let mut acc = Complex64::new(0.0, 0.0);
                for idx in (b - half).max(0)..=(b + half).min(n - 1) {
                    let t = (idx - b) as f64 / scale;
                    let env = PI.powf(-0.25) * (-t * t / 2.0).exp();
                    // conj(e^{i ω0 t}) = e^{-i ω0 t}
                    let psi_conj = Complex64::new(env * (omega0 * t).cos(), -env * (omega0 * t).sin());
                    acc += psi_conj * signal[idx as usize];
                }
                acc / scale.sqrt()
            })
            .collect()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn grid_examples() {
        let g = log_scales(64, 1.0, 128.0).unwrap();
        assert_eq!(g.values()[0], 1.0);
        assert_eq!(g.values()[63], 128.0);
        let expected = 2f64.powf(7.0 / 63.0);
        for w in g.values().windows(2) {
            assert!((w[1] / w[0] - expected).abs() < 1e-12);
        }
        assert!((g.ratio() - 1.0801).abs() < 1e-4);
        assert_eq!(log_scales(2, 1.0, 128.0).unwrap().values(), &[1.0, 128.0]);
        assert!(log_scales(1, 1.0, 2.0).is_err());
        assert!(log_scales(4, 0.0, 2.0).is_err());
        assert!(log_scales(4, 3.0, 2.0).is_err());
    }

    #[test]
    fn morlet_params_validate() {
        assert!(MorletParams::new(4.9).is_err());
        assert!(MorletParams::new(f64::NAN).is_err());
        let p = MorletParams::default();
        assert!((p.center_frequency() - 6.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((p.scale_to_hz(23.873, 250.0) - 10.0).abs() < 1e-3);
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let m = cwt(&[0.0; 300], &ScaleGrid::default(), MorletParams::default(), 250.0).unwrap();
        assert!(m.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn rejects_bad_signals() {
        let g = ScaleGrid::default();
        let p = MorletParams::default();
        assert!(cwt(&[], &g, p, 250.0).is_err());
        assert!(cwt(&[1.0], &g, p, 250.0).is_err());
        assert!(cwt(&[1.0, f64::INFINITY, 0.0], &g, p, 250.0).is_err());
        assert!(cwt(&[1.0, 2.0], &g, p, 0.0).is_err());
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..700).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
        let g = ScaleGrid::default();
        let p = MorletParams::default();
        let a = cwt(&x, &g, p, 250.0).unwrap();
        let b = cwt(&ax, &g, p, 250.0).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            let expect = u * 3.7;
            assert!((v - expect).norm() <= 1e-9 * expect.norm().max(1e-12) + 1e-12);
        }
    }

    #[test]
    fn matches_direct_sum_across_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..513).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grid = log_scales(8, 1.0, 128.0).unwrap();
        let m = cwt(&x, &grid, MorletParams::default(), 250.0).unwrap();
        for (i, &s) in grid.values().iter().enumerate() {
            let e = rel_err(m.row(i), &direct(&x, s, 6.0));
            assert!(e < 1e-9, "scale {s}: {e}");
        }
    }

    #[test]
    fn time_shift_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1024;
        let shift = 37;
        let base: Vec<f64> = (0..n + shift).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = &base[shift..];
        let y = &base[..n]; // y[i + shift] = x[i]
        let grid = log_scales(6, 2.0, 16.0).unwrap();
        let p = MorletParams::default();
        let cx = cwt(x, &grid, p, 250.0).unwrap();
        let cy = cwt(y, &grid, p, 250.0).unwrap();
        let margin = 64 + shift;
        for s in 0..grid.len() {
            for b in margin..n - margin {
                let u = cx.get(s, b);
                let v = cy.get(s, b + shift);
                assert!((u - v).norm() <= 1e-6 * u.norm().max(1e-9));
            }
        }
    }

    #[test]
    fn pooling_halves() {
        // 64×128 matrix with value r*1000 + c; each output is the mean of a pair.
        let rows = 64;
        let n = 128;
        let vals: Vec<f64> = (0..rows * n).map(|i| ((i / n) * 1000 + i % n) as f64).collect();
        let pooled = pool_rows(&vals, rows, n, 64);
        for r in 0..rows {
            for j in 0..64 {
                let expect = (r * 1000) as f64 + (2 * j) as f64 + 0.5;
                assert_eq!(pooled[r * 64 + j], expect);
            }
        }
    }

    #[test]
    fn bins_partition_uneven_lengths() {
        for n in [1usize, 5, 63, 64, 65, 2500, 15000] {
            let mut covered = vec![0usize; n];
            for j in 0..64 {
                let (s, e) = bin_range(j, n, 64);
                assert!(s < e && e <= n);
                if n >= 64 {
                    covered[s..e].iter_mut().for_each(|c| *c += 1);
                }
            }
            if n >= 64 {
                assert!(covered.iter().all(|&c| c == 1), "n={n}");
            }
        }
    }

    #[test]
    fn chunk_scalogram_shape_and_range() {
        let x: Vec<f64> = (0..2500).map(|i| (i as f64 * 0.3).sin() + (i as f64 * 0.01).cos()).collect();
        let s = ScalogramBuilder::default().build(&x).unwrap();
        assert_eq!((s.rows, s.cols), (64, 64));
        let lo = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn flatline_is_all_zero() {
        let b = ScalogramBuilder::default();
        for level in [0.0, 0.25, -3.1, f64::from(0.1f32)] {
            let s = b.build(&[level; 2500]).unwrap();
            assert!(s.values.iter().all(|&v| v == 0.0), "level {level}");
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..2500).map(|i| (i as f64 * 0.2).sin()).collect();
        let mut s = ScalogramBuilder::default().build(&x).unwrap();
        s.chunk = 3;
        let path = write_cache(dir.path(), &s, ChannelKind::Pleth).unwrap();
        assert!(path.ends_with("chunk3_PLETH.f32"));
        let back = read_cache(&path).unwrap();
        assert_eq!(back.len(), 4096);
        for (a, b) in back.iter().zip(&s.values) {
            assert_eq!(*a, *b as f32);
        }
        assert!(decode_cache(&[0u8; 10]).is_err());
        let mut bad = encode_cache(&s);
        bad[..4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(decode_cache(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn normalization_is_scale_idempotent(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..4096).map(|_| rng.random_range(0.0..5.0)).collect();
            normalize_unit(&mut v);
            let mut scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            normalize_unit(&mut scaled);
            for (a, b) in v.iter().zip(&scaled) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn engine_matches_direct_sum(seed in any::<u64>(), n in 2usize..600, scale in 1.0f64..128.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grid = ScaleGrid::single(scale).unwrap();
            let m = cwt(&x, &grid, MorletParams::default(), 250.0).unwrap();
            prop_assert!(rel_err(m.row(0), &direct(&x, scale, 6.0)) < 1e-6);
        }
    }
}
