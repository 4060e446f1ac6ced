//! Per-chunk convolutional encoder, LSTM over the chunk sequence and a
//! two-logit head, with hand-written backpropagation in `f64`.
//!
//! Parameters live in one flat vector partitioned into named groups, which
//! keeps the optimizer, gradient checking and checkpoints uniform.

mod checkpoint;
mod gradcheck;
mod layers;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::records::{ChannelKind, ClassWeights};
use crate::temporal::ChunkSequence;
use crate::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_model, save_model, Checkpoint, CHECKPOINT_FILE, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION, CONFIG_FILE,
};
pub use gradcheck::{epsilon_sweep, finite_diff_check, reduced_config, GradCheck};
pub use train::{clip_global_norm, train, Adam, StopReason, TrainHistory};

use layers::{avg_pool2, avg_pool2_backward, conv3x3, conv3x3_backward, pad, sigmoid, silu, silu_grad};

/// Floor applied to the label probability inside the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output width of the last conv block, i.e. the chunk embedding size.
    pub embed_dim: usize,
    /// Widths of the first two conv blocks.
    pub conv_channels: [usize; 2],
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// One chunk means static mode: no LSTM, the head reads the embedding.
    pub n_chunks: usize,
    pub channels: Vec<ChannelKind>,
    /// Side length of each scalogram plane.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            conv_channels: [8, 16],
            lstm_hidden: 64,
            lstm_layers: 2,
            head_hidden: 32,
            dropout: 0.3,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            patience: 8,
            max_epochs: 30,
            batch_size: 16,
            seed: 42,
            n_chunks: 6,
            channels: ChannelKind::CANONICAL.to_vec(),
            input_size: 64,
        }
    }
}

impl ModelConfig {
    /// Embedding width of the large pretrained encoder, for documentation.
    pub const PAPER_EMBED_DIM: usize = 1280;

    pub fn uses_lstm(&self) -> bool {
        self.n_chunks > 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let positive = [
            ("embed_dim", self.embed_dim),
            ("conv_channels[0]", self.conv_channels[0]),
            ("conv_channels[1]", self.conv_channels[1]),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("head_hidden", self.head_hidden),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("n_chunks", self.n_chunks),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} invalid", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be > 0", self.clip_norm));
        }
        if self.channels.is_empty() {
            return bad("channel subset is empty".into());
        }
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return bad(format!("input_size {} must be a positive multiple of 8", self.input_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl GroupSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LstmOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    input: usize,
}

/// Resolved shapes and parameter offsets for a config.
#[derive(Debug, Clone, PartialEq)]
struct Arch {
    c_in: usize,
    size: usize,
    widths: [usize; 3],
    hidden: usize,
    head_hidden: usize,
    dropout: f64,
    n_chunks: usize,
    groups: Vec<GroupSpec>,
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    lstm: Vec<LstmOffsets>,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    n_params: usize,
}

impl Arch {
    fn new(cfg: &ModelConfig) -> Result<Arch> {
        cfg.validate()?;
        let mut groups: Vec<GroupSpec> = Vec::new();
        let mut n = 0;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = n;
            n += shape.iter().product::<usize>();
            groups.push(GroupSpec { name, shape, offset });
            offset
        };
        let c_in = cfg.channels.len();
        let widths = [cfg.conv_channels[0], cfg.conv_channels[1], cfg.embed_dim];
        let mut conv_w = [0; 3];
        let mut conv_b = [0; 3];
        for b in 0..3 {
            let input = if b == 0 { c_in } else { widths[b - 1] };
            conv_w[b] = add(format!("encoder.conv{}.weight", b + 1), vec![widths[b], input, 3, 3]);
            conv_b[b] = add(format!("encoder.conv{}.bias", b + 1), vec![widths[b]]);
        }
        let h = cfg.lstm_hidden;
        let mut lstm = Vec::new();
        if cfg.uses_lstm() {
            for l in 0..cfg.lstm_layers {
                let input = if l == 0 { cfg.embed_dim } else { h };
                let w_ih = add(format!("lstm{l}.w_ih"), vec![4 * h, input]);
                let w_hh = add(format!("lstm{l}.w_hh"), vec![4 * h, h]);
                let bias = add(format!("lstm{l}.bias"), vec![4 * h]);
                lstm.push(LstmOffsets { w_ih, w_hh, bias, input });
            }
        }
        let head_in = if cfg.uses_lstm() { h } else { cfg.embed_dim };
        let fc1_w = add("head.fc1.weight".into(), vec![cfg.head_hidden, head_in]);
        let fc1_b = add("head.fc1.bias".into(), vec![cfg.head_hidden]);
        let fc2_w = add("head.fc2.weight".into(), vec![2, cfg.head_hidden]);
        let fc2_b = add("head.fc2.bias".into(), vec![2]);
        Ok(Arch {
            c_in,
            size: cfg.input_size,
            widths,
            hidden: h,
            head_hidden: cfg.head_hidden,
            dropout: cfg.dropout,
            n_chunks: cfg.n_chunks,
            groups,
            conv_w,
            conv_b,
            lstm,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            n_params: n,
        })
    }

    fn head_in(&self) -> usize {
        if self.lstm.is_empty() {
            self.widths[2]
        } else {
            self.hidden
        }
    }
}

/// Model configuration plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    arch: Arch,
    params: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Fills a square `h × h` block (row-major) with an orthogonal matrix by
/// Gram–Schmidt on Gaussian rows.
fn orthogonal(rng: &mut ChaCha8Rng, out: &mut [f64], h: usize) {
    loop {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let mut ok = true;
        for i in 0..h {
            for j in 0..i {
                let dot: f64 = (0..h).map(|k| out[i * h + k] * out[j * h + k]).sum();
                for k in 0..h {
                    out[i * h + k] -= dot * out[j * h + k];
                }
            }
            let norm = (0..h).map(|k| out[i * h + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..h {
                out[i * h + k] /= norm;
            }
        }
        if ok {
            return;
        }
    }
}

impl Model {
    /// Seeded initialization: fan-based uniform for conv and linear weights,
    /// orthogonal recurrent blocks, zero biases except forget gates at 1.
    pub fn new(config: ModelConfig) -> Result<Model> {
        let arch = Arch::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; arch.n_params];
        for b in 0..3 {
            let g = arch.groups.iter().find(|g| g.offset == arch.conv_w[b]).expect("conv group");
            let fan_in = g.shape[1] * 9;
            uniform(&mut rng, &mut params[g.range()], (6.0 / fan_in as f64).sqrt());
        }
        let h = arch.hidden;
        for l in &arch.lstm {
            let bound = 1.0 / (h as f64).sqrt();
            uniform(&mut rng, &mut params[l.w_ih..l.w_ih + 4 * h * l.input], bound);
            for gate in 0..4 {
                let start = l.w_hh + gate * h * h;
                orthogonal(&mut rng, &mut params[start..start + h * h], h);
            }
            for v in &mut params[l.bias + h..l.bias + 2 * h] {
                *v = 1.0;
            }
        }
        let head_in = arch.head_in();
        let hh = arch.head_hidden;
        uniform(&mut rng, &mut params[arch.fc1_w..arch.fc1_w + hh * head_in], (6.0 / head_in as f64).sqrt());
        uniform(&mut rng, &mut params[arch.fc2_w..arch.fc2_w + 2 * hh], (6.0 / (hh + 2) as f64).sqrt());
        Ok(Model { config, arch, params })
    }

    /// Builds a model from explicit parameter values.
    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Model> {
        let arch = Arch::new(&config)?;
        if params.len() != arch.n_params {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.n_params,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Model { config, arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.arch.groups
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.arch
            .groups
            .iter()
            .find(|g| g.name == name)
            .map(|g| &self.params[g.range()])
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.arch.groups.iter().find(|g| g.name == name)?.range();
        Some(&mut self.params[range])
    }

    fn check_sequence(&self, seq: &ChunkSequence) -> Result<()> {
        let a = &self.arch;
        let want = a.c_in * a.size * a.size;
        if seq.tensors.len() != a.n_chunks || seq.tensors.iter().any(|t| t.len() != want) {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} chunks of {}×{}×{}, got {} chunks of {} values",
                a.n_chunks,
                a.c_in,
                a.size,
                a.size,
                seq.tensors.len(),
                seq.tensors.first().map_or(0, Vec::len)
            )));
        }
        Ok(())
    }

    /// Chunk embedding from the shared encoder.
    pub fn embed(&self, tensor: &[f64]) -> Result<Vec<f64>> {
        let a = &self.arch;
        if tensor.len() != a.c_in * a.size * a.size {
            return Err(Error::ShapeMismatch(format!("tensor has {} values", tensor.len())));
        }
        Ok(self.encode(tensor).0)
    }

    /// `(p_true, p_false)`. Dropout is active only when `rng` is given.
    pub fn forward(&self, seq: &ChunkSequence, rng: Option<&mut ChaCha8Rng>) -> Result<[f64; 2]> {
        self.check_sequence(seq)?;
        Ok(self.run(&seq.tensors, rng).probs)
    }

    /// Eval-mode `p_true` for each sequence.
    pub fn predict(&self, seqs: &[ChunkSequence]) -> Result<Vec<f64>> {
        for s in seqs {
            self.check_sequence(s)?;
        }
        Ok(seqs.par_iter().map(|s| self.run(&s.tensors, None).probs[0]).collect())
    }

    /// Weighted loss of one sample; accumulates `scale ×` its gradient into
    /// `grad`. Returns the unscaled loss and the probabilities.
    pub fn loss_and_grad(
        &self,
        seq: &ChunkSequence,
        weights: &ClassWeights,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut [f64],
        scale: f64,
    ) -> Result<(f64, [f64; 2])> {
        self.check_sequence(seq)?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer length".into()));
        }
        let cache = self.run(&seq.tensors, rng);
        let w = weights.weight(seq.label);
        let loss = weighted_loss(cache.logits, seq.label, weights);
        let y = if seq.label { 0 } else { 1 };
        let mut dlogits = [0.0; 2];
        if cache.probs[y] > LOG_FLOOR {
            for (k, d) in dlogits.iter_mut().enumerate() {
                let target = if k == y { 1.0 } else { 0.0 };
                *d = scale * w * (cache.probs[k] - target);
            }
        }
        self.backward(&cache, dlogits, grad);
        Ok((loss, cache.probs))
    }

    /// Eval-mode weighted loss of one sample.
    pub fn loss(&self, seq: &ChunkSequence, weights: &ClassWeights) -> Result<f64> {
        self.check_sequence(seq)?;
        Ok(weighted_loss(self.run(&seq.tensors, None).logits, seq.label, weights))
    }
}

/// `−w_label · ln max(p_label, 1e−12)` for logits ordered `[true, false]`.
pub fn weighted_loss(logits: [f64; 2], label: bool, weights: &ClassWeights) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let y = if label { 0 } else { 1 };
    let log_p = (logits[y] - lse).max(LOG_FLOOR.ln());
    -weights.weight(label) * log_p
}

fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn matvec(w: &[f64], x: &[f64], rows: usize, out: &mut [f64]) {
    let cols = x.len();
    for r in 0..rows {
        out[r] += w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_acc(w: &[f64], d: &[f64], cols: usize, out: &mut [f64]) {
    for (r, &dv) in d.iter().enumerate() {
        if dv != 0.0 {
            for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += dv * wv;
            }
        }
    }
}

fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dv) in d.iter().enumerate() {
        if dv != 0.0 {
            for (gv, xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *gv += dv * xv;
            }
        }
    }
}

struct EncoderCache {
    /// Zero-padded input of each block.
    padded: [Vec<f64>; 3],
    /// Conv outputs before the nonlinearity.
    pre: [Vec<f64>; 3],
}

struct LstmStep {
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct LstmLayerCache {
    inputs: Vec<Vec<f64>>,
    steps: Vec<LstmStep>,
    /// Dropout mask applied to this layer's outputs before the next layer.
    mask: Option<Vec<Vec<f64>>>,
}

struct Cache {
    encoders: Vec<EncoderCache>,
    lstm: Vec<LstmLayerCache>,
    z: Vec<f64>,
    fc1_pre: Vec<f64>,
    head_mask: Option<Vec<f64>>,
    head_act: Vec<f64>,
    logits: [f64; 2],
    probs: [f64; 2],
}

impl Model {
    fn encode(&self, tensor: &[f64]) -> (Vec<f64>, EncoderCache) {
        let a = &self.arch;
        let p = &self.params;
        let mut x = tensor.to_vec();
        let mut cin = a.c_in;
        let mut s = a.size;
        let mut padded: [Vec<f64>; 3] = Default::default();
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut emb = Vec::new();
        for b in 0..3 {
            let cout = a.widths[b];
            let xp = pad(&x, cin, s);
            let w = &p[a.conv_w[b]..a.conv_w[b] + cout * cin * 9];
            let bias = &p[a.conv_b[b]..a.conv_b[b] + cout];
            let z = conv3x3(&xp, w, bias, cin, cout, s);
            let act: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            if b < 2 {
                x = avg_pool2(&act, cout, s);
                s /= 2;
                cin = cout;
            } else {
                // The last 2×2 pool followed by a global average equals the
                // global average of the activation map.
                let plane = s * s;
                emb = (0..cout)
                    .map(|c| act[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
                    .collect();
            }
            padded[b] = xp;
            pre[b] = z;
        }
        (emb, EncoderCache { padded, pre })
    }

    fn encode_backward(&self, cache: &EncoderCache, d_emb: &[f64], grad: &mut [f64]) {
        let a = &self.arch;
        let sizes = [a.size, a.size / 2, a.size / 4];
        let s3 = sizes[2];
        let plane = s3 * s3;
        let mut d_act: Vec<f64> = d_emb
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / plane as f64, plane))
            .collect();
        for b in (0..3).rev() {
            let cout = a.widths[b];
            let cin = if b == 0 { a.c_in } else { a.widths[b - 1] };
            let s = sizes[b];
            let d_pre: Vec<f64> = d_act.iter().zip(&cache.pre[b]).map(|(d, &z)| d * silu_grad(z)).collect();
            let w = &self.params[a.conv_w[b]..a.conv_w[b] + cout * cin * 9];
            // Each bias group directly follows its weight group.
            let (gw, gb) = grad[a.conv_w[b]..a.conv_b[b] + cout].split_at_mut(cout * cin * 9);
            let d_in = conv3x3_backward(&cache.padded[b], w, &d_pre, cin, cout, s, gw, gb, b > 0);
            if b > 0 {
                d_act = avg_pool2_backward(&d_in, cin, s);
            }
        }
    }

    fn run(&self, tensors: &[Vec<f64>], mut rng: Option<&mut ChaCha8Rng>) -> Cache {
        let a = &self.arch;
        let p = &self.params;
        let (embs, encoders): (Vec<Vec<f64>>, Vec<EncoderCache>) = tensors.iter().map(|t| self.encode(t)).unzip();
        let h = a.hidden;
        let mut lstm = Vec::with_capacity(a.lstm.len());
        let z = if a.lstm.is_empty() {
            embs[0].clone()
        } else {
            let mut inputs = embs;
            for (li, off) in a.lstm.iter().enumerate() {
                let mut hs = vec![0.0; h];
                let mut cs = vec![0.0; h];
                let mut steps = Vec::with_capacity(inputs.len());
                let mut outputs = Vec::with_capacity(inputs.len());
                for x in &inputs {
                    let mut g = p[off.bias..off.bias + 4 * h].to_vec();
                    matvec(&p[off.w_ih..off.w_ih + 4 * h * off.input], x, 4 * h, &mut g);
                    matvec(&p[off.w_hh..off.w_hh + 4 * h * h], &hs, 4 * h, &mut g);
                    for k in 0..h {
                        g[k] = sigmoid(g[k]);
                        g[h + k] = sigmoid(g[h + k]);
                        g[2 * h + k] = g[2 * h + k].tanh();
                        g[3 * h + k] = sigmoid(g[3 * h + k]);
                    }
                    let c: Vec<f64> = (0..h).map(|k| g[h + k] * cs[k] + g[k] * g[2 * h + k]).collect();
                    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                    hs = (0..h).map(|k| g[3 * h + k] * tanh_c[k]).collect();
                    cs = c.clone();
                    outputs.push(hs.clone());
                    steps.push(LstmStep { gates: g, c, tanh_c });
                }
                let last = li + 1 == a.lstm.len();
                let mask = match rng.as_deref_mut() {
                    Some(r) if !last && a.dropout > 0.0 => {
                        let m: Vec<Vec<f64>> = outputs.iter().map(|_| dropout_mask(r, h, a.dropout)).collect();
                        for (o, mk) in outputs.iter_mut().zip(&m) {
                            o.iter_mut().zip(mk).for_each(|(v, s)| *v *= s);
                        }
                        Some(m)
                    }
                    _ => None,
                };
                lstm.push(LstmLayerCache {
                    inputs: std::mem::take(&mut inputs),
                    steps,
                    mask,
                });
                inputs = outputs;
            }
            inputs.pop().expect("at least one chunk")
        };

        let hh = a.head_hidden;
        let head_in = z.len();
        let mut fc1_pre = p[a.fc1_b..a.fc1_b + hh].to_vec();
        matvec(&p[a.fc1_w..a.fc1_w + hh * head_in], &z, hh, &mut fc1_pre);
        let mut head_act: Vec<f64> = fc1_pre.iter().map(|v| v.max(0.0)).collect();
        let head_mask = match rng {
            Some(r) if a.dropout > 0.0 => {
                let m = dropout_mask(r, hh, a.dropout);
                head_act.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                Some(m)
            }
            _ => None,
        };
        let mut logits = [p[a.fc2_b], p[a.fc2_b + 1]];
        for (k, l) in logits.iter_mut().enumerate() {
            *l += p[a.fc2_w + k * hh..a.fc2_w + (k + 1) * hh]
                .iter()
                .zip(&head_act)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        }
        Cache {
            encoders,
            lstm,
            z,
            fc1_pre,
            head_mask,
            head_act,
            logits,
            probs: softmax(logits),
        }
    }

    fn backward(&self, cache: &Cache, dlogits: [f64; 2], grad: &mut [f64]) {
        let a = &self.arch;
        let p = &self.params;
        let hh = a.head_hidden;
        let head_in = cache.z.len();

        outer_acc(&mut grad[a.fc2_w..a.fc2_w + 2 * hh], &dlogits, &cache.head_act);
        grad[a.fc2_b] += dlogits[0];
        grad[a.fc2_b + 1] += dlogits[1];
        let mut d_act = vec![0.0; hh];
        matvec_t_acc(&p[a.fc2_w..a.fc2_w + 2 * hh], &dlogits, hh, &mut d_act);
        if let Some(m) = &cache.head_mask {
            d_act.iter_mut().zip(m).for_each(|(d, s)| *d *= s);
        }
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&cache.fc1_pre)
            .map(|(d, &u)| if u > 0.0 { *d } else { 0.0 })
            .collect();
        outer_acc(&mut grad[a.fc1_w..a.fc1_w + hh * head_in], &d_pre, &cache.z);
        for (g, d) in grad[a.fc1_b..a.fc1_b + hh].iter_mut().zip(&d_pre) {
            *g += d;
        }
        let mut d_z = vec![0.0; head_in];
        matvec_t_acc(&p[a.fc1_w..a.fc1_w + hh * head_in], &d_pre, head_in, &mut d_z);

        let t_len = cache.encoders.len();
        let d_embs: Vec<Vec<f64>> = if a.lstm.is_empty() {
            vec![d_z]
        } else {
            let h = a.hidden;
            // Gradient w.r.t. each layer's output sequence.
            let mut d_out = vec![vec![0.0; h]; t_len];
            d_out[t_len - 1] = d_z;
            for (li, off) in a.lstm.iter().enumerate().rev() {
                let lc = &cache.lstm[li];
                if let Some(mask) = &lc.mask {
                    for (d, m) in d_out.iter_mut().zip(mask) {
                        d.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
                    }
                }
                let mut d_in = vec![vec![0.0; off.input]; t_len];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let zeros = vec![0.0; h];
                for t in (0..t_len).rev() {
                    let st = &lc.steps[t];
                    let g = &st.gates;
                    let c_prev = if t > 0 { &lc.steps[t - 1].c } else { &zeros };
                    let h_prev: Vec<f64> = if t > 0 {
                        let ps = &lc.steps[t - 1];
                        (0..h).map(|k| ps.gates[3 * h + k] * ps.tanh_c[k]).collect()
                    } else {
                        zeros.clone()
                    };
                    let mut dg = vec![0.0; 4 * h];
                    for k in 0..h {
                        let dh = d_out[t][k] + dh_next[k];
                        let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                        let tc = st.tanh_c[k];
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                        dg[k] = dc * gg * i * (1.0 - i);
                        dg[h + k] = dc * c_prev[k] * f * (1.0 - f);
                        dg[2 * h + k] = dc * i * (1.0 - gg * gg);
                        dg[3 * h + k] = dh * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    outer_acc(&mut grad[off.w_ih..off.w_ih + 4 * h * off.input], &dg, &lc.inputs[t]);
                    outer_acc(&mut grad[off.w_hh..off.w_hh + 4 * h * h], &dg, &h_prev);
                    for (gv, d) in grad[off.bias..off.bias + 4 * h].iter_mut().zip(&dg) {
                        *gv += d;
                    }
                    matvec_t_acc(&p[off.w_ih..off.w_ih + 4 * h * off.input], &dg, off.input, &mut d_in[t]);
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    matvec_t_acc(&p[off.w_hh..off.w_hh + 4 * h * h], &dg, h, &mut dh_next);
                }
                d_out = d_in;
            }
            d_out
        };
        for (enc, d) in cache.encoders.iter().zip(&d_embs) {
            self.encode_backward(enc, d, grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{class_weights, AlarmType};

    fn weights() -> ClassWeights {
        let labels: Vec<bool> = (0..498).map(|i| i < 158).collect();
        class_weights(&labels).unwrap()
    }

    fn random_seq(cfg: &ModelConfig, seed: u64, label: bool) -> ChunkSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = cfg.channels.len() * cfg.input_size * cfg.input_size;
        ChunkSequence {
            record_id: format!("r{seed}"),
            alarm_type: AlarmType::Vfib,
            label,
            channels: cfg.channels.clone(),
            rows: cfg.input_size,
            cols: cfg.input_size,
            tensors: (0..cfg.n_chunks)
                .map(|_| (0..len).map(|_| rng.random::<f64>()).collect())
                .collect(),
        }
    }

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            conv_channels: [4, 8],
            lstm_hidden: 8,
            head_hidden: 8,
            input_size: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_shapes() {
        let m = Model::new(ModelConfig::default()).unwrap();
        assert_eq!(m.group("encoder.conv3.weight").unwrap().len(), 128 * 16 * 9);
        assert_eq!(m.group("lstm0.w_ih").unwrap().len(), 4 * 64 * 128);
        assert_eq!(m.group("lstm1.w_hh").unwrap().len(), 4 * 64 * 64);
        assert_eq!(m.group("head.fc1.weight").unwrap().len(), 32 * 64);
        assert_eq!(m.group("head.fc2.weight").unwrap().len(), 2 * 32);
        let seq = random_seq(m.config(), 1, true);
        assert_eq!(m.embed(&seq.tensors[0]).unwrap().len(), 128);
        let p = m.forward(&seq, None).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn static_mode_has_no_recurrence() {
        let cfg = ModelConfig { n_chunks: 1, ..small() };
        let m = Model::new(cfg).unwrap();
        assert!(m.groups().iter().all(|g| !g.name.starts_with("lstm")));
        assert_eq!(m.group("head.fc1.weight").unwrap().len(), 8 * 16);
    }

    #[test]
    fn init_is_seeded_and_well_formed() {
        let a = Model::new(small()).unwrap();
        assert_eq!(a, Model::new(small()).unwrap());
        assert_ne!(a.params(), Model::new(ModelConfig { seed: 7, ..small() }).unwrap().params());
        let h = 8;
        let w_hh = a.group("lstm0.w_hh").unwrap();
        for gate in 0..4 {
            let blk = &w_hh[gate * h * h..(gate + 1) * h * h];
            for i in 0..h {
                for j in 0..h {
                    let dot: f64 = (0..h).map(|k| blk[i * h + k] * blk[j * h + k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
        let bias = a.group("lstm1.bias").unwrap();
        assert!(bias[h..2 * h].iter().all(|&v| v == 1.0));
        assert!(bias[..h].iter().chain(&bias[2 * h..]).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = Model::new(small()).unwrap();
        let mut seq = random_seq(m.config(), 2, true);
        seq.tensors.pop();
        assert!(matches!(m.forward(&seq, None), Err(Error::ShapeMismatch(_))));
        assert!(Model::from_parts(small(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn loss_examples() {
        let w = weights();
        let even = [0.3, 0.3];
        assert!((weighted_loss(even, true, &w) - 1.576 * 2f64.ln()).abs() < 1e-3);
        let batch = (weighted_loss(even, true, &w) + weighted_loss(even, false, &w)) / 2.0;
        assert!((batch - 0.7999).abs() < 1e-3, "{batch}");
        assert!(weighted_loss([40.0, -40.0], true, &w) < 1e-12);
        let clamped = weighted_loss([-1e6, 1e6], true, &w);
        assert!((clamped - w.w_true * -LOG_FLOOR.ln()).abs() < 1e-9);
        assert!(weighted_loss([1.0, -2.0], false, &w) >= 0.0);
    }

    #[test]
    fn chunk_order_matters() {
        let m = Model::new(small()).unwrap();
        let found = (0..100).any(|s| {
            let seq = random_seq(m.config(), s, true);
            let mut rev = seq.clone();
            rev.tensors.reverse();
            let a = m.forward(&seq, None).unwrap()[0];
            let b = m.forward(&rev, None).unwrap()[0];
            (a - b).abs() > 1e-6
        });
        assert!(found);
    }

    #[test]
    fn encoder_is_shared_across_chunks() {
        let m = Model::new(small()).unwrap();
        let seq = random_seq(m.config(), 3, false);
        let embs: Vec<Vec<f64>> = seq.tensors.iter().map(|t| m.embed(t).unwrap()).collect();
        let perm = [3, 0, 5, 1, 4, 2];
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(m.embed(&seq.tensors[src]).unwrap(), embs[perm[slot]]);
        }
        let mut permuted = seq.clone();
        permuted.tensors = perm.iter().map(|&i| seq.tensors[i].clone()).collect();
        let cache = m.run(&permuted.tensors, None);
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(cache.lstm[0].inputs[slot], embs[src]);
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let m = Model::new(small()).unwrap();
        let seq = random_seq(m.config(), 4, true);
        let eval = m.forward(&seq, None).unwrap();
        assert_eq!(eval, m.forward(&seq, None).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let differs = (0..20).any(|_| (m.forward(&seq, Some(&mut rng)).unwrap()[0] - eval[0]).abs() > 1e-9);
        assert!(differs);
    }

    #[test]
    fn symmetric_head_gives_one_half() {
        let mut m = Model::new(small()).unwrap();
        m.group_mut("head.fc2.weight").unwrap().iter_mut().for_each(|v| *v = 0.0);
        let seq = random_seq(m.config(), 5, true);
        let p = m.forward(&seq, None).unwrap();
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn predict_is_deterministic() {
        let m = Model::new(small()).unwrap();
        let seqs: Vec<_> = (0..4).map(|s| random_seq(m.config(), s, s % 2 == 0)).collect();
        assert_eq!(m.predict(&seqs).unwrap(), m.predict(&seqs).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { dropout: 1.0, ..small() }.validate().is_err());
        assert!(ModelConfig { input_size: 12, ..small() }.validate().is_err());
        assert!(ModelConfig { channels: vec![], ..small() }.validate().is_err());
        let json = r#"{"lstm_hidden": 32, "n_chunks": 3}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.lstm_hidden, 32);
        assert_eq!(cfg.embed_dim, 128);
    }
}
