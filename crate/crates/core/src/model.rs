//! Multi-label 1-D convolutional classifier with exact-gradient SGD.
//!
//! Architecture: Conv1D(rows -> conv_channels, odd kernel, same padding) ->
//! ReLU -> max-pool(2) -> Dense(hidden) -> ReLU -> Dense(outputs). One
//! sigmoid head per channel; training minimizes mean binary cross-entropy
//! over (example, channel) pairs. Everything runs in f64 so analytic
//! gradients can be checked against central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

/// Architecture hyper-parameters. The parameter vector layout is a pure
/// function of this struct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Samples per input row.
    pub input_len: usize,
    /// 1 for spectrum input, 2 for raw IQ (I and Q rows).
    pub input_rows: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub outputs: usize,
}

pub const MAX_PARAMS: usize = 50_000;

impl ArchSpec {
    pub fn new(input_len: usize, input_rows: usize, outputs: usize) -> Self {
        Self {
            input_len,
            input_rows,
            conv_channels: 8,
            kernel: 5,
            hidden: 32,
            outputs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len < 2 || self.input_len % 2 != 0 {
            return Err(Error::Config(format!(
                "input_len {} must be even and >= 2",
                self.input_len
            )));
        }
        if !(1..=2).contains(&self.input_rows) {
            return Err(Error::Config(format!(
                "input_rows {} must be 1 or 2",
                self.input_rows
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.conv_channels == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let count = self.param_count();
        if count > MAX_PARAMS {
            return Err(Error::Config(format!(
                "parameter count {count} exceeds {MAX_PARAMS}"
            )));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.input_rows * self.input_len
    }

    /// Flattened width after conv + pool(2).
    pub fn flat_size(&self) -> usize {
        self.conv_channels * (self.input_len / 2)
    }

    pub fn param_count(&self) -> usize {
        let layout = Layout::of(self);
        layout.total
    }

    pub fn layout(&self) -> Layout {
        Layout::of(self)
    }
}

/// Offsets of each weight block inside a flat [`ParamVector`]. Order:
/// conv weights, conv biases, dense-1 weights, dense-1 biases, dense-2
/// weights, dense-2 biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub conv_w: usize,
    pub conv_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub total: usize,
}

impl Layout {
    fn of(arch: &ArchSpec) -> Self {
        let conv_w = 0;
        let conv_b = conv_w + arch.conv_channels * arch.input_rows * arch.kernel;
        let fc1_w = conv_b + arch.conv_channels;
        let fc1_b = fc1_w + arch.hidden * arch.flat_size();
        let fc2_w = fc1_b + arch.hidden;
        let fc2_b = fc2_w + arch.outputs * arch.hidden;
        let total = fc2_b + arch.outputs;
        Self {
            conv_w,
            conv_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            total,
        }
    }
}

/// Flat model parameters in the canonical [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += coef * other`, element-wise.
    pub fn add_scaled(&mut self, coef: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += coef * b;
        }
    }

    /// `self - other` as a new vector.
    pub fn delta_from(&self, base: &ParamVector) -> Vec<f64> {
        debug_assert_eq!(self.len(), base.len());
        self.values
            .iter()
            .zip(&base.values)
            .map(|(a, b)| a - b)
            .collect()
    }
}

/// One training example: flattened input features plus per-channel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

/// SGD hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic initialization: weights uniform in (-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) per layer, biases zero. Draw order follows the layout.
pub fn init_params(arch: &ArchSpec, seed: u64) -> ParamVector {
    let layout = arch.layout();
    let mut values = vec![0.0; layout.total];
    let mut rng = Rng64::from_keys(seed, &[rng::keys::MODEL_INIT]);
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize, values: &mut Vec<f64>| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[range] {
            *v = rng.next_range(-bound, bound);
        }
    };
    fill(layout.conv_w..layout.conv_b, arch.input_rows * arch.kernel, &mut values);
    fill(layout.fc1_w..layout.fc1_b, arch.flat_size(), &mut values);
    fill(layout.fc2_w..layout.fc2_b, arch.hidden, &mut values);
    ParamVector::new(values)
}

fn check_dims(arch: &ArchSpec, params: &ParamVector, x: &[f64]) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::Shape(format!(
            "param vector length {} != arch count {}",
            params.len(),
            arch.param_count()
        )));
    }
    if x.len() != arch.input_size() {
        return Err(Error::Shape(format!(
            "input length {} != expected {}",
            x.len(),
            arch.input_size()
        )));
    }
    Ok(())
}

/// Intermediate activations of one forward pass, kept for backprop.
struct Trace {
    conv_out: Vec<f64>,
    pool: Vec<f64>,
    pool_idx: Vec<usize>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_trace(arch: &ArchSpec, params: &ParamVector, x: &[f64]) -> Trace {
    let p = params.values();
    let layout = arch.layout();
    let n = arch.input_len;
    let pad = (arch.kernel - 1) / 2;
    let half = n / 2;

    let mut conv_out = vec![0.0; arch.conv_channels * n];
    for c in 0..arch.conv_channels {
        let bias = p[layout.conv_b + c];
        for i in 0..n {
            let mut acc = bias;
            for r in 0..arch.input_rows {
                let w_base = layout.conv_w + (c * arch.input_rows + r) * arch.kernel;
                let x_base = r * n;
                for dt in 0..arch.kernel {
                    let pos = i + dt;
                    if pos < pad || pos - pad >= n {
                        continue;
                    }
                    acc += p[w_base + dt] * x[x_base + pos - pad];
                }
            }
            conv_out[c * n + i] = acc;
        }
    }

    let mut pool = vec![0.0; arch.conv_channels * half];
    let mut pool_idx = vec![0usize; arch.conv_channels * half];
    for c in 0..arch.conv_channels {
        for j in 0..half {
            let a = conv_out[c * n + 2 * j].max(0.0);
            let b = conv_out[c * n + 2 * j + 1].max(0.0);
            // Ties keep the first element.
            if b > a {
                pool[c * half + j] = b;
                pool_idx[c * half + j] = 1;
            } else {
                pool[c * half + j] = a;
                pool_idx[c * half + j] = 0;
            }
        }
    }

    let flat = arch.flat_size();
    let mut hidden_pre = vec![0.0; arch.hidden];
    for (u, h) in hidden_pre.iter_mut().enumerate() {
        let mut acc = p[layout.fc1_b + u];
        let w_base = layout.fc1_w + u * flat;
        for (f, &v) in pool.iter().enumerate() {
            acc += p[w_base + f] * v;
        }
        *h = acc;
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| v.max(0.0)).collect();

    let mut logits = vec![0.0; arch.outputs];
    for (k, z) in logits.iter_mut().enumerate() {
        let mut acc = p[layout.fc2_b + k];
        let w_base = layout.fc2_w + k * arch.hidden;
        for (u, &h) in hidden.iter().enumerate() {
            acc += p[w_base + u] * h;
        }
        *z = acc;
    }

    Trace {
        conv_out,
        pool,
        pool_idx,
        hidden_pre,
        hidden,
        logits,
    }
}

/// Per-channel logits for one input.
pub fn forward(arch: &ArchSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_dims(arch, params, x)?;
    Ok(forward_trace(arch, params, x).logits)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy between `sigmoid(z)` and `y`.
#[inline]
fn bce_with_logit(z: f64, y: bool) -> f64 {
    let y = y as u8 as f64;
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over every (example, channel) pair.
pub fn loss(arch: &ArchSpec, params: &ParamVector, batch: &[TrainExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let logits = forward(arch, params, &ex.features)?;
        if ex.labels.len() != arch.outputs {
            return Err(Error::Shape(format!(
                "label count {} != outputs {}",
                ex.labels.len(),
                arch.outputs
            )));
        }
        for (z, &y) in logits.iter().zip(&ex.labels) {
            total += bce_with_logit(*z, y);
        }
    }
    Ok(total / (batch.len() * arch.outputs) as f64)
}

/// Exact gradient of [`loss`] with the same layout as the parameter vector.
pub fn grad(arch: &ArchSpec, params: &ParamVector, batch: &[TrainExample]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let layout = arch.layout();
    let p = params.values();
    let n = arch.input_len;
    let half = n / 2;
    let flat = arch.flat_size();
    let pad = (arch.kernel - 1) / 2;
    let scale = 1.0 / (batch.len() * arch.outputs) as f64;

    let mut g = vec![0.0; layout.total];
    for ex in batch {
        check_dims(arch, params, &ex.features)?;
        if ex.labels.len() != arch.outputs {
            return Err(Error::Shape(format!(
                "label count {} != outputs {}",
                ex.labels.len(),
                arch.outputs
            )));
        }
        let trace = forward_trace(arch, params, &ex.features);

        // d(loss)/d(logit_k) = (sigmoid(z_k) - y_k) * scale
        let dz: Vec<f64> = trace
            .logits
            .iter()
            .zip(&ex.labels)
            .map(|(&z, &y)| (sigmoid(z) - y as u8 as f64) * scale)
            .collect();

        let mut dh = vec![0.0; arch.hidden];
        for (k, &dzk) in dz.iter().enumerate() {
            g[layout.fc2_b + k] += dzk;
            let w_base = layout.fc2_w + k * arch.hidden;
            for (u, &h) in trace.hidden.iter().enumerate() {
                g[w_base + u] += dzk * h;
                dh[u] += dzk * p[w_base + u];
            }
        }

        let mut dflat = vec![0.0; flat];
        for u in 0..arch.hidden {
            if trace.hidden_pre[u] <= 0.0 {
                continue;
            }
            let du = dh[u];
            g[layout.fc1_b + u] += du;
            let w_base = layout.fc1_w + u * flat;
            for f in 0..flat {
                g[w_base + f] += du * trace.pool[f];
                dflat[f] += du * p[w_base + f];
            }
        }

        for c in 0..arch.conv_channels {
            for j in 0..half {
                let df = dflat[c * half + j];
                if df == 0.0 {
                    continue;
                }
                let i = 2 * j + trace.pool_idx[c * half + j];
                // Pool passed a ReLU output; gradient flows only where the
                // pre-activation was positive.
                if trace.conv_out[c * n + i] <= 0.0 {
                    continue;
                }
                g[layout.conv_b + c] += df;
                for r in 0..arch.input_rows {
                    let w_base = layout.conv_w + (c * arch.input_rows + r) * arch.kernel;
                    let x_base = r * n;
                    for dt in 0..arch.kernel {
                        let pos = i + dt;
                        if pos < pad || pos - pad >= n {
                            continue;
                        }
                        g[w_base + dt] += df * ex.features[x_base + pos - pad];
                    }
                }
            }
        }
    }
    Ok(ParamVector::new(g))
}

/// Mini-batch SGD for `cfg.epochs` passes. Shuffling draws from a stream
/// keyed by `(cfg.seed, epoch)`, so results depend only on the inputs.
pub fn sgd_epochs(
    arch: &ArchSpec,
    params: &ParamVector,
    data: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut current = params.clone();
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<TrainExample> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut rng = Rng64::from_keys(cfg.seed, &[rng::keys::EPOCH_SHUFFLE, epoch as u64]);
        rng.shuffle(&mut indices);
        for chunk in indices.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let g = grad(arch, &current, &batch)?;
            current.add_scaled(-cfg.learning_rate, &g);
        }
    }
    Ok(current)
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction of (example, channel) pairs classified correctly.
    pub accuracy: f64,
    pub per_channel_accuracy: Vec<f64>,
    pub per_channel_loss: Vec<f64>,
}

impl EvalReport {
    pub fn per_channel_error(&self) -> Vec<f64> {
        self.per_channel_accuracy.iter().map(|a| 1.0 - a).collect()
    }
}

/// Threshold-0.5 multi-label evaluation; `sigmoid(z) >= 0.5` predicts
/// an active channel.
pub fn evaluate(arch: &ArchSpec, params: &ParamVector, data: &[TrainExample]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    let k = arch.outputs;
    let mut correct = vec![0usize; k];
    let mut loss_sum = vec![0.0f64; k];
    for ex in data {
        let logits = forward(arch, params, &ex.features)?;
        if ex.labels.len() != k {
            return Err(Error::Shape(format!(
                "label count {} != outputs {k}",
                ex.labels.len()
            )));
        }
        for (ch, (&z, &y)) in logits.iter().zip(&ex.labels).enumerate() {
            // sigmoid(z) >= 0.5 exactly when z >= 0
            if (z >= 0.0) == y {
                correct[ch] += 1;
            }
            loss_sum[ch] += bce_with_logit(z, y);
        }
    }
    let count = data.len() as f64;
    let per_channel_accuracy: Vec<f64> = correct.iter().map(|&c| c as f64 / count).collect();
    let per_channel_loss: Vec<f64> = loss_sum.iter().map(|&l| l / count).collect();
    let accuracy = correct.iter().sum::<usize>() as f64 / (count * k as f64);
    Ok(EvalReport {
        accuracy,
        per_channel_accuracy,
        per_channel_loss,
    })
}

// ── Parameter file format ───────────────────────────────────────────────────

/// Writes `FSSW1 len` then one shortest-round-trip decimal per line.
pub fn write_params(path: &std::path::Path, params: &ParamVector) -> Result<()> {
    use std::io::Write;
    let mut text = String::with_capacity(params.len() * 20 + 16);
    text.push_str(&format!("FSSW1 {}\n", params.len()));
    for v in params.values() {
        text.push_str(&format!("{v}\n"));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &std::path::Path) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 || head[0] != "FSSW1" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `FSSW1 len`".into(),
        });
    }
    let len: usize = head[1].parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("bad length `{}`", head[1]),
    })?;
    let mut values = Vec::with_capacity(len);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line.trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("bad float `{line}`"),
        })?;
        values.push(v);
    }
    if values.len() != len {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("header promised {len} values, found {}", values.len()),
        });
    }
    Ok(ParamVector::new(values))
}
