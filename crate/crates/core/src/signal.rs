//! Synthetic multi-channel spectrum data: generation, frequency-domain
//! features, per-channel energies, and the energy-detection baseline.
//!
//! A sensing window is `N` complex IQ samples covering `K` equal-width
//! channels. Channels map to contiguous FFT bin groups in DC-centered order,
//! so channel `k` of `K` owns shifted bins `[k*N/K, (k+1)*N/K)`. Active
//! channels carry a unit-amplitude carrier at the channel center bin with
//! QPSK-like symbol phases; noise is circular complex Gaussian scaled so the
//! in-band SNR of an active channel equals the configured `snr_db`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::{self, Rng64};

/// One sensing window of N complex IQ samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IQWindow {
    samples: Vec<Complex64>,
}

impl IQWindow {
    /// Window length must be a power of two >= 2 and every component finite.
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        let n = samples.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Shape(format!(
                "window length {n} is not a power of two >= 2"
            )));
        }
        if !samples.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::Argument("non-finite IQ sample".into()));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }
}

/// Per-channel occupancy bits; `true` means a primary user is transmitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLabels {
    bits: Vec<bool>,
}

impl ChannelLabels {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, v: bool) {
        self.bits[k] = v;
    }
}

/// A labeled sensing window with precomputed frequency features and
/// per-channel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumExample {
    pub iq: IQWindow,
    /// Magnitude spectrum in natural bin order.
    pub freq: Vec<f64>,
    /// Parseval-scaled energy per channel.
    pub band_energy: Vec<f64>,
    pub labels: ChannelLabels,
}

impl SpectrumExample {
    /// Builds an example from a window and labels, deriving `freq` and
    /// `band_energy`.
    pub fn from_window(iq: IQWindow, labels: ChannelLabels) -> Result<Self> {
        let k = labels.len();
        validate_channel_split(iq.len(), k)?;
        let freq = fft_features(&iq)?;
        let band_energy = (0..k)
            .map(|ch| band_energy_from_spectrum(&freq, ch, k))
            .collect();
        Ok(Self {
            iq,
            freq,
            band_energy,
            labels,
        })
    }
}

/// Configuration for the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub window: usize,
    /// In-band SNR of an active channel in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Independent per-channel activity probability.
    pub activity_prob: f64,
    pub seed: u64,
    pub num_examples: usize,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || !self.window.is_power_of_two() {
            return Err(Error::Config(format!(
                "window {} must be a power of two >= 2",
                self.window
            )));
        }
        validate_channel_split(self.window, self.channels)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return Err(Error::Config(format!(
                "activity_prob {} outside [0, 1]",
                self.activity_prob
            )));
        }
        if self.num_examples == 0 {
            return Err(Error::Config("num_examples must be >= 1".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db {} invalid", self.snr_db)));
        }
        Ok(())
    }
}

fn validate_channel_split(window: usize, channels: usize) -> Result<()> {
    if channels == 0 {
        return Err(Error::Shape("channel count must be >= 1".into()));
    }
    if channels > window / 2 || (window / 2) % channels != 0 {
        return Err(Error::Shape(format!(
            "channel count {channels} must divide window/2 = {}",
            window / 2
        )));
    }
    Ok(())
}

// ── FFT and energies ────────────────────────────────────────────────────────

/// In-place iterative radix-2 Cooley-Tukey FFT (forward, unscaled).
pub fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let angle = -2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::new(angle.cos(), angle.sin());
        for chunk in buf.chunks_mut(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for i in 0..len / 2 {
                let u = chunk[i];
                let v = chunk[i + len / 2] * w;
                chunk[i] = u + v;
                chunk[i + len / 2] = u - v;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// Magnitude spectrum `|FFT(samples)|` in natural bin order.
pub fn fft_features(iq: &IQWindow) -> Result<Vec<f64>> {
    let n = iq.len();
    if !n.is_power_of_two() {
        return Err(Error::Shape(format!("length {n} not a power of two")));
    }
    let mut buf = iq.samples().to_vec();
    fft_in_place(&mut buf);
    Ok(buf.iter().map(|c| c.norm()).collect())
}

/// Total energy detected over the window: sum of |y(t)|^2.
pub fn total_energy(iq: &IQWindow) -> f64 {
    iq.samples().iter().map(|c| c.norm_sqr()).sum()
}

/// Natural bin index for a DC-centered (shifted) position.
#[inline]
fn natural_bin(shifted: usize, n: usize) -> usize {
    (shifted + n / 2) % n
}

fn band_energy_from_spectrum(magnitudes: &[f64], k: usize, channels: usize) -> f64 {
    let n = magnitudes.len();
    let width = n / channels;
    let mut sum = 0.0;
    for s in k * width..(k + 1) * width {
        let m = magnitudes[natural_bin(s, n)];
        sum += m * m;
    }
    sum / n as f64
}

/// Energy of channel `k` of `channels`, scaled by 1/N so the values of all
/// channels sum to the time-domain `total_energy` (Parseval).
pub fn band_energy(iq: &IQWindow, k: usize, channels: usize) -> Result<f64> {
    validate_channel_split(iq.len(), channels)?;
    if k >= channels {
        return Err(Error::Index(format!("channel {k} of {channels}")));
    }
    let magnitudes = fft_features(iq)?;
    Ok(band_energy_from_spectrum(&magnitudes, k, channels))
}

/// Classic energy detection: primary user declared present when the total
/// energy reaches the threshold (inclusive).
pub fn energy_detect(iq: &IQWindow, lambda: f64) -> bool {
    total_energy(iq) >= lambda
}

// ── Generation ──────────────────────────────────────────────────────────────

/// Center frequency (in signed bin units) of channel `k` of `channels`.
fn channel_center_freq(k: usize, channels: usize, n: usize) -> i64 {
    let width = (n / channels) as i64;
    k as i64 * width + width / 2 - (n / 2) as i64
}

/// Generates a deterministic synthetic dataset.
///
/// Per example: activity bits are drawn per channel, each active channel gets
/// a unit-amplitude carrier at its center bin whose phase steps through
/// random QPSK points (symbol length 2K samples), then circular complex
/// Gaussian noise with variance K / snr is added to every sample.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<SpectrumExample>> {
    cfg.validate()?;
    let n = cfg.window;
    let k = cfg.channels;
    let snr = 10f64.powf(cfg.snr_db / 10.0);
    let noise_sigma = if cfg.snr_db == f64::INFINITY {
        0.0
    } else {
        (k as f64 / snr).sqrt()
    };
    let symbol_len = 2 * k;
    let mut rng = Rng64::from_keys(cfg.seed, &[rng::keys::DATASET]);
    let mut out = Vec::with_capacity(cfg.num_examples);
    for _ in 0..cfg.num_examples {
        let bits: Vec<bool> = (0..k).map(|_| rng.next_bernoulli(cfg.activity_prob)).collect();
        let mut samples = vec![Complex64::new(0.0, 0.0); n];
        for (ch, &active) in bits.iter().enumerate() {
            if !active {
                continue;
            }
            let freq = channel_center_freq(ch, k, n) as f64;
            let base_phase = rng.next_range(0.0, 2.0 * std::f64::consts::PI);
            let mut symbol_phase = 0.0;
            for (t, s) in samples.iter_mut().enumerate() {
                if t % symbol_len == 0 {
                    let step = rng.next_below(4) as f64;
                    symbol_phase = base_phase + step * std::f64::consts::FRAC_PI_2;
                }
                let angle = 2.0 * std::f64::consts::PI * freq * t as f64 / n as f64 + symbol_phase;
                *s += Complex64::new(angle.cos(), angle.sin());
            }
        }
        if noise_sigma > 0.0 {
            let scale = noise_sigma / std::f64::consts::SQRT_2;
            for s in samples.iter_mut() {
                *s += Complex64::new(scale * rng.next_normal(), scale * rng.next_normal());
            }
        }
        let iq = IQWindow::new(samples)?;
        out.push(SpectrumExample::from_window(iq, ChannelLabels::new(bits))?);
    }
    Ok(out)
}

// ── Model feature extraction ────────────────────────────────────────────────

/// Which representation of the window the classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Raw time-domain samples as two input rows (I and Q).
    Iq,
    /// Magnitude spectrum as one input row.
    Freq,
}

impl FeatureMode {
    pub fn input_rows(self) -> usize {
        match self {
            FeatureMode::Iq => 2,
            FeatureMode::Freq => 1,
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iq" => Ok(FeatureMode::Iq),
            "freq" => Ok(FeatureMode::Freq),
            other => Err(Error::Config(format!("unknown feature mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMode::Iq => write!(f, "iq"),
            FeatureMode::Freq => write!(f, "freq"),
        }
    }
}

/// Flattens an example into the classifier's input layout. Spectral
/// magnitudes are scaled by 1/sqrt(N) to keep activations near unit scale;
/// IQ samples are already O(1).
pub fn features(example: &SpectrumExample, mode: FeatureMode) -> Vec<f64> {
    match mode {
        FeatureMode::Iq => {
            let n = example.iq.len();
            let mut x = Vec::with_capacity(2 * n);
            x.extend(example.iq.samples().iter().map(|c| c.re));
            x.extend(example.iq.samples().iter().map(|c| c.im));
            x
        }
        FeatureMode::Freq => {
            let scale = 1.0 / (example.freq.len() as f64).sqrt();
            example.freq.iter().map(|m| m * scale).collect()
        }
    }
}

// ── Dataset file format ─────────────────────────────────────────────────────

/// Writes a dataset in the `FSSD1` text format: a header line
/// `FSSD1 K N num_examples`, then one record per line holding N
/// space-separated I/Q pairs, a `;` separator, and K label bits. Floats use
/// shortest round-trip formatting, so read-back is lossless.
pub fn write_dataset(
    path: &std::path::Path,
    channels: usize,
    examples: &[SpectrumExample],
) -> Result<()> {
    use std::io::Write;
    if examples.is_empty() {
        return Err(Error::Argument("cannot write an empty dataset".into()));
    }
    let n = examples[0].iq.len();
    let mut text = String::new();
    text.push_str(&format!("FSSD1 {channels} {n} {}\n", examples.len()));
    for ex in examples {
        if ex.iq.len() != n || ex.labels.len() != channels {
            return Err(Error::Shape("inconsistent example dimensions".into()));
        }
        let mut parts: Vec<String> = Vec::with_capacity(2 * n + 1 + channels);
        for c in ex.iq.samples() {
            parts.push(format!("{}", c.re));
            parts.push(format!("{}", c.im));
        }
        parts.push(";".to_string());
        for &b in ex.labels.bits() {
            parts.push(if b { "1".into() } else { "0".into() });
        }
        text.push_str(&parts.join(" "));
        text.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads an `FSSD1` dataset, recomputing `freq` and `band_energy` from the
/// stored IQ samples. Returns `(channels, examples)`.
pub fn read_dataset(path: &std::path::Path) -> Result<(usize, Vec<SpectrumExample>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<(usize, Vec<SpectrumExample>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 || head[0] != "FSSD1" {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `FSSD1 K N num_examples`".into(),
        });
    }
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse {
            line: 1,
            message: format!("bad {what} `{s}`"),
        })
    };
    let channels = parse_usize(head[1], "channel count")?;
    let n = parse_usize(head[2], "window size")?;
    let count = parse_usize(head[3], "example count")?;
    let mut examples = Vec::with_capacity(count);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let re = next_float(&mut fields, line_no)?;
            let im = next_float(&mut fields, line_no)?;
            samples.push(Complex64::new(re, im));
        }
        match fields.next() {
            Some(";") => {}
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `;` after IQ pairs, got {other:?}"),
                })
            }
        }
        let mut bits = Vec::with_capacity(channels);
        for _ in 0..channels {
            match fields.next() {
                Some("0") => bits.push(false),
                Some("1") => bits.push(true),
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("expected label bit, got {other:?}"),
                    })
                }
            }
        }
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                message: "trailing fields after labels".into(),
            });
        }
        let iq = IQWindow::new(samples).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        examples.push(SpectrumExample::from_window(iq, ChannelLabels::new(bits))?);
    }
    if examples.len() != count {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("header promised {count} examples, found {}", examples.len()),
        });
    }
    Ok((channels, examples))
}

fn next_float<'a>(fields: &mut impl Iterator<Item = &'a str>, line: usize) -> Result<f64> {
    let tok = fields.next().ok_or_else(|| Error::Parse {
        line,
        message: "record too short".into(),
    })?;
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad float `{tok}`"),
    })
}
