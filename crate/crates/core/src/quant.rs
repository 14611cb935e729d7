//! Fixed-point inference engine: the bit-exact software golden model of the
//! streaming inference core.
//!
//! Numbers are signed Q-format words, `Qi.f` with `i` integer bits (sign
//! included) and `f` fractional bits, stored as raw integers. Three formats
//! are involved:
//!
//! - `fmt` for weights, biases and every activation,
//! - `input_fmt` for the raw sensor words and the standardizer means,
//! - `scale_fmt` for the standardizer reciprocal deviations.
//!
//! All three share `fmt.total_bits`; the latter two get just enough integer
//! bits to hold their values. Every rounding step is round-half-away-from-zero
//! and every narrowing saturates. Dot products accumulate exactly in `i128`
//! and are re-quantized once per layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledExample, Standardizer};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{confusion, metric_block};
use crate::nn::{Activation, NetworkParams};
use crate::trainer::{evaluate, Evaluation};

/// Signed fixed-point format descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    total_bits: u32,
    integer_bits: u32,
}

impl QFormat {
    pub const Q8_8: QFormat = QFormat {
        total_bits: 16,
        integer_bits: 8,
    };

    pub fn new(total_bits: u32, integer_bits: u32) -> Result<Self> {
        if !(2..=32).contains(&total_bits) {
            return Err(Error::Config(format!("total_bits must be in 2..=32, got {total_bits}")));
        }
        if integer_bits < 1 || integer_bits >= total_bits {
            return Err(Error::Config(format!(
                "integer_bits must be in 1..{total_bits}, got {integer_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            integer_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn integer_bits(self) -> u32 {
        self.integer_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.total_bits - self.integer_bits
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Value of one least-significant bit.
    pub fn resolution(self) -> f64 {
        (-(self.frac_bits() as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        dequantize(self.min_raw(), self)
    }

    pub fn max_value(self) -> f64 {
        dequantize(self.max_raw(), self)
    }

    /// Same width, fewest integer bits (at least 1) whose range strictly
    /// contains `±bound`; capped at `total_bits − 1`.
    pub fn fitting(total_bits: u32, bound: f64) -> Result<Self> {
        let mut i = 1;
        while i < total_bits - 1 && (1u64 << (i - 1)) as f64 <= bound {
            i += 1;
        }
        Self::new(total_bits, i)
    }

    pub fn saturate(self, v: i128) -> i64 {
        v.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }

    pub fn contains_raw(self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.integer_bits, self.frac_bits())
    }
}

impl FromStr for QFormat {
    type Err = Error;

    /// Parses `Q<int>.<frac>`, e.g. `Q8.8` or `Q2.30`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad Q format {s:?}, expected Q<int>.<frac>"));
        let body = s.strip_prefix('Q').or_else(|| s.strip_prefix('q')).ok_or_else(bad)?;
        let (i, f) = body.split_once('.').ok_or_else(bad)?;
        let i: u32 = i.parse().map_err(|_| bad())?;
        let f: u32 = f.parse().map_err(|_| bad())?;
        QFormat::new(i.checked_add(f).ok_or_else(bad)?, i)
    }
}

/// Nearest multiple of the format resolution (ties away from zero), saturated.
/// NaN maps to zero.
pub fn quantize(x: f64, fmt: QFormat) -> i64 {
    if x.is_nan() {
        return 0;
    }
    let scaled = (x * (fmt.frac_bits() as f64).exp2()).round();
    scaled.clamp(fmt.min_raw() as f64, fmt.max_raw() as f64) as i64
}

pub fn dequantize(raw: i64, fmt: QFormat) -> f64 {
    raw as f64 * fmt.resolution()
}

/// `v · 2^(−shift)` rounded half away from zero; a negative shift multiplies.
pub fn shift_round(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift);
    }
    let half = 1i128 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `(fan_out × fan_in)` raw words.
    pub weights: Vec<i64>,
    pub biases: Vec<i64>,
    pub activation: Activation,
}

impl QLayer {
    pub fn weight_row(&self, o: usize) -> &[i64] {
        &self.weights[o * self.fan_in..(o + 1) * self.fan_in]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedModel {
    pub fmt: QFormat,
    pub input_fmt: QFormat,
    pub scale_fmt: QFormat,
    /// Standardizer means, `input_fmt`.
    pub mean: Vec<i64>,
    /// Standardizer `1/std`, `scale_fmt`.
    pub inv_std: Vec<i64>,
    pub layers: Vec<QLayer>,
    /// Split seed of the float model this was derived from.
    pub seed: u64,
}

impl QuantizedModel {
    pub fn input_width(&self) -> usize {
        self.mean.len()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Checks shapes and that every raw word fits its format.
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.inv_std.len() {
            return Err(Error::dim("standardizer scale count", self.mean.len(), self.inv_std.len()));
        }
        if self.layers.is_empty() {
            return Err(Error::Empty("quantized model has no layers".into()));
        }
        let mut width = self.input_width();
        for (i, l) in self.layers.iter().enumerate() {
            if l.fan_in != width {
                return Err(Error::dim(format!("quantized layer {i} fan_in"), width, l.fan_in));
            }
            if l.weights.len() != l.fan_in * l.fan_out || l.biases.len() != l.fan_out {
                return Err(Error::dim(
                    format!("quantized layer {i} weights"),
                    l.fan_in * l.fan_out,
                    l.weights.len(),
                ));
            }
            width = l.fan_out;
        }
        let all_ok = self.mean.iter().all(|&r| self.input_fmt.contains_raw(r))
            && self.inv_std.iter().all(|&r| self.scale_fmt.contains_raw(r))
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.biases).all(|&r| self.fmt.contains_raw(r)));
        if !all_ok {
            return Err(Error::Domain("raw word outside its format range".into()));
        }
        Ok(())
    }

    /// Quantizes raw sensor values into an input frame.
    pub fn frame(&self, features: &[f64]) -> StreamFrame {
        StreamFrame {
            words: features.iter().map(|&v| quantize(v, self.input_fmt)).collect(),
        }
    }
}

/// Input words of one inference request, in sensor-column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamFrame {
    pub words: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QOutput {
    pub words: Vec<i64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizeOutcome {
    pub model: QuantizedModel,
    /// Number of constants that hit a format bound.
    pub saturated: usize,
}

/// Largest magnitude an input word is expected to take: four standard
/// deviations around the mean.
const INPUT_SIGMAS: f64 = 4.0;

pub fn quantize_model(params: &NetworkParams, std: &Standardizer, fmt: QFormat, seed: u64) -> Result<QuantizeOutcome> {
    if std.width() != params.input_width() {
        return Err(Error::dim("standardizer width", params.input_width(), std.width()));
    }
    let input_bound = std
        .mean
        .iter()
        .zip(&std.std)
        .map(|(m, s)| m.abs() + INPUT_SIGMAS * s)
        .fold(0.0, f64::max);
    let inv: Vec<f64> = std.std.iter().map(|s| 1.0 / s).collect();
    let scale_bound = inv.iter().cloned().fold(0.0, f64::max);
    let input_fmt = QFormat::fitting(fmt.total_bits(), input_bound)?;
    let scale_fmt = QFormat::fitting(fmt.total_bits(), scale_bound)?;

    let mut saturated = 0;
    let mut q = |x: f64, f: QFormat| {
        let r = quantize(x, f);
        if r == f.min_raw() || r == f.max_raw() {
            let exact = x * (f.frac_bits() as f64).exp2();
            if exact.round() != r as f64 {
                saturated += 1;
            }
        }
        r
    };
    let mean = std.mean.iter().map(|&m| q(m, input_fmt)).collect();
    let inv_std = inv.iter().map(|&s| q(s, scale_fmt)).collect();
    let layers = params
        .layers()
        .iter()
        .map(|l| QLayer {
            fan_in: l.fan_in(),
            fan_out: l.fan_out(),
            weights: l.weights().as_slice().iter().map(|&w| q(w, fmt)).collect(),
            biases: l.biases().iter().map(|&b| q(b, fmt)).collect(),
            activation: l.activation(),
        })
        .collect();
    Ok(QuantizeOutcome {
        model: QuantizedModel {
            fmt,
            input_fmt,
            scale_fmt,
            mean,
            inv_std,
            layers,
            seed,
        },
        saturated,
    })
}

fn argmax_raw(words: &[i64]) -> usize {
    let mut best = 0;
    for (i, &w) in words.iter().enumerate().skip(1) {
        if w > words[best] {
            best = i;
        }
    }
    best
}

/// Fixed-point forward pass of one frame.
pub fn q_forward(qm: &QuantizedModel, frame: &StreamFrame) -> Result<QOutput> {
    if frame.words.len() != qm.input_width() {
        return Err(Error::Frame {
            expected: qm.input_width(),
            found: frame.words.len(),
        });
    }
    let f = qm.fmt.frac_bits() as i32;
    let std_shift = (qm.input_fmt.frac_bits() + qm.scale_fmt.frac_bits()) as i32 - f;
    let mut act: Vec<i64> = frame
        .words
        .iter()
        .zip(qm.mean.iter().zip(&qm.inv_std))
        .map(|(&x, (&m, &s))| {
            let centered = x as i128 - m as i128;
            qm.fmt.saturate(shift_round(centered * s as i128, std_shift))
        })
        .collect();
    for layer in &qm.layers {
        act = (0..layer.fan_out)
            .map(|o| {
                let dot: i128 = layer
                    .weight_row(o)
                    .iter()
                    .zip(&act)
                    .map(|(&w, &a)| w as i128 * a as i128)
                    .sum();
                let acc = dot + ((layer.biases[o] as i128) << f);
                let y = qm.fmt.saturate(shift_round(acc, f));
                match layer.activation {
                    Activation::Relu => y.max(0),
                    Activation::Identity => y,
                }
            })
            .collect();
    }
    let class = argmax_raw(&act);
    Ok(QOutput { words: act, class })
}

/// One line per frame: the input words followed by the output words,
/// space-separated decimal integers.
pub fn frame_dump(qm: &QuantizedModel, frames: &[StreamFrame], exec: Execution) -> Result<String> {
    let outs = exec.try_map(frames, |fr| q_forward(qm, fr))?;
    let mut s = String::new();
    for (fr, out) in frames.iter().zip(&outs) {
        let words: Vec<String> = fr.words.iter().chain(&out.words).map(i64::to_string).collect();
        s.push_str(&words.join(" "));
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantEvaluation {
    pub quantized: Evaluation,
    pub float: Evaluation,
    /// `float − quantized` accuracy, in percentage points.
    pub accuracy_drop_points: f64,
}

/// Runs `examples` (raw features) through the fixed-point path.
pub fn evaluate_quantized_only(qm: &QuantizedModel, examples: &[LabeledExample], exec: Execution) -> Result<Evaluation> {
    let outs = exec.try_map(examples, |e| q_forward(qm, &qm.frame(&e.features)))?;
    let truth: Vec<usize> = examples.iter().map(|e| e.class_label).collect();
    let predicted: Vec<usize> = outs.iter().map(|o| o.class).collect();
    let cm = confusion(&truth, &predicted)?;
    let mut sq = 0.0;
    for (o, &t) in outs.iter().zip(&truth) {
        for (c, &w) in o.words.iter().enumerate() {
            let target = if c == t { 1.0 } else { 0.0 };
            let d = dequantize(w, qm.fmt) - target;
            sq += d * d;
        }
    }
    Ok(Evaluation {
        metrics: metric_block(&cm)?,
        confusion: cm,
        one_hot_mse: sq / (outs.len() * qm.output_width()).max(1) as f64,
    })
}

pub fn evaluate_quantized(
    qm: &QuantizedModel,
    params: &NetworkParams,
    std: &Standardizer,
    examples: &[LabeledExample],
    exec: Execution,
) -> Result<QuantEvaluation> {
    let quantized = evaluate_quantized_only(qm, examples, exec)?;
    let float = evaluate(params, std, examples, exec)?;
    let accuracy_drop_points = 100.0 * (float.metrics.accuracy - quantized.metrics.accuracy);
    Ok(QuantEvaluation {
        quantized,
        float,
        accuracy_drop_points,
    })
}
