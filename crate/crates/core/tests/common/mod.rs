//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code path it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use fcdsae::nn::{Activation, LayerParams, NetworkParams};
use fcdsae::quant::{QFormat, QLayer, QuantizedModel};
use fcdsae::Matrix;
use rand::Rng;

/// Network with every weight and bias uniform in `[-scale, scale]`.
pub fn random_network<R: Rng>(topology: &[usize], scale: f64, rng: &mut R) -> NetworkParams {
    let layers = topology
        .windows(2)
        .map(|w| {
            let weights: Vec<f64> = (0..w[0] * w[1]).map(|_| rng.random_range(-scale..scale)).collect();
            let biases: Vec<f64> = (0..w[1]).map(|_| rng.random_range(-scale..scale)).collect();
            LayerParams::new(Matrix::from_vec(w[1], w[0], weights).unwrap(), biases, Activation::Relu).unwrap()
        })
        .collect();
    NetworkParams::new(layers).unwrap()
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `J = MSE + ψ Σ_hidden Σ_k KL(ξ‖clamp(mean_k))`, written out with plain
/// loops over flat parameter vectors.
pub fn reference_total_loss(
    params: &NetworkParams,
    x: &Matrix,
    targets: &Matrix,
    xi: f64,
    psi: f64,
    clamp_eps: f64,
) -> f64 {
    let n = x.rows();
    let layers = params.layers();
    let mut penalty = 0.0;
    let mut sq = 0.0;
    let mut hidden_sums: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.fan_out()]).collect();
    for s in 0..n {
        let mut a: Vec<f64> = x.row(s).to_vec();
        for (li, l) in layers.iter().enumerate() {
            let w = l.weights();
            let mut next = vec![0.0; l.fan_out()];
            for o in 0..l.fan_out() {
                let mut z = l.biases()[o];
                for i in 0..l.fan_in() {
                    z += w[(o, i)] * a[i];
                }
                next[o] = if z > 0.0 { z } else { 0.0 };
                hidden_sums[li][o] += next[o];
            }
            a = next;
        }
        for (c, v) in a.iter().enumerate() {
            sq += (v - targets[(s, c)]).powi(2);
        }
    }
    for sums in &hidden_sums[..layers.len() - 1] {
        for &total in sums {
            let m = (total / n as f64).clamp(clamp_eps, 1.0 - clamp_eps);
            penalty += reference_kl(xi, m);
        }
    }
    sq / (n * targets.cols()) as f64 + psi * penalty
}

/// KL as negative entropy minus cross-entropy.
pub fn reference_kl(p: f64, q: f64) -> f64 {
    let neg_entropy = p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    let cross = p * q.ln() + (1.0 - p) * (1.0 - q).ln();
    neg_entropy - cross
}

pub fn within(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Round-half-away-from-zero division by `2^shift` using integer division.
fn div_pow2_round(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v * (1i128 << (-shift));
    }
    let d = 1i128 << shift;
    let mag = (v.abs() * 2 + d) / (2 * d);
    if v < 0 {
        -mag
    } else {
        mag
    }
}

fn clamp_to_bits(v: i128, total_bits: u32) -> i64 {
    let hi = (1i128 << (total_bits - 1)) - 1;
    let lo = -(1i128 << (total_bits - 1));
    if v > hi {
        hi as i64
    } else if v < lo {
        lo as i64
    } else {
        v as i64
    }
}

/// Straight-line fixed-point interpreter: standardize, then for each layer
/// multiply-accumulate, add the aligned bias, round, saturate, ReLU.
pub fn scalar_fixed_point(qm: &QuantizedModel, words: &[i64]) -> (Vec<i64>, usize) {
    let bits = qm.fmt.total_bits();
    let f = qm.fmt.frac_bits() as i32;
    let fi = qm.input_fmt.frac_bits() as i32;
    let fs = qm.scale_fmt.frac_bits() as i32;
    let mut act = Vec::new();
    for j in 0..words.len() {
        let centered = words[j] as i128 - qm.mean[j] as i128;
        let prod = centered * qm.inv_std[j] as i128;
        act.push(clamp_to_bits(div_pow2_round(prod, fi + fs - f), bits));
    }
    for layer in &qm.layers {
        let mut next = Vec::new();
        for o in 0..layer.fan_out {
            let mut acc: i128 = layer.biases[o] as i128 * (1i128 << f);
            for i in 0..layer.fan_in {
                acc += layer.weights[o * layer.fan_in + i] as i128 * act[i] as i128;
            }
            let mut y = clamp_to_bits(div_pow2_round(acc, f), bits);
            if layer.activation == Activation::Relu && y < 0 {
                y = 0;
            }
            next.push(y);
        }
        act = next;
    }
    let mut class = 0;
    for c in 1..act.len() {
        if act[c] > act[class] {
            class = c;
        }
    }
    (act, class)
}

/// Weighted metrics recomputed by scanning the label lists directly.
pub struct Recount {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn brute_force_metrics(truth: &[usize], pred: &[usize]) -> Recount {
    let n = truth.len() as f64;
    let mut correct = 0usize;
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..3 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fne += 1,
                _ => {}
            }
        }
        correct += tp;
        let support = (tp + fne) as f64;
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fne == 0 { 0.0 } else { tp as f64 / support };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        precision += p * support / n;
        recall += r * support / n;
        f1 += f * support / n;
    }
    Recount {
        accuracy: correct as f64 / n,
        precision,
        recall,
        f1,
    }
}

/// Quantized model with every word drawn uniformly over its full format range.
pub fn random_qmodel<R: Rng>(topology: &[usize], fmt: QFormat, input_fmt: QFormat, scale_fmt: QFormat, rng: &mut R) -> QuantizedModel {
    let mut draw = |f: QFormat, n: usize| -> Vec<i64> { (0..n).map(|_| rng.random_range(f.min_raw()..=f.max_raw())).collect() };
    let mean = draw(input_fmt, topology[0]);
    let inv_std = draw(scale_fmt, topology[0]);
    let layers = topology
        .windows(2)
        .map(|w| QLayer {
            fan_in: w[0],
            fan_out: w[1],
            weights: draw(fmt, w[0] * w[1]),
            biases: draw(fmt, w[1]),
            activation: Activation::Relu,
        })
        .collect();
    QuantizedModel {
        fmt,
        input_fmt,
        scale_fmt,
        mean,
        inv_std,
        layers,
        seed: 0,
    }
}

pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_fcdsae"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Artifact files of one gen-data → train → quantize → eval pipeline.
pub const PIPELINE_ARTIFACTS: [&str; 8] = [
    "data.csv",
    "model.txt",
    "report.json",
    "report.json.epochs.csv",
    "report.json.confusion.csv",
    "model.q",
    "frames.txt",
    "qconfusion.csv",
];

/// Runs the full CLI pipeline into `dir`; panics with stderr on any failure.
pub fn run_pipeline(dir: &std::path::Path, n: usize, epochs: usize, format: &str) {
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let n = n.to_string();
    let epochs = epochs.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data".into(), "--n".into(), n, "--seed".into(), "42".into(), "--out".into(), p("data.csv")],
        vec![
            "train".into(), "--data".into(), p("data.csv"), "--seed".into(), "42".into(), "--epochs".into(), epochs,
            "--out-model".into(), p("model.txt"), "--out-report".into(), p("report.json"),
        ],
        vec![
            "quantize".into(), "--model".into(), p("model.txt"), "--format".into(), format.into(), "--out".into(),
            p("model.q"), "--report".into(), p("report.json"),
        ],
        vec![
            "eval".into(), "--model".into(), p("model.txt"), "--qmodel".into(), p("model.q"), "--data".into(),
            p("data.csv"), "--dump-frames".into(), p("frames.txt"), "--confusion-out".into(), p("qconfusion.csv"),
            "--report".into(), p("report.json"),
        ],
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = run_cli(&args);
        assert!(out.status.success(), "{:?} failed: {}", step[0], String::from_utf8_lossy(&out.stderr));
    }
}
