//! KL-divergence sparsity penalty on hidden-layer mean activations.
//!
//! For hidden unit `k` the batch-mean activation `ξ_k = (1/p) Σ_i h_k(x_i)` is
//! compared against the target `ξ` with
//! `KL(ξ‖ξ_k) = ξ ln(ξ/ξ_k) + (1−ξ) ln((1−ξ)/(1−ξ_k))`, and the total loss is
//! `J = MSE + ψ Σ_layers Σ_k KL(ξ‖ξ_k)`.
//!
//! ReLU activations are unbounded, so `ξ_k` is clamped into
//! `[clamp_eps, 1 − clamp_eps]`. A clamped unit contributes a constant to the
//! penalty and therefore no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{mse_loss, ForwardTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityConfig {
    /// Target mean activation ξ.
    pub xi: f64,
    /// Penalty weight ψ.
    pub psi: f64,
    pub clamp_eps: f64,
    /// Hidden layers (0-based) that are penalised; `None` means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            xi: 0.05,
            psi: 1e-3,
            clamp_eps: 1e-6,
            layers: None,
        }
    }
}

impl SparsityConfig {
    pub fn with_psi(psi: f64) -> Self {
        Self {
            psi,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(Error::Config(format!("psi must be >= 0, got {}", self.psi)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config(format!(
                "clamp_eps must lie in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        Ok(())
    }

    /// Hidden-layer indices penalised for a network with `hidden` hidden layers.
    pub fn penalized_layers(&self, hidden: usize) -> Result<Vec<usize>> {
        match &self.layers {
            None => Ok((0..hidden).collect()),
            Some(ls) => {
                if let Some(&bad) = ls.iter().find(|&&l| l >= hidden) {
                    return Err(Error::Config(format!(
                        "sparsity layer {bad} is not a hidden layer (network has {hidden})"
                    )));
                }
                let mut ls = ls.clone();
                ls.sort_unstable();
                ls.dedup();
                Ok(ls)
            }
        }
    }
}

/// Batch-mean activations of one hidden layer, before and after clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSummary {
    pub layer: usize,
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
}

impl ActivationSummary {
    pub fn width(&self) -> usize {
        self.clamped.len()
    }

    pub fn is_clamped(&self, k: usize) -> bool {
        self.raw[k] != self.clamped[k]
    }
}

/// Column means of a `(batch × width)` activation matrix, clamped.
pub fn summarize(activations: &Matrix, layer: usize, clamp_eps: f64) -> Result<ActivationSummary> {
    let p = activations.rows();
    if p == 0 {
        return Err(Error::Empty("average activation over an empty batch".into()));
    }
    let mut raw = vec![0.0; activations.cols()];
    for row in activations.iter_rows() {
        for (acc, v) in raw.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut raw {
        *v /= p as f64;
    }
    let clamped = raw
        .iter()
        .map(|v| v.clamp(clamp_eps, 1.0 - clamp_eps))
        .collect();
    Ok(ActivationSummary {
        layer,
        raw,
        clamped,
    })
}

pub fn average_activation(
    trace: &ForwardTrace,
    layer_index: usize,
    clamp_eps: f64,
) -> Result<ActivationSummary> {
    let h = trace.hidden(layer_index).ok_or_else(|| {
        Error::Config(format!(
            "layer {layer_index} is not a hidden layer ({} hidden layers)",
            trace.post.len().saturating_sub(1)
        ))
    })?;
    summarize(h, layer_index, clamp_eps)
}

/// Bernoulli KL divergence, natural log.
pub fn kl_divergence(xi: f64, xi_k: f64) -> Result<f64> {
    let inside = |v: f64| v > 0.0 && v < 1.0;
    if !inside(xi) || !inside(xi_k) {
        return Err(Error::Domain(format!(
            "kl divergence needs arguments in (0, 1), got ({xi}, {xi_k})"
        )));
    }
    Ok(xi * (xi / xi_k).ln() + (1.0 - xi) * ((1.0 - xi) / (1.0 - xi_k)).ln())
}

pub fn penalty_total(summaries: &[ActivationSummary], cfg: &SparsityConfig) -> Result<f64> {
    if cfg.psi == 0.0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in summaries {
        for &xk in &s.clamped {
            sum += kl_divergence(cfg.xi, xk)?;
        }
    }
    Ok(cfg.psi * sum)
}

/// `∂(ψ·KL)/∂h_k(x_i)` for every sample `i` of a batch of size `p`; the rows
/// are identical because `ξ_k` is a plain mean.
pub fn penalty_gradient(summary: &ActivationSummary, cfg: &SparsityConfig, batch_size: usize) -> Matrix {
    let q = summary.width();
    let mut out = Matrix::zeros(batch_size, q);
    if batch_size == 0 || cfg.psi == 0.0 {
        return out;
    }
    let scale = cfg.psi / batch_size as f64;
    let per_unit: Vec<f64> = (0..q)
        .map(|k| {
            if summary.is_clamped(k) {
                0.0
            } else {
                let xk = summary.clamped[k];
                scale * (-cfg.xi / xk + (1.0 - cfg.xi) / (1.0 - xk))
            }
        })
        .collect();
    for s in 0..batch_size {
        out.row_mut(s).copy_from_slice(&per_unit);
    }
    out
}

/// Summaries, penalty value and per-hidden-layer activation gradients for a
/// trace. The gradient vector has one slot per hidden layer (`None` where the
/// layer is not penalised), ready for [`crate::nn::backward`].
#[derive(Debug, Clone)]
pub struct SparsityTerms {
    pub summaries: Vec<ActivationSummary>,
    pub penalty: f64,
    pub grads: Vec<Option<Matrix>>,
}

pub fn sparsity_terms(trace: &ForwardTrace, cfg: &SparsityConfig) -> Result<SparsityTerms> {
    let hidden = trace.post.len().saturating_sub(1);
    let mut grads = vec![None; hidden];
    if cfg.psi == 0.0 {
        return Ok(SparsityTerms {
            summaries: Vec::new(),
            penalty: 0.0,
            grads,
        });
    }
    let p = trace.batch_size();
    let mut summaries = Vec::new();
    for layer in cfg.penalized_layers(hidden)? {
        let s = average_activation(trace, layer, cfg.clamp_eps)?;
        grads[layer] = Some(penalty_gradient(&s, cfg, p));
        summaries.push(s);
    }
    let penalty = penalty_total(&summaries, cfg)?;
    Ok(SparsityTerms {
        summaries,
        penalty,
        grads,
    })
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub penalty: f64,
    pub total: f64,
}

pub fn total_loss(trace: &ForwardTrace, targets: &Matrix, cfg: &SparsityConfig) -> Result<LossParts> {
    let mse = mse_loss(trace.output(), targets)?;
    if cfg.psi == 0.0 {
        return Ok(LossParts {
            mse,
            penalty: 0.0,
            total: mse,
        });
    }
    let penalty = sparsity_terms(trace, cfg)?.penalty;
    Ok(LossParts {
        mse,
        penalty,
        total: mse + penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(vals: &[f64]) -> Matrix {
        Matrix::from_vec(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn mean_of_one_neuron() {
        let s = summarize(&column(&[0.2, 0.4, 0.6]), 0, 1e-6).unwrap();
        assert!((s.clamped[0] - 0.4).abs() < 1e-15);
        assert!(!s.is_clamped(0));
    }

    #[test]
    fn clamp_floor_and_ceiling() {
        let s = summarize(&column(&[0.0, 0.0]), 0, 1e-6).unwrap();
        assert_eq!(s.clamped[0], 1e-6);
        let s = summarize(&column(&[2.0, 4.0]), 0, 1e-6).unwrap();
        assert_eq!(s.clamped[0], 1.0 - 1e-6);
        assert!(s.is_clamped(0));
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            summarize(&Matrix::zeros(0, 3), 0, 1e-6),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(0.05, 0.05).unwrap(), 0.0);
        assert_eq!(kl_divergence(0.5, 0.5).unwrap(), 0.0);
        assert!((kl_divergence(0.05, 0.5).unwrap() - 0.494632).abs() < 1e-6);
        assert!(kl_divergence(0.0, 0.5).is_err());
        assert!(kl_divergence(0.05, 1.0).is_err());
    }

    #[test]
    fn penalty_examples() {
        let s = ActivationSummary {
            layer: 0,
            raw: vec![0.5, 0.5],
            clamped: vec![0.5, 0.5],
        };
        let cfg = SparsityConfig {
            psi: 0.1,
            ..SparsityConfig::default()
        };
        assert!((penalty_total(std::slice::from_ref(&s), &cfg).unwrap() - 0.0989264).abs() < 1e-6);
        assert_eq!(penalty_total(&[s], &SparsityConfig::with_psi(0.0)).unwrap(), 0.0);
        let at_target = ActivationSummary {
            layer: 0,
            raw: vec![0.05; 4],
            clamped: vec![0.05; 4],
        };
        assert_eq!(penalty_total(&[at_target], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let cfg = SparsityConfig::with_psi(1.0);
        let s = ActivationSummary {
            layer: 0,
            raw: vec![0.2, 0.05, 3.0],
            clamped: vec![0.2, 0.05, 1.0 - 1e-6],
        };
        let g = penalty_gradient(&s, &cfg, 1);
        assert!((g[(0, 0)] - 0.9375).abs() < 1e-12);
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference_of_penalty() {
        let cfg = SparsityConfig::with_psi(0.7);
        let acts = Matrix::from_rows(&[vec![0.1, 0.3], vec![0.25, 0.0], vec![0.4, 0.2]]).unwrap();
        let pen = |m: &Matrix| penalty_total(&[summarize(m, 0, cfg.clamp_eps).unwrap()], &cfg).unwrap();
        let g = penalty_gradient(&summarize(&acts, 0, cfg.clamp_eps).unwrap(), &cfg, 3);
        let h = 1e-6;
        for s in 0..3 {
            for k in 0..2 {
                let mut up = acts.clone();
                up[(s, k)] += h;
                let mut dn = acts.clone();
                dn[(s, k)] -= h;
                let fd = (pen(&up) - pen(&dn)) / (2.0 * h);
                let rel = (fd - g[(s, k)]).abs() / fd.abs().max(g[(s, k)].abs());
                assert!(rel < 1e-4, "({s},{k}) fd={fd} analytic={}", g[(s, k)]);
            }
        }
    }

    #[test]
    fn layer_selection_validated() {
        let cfg = SparsityConfig {
            layers: Some(vec![1, 1, 0]),
            ..SparsityConfig::default()
        };
        assert_eq!(cfg.penalized_layers(2).unwrap(), vec![0, 1]);
        assert!(cfg.penalized_layers(1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SparsityConfig::default().validate().is_ok());
        for bad in [
            SparsityConfig { xi: 1.0, ..Default::default() },
            SparsityConfig { psi: -1.0, ..Default::default() },
            SparsityConfig { clamp_eps: 0.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn kl_non_negative(xi in 1e-4f64..0.9999, xk in 1e-4f64..0.9999) {
            prop_assert!(kl_divergence(xi, xk).unwrap() >= 0.0);
        }

        #[test]
        fn kl_grows_away_from_target(xi in 0.02f64..0.98, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            // Two points on the same side of xi: the farther one has larger KL.
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(far - near > 1e-3);
            let above = |t: f64| xi + t * (0.999 - xi);
            let below = |t: f64| xi - t * (xi - 0.001);
            prop_assert!(kl_divergence(xi, above(far)).unwrap() > kl_divergence(xi, above(near)).unwrap());
            prop_assert!(kl_divergence(xi, below(far)).unwrap() > kl_divergence(xi, below(near)).unwrap());
        }
    }
}
