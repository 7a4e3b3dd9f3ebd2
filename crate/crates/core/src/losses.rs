//! Temporal smoothness penalty on attention weights and the combined
//! training objective.

use serde::{Deserialize, Serialize};

use crate::encoder::AttentionTrace;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

/// Added under each square root so the penalty is differentiable when two
/// consecutive attention vectors coincide.
pub const SMOOTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub beta: f64,
    pub kl_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.0, kl_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::config("beta", format!("must be a finite value >= 0, got {}", self.beta)));
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::config("kl_weight", format!("must be a finite value >= 0, got {}", self.kl_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub smooth: f64,
    pub total: f64,
    pub beta: f64,
}

fn check_trace(trace: &AttentionTrace) -> Result<()> {
    let k = trace.num_keys();
    if trace.alpha.iter().any(|a| a.len() != k) {
        return Err(Error::validation(format!(
            "attention trace has varying class counts {:?}",
            trace.alpha.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// Per-step terms `sqrt(|alpha^s - alpha^{s-1}|^2 + eps)` of one trace.
fn step_terms(trace: &AttentionTrace) -> impl Iterator<Item = f64> + '_ {
    trace.alpha.windows(2).map(|w| {
        let sq: f64 = w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) * (a - b)).sum();
        (sq + SMOOTH_EPS).sqrt()
    })
}

/// Sum over agents and consecutive window steps of the smoothed Euclidean
/// norm of the attention change.
pub fn smooth_loss(traces: &[AttentionTrace]) -> Result<f64> {
    let mut total = 0.0;
    for tr in traces {
        check_trace(tr)?;
        total += step_terms(tr).sum::<f64>();
    }
    Ok(total)
}

/// Mean over agents of the unsmoothed temporal variation
/// `sum_s |alpha^s - alpha^{s-1}|`.
pub fn mean_attention_tv(traces: &[AttentionTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for tr in traces {
        check_trace(tr)?;
        total += tr
            .alpha
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .sum::<f64>();
    }
    Ok(total / traces.len() as f64)
}

/// Gradient of [`smooth_loss`] with respect to every `alpha[s][k]`.
pub fn smooth_loss_grad(traces: &[AttentionTrace]) -> Result<Vec<Vec<Vec<f64>>>> {
    traces
        .iter()
        .map(|tr| {
            check_trace(tr)?;
            let mut g: Vec<Vec<f64>> = tr.alpha.iter().map(|a| vec![0.0; a.len()]).collect();
            for (s, norm) in step_terms(tr).enumerate() {
                for k in 0..tr.num_keys() {
                    let d = (tr.alpha[s + 1][k] - tr.alpha[s][k]) / norm;
                    g[s + 1][k] += d;
                    g[s][k] -= d;
                }
            }
            Ok(g)
        })
        .collect()
}

/// Smoothness penalty of one agent's attention vectors on the tape.
pub fn smooth_vars(t: &mut Tape, alphas: &[Var]) -> Var {
    if alphas.len() < 2 {
        return t.input(&[0.0]);
    }
    let terms: Vec<Var> = alphas
        .windows(2)
        .map(|w| {
            let d = t.sub(w[1], w[0]);
            let sq = t.dot(d, d);
            let sq = t.offset(sq, SMOOTH_EPS);
            t.sqrt(sq)
        })
        .collect();
    let all = t.concat(&terms);
    t.sum(all)
}

/// Negative evidence lower bound: `-log_prob + kl_weight * kl`.
pub fn elbo_loss(log_prob: f64, kl: f64, kl_weight: f64) -> f64 {
    -log_prob + kl_weight * kl
}

/// `L0 + beta * smooth`. With `beta = 0` the total is `L0` itself and the
/// smooth value is not folded in.
pub fn total_loss(nll: f64, kl: f64, smooth: f64, config: &LossConfig) -> Result<LossBreakdown> {
    config.validate()?;
    let l0 = nll + config.kl_weight * kl;
    let total = if config.beta == 0.0 { l0 } else { l0 + config.beta * smooth };
    Ok(LossBreakdown {
        nll,
        kl,
        smooth,
        total,
        beta: config.beta,
    })
}
