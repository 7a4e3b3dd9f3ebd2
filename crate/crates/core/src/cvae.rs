//! Discrete-latent conditional VAE head.
//!
//! The decoder emits one velocity Gaussian per horizon step; positions follow
//! by Euler integration with independent-step covariance accumulation, so the
//! position distributions stay exact Gaussians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Gru, Mlp};
use crate::params::ParamSet;
use crate::tape::{self, Tape, Var};

/// Floor on the diagonal of every Cholesky factor.
pub const CHOL_FLOOR: f64 = 1e-6;
/// Floor on prior probabilities inside the KL term.
pub const PROB_FLOOR: f64 = 1e-12;
/// Per-step future summary input: relative position and velocity.
pub const FUTURE_DIM: usize = 4;
const DECODER_OUT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub num_modes: usize,
    pub future_dim: usize,
    pub latent_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            num_modes: 5,
            future_dim: 8,
            latent_hidden: 12,
            decoder_hidden: 12,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_modes", self.num_modes),
            ("future_dim", self.future_dim),
            ("latent_hidden", self.latent_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ] {
            if v < 1 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CvaeParams {
    pub num_modes: usize,
    pub future: Gru,
    pub prior: Mlp,
    pub posterior: Mlp,
    pub dec_init: Dense,
    pub decoder: Gru,
    pub dec_out: Dense,
}

impl CvaeParams {
    pub fn register(ps: &mut ParamSet, cfg: &LatentConfig, ex_dim: usize) -> Self {
        let z = cfg.num_modes;
        Self {
            num_modes: z,
            future: Gru::register(ps, "cvae.future", FUTURE_DIM, cfg.future_dim),
            prior: Mlp::register(ps, "cvae.prior", ex_dim, cfg.latent_hidden, z),
            posterior: Mlp::register(ps, "cvae.posterior", ex_dim + cfg.future_dim, cfg.latent_hidden, z),
            dec_init: Dense::register(ps, "cvae.dec_init", ex_dim + z, cfg.decoder_hidden),
            decoder: Gru::register(ps, "cvae.decoder", 2 + z, cfg.decoder_hidden),
            dec_out: Dense::register(ps, "cvae.dec_out", cfg.decoder_hidden, DECODER_OUT),
        }
    }
}

/// One bivariate Gaussian with log-Cholesky covariance `(ln l11, l21, ln l22)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStep {
    pub mean: [f64; 2],
    pub cov_chol: [f64; 3],
}

impl GaussianStep {
    pub fn from_cov(mean: [f64; 2], cov: [f64; 3]) -> Self {
        let l11 = cov[0].sqrt();
        let l21 = cov[1] / l11;
        let l22 = (cov[2] - l21 * l21).sqrt();
        Self {
            mean,
            cov_chol: [l11.ln(), l21, l22.ln()],
        }
    }

    /// `(s11, s12, s22)`.
    pub fn cov(&self) -> [f64; 3] {
        tape::chol_to_cov(&self.cov_chol, CHOL_FLOOR)
    }

    pub fn chol(&self) -> [f64; 3] {
        [
            self.cov_chol[0].exp().max(CHOL_FLOOR),
            self.cov_chol[1],
            self.cov_chol[2].exp().max(CHOL_FLOOR),
        ]
    }

    pub fn log_det(&self) -> f64 {
        let c = self.cov();
        (c[0] * c[2] - c[1] * c[1]).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputMode {
    MostLikely,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub position_dists: Vec<GaussianStep>,
    pub z_dist: Vec<f64>,
    pub mode: OutputMode,
    /// Selected latent mode for most-likely output.
    pub z: Option<usize>,
    /// `n x horizon` sampled positions.
    pub samples: Option<Vec<Vec<[f64; 2]>>>,
}

impl PredictionOutput {
    /// Sequence of position means.
    pub fn trajectory(&self) -> Vec<[f64; 2]> {
        self.position_dists.iter().map(|g| g.mean).collect()
    }
}

/// Summarizes a ground-truth future (relative position, velocity per step).
pub fn encode_future(t: &mut Tape, p: &CvaeParams, future: &[[f64; FUTURE_DIM]]) -> Var {
    assert!(!future.is_empty(), "future must have at least one step");
    let xs: Vec<Var> = future.iter().map(|f| t.input(f)).collect();
    *p.future.run(t, &xs).last().expect("nonempty")
}

pub fn prior_logits(t: &mut Tape, p: &CvaeParams, e_x: Var) -> Var {
    p.prior.apply(t, e_x)
}

pub fn posterior_logits(t: &mut Tape, p: &CvaeParams, e_x: Var, e_y: Var) -> Var {
    let x = t.concat(&[e_x, e_y]);
    p.posterior.apply(t, x)
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Velocity distribution handles `(mean, cov)` for one decoded step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub mean: Var,
    pub cov: Var,
}

/// Autoregressive decoder for latent mode `z`.
///
/// The state starts at `tanh(W [e_x; onehot(z)] + b)`; each step reads the
/// previous velocity mean and `onehot(z)` and emits a residual velocity mean
/// plus log-Cholesky covariance parameters. The first "previous" mean is the
/// agent's current velocity.
pub fn decode(t: &mut Tape, p: &CvaeParams, e_x: Var, z: usize, current_vel: [f64; 2], horizon: usize) -> Vec<StepVars> {
    let oh = t.input(&one_hot(p.num_modes, z));
    let init_in = t.concat(&[e_x, oh]);
    let h0 = p.dec_init.apply(t, init_in);
    let mut h = t.tanh(h0);
    let mut prev = t.input(&current_vel);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = t.concat(&[prev, oh]);
        h = p.decoder.step(t, x, h);
        let o = p.dec_out.apply(t, h);
        let dv = t.slice(o, 0, 2);
        let mean = t.add(prev, dv);
        let chol = t.slice(o, 2, 3);
        let cov = t.chol_cov(chol, CHOL_FLOOR);
        out.push(StepVars { mean, cov });
        prev = mean;
    }
    out
}

/// Euler integration of velocity Gaussians into position Gaussians starting
/// at `start`: means accumulate `dt * v`, covariances `dt^2 * cov`.
pub fn integrate_vars(t: &mut Tape, vel: &[StepVars], start: Var, dt: f64) -> Vec<StepVars> {
    let mut pos = start;
    let mut cov: Option<Var> = None;
    vel.iter()
        .map(|s| {
            let dm = t.scale(s.mean, dt);
            pos = t.add(pos, dm);
            let dc = t.scale(s.cov, dt * dt);
            let c = match cov {
                None => dc,
                Some(c) => t.add(c, dc),
            };
            cov = Some(c);
            StepVars { mean: pos, cov: c }
        })
        .collect()
}

/// Sum over steps of the bivariate log-density of `gt` under `pos`.
pub fn log_prob_vars(t: &mut Tape, pos: &[StepVars], gt: &[[f64; 2]]) -> Var {
    assert_eq!(pos.len(), gt.len(), "prediction and ground truth lengths differ");
    let terms: Vec<Var> = pos
        .iter()
        .zip(gt)
        .map(|(s, g)| {
            let g = t.input(g);
            t.gauss_log_pdf(s.mean, s.cov, g)
        })
        .collect();
    let all = t.concat(&terms);
    t.sum(all)
}

/// `KL(q || p)` from log-probabilities; `ln p` is floored at `ln PROB_FLOOR`.
pub fn kl_vars(t: &mut Tape, log_q: Var, log_p: Var) -> Var {
    let log_p = t.clamp_min(log_p, PROB_FLOOR.ln());
    let q = t.exp(log_q);
    let d = t.sub(log_q, log_p);
    t.dot(q, d)
}

fn read_steps(t: &Tape, steps: &[StepVars]) -> Vec<GaussianStep> {
    steps
        .iter()
        .map(|s| {
            let m = t.value(s.mean);
            let c = t.value(s.cov);
            GaussianStep::from_cov([m[0], m[1]], [c[0], c[1], c[2]])
        })
        .collect()
}

/// Plain-value integration; see [`integrate_vars`].
pub fn integrate(vel: &[GaussianStep], start: [f64; 2], dt: f64) -> Result<Vec<GaussianStep>> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "must be > 0"));
    }
    let mut pos = start;
    let mut cov = [0.0; 3];
    Ok(vel
        .iter()
        .map(|g| {
            pos = [pos[0] + dt * g.mean[0], pos[1] + dt * g.mean[1]];
            let c = g.cov();
            for i in 0..3 {
                cov[i] += dt * dt * c[i];
            }
            GaussianStep::from_cov(pos, cov)
        })
        .collect())
}

/// Sum over steps of `ln N(gt_h; mean_h, cov_h)`.
pub fn log_prob(pos: &[GaussianStep], gt: &[[f64; 2]]) -> Result<f64> {
    if pos.len() != gt.len() {
        return Err(Error::validation(format!(
            "prediction has {} steps, ground truth {}",
            pos.len(),
            gt.len()
        )));
    }
    Ok(pos
        .iter()
        .zip(gt)
        .map(|(g, y)| tape::gauss_log_pdf(g.mean, g.cov(), *y))
        .sum())
}

/// `sum_z q(z) (ln q(z) - ln p(z))` with `0 ln 0 = 0` and `p` floored at
/// [`PROB_FLOOR`].
pub fn kl_categorical(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(qi, pi)| qi * (qi.ln() - pi.max(PROB_FLOOR).ln()))
        .sum()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn prior(ps: &ParamSet, p: &CvaeParams, e_x: &[f64]) -> Vec<f64> {
    let mut t = Tape::new(ps);
    let x = t.input(e_x);
    let l = prior_logits(&mut t, p, x);
    tape::softmax(t.value(l))
}

pub fn posterior(ps: &ParamSet, p: &CvaeParams, e_x: &[f64], e_y: &[f64]) -> Vec<f64> {
    let mut t = Tape::new(ps);
    let x = t.input(e_x);
    let y = t.input(e_y);
    let l = posterior_logits(&mut t, p, x, y);
    tape::softmax(t.value(l))
}

/// Decoded velocity distributions for one mode.
pub fn decode_values(ps: &ParamSet, p: &CvaeParams, e_x: &[f64], z: usize, current_vel: [f64; 2], horizon: usize) -> Vec<GaussianStep> {
    let mut t = Tape::new(ps);
    let x = t.input(e_x);
    let steps = decode(&mut t, p, x, z, current_vel, horizon);
    read_steps(&t, &steps)
}

/// Argmax-prior mode, decoded and integrated from `start`.
pub fn predict_most_likely(
    ps: &ParamSet,
    p: &CvaeParams,
    e_x: &[f64],
    start: [f64; 2],
    current_vel: [f64; 2],
    horizon: usize,
    dt: f64,
) -> Result<PredictionOutput> {
    let z_dist = prior(ps, p, e_x);
    let z = argmax(&z_dist);
    let vel = decode_values(ps, p, e_x, z, current_vel, horizon);
    Ok(PredictionOutput {
        position_dists: integrate(&vel, start, dt)?,
        z_dist,
        mode: OutputMode::MostLikely,
        z: Some(z),
        samples: None,
    })
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `n` trajectories: `z ~ prior`, then each velocity step drawn from its
/// Gaussian and Euler-integrated from `start`.
#[allow(clippy::too_many_arguments)]
pub fn sample_trajectories(
    ps: &ParamSet,
    p: &CvaeParams,
    e_x: &[f64],
    start: [f64; 2],
    current_vel: [f64; 2],
    horizon: usize,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<PredictionOutput> {
    if n == 0 {
        return Err(Error::config("samples", "need at least one sample"));
    }
    let z_dist = prior(ps, p, e_x);
    let mut per_mode: Vec<Option<Vec<GaussianStep>>> = vec![None; p.num_modes];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let z = draw_categorical(&mut rng, &z_dist);
        let vel = per_mode[z].get_or_insert_with(|| decode_values(ps, p, e_x, z, current_vel, horizon));
        let mut pos = start;
        let traj: Vec<[f64; 2]> = vel
            .iter()
            .map(|g| {
                let [l11, l21, l22] = g.chol();
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                let v = [g.mean[0] + l11 * e0, g.mean[1] + l21 * e0 + l22 * e1];
                pos = [pos[0] + dt * v[0], pos[1] + dt * v[1]];
                pos
            })
            .collect();
        samples.push(traj);
    }
    let mixture_mode = argmax(&z_dist);
    let vel = per_mode[mixture_mode]
        .take()
        .unwrap_or_else(|| decode_values(ps, p, e_x, mixture_mode, current_vel, horizon));
    Ok(PredictionOutput {
        position_dists: integrate(&vel, start, dt)?,
        z_dist,
        mode: OutputMode::Sampled,
        z: None,
        samples: Some(samples),
    })
}
