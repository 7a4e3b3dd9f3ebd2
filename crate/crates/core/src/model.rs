//! Full forecaster: encoder plus latent head sharing one parameter set.

use serde::{Deserialize, Serialize};

use crate::cvae::{self, CvaeParams, LatentConfig, PredictionOutput, FUTURE_DIM};
use crate::encoder::{self, AttentionTrace, EncoderConfig, EncoderInput, EncoderParams};
use crate::error::Result;
use crate::losses;
use crate::params::ParamSet;
use crate::scenes::AgentClass;
use crate::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub latent: LatentConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.latent.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub cvae: CvaeParams,
}

impl Model {
    /// Registers every array with zero values.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let encoder = EncoderParams::register(&mut params, &config.encoder);
        let cvae = CvaeParams::register(&mut params, &config.latent, config.encoder.output_dim());
        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            cvae,
        })
    }

    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.params.init_uniform(seed);
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Encoded node vector and attention trace.
    pub fn encode(&self, input: &EncoderInput) -> (Vec<f64>, AttentionTrace) {
        let mut t = Tape::new(&self.params);
        let node = encoder::encode(&mut t, &self.encoder, input);
        (t.value(node.e_x).to_vec(), encoder::trace_of(&t, &node, &input.present))
    }

    /// Most-likely prediction in standardized units relative to the current
    /// position.
    pub fn predict_most_likely(&self, sample: &Sample, horizon: usize, dt: f64) -> Result<PredictionOutput> {
        let (e_x, _) = self.encode(&sample.input);
        cvae::predict_most_likely(&self.params, &self.cvae, &e_x, [0.0; 2], sample.current_vel, horizon, dt)
    }

    pub fn sample_trajectories(&self, sample: &Sample, horizon: usize, dt: f64, n: usize, seed: u64) -> Result<PredictionOutput> {
        let (e_x, _) = self.encode(&sample.input);
        cvae::sample_trajectories(&self.params, &self.cvae, &e_x, [0.0; 2], sample.current_vel, horizon, dt, n, seed)
    }
}

/// One focal agent at one prediction frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: usize,
    pub agent_id: u64,
    pub class: AgentClass,
    pub frame: i64,
    pub input: EncoderInput,
    /// Standardized velocity at the prediction frame.
    pub current_vel: [f64; 2],
    /// Current position in meters.
    pub current_pos_m: [f64; 2],
    /// Standardized `(dx, dy, vx, vy)` per future step, relative to the
    /// current position.
    pub future: Vec<[f64; FUTURE_DIM]>,
    /// Standardized future positions relative to the current position.
    pub gt_rel: Vec<[f64; 2]>,
    /// Future positions in meters relative to the current position.
    pub gt_rel_m: Vec<[f64; 2]>,
}

/// Whether the penalty node is built at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothMode {
    Included,
    Absent,
}

/// Tape handles of one sample's objective.
#[derive(Debug, Clone, Copy)]
pub struct SampleVars {
    pub nll: Var,
    pub kl: Var,
    pub l0: Var,
    pub smooth: Option<Var>,
    /// `weight * l0 + beta * smooth`.
    pub root: Var,
}

/// Exact expectation over the latent under the posterior:
/// `nll = -sum_z q(z) ln p(y | x, z)`, `kl = KL(q || p)`.
///
/// `weight` scales `l0` inside the root so batch means and unnormalized
/// penalty sums can share one backward pass.
pub fn sample_objective(
    t: &mut Tape,
    model: &Model,
    sample: &Sample,
    kl_weight: f64,
    beta: f64,
    weight: f64,
    dt: f64,
    mode: SmoothMode,
) -> SampleVars {
    let node = encoder::encode(t, &model.encoder, &sample.input);
    let e_y = cvae::encode_future(t, &model.cvae, &sample.future);
    let prior = cvae::prior_logits(t, &model.cvae, node.e_x);
    let post = cvae::posterior_logits(t, &model.cvae, node.e_x, e_y);
    let log_p = t.log_softmax(prior);
    let log_q = t.log_softmax(post);
    let horizon = sample.gt_rel.len();
    let origin = t.input(&[0.0, 0.0]);
    let lps: Vec<Var> = (0..model.cvae.num_modes)
        .map(|z| {
            let vel = cvae::decode(t, &model.cvae, node.e_x, z, sample.current_vel, horizon);
            let pos = cvae::integrate_vars(t, &vel, origin, dt);
            cvae::log_prob_vars(t, &pos, &sample.gt_rel)
        })
        .collect();
    let lps = t.concat(&lps);
    let q = t.exp(log_q);
    let ell = t.dot(q, lps);
    let nll = t.scale(ell, -1.0);
    let kl = cvae::kl_vars(t, log_q, log_p);
    let klw = t.scale(kl, kl_weight);
    let l0 = t.add(nll, klw);
    let weighted = t.scale(l0, weight);
    let (smooth, root) = match mode {
        SmoothMode::Absent => (None, weighted),
        SmoothMode::Included => {
            let s = losses::smooth_vars(t, &node.alphas);
            let bs = t.scale(s, beta);
            (Some(s), t.add(weighted, bs))
        }
    };
    SampleVars {
        nll,
        kl,
        l0,
        smooth,
        root,
    }
}

/// Plain values of one sample's objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerms {
    pub nll: f64,
    pub kl: f64,
    pub l0: f64,
    pub smooth: f64,
}

/// Forward and backward pass for one sample; returns its terms and the
/// parameter gradient of `weight * l0 + beta * smooth`.
pub fn sample_gradient(
    model: &Model,
    sample: &Sample,
    kl_weight: f64,
    beta: f64,
    weight: f64,
    dt: f64,
    mode: SmoothMode,
) -> (SampleTerms, Gradients) {
    let mut t = Tape::new(&model.params);
    let v = sample_objective(&mut t, model, sample, kl_weight, beta, weight, dt, mode);
    let terms = SampleTerms {
        nll: t.scalar(v.nll),
        kl: t.scalar(v.kl),
        l0: t.scalar(v.l0),
        smooth: v.smooth.map_or(0.0, |s| t.scalar(s)),
    };
    (terms, t.backward(v.root))
}

/// Forward pass only.
pub fn sample_terms(model: &Model, sample: &Sample, kl_weight: f64, dt: f64, mode: SmoothMode) -> SampleTerms {
    let mut t = Tape::new(&model.params);
    let v = sample_objective(&mut t, model, sample, kl_weight, 0.0, 1.0, dt, mode);
    SampleTerms {
        nll: t.scalar(v.nll),
        kl: t.scalar(v.kl),
        l0: t.scalar(v.l0),
        smooth: v.smooth.map_or(0.0, |s| t.scalar(s)),
    }
}
