//! Node encoder: history recurrence, class-wise edge recurrences, additive
//! attention over edge classes at every past step, and the influence
//! recurrence over the attended contexts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Gru;
use crate::params::{ParamId, ParamSet};
use crate::scenes::{build_neighbor_graph, AgentClass, EdgeKey, NeighborGraph, Scene, Standardizer};
use crate::tape::{Tape, Var};

/// `(dx, dy, vx, vy, is_vehicle, is_pedestrian, observed)`; positions are
/// relative to the focal position at the prediction frame.
pub const STATE_DIM: usize = 7;
/// Summed neighbor state relative to the focal: `(dx, dy, dvx, dvy)`.
pub const EDGE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub history_steps: usize,
    pub hidden_dim: usize,
    pub edge_hidden_dim: usize,
    pub attention_dim: usize,
    /// Recurrent cell used by every encoder recurrence.
    pub cell: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            history_steps: 9,
            hidden_dim: 12,
            edge_hidden_dim: 8,
            attention_dim: 8,
            cell: "gru".to_string(),
        }
    }
}

impl EncoderConfig {
    /// Edge classes attended per focal agent (focal class fixed).
    pub const NUM_EDGE_CLASSES: usize = AgentClass::COUNT;

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("history_steps", self.history_steps),
            ("hidden_dim", self.hidden_dim),
            ("edge_hidden_dim", self.edge_hidden_dim),
            ("attention_dim", self.attention_dim),
        ] {
            if v < 1 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if self.cell != "gru" {
            return Err(Error::config("cell", format!("unsupported recurrent cell `{}`", self.cell)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim + self.edge_hidden_dim
    }
}

/// Parameter handles of the encoder inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub history: Gru,
    /// One recurrence per ordered class pair, indexed
    /// `focal.index() * COUNT + neighbor.index()`.
    pub edges: Vec<Gru>,
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub v: ParamId,
    pub influence: Gru,
}

impl EncoderParams {
    pub fn register(ps: &mut ParamSet, cfg: &EncoderConfig) -> Self {
        let history = Gru::register(ps, "enc.history", STATE_DIM, cfg.hidden_dim);
        let mut edges = Vec::new();
        for a in AgentClass::ALL {
            for b in AgentClass::ALL {
                edges.push(Gru::register(ps, &format!("enc.edge.{a}-{b}"), EDGE_DIM, cfg.edge_hidden_dim));
            }
        }
        let w_query = ps.add("enc.att.w_query", cfg.attention_dim, cfg.hidden_dim, cfg.hidden_dim);
        let w_key = ps.add("enc.att.w_key", cfg.attention_dim, cfg.edge_hidden_dim, cfg.edge_hidden_dim);
        let v = ps.add("enc.att.v", 1, cfg.attention_dim, cfg.attention_dim);
        let influence = Gru::register(ps, "enc.influence", cfg.edge_hidden_dim, cfg.edge_hidden_dim);
        Self {
            history,
            edges,
            w_query,
            w_key,
            v,
            influence,
        }
    }

    pub fn edge(&self, key: EdgeKey) -> &Gru {
        &self.edges[key.focal.index() * AgentClass::COUNT + key.neighbor.index()]
    }
}

/// Attention weights of one focal agent over its history window.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `alpha[s][k]` for window step `s` (oldest first) and edge class `k`.
    pub alpha: Vec<Vec<f64>>,
    /// Whether edge class `k` had a neighbor at any window step.
    pub present: Vec<bool>,
}

impl AttentionTrace {
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_keys(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }
}

/// Numeric encoder input for one focal agent at one prediction frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub focal_class: AgentClass,
    /// `T + 1` history states, oldest first.
    pub history: Vec<[f64; STATE_DIM]>,
    /// `edges[k][s]`: summed relative neighbor state of class `k` at step `s`.
    pub edges: Vec<Vec<[f64; EDGE_DIM]>>,
    pub present: Vec<bool>,
}

impl EncoderInput {
    /// Builds the input from a scene in meters.
    ///
    /// Only the last `observed_steps` frames of the window are visible; older
    /// frames and frames where the focal agent is absent are zero with the
    /// observed flag cleared. Features are standardized with `std`.
    pub fn from_scene(
        scene: &Scene,
        focal_id: u64,
        t: i64,
        history_steps: usize,
        observed_steps: usize,
        radius: f64,
        std: &Standardizer,
    ) -> Result<Self> {
        let graph = build_neighbor_graph(scene, focal_id, t, history_steps, radius)?;
        let focal = scene.track(focal_id).expect("graph checked the focal agent");
        let now = *focal.state_at(t).expect("graph checked presence at t");
        let first_observed = t - observed_steps as i64 + 1;
        let mut history = Vec::with_capacity(graph.frames.len());
        for &f in &graph.frames {
            let row = match focal.state_at(f) {
                Some(s) if f >= first_observed => {
                    let rel = std.offset([s.x - now.x, s.y - now.y]);
                    let v = std.velocity(s.vel());
                    let mut r = [rel[0], rel[1], v[0], v[1], 0.0, 0.0, 1.0];
                    r[4 + focal.class.index()] = 1.0;
                    r
                }
                _ => [0.0; STATE_DIM],
            };
            history.push(row);
        }
        let mut edges = Vec::with_capacity(AgentClass::COUNT);
        let mut present = Vec::with_capacity(AgentClass::COUNT);
        for key in graph.keys() {
            let mut agg = aggregate_edges(&graph, scene, key, std);
            for (s, &f) in graph.frames.iter().enumerate() {
                if f < first_observed {
                    agg[s] = [0.0; EDGE_DIM];
                }
            }
            let any = graph
                .frames
                .iter()
                .enumerate()
                .any(|(s, &f)| f >= first_observed && !graph.list(key, s).is_empty());
            edges.push(agg);
            present.push(any);
        }
        let input = Self {
            focal_class: focal.class,
            history,
            edges,
            present,
        };
        input.check_finite()?;
        Ok(input)
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self.history.iter().flatten().all(|v| v.is_finite())
            && self.edges.iter().flatten().flatten().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite encoder input".into()))
        }
    }
}

/// Element-wise sum of the neighbors' states relative to the focal agent, per
/// window step. Steps without neighbors give the zero vector.
pub fn aggregate_edges(graph: &NeighborGraph, scene: &Scene, key: EdgeKey, std: &Standardizer) -> Vec<[f64; EDGE_DIM]> {
    let focal = scene.track(graph.focal_id);
    graph
        .frames
        .iter()
        .enumerate()
        .map(|(s, &f)| {
            let mut acc = [0.0; EDGE_DIM];
            let Some(fs) = focal.and_then(|t| t.state_at(f)) else {
                return acc;
            };
            for id in graph.list(key, s) {
                let ns = scene
                    .track(*id)
                    .and_then(|t| t.state_at(f))
                    .expect("graph lists present agents only");
                let dp = std.offset([ns.x - fs.x, ns.y - fs.y]);
                let dv = std.velocity([ns.vx - fs.vx, ns.vy - fs.vy]);
                acc[0] += dp[0];
                acc[1] += dp[1];
                acc[2] += dv[0];
                acc[3] += dv[1];
            }
            acc
        })
        .collect()
}

/// Runs the history recurrence and returns every per-step hidden state.
pub fn encode_history(t: &mut Tape, params: &EncoderParams, history: &[Var]) -> Vec<Var> {
    params.history.run(t, history)
}

/// Runs one edge-class recurrence over its aggregated sequence.
pub fn encode_edge(t: &mut Tape, gru: &Gru, aggregated: &[Var]) -> Vec<Var> {
    gru.run(t, aggregated)
}

/// Additive attention of `query` over `keys`:
/// `score_k = v . tanh(W_q query + W_k key_k)`, `alpha = softmax(score)`,
/// `context = sum_k alpha_k key_k`.
pub fn attend(t: &mut Tape, params: &EncoderParams, query: Var, keys: &[Var]) -> (Var, Var) {
    assert!(!keys.is_empty(), "attention needs at least one key");
    let q = t.linear(params.w_query, query, None);
    let scores: Vec<Var> = keys
        .iter()
        .map(|&k| {
            let kk = t.linear(params.w_key, k, None);
            let s = t.add(q, kk);
            let s = t.tanh(s);
            t.linear(params.v, s, None)
        })
        .collect();
    let scores = t.concat(&scores);
    let alpha = t.softmax(scores);
    let mut context = None;
    for (i, &k) in keys.iter().enumerate() {
        let a = t.slice(alpha, i, 1);
        let term = t.scale_by(a, k);
        context = Some(match context {
            None => term,
            Some(c) => t.add(c, term),
        });
    }
    (alpha, context.expect("nonempty keys"))
}

/// Recurrence over the per-step attention contexts; the final state is the
/// influence vector.
pub fn edge_influence(t: &mut Tape, params: &EncoderParams, contexts: &[Var]) -> Var {
    *params
        .influence
        .run(t, contexts)
        .last()
        .expect("at least one context")
}

/// Tape handles produced by [`encode`].
#[derive(Debug, Clone)]
pub struct EncodedNode {
    pub e_x: Var,
    /// One attention vector per window step.
    pub alphas: Vec<Var>,
}

/// Full encoder pipeline on the tape.
pub fn encode(t: &mut Tape, params: &EncoderParams, input: &EncoderInput) -> EncodedNode {
    let hist: Vec<Var> = input.history.iter().map(|x| t.input(x)).collect();
    let h = encode_history(t, params, &hist);
    let keys = EdgeKey::all_for(input.focal_class);
    let edge_states: Vec<Vec<Var>> = keys
        .iter()
        .zip(&input.edges)
        .map(|(key, seq)| {
            let xs: Vec<Var> = seq.iter().map(|x| t.input(x)).collect();
            encode_edge(t, params.edge(*key), &xs)
        })
        .collect();
    let mut alphas = Vec::with_capacity(h.len());
    let mut contexts = Vec::with_capacity(h.len());
    for (s, &query) in h.iter().enumerate() {
        let ks: Vec<Var> = edge_states.iter().map(|e| e[s]).collect();
        let (alpha, ctx) = attend(t, params, query, &ks);
        alphas.push(alpha);
        contexts.push(ctx);
    }
    let influence = edge_influence(t, params, &contexts);
    let last = *h.last().expect("nonempty history");
    let e_x = t.concat(&[last, influence]);
    EncodedNode { e_x, alphas }
}

/// Reads an [`AttentionTrace`] off the tape.
pub fn trace_of(t: &Tape, node: &EncodedNode, present: &[bool]) -> AttentionTrace {
    AttentionTrace {
        alpha: node.alphas.iter().map(|a| t.value(*a).to_vec()).collect(),
        present: present.to_vec(),
    }
}

/// Encodes one focal agent of a scene (in meters) without keeping the tape.
pub fn encode_node(
    scene: &Scene,
    focal_id: u64,
    frame: i64,
    config: &EncoderConfig,
    ps: &ParamSet,
    params: &EncoderParams,
    radius: f64,
    std: &Standardizer,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let input = EncoderInput::from_scene(
        scene,
        focal_id,
        frame,
        config.history_steps,
        config.history_steps + 1,
        radius,
        std,
    )?;
    let mut t = Tape::new(ps);
    let node = encode(&mut t, params, &input);
    let e_x = t.value(node.e_x).to_vec();
    Ok((e_x, trace_of(&t, &node, &input.present)))
}
