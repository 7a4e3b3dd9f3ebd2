//! Recurrent and feed-forward building blocks on top of the tape.

use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};

/// Gated recurrent cell (reset/update gates, tanh candidate).
///
/// ```text
/// r  = sigmoid(W_r x + b_r + U_r h + c_r)
/// u  = sigmoid(W_u x + b_u + U_u h + c_u)
/// n  = tanh(W_n x + b_n + r * (U_n h + c_n))
/// h' = n + u * (h - n)
/// ```
///
/// Gate weights are stacked `[r; u; n]` so one step costs two mat-vecs.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

impl Gru {
    pub fn register(ps: &mut ParamSet, name: &str, input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_ih: ps.add(format!("{name}.w_ih"), 3 * hidden, input_dim, hidden),
            w_hh: ps.add(format!("{name}.w_hh"), 3 * hidden, hidden, hidden),
            b_ih: ps.add(format!("{name}.b_ih"), 3 * hidden, 1, hidden),
            b_hh: ps.add(format!("{name}.b_hh"), 3 * hidden, 1, hidden),
        }
    }

    pub fn step(&self, t: &mut Tape, x: Var, h: Var) -> Var {
        let n = self.hidden;
        let gi = t.linear(self.w_ih, x, Some(self.b_ih));
        let gh = t.linear(self.w_hh, h, Some(self.b_hh));
        let gi_ru = t.slice(gi, 0, 2 * n);
        let gh_ru = t.slice(gh, 0, 2 * n);
        let ru = t.add(gi_ru, gh_ru);
        let ru = t.sigmoid(ru);
        let r = t.slice(ru, 0, n);
        let u = t.slice(ru, n, n);
        let gi_n = t.slice(gi, 2 * n, n);
        let gh_n = t.slice(gh, 2 * n, n);
        let rh = t.mul(r, gh_n);
        let cand = t.add(gi_n, rh);
        let cand = t.tanh(cand);
        let diff = t.sub(h, cand);
        let keep = t.mul(u, diff);
        t.add(cand, keep)
    }

    /// Runs the cell from a zero state and returns every hidden state.
    pub fn run(&self, t: &mut Tape, inputs: &[Var]) -> Vec<Var> {
        let h0 = t.zeros(self.hidden);
        self.run_from(t, inputs, h0)
    }

    pub fn run_from(&self, t: &mut Tape, inputs: &[Var], h0: Var) -> Vec<Var> {
        let mut h = h0;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            h = self.step(t, x, h);
            out.push(h);
        }
        out
    }
}

/// Affine map `W x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn register(ps: &mut ParamSet, name: &str, input_dim: usize, output_dim: usize) -> Self {
        Self {
            w: ps.add(format!("{name}.w"), output_dim, input_dim, input_dim),
            b: ps.add(format!("{name}.b"), output_dim, 1, input_dim),
        }
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        t.linear(self.w, x, Some(self.b))
    }
}

/// One tanh hidden layer followed by a linear read-out.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Dense,
    pub out: Dense,
}

impl Mlp {
    pub fn register(ps: &mut ParamSet, name: &str, input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            hidden: Dense::register(ps, &format!("{name}.hidden"), input_dim, hidden),
            out: Dense::register(ps, &format!("{name}.out"), hidden, output_dim),
        }
    }

    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        let h = self.hidden.apply(t, x);
        let h = t.tanh(h);
        self.out.apply(t, h)
    }
}
