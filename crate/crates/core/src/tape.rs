//! Reverse-mode automatic differentiation over small dense vectors.
//!
//! A [`Tape`] records vector-valued operations during the forward pass; values
//! live in one arena so every node is an `(offset, len)` view. Parameters are
//! read from a borrowed [`ParamSet`] and never copied onto the tape; their
//! gradients are accumulated into a flat buffer with the same layout.

use crate::params::{ParamId, ParamSet};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    /// `W x (+ b)` with `W` stored row-major.
    Linear {
        w: ParamId,
        x: Var,
        b: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    /// Scalar node times vector node.
    ScaleBy(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    /// Log-Cholesky `(ln l11, l21, ln l22)` to covariance `(s11, s12, s22)`.
    CholCov(Var, f64),
    /// Bivariate normal log-density of `target` under `(mean, cov)`.
    GaussLogPdf {
        mean: Var,
        cov: Var,
        target: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    vals: Vec<f64>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<f64>,
    offsets: Vec<(usize, usize)>,
    /// Flat gradient with the layout of the tape's [`ParamSet`].
    pub params: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &[f64] {
        let (off, len) = self.offsets[v.0];
        &self.nodes[off..off + len]
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            vals: Vec::with_capacity(16 * 1024),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        &self.vals[n.off..n.off + n.len]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let s = self.value(v);
        debug_assert_eq!(s.len(), 1);
        s[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].len
    }

    fn push(&mut self, op: Op, values: impl IntoIterator<Item = f64>) -> Var {
        let off = self.vals.len();
        self.vals.extend(values);
        let len = self.vals.len() - off;
        self.nodes.push(Node { op, off, len });
        Var(self.nodes.len() - 1)
    }

    fn push_map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let n = &self.nodes[a.0];
        let (off, len) = (n.off, n.len);
        let out = self.vals.len();
        self.vals.reserve(len);
        for i in 0..len {
            let y = f(self.vals[off + i]);
            self.vals.push(y);
        }
        self.nodes.push(Node { op, off: out, len });
        Var(self.nodes.len() - 1)
    }

    fn push_zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!(na.len, nb.len, "shape mismatch in elementwise op");
        let (oa, ob, len) = (na.off, nb.off, na.len);
        let out = self.vals.len();
        self.vals.reserve(len);
        for i in 0..len {
            let y = f(self.vals[oa + i], self.vals[ob + i]);
            self.vals.push(y);
        }
        self.nodes.push(Node { op, off: out, len });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, values: &[f64]) -> Var {
        self.push(Op::Input, values.iter().copied())
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Input, std::iter::repeat_n(0.0, len))
    }

    /// A whole parameter array as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params;
        self.push(Op::Param(id), p.get(id).iter().copied())
    }

    pub fn linear(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Var {
        let p = self.params;
        let e = p.entry(w);
        let (rows, cols) = (e.rows, e.cols);
        let n = &self.nodes[x.0];
        assert_eq!(n.len, cols, "linear: `{}` expects {cols} inputs, got {}", e.name, n.len);
        let xo = n.off;
        let wv = p.get(w);
        let bv = b.map(|b| p.get(b));
        let out = self.vals.len();
        self.vals.reserve(rows);
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = bv.map_or(0.0, |b| b[r]);
            for (wi, xi) in row.iter().zip(&self.vals[xo..xo + cols]) {
                acc += wi * xi;
            }
            self.vals.push(acc);
        }
        self.nodes.push(Node {
            op: Op::Linear { w, x, b },
            off: out,
            len: rows,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push_zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push_zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push_zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push_map(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.push_map(Op::Offset(a), a, |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push_map(Op::Tanh(a), a, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push_map(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push_map(Op::Exp(a), a, f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.push_map(Op::Ln(a), a, f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push_map(Op::Sqrt(a), a, f64::sqrt)
    }

    /// `max(a, lo)`; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.push_map(Op::ClampMin(a, lo), a, |x| x.max(lo))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = self.vals.len();
        for p in parts {
            let n = &self.nodes[p.0];
            let (o, l) = (n.off, n.len);
            self.vals.extend_from_within(o..o + l);
        }
        let len = self.vals.len() - out;
        self.nodes.push(Node {
            op: Op::Concat(parts.to_vec()),
            off: out,
            len,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let n = &self.nodes[a.0];
        assert!(start + len <= n.len, "slice out of range");
        let o = n.off + start;
        let out = self.vals.len();
        self.vals.extend_from_within(o..o + len);
        self.nodes.push(Node {
            op: Op::Slice(a, start),
            off: out,
            len,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push(Op::Sum(a), [s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn scale_by(&mut self, s: Var, v: Var) -> Var {
        let c = self.scalar(s);
        
        self.push_map(Op::ScaleBy(s, v), v, |x| c * x)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let y = softmax(self.value(a));
        self.push(Op::Softmax(a), y)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let y = log_softmax(self.value(a));
        self.push(Op::LogSoftmax(a), y)
    }

    /// Covariance `L L^T` from log-Cholesky parameters; each diagonal entry
    /// of `L` is floored at `floor`.
    pub fn chol_cov(&mut self, l: Var, floor: f64) -> Var {
        let c = chol_to_cov(self.value(l), floor);
        self.push(Op::CholCov(l, floor.ln()), c)
    }

    pub fn gauss_log_pdf(&mut self, mean: Var, cov: Var, target: Var) -> Var {
        let (m, c, t) = (self.value(mean), self.value(cov), self.value(target));
        let lp = gauss_log_pdf([m[0], m[1]], [c[0], c[1], c[2]], [t[0], t[1]]);
        self.push(Op::GaussLogPdf { mean, cov, target }, [lp])
    }

    /// Back-propagates from scalar `root`, seeding `d root = 1`.
    pub fn backward(&self, root: Var) -> Gradients {
        self.backward_seeded(root, &[1.0])
    }

    pub fn backward_seeded(&self, root: Var, seed: &[f64]) -> Gradients {
        let mut g = vec![0.0; self.vals.len()];
        let mut gp = vec![0.0; self.params.len()];
        let rn = &self.nodes[root.0];
        assert_eq!(rn.len, seed.len());
        g[rn.off..rn.off + rn.len].copy_from_slice(seed);
        let vals = &self.vals;
        for node in self.nodes[..=root.0].iter().rev() {
            // Inputs always sit at lower offsets than their outputs.
            let (lo, hi) = g.split_at_mut(node.off);
            let go = &hi[..node.len];
            if go.iter().all(|x| *x == 0.0) {
                continue;
            }
            let y = &vals[node.off..node.off + node.len];
            let at = |v: &Var| {
                let n = &self.nodes[v.0];
                (n.off, n.len)
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let o = self.params.entry(*id).offset;
                    for (i, gi) in go.iter().enumerate() {
                        gp[o + i] += gi;
                    }
                }
                Op::Linear { w, x, b } => {
                    let e = self.params.entry(*w);
                    let (rows, cols, wo) = (e.rows, e.cols, e.offset);
                    let wv = self.params.get(*w);
                    let (xo, _) = at(x);
                    let xv = &vals[xo..xo + cols];
                    for r in 0..rows {
                        let gr = go[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = &wv[r * cols..(r + 1) * cols];
                        let gx = &mut lo[xo..xo + cols];
                        for c in 0..cols {
                            gx[c] += row[c] * gr;
                        }
                        let gw = &mut gp[wo + r * cols..wo + (r + 1) * cols];
                        for c in 0..cols {
                            gw[c] += gr * xv[c];
                        }
                    }
                    if let Some(b) = b {
                        let bo = self.params.entry(*b).offset;
                        for (r, gr) in go.iter().enumerate() {
                            gp[bo + r] += gr;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (ao, _) = at(a);
                    let (bo, _) = at(b);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi;
                    }
                    for (i, gi) in go.iter().enumerate() {
                        lo[bo + i] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = at(a);
                    let (bo, _) = at(b);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi;
                    }
                    for (i, gi) in go.iter().enumerate() {
                        lo[bo + i] -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = at(a);
                    let (bo, _) = at(b);
                    for (i, gi) in go.iter().enumerate() {
                        let (av, bv) = (vals[ao + i], vals[bo + i]);
                        lo[ao + i] += gi * bv;
                        lo[bo + i] += gi * av;
                    }
                }
                Op::Scale(a, c) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += c * gi;
                    }
                }
                Op::Offset(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi;
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Exp(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi * y[i];
                    }
                }
                Op::Ln(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi / vals[ao + i];
                    }
                }
                Op::Sqrt(a) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi * 0.5 / y[i];
                    }
                }
                Op::ClampMin(a, floor) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        if vals[ao + i] > *floor {
                            lo[ao + i] += gi;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut k = 0;
                    for p in parts {
                        let (po, pl) = at(p);
                        for i in 0..pl {
                            lo[po + i] += go[k + i];
                        }
                        k += pl;
                    }
                }
                Op::Slice(a, start) => {
                    let (ao, _) = at(a);
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + start + i] += gi;
                    }
                }
                Op::Sum(a) => {
                    let (ao, al) = at(a);
                    for i in 0..al {
                        lo[ao + i] += go[0];
                    }
                }
                Op::ScaleBy(s, v) => {
                    let (so, _) = at(s);
                    let (vo, _) = at(v);
                    let c = vals[so];
                    let mut gs = 0.0;
                    for (i, gi) in go.iter().enumerate() {
                        gs += gi * vals[vo + i];
                        lo[vo + i] += c * gi;
                    }
                    lo[so] += gs;
                }
                Op::Softmax(a) => {
                    let (ao, _) = at(a);
                    let gy: f64 = go.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += y[i] * (gi - gy);
                    }
                }
                Op::LogSoftmax(a) => {
                    let (ao, _) = at(a);
                    let total: f64 = go.iter().sum();
                    for (i, gi) in go.iter().enumerate() {
                        lo[ao + i] += gi - y[i].exp() * total;
                    }
                }
                Op::CholCov(l, ln_floor) => {
                    let (lo_off, _) = at(l);
                    let (l1, o, l2) = (vals[lo_off], vals[lo_off + 1], vals[lo_off + 2]);
                    let d1 = l1.max(*ln_floor).exp();
                    let d2 = l2.max(*ln_floor).exp();
                    let (ga, gb, gc) = (go[0], go[1], go[2]);
                    if l1 > *ln_floor {
                        lo[lo_off] += ga * 2.0 * d1 * d1 + gb * d1 * o;
                    }
                    lo[lo_off + 1] += gb * d1 + gc * 2.0 * o;
                    if l2 > *ln_floor {
                        lo[lo_off + 2] += gc * 2.0 * d2 * d2;
                    }
                }
                Op::GaussLogPdf { mean, cov, target } => {
                    let (mo, _) = at(mean);
                    let (co, _) = at(cov);
                    let (to, _) = at(target);
                    let (a, b, c) = (vals[co], vals[co + 1], vals[co + 2]);
                    let det = a * c - b * b;
                    let (p11, p12, p22) = (c / det, -b / det, a / det);
                    let d0 = vals[to] - vals[mo];
                    let d1 = vals[to + 1] - vals[mo + 1];
                    let u0 = p11 * d0 + p12 * d1;
                    let u1 = p12 * d0 + p22 * d1;
                    let gi = go[0];
                    lo[mo] += gi * u0;
                    lo[mo + 1] += gi * u1;
                    lo[to] -= gi * u0;
                    lo[to + 1] -= gi * u1;
                    lo[co] += gi * 0.5 * (u0 * u0 - p11);
                    lo[co + 1] += gi * (u0 * u1 - p12);
                    lo[co + 2] += gi * 0.5 * (u1 * u1 - p22);
                }
            }
        }
        let offsets = self.nodes.iter().map(|n| (n.off, n.len)).collect();
        Gradients {
            nodes: g,
            offsets,
            params: gp,
        }
    }
}

/// `max(a + d, lo) - max(a, lo)`, exact when neither or both sides clamp.
fn clamp_delta(a: f64, d: f64, lo: f64) -> f64 {
    match (a > lo, a + d > lo) {
        (true, true) => d,
        (false, false) => 0.0,
        _ => (a + d).max(lo) - a.max(lo),
    }
}

impl Tape<'_> {
    /// `f(theta + h e_i) - f(theta)` for scalar `root`, where `e_i` is the
    /// unit vector of flat parameter `index`.
    ///
    /// The recorded graph is replayed propagating value differences with
    /// cancellation-free identities (`expm1`, `ln_1p`, product rules), so the
    /// result carries rounding error relative to the difference rather than
    /// to `f`.
    pub fn perturbation_delta(&self, root: Var, index: usize, h: f64) -> f64 {
        let (pid, k) = self
            .params
            .entries()
            .iter()
            .enumerate()
            .find(|(_, e)| index >= e.offset && index < e.offset + e.len())
            .map(|(i, e)| (ParamId(i), index - e.offset))
            .expect("flat index inside the parameter set");
        let mut dv = vec![0.0; self.vals.len()];
        let mut touched = vec![false; root.0 + 1];
        let vals = &self.vals;
        for (ni, node) in self.nodes[..=root.0].iter().enumerate() {
            let at = |v: &Var| (self.nodes[v.0].off, self.nodes[v.0].len);
            let t = |v: &Var| touched[v.0];
            let (lo, hi) = dv.split_at_mut(node.off);
            let out = &mut hi[..node.len];
            let y = &vals[node.off..node.off + node.len];
            let active = match &node.op {
                Op::Input => false,
                Op::Param(id) => {
                    if *id == pid {
                        out[k] = h;
                    }
                    *id == pid
                }
                Op::Linear { w, x, b } => {
                    let wp = *w == pid;
                    let bp = b.is_some_and(|b| b == pid);
                    if !(t(x) || wp || bp) {
                        false
                    } else {
                        let e = self.params.entry(*w);
                        let cols = e.cols;
                        let wv = self.params.get(*w);
                        let (xo, _) = at(x);
                        let dx = &lo[xo..xo + cols];
                        if t(x) {
                            for (r, o) in out.iter_mut().enumerate() {
                                *o = wv[r * cols..(r + 1) * cols].iter().zip(dx).map(|(a, b)| a * b).sum();
                            }
                        }
                        if wp {
                            let (r, c) = (k / cols, k % cols);
                            out[r] += h * (vals[xo + c] + dx[c]);
                        }
                        if bp {
                            out[k] += h;
                        }
                        true
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    if !(t(a) || t(b)) {
                        false
                    } else {
                        let ((ao, _), (bo, _)) = (at(a), at(b));
                        for i in 0..node.len {
                            let (da, db) = (lo[ao + i], lo[bo + i]);
                            out[i] = match node.op {
                                Op::Add(..) => da + db,
                                Op::Sub(..) => da - db,
                                _ => vals[ao + i] * db + da * vals[bo + i] + da * db,
                            };
                        }
                        true
                    }
                }
                Op::ScaleBy(s, v) => {
                    if !(t(s) || t(v)) {
                        false
                    } else {
                        let ((so, _), (vo, _)) = (at(s), at(v));
                        let (c, dc) = (vals[so], lo[so]);
                        for i in 0..node.len {
                            let dvi = lo[vo + i];
                            out[i] = c * dvi + dc * vals[vo + i] + dc * dvi;
                        }
                        true
                    }
                }
                Op::Scale(a, _)
                | Op::Offset(a)
                | Op::Tanh(a)
                | Op::Sigmoid(a)
                | Op::Exp(a)
                | Op::Ln(a)
                | Op::Sqrt(a)
                | Op::ClampMin(a, _) => {
                    if !t(a) {
                        false
                    } else {
                        let (ao, _) = at(a);
                        for i in 0..node.len {
                            let (x, d) = (vals[ao + i], lo[ao + i]);
                            out[i] = match node.op {
                                Op::Scale(_, c) => c * d,
                                Op::Offset(_) => d,
                                Op::Tanh(_) => d.tanh() * (1.0 - y[i] * (x + d).tanh()),
                                Op::Sigmoid(_) => 0.5 * (0.5 * d).tanh() * (1.0 - (0.5 * x).tanh() * (0.5 * (x + d)).tanh()),
                                Op::Exp(_) => y[i] * d.exp_m1(),
                                Op::Ln(_) => (d / x).ln_1p(),
                                Op::Sqrt(_) => {
                                    let s = (x + d).sqrt() + y[i];
                                    if s == 0.0 { 0.0 } else { d / s }
                                }
                                Op::ClampMin(_, f) => clamp_delta(x, d, f),
                                _ => unreachable!(),
                            };
                        }
                        true
                    }
                }
                Op::Concat(parts) => {
                    if !parts.iter().any(&t) {
                        false
                    } else {
                        let mut j = 0;
                        for p in parts {
                            let (po, pl) = at(p);
                            out[j..j + pl].copy_from_slice(&lo[po..po + pl]);
                            j += pl;
                        }
                        true
                    }
                }
                Op::Slice(a, start) => {
                    if !t(a) {
                        false
                    } else {
                        let (ao, _) = at(a);
                        out.copy_from_slice(&lo[ao + start..ao + start + node.len]);
                        true
                    }
                }
                Op::Sum(a) => {
                    if !t(a) {
                        false
                    } else {
                        let (ao, al) = at(a);
                        out[0] = lo[ao..ao + al].iter().sum();
                        true
                    }
                }
                Op::Softmax(a) | Op::LogSoftmax(a) => {
                    if !t(a) {
                        false
                    } else {
                        let (ao, al) = at(a);
                        let da = &lo[ao..ao + al];
                        let probs: Vec<f64> = match node.op {
                            Op::Softmax(_) => y.to_vec(),
                            _ => y.iter().map(|v| v.exp()).collect(),
                        };
                        let dlse = probs.iter().zip(da).map(|(p, d)| p * d.exp_m1()).sum::<f64>().ln_1p();
                        for i in 0..al {
                            out[i] = match node.op {
                                Op::Softmax(_) => y[i] * (da[i] - dlse).exp_m1(),
                                _ => da[i] - dlse,
                            };
                        }
                        true
                    }
                }
                Op::CholCov(l, lnf) => {
                    if !t(l) {
                        false
                    } else {
                        let (lo_off, _) = at(l);
                        let (l1, o, l2) = (vals[lo_off], vals[lo_off + 1], vals[lo_off + 2]);
                        let (d1, dd, d2) = (lo[lo_off], lo[lo_off + 1], lo[lo_off + 2]);
                        let a1 = l1.max(*lnf).exp();
                        let a2 = l2.max(*lnf).exp();
                        let exp_delta = |x: f64, d: f64, base: f64| {
                            if x > *lnf && x + d > *lnf {
                                base * d.exp_m1()
                            } else {
                                (x + d).max(*lnf).exp() - base
                            }
                        };
                        let da1 = exp_delta(l1, d1, a1);
                        let da2 = exp_delta(l2, d2, a2);
                        out[0] = da1 * (2.0 * a1 + da1);
                        out[1] = a1 * dd + da1 * o + da1 * dd;
                        out[2] = dd * (2.0 * o + dd) + da2 * (2.0 * a2 + da2);
                        true
                    }
                }
                Op::GaussLogPdf { mean, cov, target } => {
                    if !(t(mean) || t(cov) || t(target)) {
                        false
                    } else {
                        let ((mo, _), (co, _), (to, _)) = (at(mean), at(cov), at(target));
                        let (a, b, c) = (vals[co], vals[co + 1], vals[co + 2]);
                        let (da, db, dc) = (lo[co], lo[co + 1], lo[co + 2]);
                        let d0 = vals[to] - vals[mo];
                        let d1 = vals[to + 1] - vals[mo + 1];
                        let e0 = lo[to] - lo[mo];
                        let e1 = lo[to + 1] - lo[mo + 1];
                        let (n0, n1) = (d0 + e0, d1 + e1);
                        let det = a * c - b * b;
                        let ddet = a * dc + da * c + da * dc - db * (2.0 * b + db);
                        let quad = c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1;
                        let dquad = dc * n0 * n0 + c * e0 * (2.0 * d0 + e0)
                            - 2.0 * (db * n0 * n1 + b * (e0 * d1 + d0 * e1 + e0 * e1))
                            + da * n1 * n1
                            + a * e1 * (2.0 * d1 + e1);
                        let dq = (dquad * det - quad * ddet) / (det * (det + ddet));
                        out[0] = -0.5 * (ddet / det).ln_1p() - 0.5 * dq;
                        true
                    }
                }
            };
            touched[ni] = active;
        }
        if touched[root.0] {
            dv[self.nodes[root.0].off]
        } else {
            0.0
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

pub fn chol_to_cov(l: &[f64], floor: f64) -> [f64; 3] {
    let ln_floor = floor.ln();
    let d1 = l[0].max(ln_floor).exp();
    let d2 = l[2].max(ln_floor).exp();
    let o = l[1];
    [d1 * d1, d1 * o, o * o + d2 * d2]
}

/// Exact bivariate normal log-density; `cov = (s11, s12, s22)`.
pub fn gauss_log_pdf(mean: [f64; 2], cov: [f64; 3], x: [f64; 2]) -> f64 {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    let d0 = x[0] - mean[0];
    let d1 = x[1] - mean[1];
    let quad = (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det;
    -LN_2PI - 0.5 * det.ln() - 0.5 * quad
}
