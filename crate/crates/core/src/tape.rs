//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Each parameter
//! enters the tape at most once, so a backward pass accumulates into each
//! parameter's gradient slot exactly once.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, sigmoid, silu, softplus, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    SumSquares(Var),
    Pick {
        x: Var,
        row: usize,
        col: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        eps: f64,
    },
    CausalConv {
        x: Var,
        w: Var,
        b: Var,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        a_log: Var,
        b: Var,
        c: Var,
        d: Var,
        /// Hidden states after each step, `T × E × S`.
        states: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BceWithLogits {
        x: Var,
        target: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; gradients flow to it but it is not a parameter.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The tape variable for a stored parameter, created on first use.
    /// Variables are cached by id, so a tape must only ever see one store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    /// Every parameter recorded on this tape, with its variable.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x · wᵀ + b` with `w` stored `out × in` and `b` a `1 × out` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut out = self.value(x).matmul_t(self.value(w))?;
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != (1, out.cols()) {
                return Err(Error::shape("affine bias", bias.shape(), (1, out.cols())));
            }
            let bias = bias.data().to_vec();
            for r in 0..out.rows() {
                for (o, bv) in out.row_mut(r).iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
        }
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(silu);
        self.push(out, Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(Error::shape(
                "slice_rows",
                m.shape(),
                (start + len, m.cols()),
            ));
        }
        let out = Matrix::from_vec(
            len,
            m.cols(),
            m.data()[start * m.cols()..(start + len) * m.cols()].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.cols() {
            return Err(Error::shape(
                "slice_cols",
                m.shape(),
                (m.rows(), start + len),
            ));
        }
        let mut data = Vec::with_capacity(m.rows() * len);
        for r in 0..m.rows() {
            data.extend_from_slice(&m.row(r)[start..start + len]);
        }
        let out = Matrix::from_vec(m.rows(), len, data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::Domain("concat_rows of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::shape("concat_rows", (rows, cols), m.shape()));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Domain("concat_cols of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::shape("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean over rows, producing a `1 × cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let out = Matrix::row_vector(self.value(x).column_means());
        self.push(out, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Matrix::row_vector(vec![self.value(x).sum()]);
        self.push(out, Op::SumAll(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = Matrix::row_vector(vec![self.value(x).sum_squares()]);
        self.push(out, Op::SumSquares(x))
    }

    pub fn pick(&mut self, x: Var, row: usize, col: usize) -> Result<Var> {
        let m = self.value(x);
        if row >= m.rows() || col >= m.cols() {
            return Err(Error::shape("pick", m.shape(), (row, col)));
        }
        let out = Matrix::row_vector(vec![m.get(row, col)]);
        Ok(self.push(out, Op::Pick { x, row, col }))
    }

    /// Row-wise layer normalization (population variance) with affine gain
    /// and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = self.shape(x).1;
        if self.shape(gain) != (1, cols) || self.shape(bias) != (1, cols) {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let m = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = Matrix::zeros(m.rows(), cols);
        for r in 0..m.rows() {
            let row = crate::tensor::layer_norm(m.row(r), g, b, eps)?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let cols = self.shape(x).1;
        if self.shape(gain) != (1, cols) {
            return Err(Error::shape("rms_norm", self.shape(x), self.shape(gain)));
        }
        let m = self.value(x);
        let g = self.value(gain).data();
        let mut out = Matrix::zeros(m.rows(), cols);
        for r in 0..m.rows() {
            let row = crate::tensor::rms_norm(m.row(r), g, eps)?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(self.push(out, Op::RmsNorm { x, gain, eps }))
    }

    /// Depthwise causal convolution over time. `x` is `T × C`, `w` is
    /// `C × K`, `b` is `1 × C`; step `t` sees inputs `t-K+1 ..= t`, with zero
    /// left padding.
    pub fn causal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (t_len, ch) = self.shape(x);
        let (wc, k) = self.shape(w);
        if wc != ch || self.shape(b) != (1, ch) {
            return Err(Error::shape("causal_conv", (t_len, ch), (wc, k)));
        }
        let xm = self.value(x);
        let wm = self.value(w);
        let bm = self.value(b);
        let mut out = Matrix::zeros(t_len, ch);
        for t in 0..t_len {
            for c in 0..ch {
                let mut acc = bm.data()[c];
                for j in 0..k {
                    // tap j reads x[t + j - (k - 1)]
                    if t + j + 1 >= k {
                        acc += wm.get(c, j) * xm.get(t + j + 1 - k, c);
                    }
                }
                out.set(t, c, acc);
            }
        }
        Ok(self.push(out, Op::CausalConv { x, w, b }))
    }

    /// Selective state-space scan with a diagonal state matrix
    /// `A = -exp(a_log)` and zero-order-hold style discretization:
    ///
    /// `h_t = exp(Δ_t ⊙ A) ⊙ h_{t-1} + (Δ_t ⊙ B_t) u_t`,
    /// `y_t = ⟨h_t, C_t⟩ + D ⊙ u_t`.
    ///
    /// Shapes: `u, delta: T × E`, `a_log: E × S`, `b, c: T × S`, `d: 1 × E`.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a_log: Var,
        b: Var,
        c: Var,
        d: Var,
    ) -> Result<Var> {
        let (t_len, e) = self.shape(u);
        let s = self.shape(a_log).1;
        if self.shape(delta) != (t_len, e)
            || self.shape(a_log).0 != e
            || self.shape(b) != (t_len, s)
            || self.shape(c) != (t_len, s)
            || self.shape(d) != (1, e)
        {
            return Err(Error::shape(
                "selective_scan",
                (t_len, e),
                self.shape(a_log),
            ));
        }
        let um = self.value(u);
        let dm = self.value(delta);
        let am: Vec<f64> = self.value(a_log).data().iter().map(|v| -v.exp()).collect();
        let bm = self.value(b);
        let cm = self.value(c);
        let skip = self.value(d).data();
        let mut states = vec![0.0; t_len * e * s];
        let mut out = Matrix::zeros(t_len, e);
        let mut h = vec![0.0; e * s];
        for t in 0..t_len {
            let b_t = bm.row(t);
            let c_t = cm.row(t);
            for ch in 0..e {
                let dt = dm.get(t, ch);
                let ut = um.get(t, ch);
                let hrow = &mut h[ch * s..(ch + 1) * s];
                let arow = &am[ch * s..(ch + 1) * s];
                let mut y = skip[ch] * ut;
                for k in 0..s {
                    hrow[k] = (dt * arow[k]).exp() * hrow[k] + dt * b_t[k] * ut;
                    y += hrow[k] * c_t[k];
                }
                out.set(t, ch, y);
            }
            states[t * e * s..(t + 1) * e * s].copy_from_slice(&h);
        }
        Ok(self.push(
            out,
            Op::SelectiveScan {
                u,
                delta,
                a_log,
                b,
                c,
                d,
                states,
            },
        ))
    }

    /// Inverted dropout. With `rng == None` (inference) this is the identity
    /// and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let m = self.value(x);
        let data = m.data().iter().zip(&mask).map(|(v, k)| v * k).collect();
        let out = Matrix::from_vec(m.rows(), m.cols(), data).expect("same shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Binary cross-entropy on a `1 × 1` logit, in log-sum-exp form.
    pub fn bce_with_logits(&mut self, x: Var, target: f64) -> Result<Var> {
        if self.shape(x) != (1, 1) {
            return Err(Error::shape("bce_with_logits", self.shape(x), (1, 1)));
        }
        let out = Matrix::row_vector(vec![bce_with_logits(self.scalar(x), target)]);
        Ok(self.push(out, Op::BceWithLogits { x, target }))
    }

    /// Reverse-mode pass from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::shape("backward root", self.shape(root), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(val(*b))?;
                let gb = val(*a).t_matmul(g)?;
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Affine { x, w, b } => {
                let gx = g.matmul(val(*w))?;
                let gw = g.t_matmul(val(*x))?;
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                if let Some(b) = b {
                    accumulate(grads, *b, Matrix::row_vector(column_sums(g)));
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |gv, bv| gv * bv));
                accumulate(grads, *b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::Sigmoid(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)),
                );
            }
            Op::Tanh(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y)),
                );
            }
            Op::Silu(a) => {
                let d = val(*a).map(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                accumulate(grads, *a, g.zip_map(&d, |gv, dv| gv * dv));
            }
            Op::Softplus(a) => {
                accumulate(grads, *a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x)));
            }
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::SliceRows { x, start } => {
                let src = val(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                let off = start * src.cols();
                gx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, gx);
            }
            Op::SliceCols { x, start } => {
                let src = val(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let part =
                        Matrix::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())?;
                    accumulate(grads, p, part);
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let mut part = Matrix::zeros(r, c);
                    for row in 0..r {
                        part.row_mut(row)
                            .copy_from_slice(&g.row(row)[offset..offset + c]);
                    }
                    accumulate(grads, p, part);
                    offset += c;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = val(*x).shape();
                let mut gx = Matrix::zeros(r, c);
                let inv = 1.0 / r as f64;
                for row in 0..r {
                    for (o, gv) in gx.row_mut(row).iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(r, c, g.data()[0]));
            }
            Op::SumSquares(x) => {
                let s = 2.0 * g.data()[0];
                accumulate(grads, *x, val(*x).scale(s));
            }
            Op::Pick { x, row, col } => {
                let (r, c) = val(*x).shape();
                let mut gx = Matrix::zeros(r, c);
                gx.set(*row, *col, g.data()[0]);
                accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (gx, gg, gb) = layer_norm_backward(val(*x), val(*gain), g, *eps);
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, gg);
                accumulate(grads, *bias, gb);
            }
            Op::RmsNorm { x, gain, eps } => {
                let (gx, gg) = rms_norm_backward(val(*x), val(*gain), g, *eps);
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, gg);
            }
            Op::CausalConv { x, w, b } => {
                let xm = val(*x);
                let wm = val(*w);
                let (t_len, ch) = xm.shape();
                let k = wm.cols();
                let mut gx = Matrix::zeros(t_len, ch);
                let mut gw = Matrix::zeros(ch, k);
                let gb = column_sums(g);
                for t in 0..t_len {
                    for c in 0..ch {
                        let gv = g.get(t, c);
                        for j in 0..k {
                            if t + j + 1 >= k {
                                let src = t + j + 1 - k;
                                gx.data_mut()[src * ch + c] += gv * wm.get(c, j);
                                gw.data_mut()[c * k + j] += gv * xm.get(src, c);
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                accumulate(grads, *b, Matrix::row_vector(gb));
            }
            Op::SelectiveScan {
                u,
                delta,
                a_log,
                b,
                c,
                d,
                states,
            } => {
                let parts = scan_backward(
                    val(*u),
                    val(*delta),
                    val(*a_log),
                    val(*b),
                    val(*c),
                    val(*d),
                    states,
                    g,
                );
                accumulate(grads, *u, parts.u);
                accumulate(grads, *delta, parts.delta);
                accumulate(grads, *a_log, parts.a_log);
                accumulate(grads, *b, parts.b);
                accumulate(grads, *c, parts.c);
                accumulate(grads, *d, parts.d);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                accumulate(grads, *x, Matrix::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::BceWithLogits { x, target } => {
                let p = sigmoid(val(*x).data()[0]);
                accumulate(
                    grads,
                    *x,
                    Matrix::row_vector(vec![g.data()[0] * (p - target)]),
                );
            }
        }
        Ok(())
    }
}

/// Numerically stable `BCEWithLogits(x, y) = max(x,0) - x·y + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

fn layer_norm_backward(
    x: &Matrix,
    gain: &Matrix,
    g: &Matrix,
    eps: f64,
) -> (Matrix, Matrix, Matrix) {
    let (rows, cols) = x.shape();
    let n = cols as f64;
    let mut gx = Matrix::zeros(rows, cols);
    let mut gg = vec![0.0; cols];
    let mut gb = vec![0.0; cols];
    let mut xhat = vec![0.0; cols];
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let gy = g.row(r);
        for j in 0..cols {
            xhat[j] = (row[j] - mean) * inv;
            gg[j] += gy[j] * xhat[j];
            gb[j] += gy[j];
            dxhat[j] = gy[j] * gain.data()[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dot(&dxhat, &xhat) / n;
        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (gx, Matrix::row_vector(gg), Matrix::row_vector(gb))
}

fn rms_norm_backward(x: &Matrix, gain: &Matrix, g: &Matrix, eps: f64) -> (Matrix, Matrix) {
    let (rows, cols) = x.shape();
    let n = cols as f64;
    let mut gx = Matrix::zeros(rows, cols);
    let mut gg = vec![0.0; cols];
    for r in 0..rows {
        let row = x.row(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / n;
        let inv = 1.0 / (ms + eps).sqrt();
        let gy = g.row(r);
        let mut proj = 0.0;
        for j in 0..cols {
            gg[j] += gy[j] * row[j] * inv;
            proj += gy[j] * gain.data()[j] * row[j];
        }
        let k = inv * inv * inv * proj / n;
        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
            *o = inv * gy[j] * gain.data()[j] - row[j] * k;
        }
    }
    (gx, Matrix::row_vector(gg))
}

struct ScanGrads {
    u: Matrix,
    delta: Matrix,
    a_log: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
}

#[allow(clippy::too_many_arguments)]
fn scan_backward(
    u: &Matrix,
    delta: &Matrix,
    a_log: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    states: &[f64],
    g: &Matrix,
) -> ScanGrads {
    let (t_len, e) = u.shape();
    let s = a_log.cols();
    let a: Vec<f64> = a_log.data().iter().map(|v| -v.exp()).collect();
    let mut gu = Matrix::zeros(t_len, e);
    let mut gdelta = Matrix::zeros(t_len, e);
    let mut ga = vec![0.0; e * s];
    let mut gb = Matrix::zeros(t_len, s);
    let mut gc = Matrix::zeros(t_len, s);
    let mut gd = vec![0.0; e];
    // running dL/dh_t, carried backwards through time
    let mut dh = vec![0.0; e * s];
    let zero = vec![0.0; e * s];
    for t in (0..t_len).rev() {
        let h_t = &states[t * e * s..(t + 1) * e * s];
        let h_prev = if t == 0 {
            &zero[..]
        } else {
            &states[(t - 1) * e * s..t * e * s]
        };
        let b_t = b.row(t);
        let c_t = c.row(t);
        for ch in 0..e {
            let gy = g.get(t, ch);
            let ut = u.get(t, ch);
            let dt = delta.get(t, ch);
            gd[ch] += gy * ut;
            let mut gu_acc = gy * d.data()[ch];
            let mut gdt_acc = 0.0;
            for k in 0..s {
                let idx = ch * s + k;
                gc.data_mut()[t * s + k] += gy * h_t[idx];
                let dhk = dh[idx] + gy * c_t[k];
                let abar = (dt * a[idx]).exp();
                gdt_acc += dhk * (a[idx] * abar * h_prev[idx] + b_t[k] * ut);
                ga[idx] += dhk * dt * abar * h_prev[idx];
                gb.data_mut()[t * s + k] += dhk * dt * ut;
                gu_acc += dhk * dt * b_t[k];
                dh[idx] = dhk * abar;
            }
            gu.set(t, ch, gu_acc);
            gdelta.set(t, ch, gdt_acc);
        }
    }
    // A = -exp(a_log) so dA/da_log = A
    let ga_log: Vec<f64> = ga.iter().zip(&a).map(|(g, a)| g * a).collect();
    ScanGrads {
        u: gu,
        delta: gdelta,
        a_log: Matrix::from_vec(e, s, ga_log).expect("shape"),
        b: gb,
        c: gc,
        d: Matrix::row_vector(gd),
    }
}

/// Result of a backward pass: one optional gradient per tape variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds each recorded parameter's gradient into its slot in `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (id, v) in tape.params() {
            if let Some(g) = self.wrt(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
