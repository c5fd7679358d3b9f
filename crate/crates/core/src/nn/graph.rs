//! Eager reverse-mode autodiff over 2-D `f64` matrices.
//!
//! Sequence tensors are stored batch-major as `(batch * steps) x dim`, row
//! `b * steps + t`. Scalars are `1 x 1`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use super::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

struct ConvCache {
    x: Var,
    w: Var,
    b: Var,
    steps: usize,
    kernel: usize,
    cols: Array2<f64>,
}

struct LstmCache {
    x: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    steps: usize,
    reverse: bool,
    /// Post-activation gates `[i, f, g, o]`, `N x 4H`.
    acts: Array2<f64>,
    tanh_c: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    MeanTime(Var, usize),
    TileTime(Var, usize),
    Grl(Var, f64),
    Conv1d(Box<ConvCache>),
    Lstm(Box<LstmCache>),
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Array2<f64> },
    Mae(Var, Array2<f64>),
    Mse(Var, Array2<f64>),
    WeightedSum(Vec<(Var, f64)>),
    GaussLoglik { mu: Var, logvar: Var, y: Var },
    Club { mu: Var, logvar: Var, y: Var },
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// About 3x faster than `f64::tanh`; saturates exactly beyond |x| = 20.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (2.0 * x.clamp(-20.0, 20.0)).exp_m1();
    e / (e + 2.0)
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant; gradients stop here.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A trainable parameter; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// Detached copy of an existing node.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `x + bias` with a `1 x n` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let mut value = self.value(x).clone();
        value += self.value(bias);
        let ng = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddRow(x, bias), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(tanh);
        let ng = self.needs(x);
        self.push(value, Op::Tanh(x), ng)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).mapv(|v| scale * v + shift);
        let ng = self.needs(x);
        self.push(value, Op::Affine(x, scale), ng)
    }

    /// Elementwise clamp; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).mapv(|v| v.clamp(lo, hi));
        let ng = self.needs(x);
        self.push(value, Op::Clamp(x, lo, hi), ng)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat(parts.to_vec()), ng)
    }

    /// `(B*T) x D -> B x D` mean over time.
    pub fn mean_time(&mut self, x: Var, steps: usize) -> Var {
        let xv = self.value(x);
        let batch = xv.nrows() / steps;
        let mut value = Array2::zeros((batch, xv.ncols()));
        for b in 0..batch {
            let block = xv.slice(s![b * steps..(b + 1) * steps, ..]);
            value.row_mut(b).assign(&block.mean_axis(Axis(0)).unwrap());
        }
        let ng = self.needs(x);
        self.push(value, Op::MeanTime(x, steps), ng)
    }

    /// `B x D -> (B*T) x D`, repeating each row `steps` times.
    pub fn tile_time(&mut self, x: Var, steps: usize) -> Var {
        let xv = self.value(x);
        let mut value = Array2::zeros((xv.nrows() * steps, xv.ncols()));
        for b in 0..xv.nrows() {
            for t in 0..steps {
                value.row_mut(b * steps + t).assign(&xv.row(b));
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::TileTime(x, steps), ng)
    }

    /// Gradient reversal: identity forward, `-lambda * grad` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Var {
        let value = self.value(x).clone();
        let ng = self.needs(x);
        self.push(value, Op::Grl(x, lambda), ng)
    }

    /// Same-padded 1-D convolution over time. `w` is `(kernel*C_in) x C_out`
    /// with kernel-major rows, `b` is `1 x C_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, steps: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, cin) = xv.dim();
        let kernel = wv.nrows() / cin;
        assert_eq!(kernel * cin, wv.nrows(), "conv1d: weight rows must be kernel * C_in");
        let pad = kernel / 2;
        let batch = n / steps;
        let mut cols = Array2::zeros((n, kernel * cin));
        for bi in 0..batch {
            for t in 0..steps {
                let r = bi * steps + t;
                for j in 0..kernel {
                    let src = t as isize + j as isize - pad as isize;
                    if src >= 0 && (src as usize) < steps {
                        cols.slice_mut(s![r, j * cin..(j + 1) * cin])
                            .assign(&xv.row(bi * steps + src as usize));
                    }
                }
            }
        }
        let mut value = cols.dot(wv);
        value += self.value(b);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        let cache = ConvCache { x, w, b, steps, kernel, cols };
        self.push(value, Op::Conv1d(Box::new(cache)), ng)
    }

    /// Single-direction LSTM with gates `[i, f, g, o]`. `w_ih` is `D x 4H`,
    /// `w_hh` is `H x 4H`, `b` is `1 x 4H`. Output is `(B*T) x H`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, b: Var, steps: usize, reverse: bool) -> Var {
        let mut xs = self.value(x).dot(self.value(w_ih));
        xs += self.value(b);
        let whh = self.value(w_hh);
        let h4 = whh.ncols();
        let hd = h4 / 4;
        let n = xs.nrows();
        let batch = n / steps;

        let mut out = Array2::zeros((n, hd));
        let mut acts = Array2::zeros((n, h4));
        let mut tanh_c = Array2::zeros((n, hd));
        let mut h_prev = Array2::zeros((n, hd));
        let mut c_prev = Array2::zeros((n, hd));
        let mut h = Array2::<f64>::zeros((batch, hd));
        let mut c = Array2::<f64>::zeros((batch, hd));
        let mut gates = Array2::<f64>::zeros((batch, h4));
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            for bi in 0..batch {
                gates.row_mut(bi).assign(&xs.row(bi * steps + t));
            }
            general_mat_mul(1.0, &h, whh, 1.0, &mut gates);
            for bi in 0..batch {
                let r = bi * steps + t;
                h_prev.row_mut(r).assign(&h.row(bi));
                c_prev.row_mut(r).assign(&c.row(bi));
                let g = gates.row(bi);
                let mut a = acts.row_mut(r);
                for k in 0..hd {
                    let ig = sigmoid(g[k]);
                    let fg = sigmoid(g[hd + k]);
                    let gg = tanh(g[2 * hd + k]);
                    let og = sigmoid(g[3 * hd + k]);
                    a[k] = ig;
                    a[hd + k] = fg;
                    a[2 * hd + k] = gg;
                    a[3 * hd + k] = og;
                    let cn = fg * c[[bi, k]] + ig * gg;
                    let tc = tanh(cn);
                    c[[bi, k]] = cn;
                    tanh_c[[r, k]] = tc;
                    let hn = og * tc;
                    h[[bi, k]] = hn;
                    out[[r, k]] = hn;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w_ih) || self.needs(w_hh) || self.needs(b);
        let cache = LstmCache {
            x,
            w_ih,
            w_hh,
            b,
            steps,
            reverse,
            acts,
            tanh_c,
            h_prev,
            c_prev,
        };
        self.push(out, Op::Lstm(Box::new(cache)), ng)
    }

    /// Mean softmax cross-entropy of `B x K` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        assert_eq!(probs.nrows(), labels.len(), "one label per logit row");
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &k)| probs[[i, k]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        let ng = self.needs(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Mean absolute error against a constant target.
    pub fn mae(&mut self, x: Var, target: &Array2<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), target.dim());
        let v = Zip::from(xv).and(target).fold(0.0, |acc, a, b| acc + (a - b).abs()) / xv.len() as f64;
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), v), Op::Mae(x, target.clone()), ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Array2<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), target.dim());
        let v = Zip::from(xv).and(target).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)) / xv.len() as f64;
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), v), Op::Mse(x, target.clone()), ng)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(t, w)| w * self.scalar(t)).sum::<f64>();
        let ng = terms.iter().any(|&(t, _)| self.needs(t));
        self.push(Array2::from_elem((1, 1), v), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Mean over rows of `log N(y | mu, diag(exp(logvar)))`.
    pub fn gaussian_loglik(&mut self, mu: Var, logvar: Var, y: Var) -> Var {
        let (m, lv, yv) = (self.value(mu), self.value(logvar), self.value(y));
        assert!(m.dim() == lv.dim() && m.dim() == yv.dim(), "gaussian_loglik: shape mismatch");
        let n = m.nrows() as f64;
        let total = Zip::from(m).and(lv).and(yv).fold(0.0, |acc, &m, &lv, &y| {
            acc - HALF_LN_2PI - 0.5 * lv - 0.5 * (y - m) * (y - m) * (-lv).exp()
        });
        let ng = self.needs(mu) || self.needs(logvar) || self.needs(y);
        self.push(Array2::from_elem((1, 1), total / n), Op::GaussLoglik { mu, logvar, y }, ng)
    }

    /// Sampled CLUB estimate
    /// `1/N^2 sum_i sum_j [log q(y_i|x_i) - log q(y_j|x_i)]` where `mu`,
    /// `logvar` are q's outputs at each `x_i`.
    ///
    /// Normalizing constants cancel between the two terms, and the inner sum
    /// over `j` reduces to the first two moments of `y`, so this is O(N d).
    pub fn club(&mut self, mu: Var, logvar: Var, y: Var) -> Var {
        let (m, lv, yv) = (self.value(mu), self.value(logvar), self.value(y));
        assert!(m.dim() == lv.dim() && m.dim() == yv.dim(), "club: shape mismatch");
        let n = m.nrows() as f64;
        let m1 = yv.mean_axis(Axis(0)).unwrap();
        let var = (yv - &m1).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let mut total = 0.0;
        for i in 0..m.nrows() {
            for d in 0..m.ncols() {
                let (mu_id, y_id) = (m[[i, d]], yv[[i, d]]);
                let inv = (-lv[[i, d]]).exp();
                let positive = -(y_id - mu_id) * (y_id - mu_id);
                // mean_j (y_j - mu_i)^2 written through the sample moments of y.
                let negative = (m1[d] - mu_id) * (m1[d] - mu_id) + var[d];
                total += 0.5 * inv * (positive + negative);
            }
        }
        let ng = self.needs(mu) || self.needs(logvar) || self.needs(y);
        self.push(Array2::from_elem((1, 1), total / n), Op::Club { mu, logvar, y }, ng)
    }

    /// Reverse pass from the scalar `loss`; returns gradients of every
    /// [`Graph::param`] node keyed by its [`ParamId`].
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads::new(0);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, delta: Array2<f64>| {
                if self.nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(acc) => *acc += &delta,
                        slot @ None => *slot = Some(delta),
                    }
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.needs(*bias) {
                        send(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*x, g);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*x, d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    send(*x, d);
                }
                Op::Affine(x, scale) => send(*x, g * *scale),
                Op::Clamp(x, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= *lo || v >= *hi {
                            *d = 0.0
                        }
                    });
                    send(*x, d);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            send(p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::MeanTime(x, steps) => {
                    let mut d = Array2::zeros(self.value(*x).dim());
                    let scale = 1.0 / *steps as f64;
                    for b in 0..g.nrows() {
                        let row = g.row(b).mapv(|v| v * scale);
                        for t in 0..*steps {
                            d.row_mut(b * steps + t).assign(&row);
                        }
                    }
                    send(*x, d);
                }
                Op::TileTime(x, steps) => {
                    let batch = g.nrows() / steps;
                    let mut d = Array2::zeros((batch, g.ncols()));
                    for b in 0..batch {
                        d.row_mut(b)
                            .assign(&g.slice(s![b * steps..(b + 1) * steps, ..]).sum_axis(Axis(0)));
                    }
                    send(*x, d);
                }
                Op::Grl(x, lambda) => send(*x, g * -*lambda),
                Op::Conv1d(c) => self.conv_backward(c, &g, &mut send),
                Op::Lstm(c) => self.lstm_backward(c, &g, &mut send),
                Op::SoftmaxXent { logits, labels, probs } => {
                    let scale = g[[0, 0]] / labels.len() as f64;
                    let mut d = probs.clone();
                    for (i, &k) in labels.iter().enumerate() {
                        d[[i, k]] -= 1.0;
                    }
                    send(*logits, d * scale);
                }
                Op::Mae(x, target) => {
                    let xv = self.value(*x);
                    let scale = g[[0, 0]] / xv.len() as f64;
                    let mut d = Array2::zeros(xv.dim());
                    Zip::from(&mut d).and(xv).and(target).for_each(|d, &a, &b| {
                        *d = if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            0.0
                        }
                    });
                    send(*x, d);
                }
                Op::Mse(x, target) => {
                    let xv = self.value(*x);
                    let scale = 2.0 * g[[0, 0]] / xv.len() as f64;
                    let mut d = Array2::zeros(xv.dim());
                    Zip::from(&mut d).and(xv).and(target).for_each(|d, &a, &b| *d = scale * (a - b));
                    send(*x, d);
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        send(t, Array2::from_elem((1, 1), w * g[[0, 0]]));
                    }
                }
                Op::GaussLoglik { mu, logvar, y } => {
                    let (m, lv, yv) = (self.value(*mu), self.value(*logvar), self.value(*y));
                    let scale = g[[0, 0]] / m.nrows() as f64;
                    let mut dmu = Array2::zeros(m.dim());
                    let mut dlv = Array2::zeros(m.dim());
                    Zip::from(&mut dmu).and(&mut dlv).and(m).and(lv).and(yv).for_each(
                        |dm, dl, &m, &lv, &y| {
                            let inv = (-lv).exp();
                            *dm = scale * (y - m) * inv;
                            *dl = scale * (-0.5 + 0.5 * (y - m) * (y - m) * inv);
                        },
                    );
                    if self.needs(*y) {
                        send(*y, -&dmu);
                    }
                    send(*mu, dmu);
                    send(*logvar, dlv);
                }
                Op::Club { mu, logvar, y } => self.club_backward(*mu, *logvar, *y, g[[0, 0]], &mut send),
            }
        }
        out
    }

    fn conv_backward(&self, c: &ConvCache, g: &Array2<f64>, send: &mut impl FnMut(Var, Array2<f64>)) {
        if self.needs(c.w) {
            send(c.w, c.cols.t().dot(g));
        }
        if self.needs(c.b) {
            send(c.b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        if self.needs(c.x) {
            let dcols = g.dot(&self.value(c.w).t());
            let (n, cin) = self.value(c.x).dim();
            let pad = c.kernel / 2;
            let batch = n / c.steps;
            let mut dx = Array2::zeros((n, cin));
            for bi in 0..batch {
                for t in 0..c.steps {
                    let r = bi * c.steps + t;
                    for j in 0..c.kernel {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < c.steps {
                            let mut row = dx.row_mut(bi * c.steps + src as usize);
                            row += &dcols.slice(s![r, j * cin..(j + 1) * cin]);
                        }
                    }
                }
            }
            send(c.x, dx);
        }
    }

    fn lstm_backward(&self, c: &LstmCache, g: &Array2<f64>, send: &mut impl FnMut(Var, Array2<f64>)) {
        let whh = self.value(c.w_hh);
        let h4 = whh.ncols();
        let hd = h4 / 4;
        let n = g.nrows();
        let batch = n / c.steps;
        let mut dgates = Array2::<f64>::zeros((n, h4));
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        let mut step_gates = Array2::<f64>::zeros((batch, h4));
        for step in (0..c.steps).rev() {
            let t = if c.reverse { c.steps - 1 - step } else { step };
            for bi in 0..batch {
                let r = bi * c.steps + t;
                let a = c.acts.row(r);
                for k in 0..hd {
                    let (ig, fg, gg, og) = (a[k], a[hd + k], a[2 * hd + k], a[3 * hd + k]);
                    let tc = c.tanh_c[[r, k]];
                    let dh = g[[r, k]] + dh_next[[bi, k]];
                    let d_o = dh * tc;
                    let dc = dh * og * (1.0 - tc * tc) + dc_next[[bi, k]];
                    dc_next[[bi, k]] = dc * fg;
                    let di = dc * gg;
                    let dg = dc * ig;
                    let df = dc * c.c_prev[[r, k]];
                    step_gates[[bi, k]] = di * ig * (1.0 - ig);
                    step_gates[[bi, hd + k]] = df * fg * (1.0 - fg);
                    step_gates[[bi, 2 * hd + k]] = dg * (1.0 - gg * gg);
                    step_gates[[bi, 3 * hd + k]] = d_o * og * (1.0 - og);
                }
                dgates.row_mut(r).assign(&step_gates.row(bi));
            }
            general_mat_mul(1.0, &step_gates, &whh.t(), 0.0, &mut dh_next);
        }
        if self.needs(c.w_hh) {
            send(c.w_hh, c.h_prev.t().dot(&dgates));
        }
        if self.needs(c.w_ih) {
            send(c.w_ih, self.value(c.x).t().dot(&dgates));
        }
        if self.needs(c.b) {
            send(c.b, dgates.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        if self.needs(c.x) {
            send(c.x, dgates.dot(&self.value(c.w_ih).t()));
        }
    }

    fn club_backward(&self, mu: Var, logvar: Var, y: Var, upstream: f64, send: &mut impl FnMut(Var, Array2<f64>)) {
        let (m, lv, yv) = (self.value(mu), self.value(logvar), self.value(y));
        let (rows, dims) = m.dim();
        let n = rows as f64;
        let m1 = yv.mean_axis(Axis(0)).unwrap();
        let m2 = yv.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv = lv.mapv(|v| (-v).exp());
        let scale = upstream / n;

        let mut dmu = Array2::zeros((rows, dims));
        let mut dlv = Array2::zeros((rows, dims));
        for i in 0..rows {
            for d in 0..dims {
                let (mu_id, y_id, w) = (m[[i, d]], yv[[i, d]], inv[[i, d]]);
                dmu[[i, d]] = scale * w * (y_id - m1[d]);
                let a = -(y_id - mu_id) * (y_id - mu_id) + m2[d] - 2.0 * mu_id * m1[d] + mu_id * mu_id;
                dlv[[i, d]] = -scale * 0.5 * w * a;
            }
        }
        if self.needs(y) {
            let sum_inv = inv.sum_axis(Axis(0));
            let sum_inv_mu = (&inv * m).sum_axis(Axis(0));
            let mut dy = Array2::zeros((rows, dims));
            for k in 0..rows {
                for d in 0..dims {
                    let direct = -inv[[k, d]] * (yv[[k, d]] - m[[k, d]]);
                    let through_moments = (yv[[k, d]] * sum_inv[d] - sum_inv_mu[d]) / n;
                    dy[[k, d]] = scale * (direct + through_moments);
                }
            }
            send(y, dy);
        }
        send(mu, dmu);
        send(logvar, dlv);
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}
