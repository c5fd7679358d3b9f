//! Parameterized building blocks. Layers hold only [`ParamId`]s; values live
//! in a [`ParamStore`] and are bound into a [`Graph`] per forward pass.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamGroup, ParamId, ParamStore};

/// How a forward pass binds parameter values.
#[derive(Clone, Copy)]
pub struct Bind<'a> {
    pub store: &'a ParamStore,
    /// `false` inserts parameters as constants (no gradient).
    pub trainable: bool,
}

impl<'a> Bind<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, trainable: false }
    }

    pub fn var(&self, g: &mut Graph, id: ParamId) -> Var {
        if self.trainable {
            g.param(self.store, id)
        } else {
            g.input(self.store.get(id).clone())
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            w: store.add_uniform(format!("{name}.w"), group, (d_in, d_out), bound, rng),
            b: store.add_uniform(format!("{name}.b"), group, (1, d_out), bound, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> Var {
        let w = p.var(g, self.w);
        let b = p.var(g, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self {
            w: store.add_uniform(format!("{name}.w"), group, (kernel * c_in, c_out), bound, rng),
            b: store.add_uniform(format!("{name}.b"), group, (1, c_out), bound, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var, steps: usize) -> Var {
        let w = p.var(g, self.w);
        let b = p.var(g, self.b);
        g.conv1d(x, w, b, steps)
    }
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_uniform(format!("{name}.w_ih"), group, (d_in, 4 * hidden), bound, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), group, (hidden, 4 * hidden), bound, rng);
        let b = store.add_uniform(format!("{name}.b"), group, (1, 4 * hidden), bound, rng);
        // Forget gate starts open.
        store.get_mut(b).slice_mut(ndarray::s![.., hidden..2 * hidden]).mapv_inplace(|v| v + 1.0);
        Self { w_ih, w_hh, b }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var, steps: usize, reverse: bool) -> Var {
        let w_ih = p.var(g, self.w_ih);
        let w_hh = p.var(g, self.w_hh);
        let b = p.var(g, self.b);
        g.lstm(x, w_ih, w_hh, b, steps, reverse)
    }
}

/// Stacked bidirectional LSTM; each layer outputs `2 * hidden` features.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub layers: Vec<(Lstm, Lstm)>,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let d = if l == 0 { d_in } else { 2 * hidden };
                (
                    Lstm::new(store, &format!("{name}.{l}.fwd"), group, d, hidden, rng),
                    Lstm::new(store, &format!("{name}.{l}.bwd"), group, d, hidden, rng),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, mut x: Var, steps: usize) -> Var {
        for (fwd, bwd) in &self.layers {
            let a = fwd.forward(g, p, x, steps, false);
            let b = bwd.forward(g, p, x, steps, true);
            x = g.concat(&[a, b]);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected layers with an activation between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dims: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x);
            if i + 1 < self.layers.len() {
                x = match self.activation {
                    Activation::Relu => g.relu(x),
                    Activation::Tanh => g.tanh(x),
                };
            }
        }
        x
    }
}
