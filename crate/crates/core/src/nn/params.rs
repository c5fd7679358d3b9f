use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which optimization role a parameter plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Timbre encoder (trained to carry speaker identity).
    EncTimbre,
    /// Rhythm, pitch and content encoders (trained to be speaker-free).
    EncIrrelevant,
    /// Classifier on the timbre code.
    ClsCommon,
    /// Classifier behind the gradient reversal layer.
    ClsAdv,
    Decoders,
    QNets,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::EncTimbre,
        ParamGroup::EncIrrelevant,
        ParamGroup::ClsCommon,
        ParamGroup::ClsAdv,
        ParamGroup::Decoders,
        ParamGroup::QNets,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

/// Flat, ordered list of named trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Array2<f64>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform(-bound, bound) initialization.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound));
        self.add(name, group, value)
    }

    pub fn add_constant(&mut self, name: impl Into<String>, group: ParamGroup, shape: (usize, usize), v: f64) -> ParamId {
        self.add(name, group, Array2::from_elem(shape, v))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.params[id.0].group == group)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients indexed like the [`ParamStore`] they were computed for.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn new(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn squared_norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }
}
