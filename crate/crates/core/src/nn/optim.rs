use ndarray::Array2;

use super::params::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip applied across all targets of one step.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

/// Adam over one or more parameter stores. State is allocated eagerly so a
/// checkpoint always has the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    /// Per store: first and second moments, indexed like the store.
    pub moments: Vec<(Vec<Array2<f64>>, Vec<Array2<f64>>)>,
}

impl Adam {
    pub fn new(config: AdamConfig, stores: &[&ParamStore]) -> Self {
        let moments = stores
            .iter()
            .map(|s| {
                let zeros: Vec<_> = s.ids().map(|id| Array2::zeros(s.get(id).dim())).collect();
                (zeros.clone(), zeros)
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// One update of every store in `targets` (same order as at construction).
    pub fn step(&mut self, targets: &mut [(&mut ParamStore, &Grads)]) {
        assert_eq!(targets.len(), self.moments.len(), "optimizer built for a different store count");
        let mut clip = 1.0;
        if let Some(max) = self.config.max_grad_norm {
            let norm = targets.iter().map(|(_, g)| g.squared_norm()).sum::<f64>().sqrt();
            if norm > max {
                clip = max / norm;
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((store, grads), (m, v)) in targets.iter_mut().zip(self.moments.iter_mut()) {
            for (id, g) in grads.iter() {
                let (mi, vi) = (&mut m[id.index()], &mut v[id.index()]);
                let p = store.get_mut(id);
                ndarray::Zip::from(p).and(mi).and(vi).and(g).for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            }
        }
    }
}
