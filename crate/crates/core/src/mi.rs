//! Variational upper bound (CLUB) on mutual information between code pairs,
//! with Gaussian conditional estimators `q(y | x)`.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LatentCodes, ModelConfig};
use crate::nn::{Activation, Adam, AdamConfig, Bind, Graph, Mlp, ParamGroup, ParamStore, Var};
use crate::seed::derive_seed;

pub const QNET_HIDDEN: usize = 64;
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

/// Paired draws `(x_i, y_i)`; rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MISample {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl MISample {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!("{} x rows but {} y rows", x.nrows(), y.nrows())));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("MI sample needs at least one pair".into()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    fn rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
        }
    }
}

/// Gaussian `q(y | x) = N(mu(x), diag(exp(logvar(x))))` with two tanh MLPs.
#[derive(Debug, Clone)]
pub struct QNetPair {
    pub store: ParamStore,
    mean: Mlp,
    logvar: Mlp,
    pub d_x: usize,
    pub d_y: usize,
}

impl QNetPair {
    pub fn new(name: &str, d_x: usize, d_y: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dims = [d_x, hidden, hidden, d_y];
        let mean = Mlp::new(&mut store, &format!("{name}.mu"), ParamGroup::QNets, &dims, Activation::Tanh, &mut rng);
        let logvar = Mlp::new(&mut store, &format!("{name}.logvar"), ParamGroup::QNets, &dims, Activation::Tanh, &mut rng);
        Self { store, mean, logvar, d_x, d_y }
    }

    /// A pair whose output layers are zero, so `mu = 0` and `logvar = 0` everywhere.
    pub fn zeroed(name: &str, d_x: usize, d_y: usize, hidden: usize) -> Self {
        let mut q = Self::new(name, d_x, d_y, hidden, 0);
        for layer in [q.mean.layers.last().unwrap().clone(), q.logvar.layers.last().unwrap().clone()] {
            q.store.get_mut(layer.w).fill(0.0);
            q.store.get_mut(layer.b).fill(0.0);
        }
        q
    }

    pub fn forward(&self, g: &mut Graph, p: Bind, x: Var) -> (Var, Var) {
        let mu = self.mean.forward(g, p, x);
        let lv = self.logvar.forward(g, p, x);
        (mu, g.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1))
    }

    fn check(&self, s: &MISample) -> Result<()> {
        if s.x.ncols() != self.d_x || s.y.ncols() != self.d_y {
            return Err(Error::Shape(format!(
                "estimator expects {}->{} dims, sample has {}->{}",
                self.d_x,
                self.d_y,
                s.x.ncols(),
                s.y.ncols()
            )));
        }
        Ok(())
    }

    /// Graph node for the mean log-likelihood of `y` given `x`.
    pub fn loglik_graph(&self, g: &mut Graph, p: Bind, x: Var, y: Var) -> Var {
        let (mu, lv) = self.forward(g, p, x);
        g.gaussian_loglik(mu, lv, y)
    }

    /// Graph node for the CLUB estimate on paired rows `x`, `y`.
    pub fn club_graph(&self, g: &mut Graph, p: Bind, x: Var, y: Var) -> Var {
        let (mu, lv) = self.forward(g, p, x);
        g.club(mu, lv, y)
    }

    /// One Adam step on the negative log-likelihood; returns the NLL before the step.
    pub fn fit_step(&mut self, opt: &mut Adam, s: &MISample) -> Result<f64> {
        self.check(s)?;
        let mut g = Graph::new();
        let x = g.input(s.x.clone());
        let y = g.input(s.y.clone());
        let ll = self.loglik_graph(&mut g, Bind::trainable(&self.store), x, y);
        let nll = g.affine(ll, -1.0, 0.0);
        let grads = g.backward(nll);
        opt.step(&mut [(&mut self.store, &grads)]);
        Ok(g.scalar(nll))
    }

    /// Minibatch maximum-likelihood fit. Returns the per-step NLL trace.
    pub fn fit(&mut self, s: &MISample, steps: usize, batch: usize, config: AdamConfig, seed: u64) -> Result<Vec<f64>> {
        let mut opt = Adam::new(config, &[&self.store]);
        let batch = batch.clamp(1, s.len());
        (0..steps)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5a, k as u64));
                let idx = sample(&mut rng, s.len(), batch).into_vec();
                self.fit_step(&mut opt, &s.rows(&idx))
            })
            .collect()
    }
}

/// Mean `log q(y_i | x_i)` over the sample.
pub fn qnet_loglik(q: &QNetPair, s: &MISample) -> Result<f64> {
    q.check(s)?;
    let mut g = Graph::new();
    let x = g.input(s.x.clone());
    let y = g.input(s.y.clone());
    let ll = q.loglik_graph(&mut g, Bind::frozen(&q.store), x, y);
    Ok(g.scalar(ll))
}

/// `mean_i log q(y_i|x_i) - mean_{i,j} log q(y_j|x_i)`.
pub fn club_estimate(q: &QNetPair, s: &MISample) -> Result<f64> {
    q.check(s)?;
    let mut g = Graph::new();
    let x = g.input(s.x.clone());
    let y = g.input(s.y.clone());
    let c = q.club_graph(&mut g, Bind::frozen(&q.store), x, y);
    Ok(g.scalar(c))
}

/// The three estimators for (Z_r, Z_p), (Z_r, Z_c) and (Z_p, Z_c).
#[derive(Debug, Clone)]
pub struct QNetSet {
    pub rp: QNetPair,
    pub rc: QNetPair,
    pub pc: QNetPair,
}

/// Per-pair values, in `[rp, rc, pc]` order.
pub type PairValues = [f64; 3];

impl QNetSet {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        Self {
            rp: QNetPair::new("q_rp", cfg.d_r, cfg.d_p, QNET_HIDDEN, derive_seed(seed, 0x71, 0)),
            rc: QNetPair::new("q_rc", cfg.d_r, cfg.d_c, QNET_HIDDEN, derive_seed(seed, 0x71, 1)),
            pc: QNetPair::new("q_pc", cfg.d_p, cfg.d_c, QNET_HIDDEN, derive_seed(seed, 0x71, 2)),
        }
    }

    pub fn stores(&self) -> [&ParamStore; 3] {
        [&self.rp.store, &self.rc.store, &self.pc.store]
    }

    pub fn stores_mut(&mut self) -> [&mut ParamStore; 3] {
        [&mut self.rp.store, &mut self.rc.store, &mut self.pc.store]
    }

    pub fn optimizer(&self, config: AdamConfig) -> Adam {
        Adam::new(config, &self.stores())
    }

    /// Sum of the three CLUB terms with the estimators frozen, so gradients
    /// reach only the codes.
    pub fn mi_loss_graph(&self, g: &mut Graph, z_r: Var, z_p: Var, z_c: Var) -> Var {
        let rp = self.rp.club_graph(g, Bind::frozen(&self.rp.store), z_r, z_p);
        let rc = self.rc.club_graph(g, Bind::frozen(&self.rc.store), z_r, z_c);
        let pc = self.pc.club_graph(g, Bind::frozen(&self.pc.store), z_p, z_c);
        g.weighted_sum(&[(rp, 1.0), (rc, 1.0), (pc, 1.0)])
    }

    /// CLUB values per pair over all frames of `codes`.
    pub fn mi_terms(&self, codes: &LatentCodes) -> Result<PairValues> {
        Ok([
            club_estimate(&self.rp, &MISample::new(codes.z_r.clone(), codes.z_p.clone())?)?,
            club_estimate(&self.rc, &MISample::new(codes.z_r.clone(), codes.z_c.clone())?)?,
            club_estimate(&self.pc, &MISample::new(codes.z_p.clone(), codes.z_c.clone())?)?,
        ])
    }
}

/// Î(Z_r;Z_p) + Î(Z_r;Z_c) + Î(Z_p;Z_c), each pair of frames treated as one draw.
pub fn mi_loss(codes: &LatentCodes, qnets: &QNetSet) -> Result<f64> {
    Ok(qnets.mi_terms(codes)?.iter().sum())
}

/// One likelihood-maximization step for all three estimators on fixed codes.
/// Returns the summed negative log-likelihood before the update.
pub fn qnet_train_step(qnets: &mut QNetSet, opt: &mut Adam, codes: &LatentCodes) -> Result<f64> {
    let pairs = [(&codes.z_r, &codes.z_p), (&codes.z_r, &codes.z_c), (&codes.z_p, &codes.z_c)];
    let nets = [&qnets.rp, &qnets.rc, &qnets.pc];
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(3);
    for (q, (x, y)) in nets.iter().zip(pairs) {
        q.check(&MISample::new(x.clone(), y.clone())?)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let ll = q.loglik_graph(&mut g, Bind::trainable(&q.store), xv, yv);
        let nll = g.affine(ll, -1.0, 0.0);
        total += g.scalar(nll);
        grads.push(g.backward(nll));
    }
    let [a, b, c] = qnets.stores_mut();
    opt.step(&mut [(a, &grads[0]), (b, &grads[1]), (c, &grads[2])]);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn correlated(n: usize, rho: f64, seed: u64) -> MISample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 1));
        let mut y = Array2::zeros((n, 1));
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = a;
            y[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        MISample::new(x, y).unwrap()
    }

    #[test]
    fn zeroed_estimator_gives_zero_club_and_unit_gaussian_loglik() {
        let q = QNetPair::zeroed("q", 1, 1, 8);
        let s = MISample::new(array![[0.3], [-1.0], [2.0]], array![[1.0], [0.0], [-2.0]]).unwrap();
        assert!(club_estimate(&q, &s).unwrap().abs() < 1e-12);
        // Mean of -0.5 * (y^2 + ln 2pi) over y = 1, 0, -2.
        let expect = -0.5 * (5.0 / 3.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((qnet_loglik(&q, &s).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn single_pair_club_is_zero() {
        let q = QNetPair::new("q", 2, 3, 8, 4);
        let s = MISample::new(array![[0.5, -0.2]], array![[1.0, 2.0, 3.0]]).unwrap();
        assert!(club_estimate(&q, &s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = QNetPair::new("q", 2, 1, 8, 0);
        let s = MISample::new(array![[0.0]], array![[0.0]]).unwrap();
        assert!(matches!(club_estimate(&q, &s), Err(Error::Shape(_))));
        assert!(MISample::new(array![[0.0], [1.0]], array![[0.0]]).is_err());
    }

    #[test]
    fn fitting_raises_likelihood_and_tracks_dependence() {
        let s = correlated(2000, 0.8, 1);
        let mut q = QNetPair::new("q", 1, 1, 16, 2);
        let before = qnet_loglik(&q, &s).unwrap();
        let cfg = AdamConfig { lr: 3e-3, ..AdamConfig::default() };
        q.fit(&s, 600, 256, cfg, 3).unwrap();
        let after = qnet_loglik(&q, &s).unwrap();
        assert!(after > before);
        // Optimal conditional log-likelihood: -0.5 (ln(2 pi (1 - rho^2)) + 1).
        let best = -0.5 * ((2.0 * std::f64::consts::PI * 0.36f64).ln() + 1.0);
        assert!((after - best).abs() < 0.1, "{after} vs {best}");
        let club = club_estimate(&q, &s).unwrap();
        let independent = club_estimate(&q, &correlated(2000, 0.0, 9)).unwrap();
        assert!(club > 1.0, "{club}");
        assert!(club > independent);
    }

    #[test]
    fn set_shapes_follow_config() {
        let cfg = ModelConfig::desk();
        let set = QNetSet::new(&cfg, 0);
        assert_eq!((set.rp.d_x, set.rp.d_y), (cfg.d_r, cfg.d_p));
        assert_eq!((set.rc.d_x, set.rc.d_y), (cfg.d_r, cfg.d_c));
        assert_eq!((set.pc.d_x, set.pc.d_y), (cfg.d_p, cfg.d_c));
    }

    #[test]
    fn train_step_reduces_nll_on_fixed_codes() {
        let cfg = ModelConfig { d_r: 1, d_p: 2, d_c: 2, ..ModelConfig::desk() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let mut draw = |d| Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        let z_r: Array2<f64> = draw(1);
        let z_p = ndarray::concatenate![Axis(1), z_r.clone(), draw(1)];
        let codes = LatentCodes {
            z_c: draw(2),
            z_p,
            z_r,
            z_t: Array2::zeros((1, cfg.d_t)),
            batch: 1,
            steps: n,
        };
        let mut set = QNetSet::new(&cfg, 1);
        let mut opt = set.optimizer(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
        let first = qnet_train_step(&mut set, &mut opt, &codes).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = qnet_train_step(&mut set, &mut opt, &codes).unwrap();
        }
        assert!(last < first);
        assert!(mi_loss(&codes, &set).unwrap().is_finite());
    }

    fn noise_codes(cfg: &ModelConfig, n: usize, seed: u64) -> LatentCodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |d| Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        LatentCodes {
            z_r: draw(cfg.d_r),
            z_p: draw(cfg.d_p),
            z_c: draw(cfg.d_c),
            z_t: Array2::zeros((1, cfg.d_t)),
            batch: 1,
            steps: n,
        }
    }

    fn fit_set(set: &mut QNetSet, codes: &LatentCodes, steps: usize) {
        let mut opt = set.optimizer(AdamConfig { lr: 3e-3, ..AdamConfig::default() });
        for _ in 0..steps {
            qnet_train_step(set, &mut opt, codes).unwrap();
        }
    }

    #[test]
    fn standard_normal_density_values() {
        let q = QNetPair::zeroed("q", 1, 1, 4);
        let at = |y: f64| qnet_loglik(&q, &MISample::new(array![[0.7], [-0.3]], array![[y], [y]]).unwrap()).unwrap();
        assert!((at(0.0) - -0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((at(1.0) - -1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn regression_fit_improves_held_out_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut make = |n: usize| {
            let x = Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(&mut rng));
            let noise: Array2<f64> = Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(&mut rng));
            let y = &x * 2.0 + &noise * 0.1;
            MISample::new(x, y).unwrap()
        };
        let (train, held) = (make(1000), make(500));
        let mut q = QNetPair::new("q", 1, 1, QNET_HIDDEN, 3);
        let before = qnet_loglik(&q, &held).unwrap();
        q.fit(&train, 300, 128, AdamConfig { lr: 3e-3, ..AdamConfig::default() }, 0).unwrap();
        let after = qnet_loglik(&q, &held).unwrap();
        assert!(after > before + 1.0, "{before} -> {after}");
    }

    #[test]
    fn single_frame_mi_loss_is_zero() {
        let cfg = ModelConfig::desk();
        let set = QNetSet::new(&cfg, 4);
        let codes = noise_codes(&cfg, 1, 2);
        assert_eq!(mi_loss(&codes, &set).unwrap(), 0.0);
    }

    #[test]
    fn zero_learning_rate_leaves_estimators_unchanged() {
        let cfg = ModelConfig::desk();
        let mut set = QNetSet::new(&cfg, 4);
        let before = set.clone();
        let mut opt = set.optimizer(AdamConfig { lr: 0.0, ..AdamConfig::default() });
        qnet_train_step(&mut set, &mut opt, &noise_codes(&cfg, 32, 1)).unwrap();
        for (a, b) in set.stores().iter().zip(before.stores()) {
            for id in a.ids() {
                assert_eq!(a.get(id), b.get(id));
            }
        }
    }

    #[test]
    fn consecutive_steps_rarely_increase_nll() {
        let cfg = ModelConfig::desk();
        let codes = noise_codes(&cfg, 64, 8);
        let ok = (0..100u64)
            .filter(|&seed| {
                let mut set = QNetSet::new(&cfg, seed);
                let mut opt = set.optimizer(AdamConfig { lr: 1e-3, ..AdamConfig::default() });
                let first = qnet_train_step(&mut set, &mut opt, &codes).unwrap();
                let second = qnet_train_step(&mut set, &mut opt, &codes).unwrap();
                second <= first
            })
            .count();
        assert!(ok >= 90, "{ok}/100");
    }

    #[test]
    fn copied_codes_register_dependence_and_noise_does_not() {
        let cfg = ModelConfig { d_r: 2, d_p: 4, d_c: 4, ..ModelConfig::desk() };
        let noise = noise_codes(&cfg, 8000, 21);
        let mut copied = noise.clone();
        copied.z_p = copied.z_c.clone();

        let mut set = QNetSet::new(&cfg, 5);
        fit_set(&mut set, &copied, 200);
        assert!(set.mi_terms(&copied).unwrap()[2] > 0.5);

        let mut set = QNetSet::new(&cfg, 5);
        fit_set(&mut set, &noise, 200);
        let held = noise_codes(&cfg, 8000, 22);
        let mi = mi_loss(&held, &set).unwrap();
        assert!(mi.abs() < 0.15, "{mi}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn club_is_finite_and_invariant_to_row_order(seed in 0u64..1000, n in 2usize..20) {
            let s = correlated(n, 0.5, seed);
            let q = QNetPair::new("q", 1, 1, 8, seed);
            let c = club_estimate(&q, &s).unwrap();
            prop_assert!(c.is_finite());
            let rev: Vec<usize> = (0..n).rev().collect();
            let c2 = club_estimate(&q, &s.rows(&rev)).unwrap();
            prop_assert!((c - c2).abs() < 1e-9);
        }
    }
}
