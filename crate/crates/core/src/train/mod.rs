//! The VC objective, the alternating two-phase optimization step, and the
//! checkpointed training loop.

mod checkpoint;
mod config;
mod data;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_path, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use data::{TrainData, TrainItem};

use crate::error::{Error, Result};
use crate::mi::{qnet_train_step, QNetSet};
use crate::model::{FeatureBatch, LatentCodes, ModelConfig, Resampling, SrdModel};
use crate::nn::{Adam, AdamConfig, Bind, Graph, Var};
use crate::resample::ResampleConfig;
use crate::seed::derive_seed;

const STREAM_RR_CONTENT: u64 = 0x20;
const STREAM_RR_PITCH: u64 = 0x21;
const STREAM_QNET_INIT: u64 = 0x22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: u64,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.01,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            batch_size: 16,
            max_steps: 5000,
            seed: 0,
            checkpoint_every: 1000,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be a finite non-negative number".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
        }
    }
}

/// Loss components of one step and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub s_recon: f64,
    pub p_recon: f64,
    pub com_cls: f64,
    pub adv_cls: f64,
    pub mi: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn assemble(s_recon: f64, p_recon: f64, com_cls: f64, adv_cls: f64, mi: f64, cfg: &TrainConfig) -> Self {
        Self {
            s_recon,
            p_recon,
            com_cls,
            adv_cls,
            mi,
            total: s_recon + p_recon + cfg.alpha * com_cls + cfg.beta * adv_cls + cfg.gamma * mi,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("s_recon", self.s_recon),
            ("p_recon", self.p_recon),
            ("com_cls", self.com_cls),
            ("adv_cls", self.adv_cls),
            ("mi", self.mi),
            ("total", self.total),
        ]
    }

    fn check_finite(&self, step: u64) -> Result<()> {
        match self.components().iter().find(|(_, v)| !v.is_finite()) {
            Some((component, _)) => Err(Error::NonFinite { component, step }),
            None => Ok(()),
        }
    }
}

fn mae(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).mean().unwrap_or(0.0)
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// `(MAE(S, Ŝ) + MSE(S, Ŝ), MSE(P, P̂))`.
pub fn reconstruction_losses(s: &Array2<f64>, s_hat: &Array2<f64>, p: &Array2<f64>, p_hat: &Array2<f64>) -> Result<(f64, f64)> {
    if s.dim() != s_hat.dim() || p.dim() != p_hat.dim() {
        return Err(Error::Shape(format!(
            "reconstruction pairs differ in shape: {:?} vs {:?}, {:?} vs {:?}",
            s.dim(),
            s_hat.dim(),
            p.dim(),
            p_hat.dim()
        )));
    }
    Ok((mae(s, s_hat) + mse(s, s_hat), mse(p, p_hat)))
}

/// Graph nodes of each loss term.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub s_recon: Var,
    pub p_recon: Var,
    pub com_cls: Var,
    pub adv_cls: Var,
    pub mi: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph, cfg: &TrainConfig) -> LossBreakdown {
        let mut b = LossBreakdown::assemble(
            g.scalar(self.s_recon),
            g.scalar(self.p_recon),
            g.scalar(self.com_cls),
            g.scalar(self.adv_cls),
            g.scalar(self.mi),
            cfg,
        );
        b.total = g.scalar(self.total);
        b
    }
}

/// Adds the decoders, classifiers and MI penalty on top of encoded codes.
pub fn vc_loss_graph(
    g: &mut Graph,
    model: &SrdModel,
    p: Bind,
    qnets: &QNetSet,
    batch: &FeatureBatch,
    codes: &crate::model::CodeVars,
    cfg: &TrainConfig,
) -> LossVars {
    let s_hat = model.decode_speech_graph(g, p, codes);
    let p_hat = model.decode_pitch_graph(g, p, codes.z_r, codes.z_p, codes.steps);
    let mae = g.mae(s_hat, &batch.mel);
    let mse = g.mse(s_hat, &batch.mel);
    let s_recon = g.weighted_sum(&[(mae, 1.0), (mse, 1.0)]);
    let p_recon = g.mse(p_hat, &batch.pitch);
    let logits_c = model.classify_common_graph(g, p, codes.z_t);
    let com_cls = g.softmax_cross_entropy(logits_c, &batch.speakers);
    let logits_a = model.classify_adversarial_graph(g, p, codes, true);
    let adv_cls = g.softmax_cross_entropy(logits_a, &batch.speakers);
    let mi = qnets.mi_loss_graph(g, codes.z_r, codes.z_p, codes.z_c);
    let total = g.weighted_sum(&[
        (s_recon, 1.0),
        (p_recon, 1.0),
        (com_cls, cfg.alpha),
        (adv_cls, cfg.beta),
        (mi, cfg.gamma),
    ]);
    LossVars {
        s_recon,
        p_recon,
        com_cls,
        adv_cls,
        mi,
        total,
    }
}

/// Per-item random resampling seeds for a training step.
pub fn rr_seeds(seed: u64, step: u64, batch: usize) -> (Vec<u64>, Vec<u64>) {
    let base = step * batch as u64;
    let draw = |stream| (0..batch as u64).map(|b| derive_seed(seed, stream, base + b)).collect();
    (draw(STREAM_RR_CONTENT), draw(STREAM_RR_PITCH))
}

/// Evaluates the full objective on a batch without updating anything.
pub fn vc_loss(
    batch: &FeatureBatch,
    model: &SrdModel,
    qnets: &QNetSet,
    cfg: &TrainConfig,
    rr: &ResampleConfig,
    rr_seed: u64,
) -> Result<LossBreakdown> {
    let (cs, ps) = rr_seeds(rr_seed, 0, batch.batch);
    let mode = Resampling::On {
        cfg: rr,
        content_seeds: &cs,
        pitch_seeds: &ps,
    };
    let mut g = Graph::new();
    let p = Bind::frozen(&model.store);
    let codes = model.encode_graph(&mut g, p, batch, mode)?;
    Ok(vc_loss_graph(&mut g, model, p, qnets, batch, &codes, cfg).values(&g, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After the estimator update on detached codes.
    QNets,
    /// After the VC network update.
    Vc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: LossBreakdown,
    pub qnet_nll: f64,
}

impl StepReport {
    /// `step=N s_recon=.. p_recon=.. com_cls=.. adv_cls=.. mi=.. total=.. qnet_nll=..`
    pub fn log_line(&self) -> String {
        let mut line = format!("step={}", self.step);
        for (name, v) in self.loss.components() {
            line.push_str(&format!(" {name}={v:.6}"));
        }
        line.push_str(&format!(" qnet_nll={:.6}", self.qnet_nll));
        line
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: SrdModel,
    pub qnets: QNetSet,
    pub vc_opt: Adam,
    pub q_opt: Adam,
    pub train: TrainConfig,
    pub resample: ResampleConfig,
    /// Number of completed steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(model: ModelConfig, train: TrainConfig, resample: ResampleConfig) -> Result<Self> {
        model.validate(&resample)?;
        train.validate()?;
        resample.validate()?;
        let qnets = QNetSet::new(&model, derive_seed(train.seed, STREAM_QNET_INIT, 0));
        let model = SrdModel::new(model);
        let vc_opt = Adam::new(train.adam(), &[&model.store]);
        let q_opt = qnets.optimizer(train.adam());
        Ok(Self {
            model,
            qnets,
            vc_opt,
            q_opt,
            train,
            resample,
            step: 0,
        })
    }

    /// Changes the learning rate of both optimizers (state is kept).
    pub fn set_lr(&mut self, lr: f64) {
        self.train.lr = lr;
        self.vc_opt.config.lr = lr;
        self.q_opt.config.lr = lr;
    }

    pub fn train_step(&mut self, batch: &FeatureBatch) -> Result<StepReport> {
        self.train_step_observed(batch, &mut |_, _| {})
    }

    /// One iteration: the q-nets take a likelihood step on the detached codes,
    /// then the VC network takes one Adam step on the full objective with the
    /// updated q-nets frozen. `observe` runs after each phase.
    pub fn train_step_observed(&mut self, batch: &FeatureBatch, observe: &mut dyn FnMut(Phase, &TrainState)) -> Result<StepReport> {
        if batch.speakers.iter().any(|&s| s >= self.model.config.num_speakers) {
            return Err(Error::InvalidArgument("speaker label outside the classifier range".into()));
        }
        let step = self.step;
        let (cs, ps) = rr_seeds(self.train.seed, step, batch.batch);
        let mode = Resampling::On {
            cfg: &self.resample,
            content_seeds: &cs,
            pitch_seeds: &ps,
        };
        let mut g = Graph::new();
        let p = Bind::trainable(&self.model.store);
        let code_vars = self.model.encode_graph(&mut g, p, batch, mode)?;

        let detached = LatentCodes::from_graph(&g, &code_vars);
        let qnet_nll = qnet_train_step(&mut self.qnets, &mut self.q_opt, &detached)?;
        if !qnet_nll.is_finite() {
            return Err(Error::NonFinite { component: "qnet_nll", step });
        }
        observe(Phase::QNets, self);

        let vars = vc_loss_graph(&mut g, &self.model, p, &self.qnets, batch, &code_vars, &self.train);
        let loss = vars.values(&g, &self.train);
        loss.check_finite(step)?;
        let grads = g.backward(vars.total);
        let mut ok = true;
        for (_, gr) in grads.iter() {
            ok &= gr.iter().all(|v| v.is_finite());
        }
        if !ok {
            return Err(Error::NonFinite { component: "gradient", step });
        }
        self.vc_opt.step(&mut [(&mut self.model.store, &grads)]);
        self.step += 1;
        observe(Phase::Vc, self);
        Ok(StepReport { step, loss, qnet_nll })
    }

    /// The batch this state would train on next.
    pub fn next_batch(&self, data: &TrainData) -> FeatureBatch {
        data.batch(self.train.seed, self.step, self.train.batch_size, self.model.config.crop_frames)
    }
}

/// Runs until `state.train.max_steps`, writing periodic checkpoints and one log
/// line per step to `out_dir/train.log`. Returns the final checkpoint path.
pub fn train_loop(
    state: &mut TrainState,
    data: &TrainData,
    out_dir: &Path,
    on_step: &mut dyn FnMut(&StepReport),
) -> Result<PathBuf> {
    if data.num_speakers > state.model.config.num_speakers {
        return Err(Error::Config(format!(
            "data has {} speakers but the model classifies {}",
            data.num_speakers, state.model.config.num_speakers
        )));
    }
    fs::create_dir_all(out_dir)?;
    let mut log = OpenOptions::new().create(true).append(true).open(out_dir.join("train.log"))?;
    if state.step == 0 {
        state.save(&checkpoint_path(out_dir, 0))?;
    }
    while state.step < state.train.max_steps {
        let batch = state.next_batch(data);
        let report = state.train_step(&batch)?;
        let line = report.log_line();
        writeln!(log, "{line}")?;
        log::info!("{line}");
        on_step(&report);
        let every = state.train.checkpoint_every;
        if every > 0 && state.step % every == 0 && state.step < state.train.max_steps {
            state.save(&checkpoint_path(out_dir, state.step))?;
        }
    }
    let last = checkpoint_path(out_dir, state.step);
    state.save(&last)?;
    let latest = out_dir.join("latest.ckpt");
    fs::copy(&last, &latest)?;
    Ok(last)
}

/// Builds a fresh state (or resumes one) and trains on `data`.
pub fn train(run: &RunConfig, data: &TrainData, out_dir: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    let mut state = match resume {
        Some(path) => {
            let mut s = TrainState::load(path)?;
            s.train.max_steps = run.train.max_steps;
            s.train.checkpoint_every = run.train.checkpoint_every;
            s
        }
        None => {
            let mut model = run.model.clone();
            model.num_speakers = data.num_speakers;
            TrainState::new(model, run.train.clone(), run.resample)?
        }
    };
    train_loop(&mut state, data, out_dir, &mut |_| {})
}
