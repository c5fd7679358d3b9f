//! Rhythm, pitch, content and timbre encoders, speech and pitch decoders,
//! the common speaker classifier on the timbre code and the adversarial
//! speaker classifier (behind gradient reversal) on the other three codes.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, NormalizedPitchContour};
use crate::nn::{softmax_rows, Activation, BiLstm, Bind, Conv1d, Graph, Linear, Mlp, ParamGroup, ParamStore, Var};
use crate::resample::{random_resample, ResampleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_r: usize,
    pub d_p: usize,
    pub d_c: usize,
    pub d_t: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    pub bilstm_layers: usize,
    pub enc_lstm_hidden: usize,
    pub dec_lstm_hidden: usize,
    pub pitch_dec_lstm_hidden: usize,
    pub cls_hidden: usize,
    pub num_speakers: usize,
    pub grl_lambda: f64,
    pub crop_frames: usize,
    pub n_mels: usize,
    /// Fixed affine normalization of log-mel inputs; decoder outputs are
    /// mapped back with the inverse.
    pub mel_mean: f64,
    pub mel_std: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_r: 2,
            d_p: 64,
            d_c: 16,
            d_t: 256,
            conv_channels: 512,
            conv_layers: 3,
            conv_kernel: 5,
            bilstm_layers: 1,
            enc_lstm_hidden: 64,
            dec_lstm_hidden: 512,
            pitch_dec_lstm_hidden: 128,
            cls_hidden: 256,
            num_speakers: 2,
            grl_lambda: 1.0,
            crop_frames: 128,
            n_mels: 80,
            mel_mean: -4.0,
            mel_std: 4.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Narrow widths that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            d_p: 8,
            d_c: 8,
            d_t: 16,
            conv_channels: 32,
            enc_lstm_hidden: 16,
            dec_lstm_hidden: 48,
            pitch_dec_lstm_hidden: 16,
            cls_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self, rr: &ResampleConfig) -> Result<()> {
        let dims = [
            self.d_r,
            self.d_p,
            self.d_c,
            self.d_t,
            self.conv_channels,
            self.conv_layers,
            self.bilstm_layers,
            self.enc_lstm_hidden,
            self.dec_lstm_hidden,
            self.pitch_dec_lstm_hidden,
            self.cls_hidden,
            self.num_speakers,
            self.n_mels,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if self.crop_frames < rr.seg_max_frames {
            return Err(Error::Config(format!(
                "crop_frames {} is shorter than seg_max_frames {}",
                self.crop_frames, rr.seg_max_frames
            )));
        }
        if !(self.mel_std > 0.0) {
            return Err(Error::Config("mel_std must be positive".into()));
        }
        Ok(())
    }

    pub fn irrelevant_dim(&self) -> usize {
        self.d_r + self.d_p + self.d_c
    }
}

/// Conv stack, BiLSTM and a per-frame projection to the code dimension.
#[derive(Debug, Clone)]
struct SeqEncoder {
    convs: Vec<Conv1d>,
    lstm: BiLstm,
    proj: Linear,
}

impl SeqEncoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let group = ParamGroup::EncIrrelevant;
        let convs = (0..cfg.conv_layers)
            .map(|l| {
                let c_in = if l == 0 { d_in } else { cfg.conv_channels };
                Conv1d::new(store, &format!("{name}.conv{l}"), group, c_in, cfg.conv_channels, cfg.conv_kernel, rng)
            })
            .collect();
        let lstm = BiLstm::new(store, &format!("{name}.lstm"), group, cfg.conv_channels, cfg.enc_lstm_hidden, cfg.bilstm_layers, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), group, 2 * cfg.enc_lstm_hidden, d_out, rng);
        Self { convs, lstm, proj }
    }

    fn forward(&self, g: &mut Graph, p: Bind, mut x: Var, steps: usize) -> Var {
        for conv in &self.convs {
            x = conv.forward(g, p, x, steps);
            x = g.relu(x);
        }
        let h = self.lstm.forward(g, p, x, steps);
        self.proj.forward(g, p, h)
    }
}

/// Conv stack followed by time-average pooling to one vector.
#[derive(Debug, Clone)]
struct TimbreEncoder {
    convs: Vec<Conv1d>,
    proj: Linear,
}

impl TimbreEncoder {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let group = ParamGroup::EncTimbre;
        let convs = (0..cfg.conv_layers)
            .map(|l| {
                let c_in = if l == 0 { cfg.n_mels } else { cfg.conv_channels };
                Conv1d::new(store, &format!("enc_t.conv{l}"), group, c_in, cfg.conv_channels, cfg.conv_kernel, rng)
            })
            .collect();
        let proj = Linear::new(store, "enc_t.proj", group, cfg.conv_channels, cfg.d_t, rng);
        Self { convs, proj }
    }

    fn forward(&self, g: &mut Graph, p: Bind, mut x: Var, steps: usize) -> Var {
        for conv in &self.convs {
            x = conv.forward(g, p, x, steps);
            x = g.relu(x);
        }
        let pooled = g.mean_time(x, steps);
        self.proj.forward(g, p, pooled)
    }
}

#[derive(Debug, Clone)]
struct SeqDecoder {
    lstm: BiLstm,
    proj: Linear,
}

impl SeqDecoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let group = ParamGroup::Decoders;
        Self {
            lstm: BiLstm::new(store, &format!("{name}.lstm"), group, d_in, hidden, cfg.bilstm_layers, rng),
            proj: Linear::new(store, &format!("{name}.proj"), group, 2 * hidden, d_out, rng),
        }
    }

    fn forward(&self, g: &mut Graph, p: Bind, x: Var, steps: usize) -> Var {
        let h = self.lstm.forward(g, p, x, steps);
        self.proj.forward(g, p, h)
    }
}

/// A batch of equal-length feature crops, stored batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    /// `(batch * steps) x n_mels` log-mel frames.
    pub mel: Array2<f64>,
    /// `(batch * steps) x 1` normalized pitch.
    pub pitch: Array2<f64>,
    pub batch: usize,
    pub steps: usize,
    pub speakers: Vec<usize>,
}

impl FeatureBatch {
    pub fn single(mel: &MelSpectrogram, pitch: &NormalizedPitchContour) -> Result<Self> {
        let t = mel.num_frames();
        if pitch.len() != t {
            return Err(Error::Shape(format!("mel has {t} frames but pitch has {}", pitch.len())));
        }
        Ok(Self {
            mel: mel.frames.clone(),
            pitch: Array2::from_shape_vec((t, 1), pitch.values.clone()).expect("length checked"),
            batch: 1,
            steps: t,
            speakers: vec![0],
        })
    }

    fn check(&self, n_mels: usize) -> Result<()> {
        let rows = self.batch * self.steps;
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if self.mel.dim() != (rows, n_mels) || self.pitch.dim() != (rows, 1) {
            return Err(Error::Shape(format!(
                "batch of {}x{} frames needs mel {rows}x{n_mels} and pitch {rows}x1, got {:?} and {:?}",
                self.batch,
                self.steps,
                self.mel.dim(),
                self.pitch.dim()
            )));
        }
        Ok(())
    }
}

/// Whether (and how) the content and pitch encoder inputs are randomly resampled.
#[derive(Debug, Clone, Copy)]
pub enum Resampling<'a> {
    Off,
    On {
        cfg: &'a ResampleConfig,
        /// One seed per batch item for the content encoder input.
        content_seeds: &'a [u64],
        /// One seed per batch item for the pitch encoder input.
        pitch_seeds: &'a [u64],
    },
}

fn resample_rows(x: &Array2<f64>, batch: usize, steps: usize, seeds: &[u64], cfg: &ResampleConfig) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for b in 0..batch {
        let rows = s![b * steps..(b + 1) * steps, ..];
        out.slice_mut(rows).assign(&random_resample(x.slice(rows), seeds[b], cfg));
    }
    out
}

/// Graph handles of the four codes for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct CodeVars {
    pub z_r: Var,
    pub z_p: Var,
    pub z_c: Var,
    pub z_t: Var,
    pub steps: usize,
}

/// Values of the four codes. Time-varying codes are `(batch * steps) x d`,
/// `z_t` is `batch x d_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    pub z_r: Array2<f64>,
    pub z_p: Array2<f64>,
    pub z_c: Array2<f64>,
    pub z_t: Array2<f64>,
    pub batch: usize,
    pub steps: usize,
}

impl LatentCodes {
    pub fn from_graph(g: &Graph, v: &CodeVars) -> Self {
        Self {
            z_r: g.value(v.z_r).clone(),
            z_p: g.value(v.z_p).clone(),
            z_c: g.value(v.z_c).clone(),
            z_t: g.value(v.z_t).clone(),
            batch: g.value(v.z_t).nrows(),
            steps: v.steps,
        }
    }

    fn to_graph(&self, g: &mut Graph) -> CodeVars {
        CodeVars {
            z_r: g.input(self.z_r.clone()),
            z_p: g.input(self.z_p.clone()),
            z_c: g.input(self.z_c.clone()),
            z_t: g.input(self.z_t.clone()),
            steps: self.steps,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.z_r, &self.z_p, &self.z_c, &self.z_t].iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Time-mean of the three speaker-irrelevant codes, concatenated,
    /// `batch x (d_r + d_p + d_c)`.
    pub fn pooled_irrelevant(&self) -> Array2<f64> {
        let pool = |m: &Array2<f64>| {
            let mut out = Array2::zeros((self.batch, m.ncols()));
            for b in 0..self.batch {
                out.row_mut(b)
                    .assign(&m.slice(s![b * self.steps..(b + 1) * self.steps, ..]).mean_axis(ndarray::Axis(0)).unwrap());
            }
            out
        };
        ndarray::concatenate![ndarray::Axis(1), pool(&self.z_r), pool(&self.z_p), pool(&self.z_c)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClassifierOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let m = Array2::from_shape_vec((1, logits.len()), logits.clone()).expect("row vector");
        let probs = softmax_rows(&m).row(0).to_vec();
        Self { logits, probs }
    }

    /// `-log p[label]`.
    pub fn cross_entropy(&self, label: usize) -> f64 {
        -self.probs[label].max(f64::MIN_POSITIVE).ln()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

/// Parameter names per optimization group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGroups {
    pub groups: BTreeMap<String, Vec<String>>,
}

impl ParameterGroups {
    pub fn collect(stores: &[&ParamStore]) -> Self {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for store in stores {
            for (_, p) in store.iter() {
                groups.entry(format!("{:?}", p.group)).or_default().push(p.name.clone());
            }
        }
        Self { groups }
    }
}

/// The full voice-conversion network.
#[derive(Debug, Clone)]
pub struct SrdModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    enc_r: SeqEncoder,
    enc_p: SeqEncoder,
    enc_c: SeqEncoder,
    enc_t: TimbreEncoder,
    dec_s: SeqDecoder,
    dec_p: SeqDecoder,
    cls_common: Mlp,
    cls_adv: Mlp,
}

impl SrdModel {
    /// Builds the network with weights drawn from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let c = &config;
        let enc_r = SeqEncoder::new(&mut store, "enc_r", c, c.n_mels, c.d_r, &mut rng);
        let enc_p = SeqEncoder::new(&mut store, "enc_p", c, 1, c.d_p, &mut rng);
        let enc_c = SeqEncoder::new(&mut store, "enc_c", c, c.n_mels, c.d_c, &mut rng);
        let enc_t = TimbreEncoder::new(&mut store, c, &mut rng);
        let dec_s = SeqDecoder::new(&mut store, "dec_s", c, c.irrelevant_dim() + c.d_t, c.dec_lstm_hidden, c.n_mels, &mut rng);
        let dec_p = SeqDecoder::new(&mut store, "dec_p", c, c.d_r + c.d_p, c.pitch_dec_lstm_hidden, 1, &mut rng);
        let cls_common = Mlp::new(
            &mut store,
            "cls_common",
            ParamGroup::ClsCommon,
            &[c.d_t, c.cls_hidden, c.num_speakers],
            Activation::Relu,
            &mut rng,
        );
        let cls_adv = Mlp::new(
            &mut store,
            "cls_adv",
            ParamGroup::ClsAdv,
            &[c.irrelevant_dim(), c.cls_hidden, c.num_speakers],
            Activation::Relu,
            &mut rng,
        );
        Self {
            config,
            store,
            enc_r,
            enc_p,
            enc_c,
            enc_t,
            dec_s,
            dec_p,
            cls_common,
            cls_adv,
        }
    }

    /// Rebuilds the layout for `config` and installs `store` (e.g. from a checkpoint).
    pub fn with_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(config);
        if model.store.len() != store.len()
            || model.store.iter().zip(store.iter()).any(|((_, a), (_, b))| a.name != b.name || a.value.dim() != b.value.dim())
        {
            return Err(Error::Shape("parameter layout does not match the model config".into()));
        }
        model.store = store;
        Ok(model)
    }

    fn normalize_mel(&self, g: &mut Graph, mel: &Array2<f64>) -> Var {
        let x = g.input(mel.clone());
        g.affine(x, 1.0 / self.config.mel_std, -self.config.mel_mean / self.config.mel_std)
    }

    /// Z_r = E_r(S), Z_c = E_c(RR(S)), Z_p = E_p(RR(P)), Z_t = E_t(S).
    pub fn encode_graph(&self, g: &mut Graph, p: Bind, batch: &FeatureBatch, rr: Resampling) -> Result<CodeVars> {
        batch.check(self.config.n_mels)?;
        let steps = batch.steps;
        let (mel_c, pitch_p) = match rr {
            Resampling::Off => (batch.mel.clone(), batch.pitch.clone()),
            Resampling::On { cfg, content_seeds, pitch_seeds } => {
                if content_seeds.len() != batch.batch || pitch_seeds.len() != batch.batch {
                    return Err(Error::Shape("one resampling seed per batch item is required".into()));
                }
                (
                    resample_rows(&batch.mel, batch.batch, steps, content_seeds, cfg),
                    resample_rows(&batch.pitch, batch.batch, steps, pitch_seeds, cfg),
                )
            }
        };
        let s = self.normalize_mel(g, &batch.mel);
        let s_rr = self.normalize_mel(g, &mel_c);
        let p_rr = g.input(pitch_p);
        Ok(CodeVars {
            z_r: self.enc_r.forward(g, p, s, steps),
            z_c: self.enc_c.forward(g, p, s_rr, steps),
            z_p: self.enc_p.forward(g, p, p_rr, steps),
            z_t: self.enc_t.forward(g, p, s, steps),
            steps,
        })
    }

    /// Only the timbre path; used where the other codes are not needed.
    pub fn encode_timbre_graph(&self, g: &mut Graph, p: Bind, mel: &Array2<f64>, steps: usize) -> Var {
        let s = self.normalize_mel(g, mel);
        self.enc_t.forward(g, p, s, steps)
    }

    /// Ŝ = D_s(Z_r, Z_p, Z_c, Z_t) with Z_t tiled along time; returns raw log-mel.
    pub fn decode_speech_graph(&self, g: &mut Graph, p: Bind, codes: &CodeVars) -> Var {
        let zt = g.tile_time(codes.z_t, codes.steps);
        let x = g.concat(&[codes.z_r, codes.z_p, codes.z_c, zt]);
        let y = self.dec_s.forward(g, p, x, codes.steps);
        g.affine(y, self.config.mel_std, self.config.mel_mean)
    }

    /// P̂ = D_p(Z_r, Z_p).
    pub fn decode_pitch_graph(&self, g: &mut Graph, p: Bind, z_r: Var, z_p: Var, steps: usize) -> Var {
        let x = g.concat(&[z_r, z_p]);
        self.dec_p.forward(g, p, x, steps)
    }

    pub fn classify_common_graph(&self, g: &mut Graph, p: Bind, z_t: Var) -> Var {
        self.cls_common.forward(g, p, z_t)
    }

    /// Logits of C_2 over the time-pooled, concatenated irrelevant codes.
    /// With `reverse` false the GRL is replaced by identity.
    pub fn classify_adversarial_graph(&self, g: &mut Graph, p: Bind, codes: &CodeVars, reverse: bool) -> Var {
        let r = g.mean_time(codes.z_r, codes.steps);
        let pp = g.mean_time(codes.z_p, codes.steps);
        let c = g.mean_time(codes.z_c, codes.steps);
        let pooled = g.concat(&[r, pp, c]);
        let x = if reverse { g.grl(pooled, self.config.grl_lambda) } else { pooled };
        self.cls_adv.forward(g, p, x)
    }

    /// Encodes with random resampling of the content and pitch inputs, both
    /// seeds derived from `rng_seed`.
    pub fn encode(&self, mel: &MelSpectrogram, pitch: &NormalizedPitchContour, rng_seed: u64, rr: &ResampleConfig) -> Result<LatentCodes> {
        let batch = FeatureBatch::single(mel, pitch)?;
        let content = [crate::seed::derive_seed(rng_seed, 1, 0)];
        let pitch_seed = [crate::seed::derive_seed(rng_seed, 2, 0)];
        let mode = Resampling::On {
            cfg: rr,
            content_seeds: &content,
            pitch_seeds: &pitch_seed,
        };
        self.encode_batch(&batch, mode)
    }

    /// Encodes without resampling (inference).
    pub fn encode_inference(&self, mel: &MelSpectrogram, pitch: &NormalizedPitchContour) -> Result<LatentCodes> {
        self.encode_batch(&FeatureBatch::single(mel, pitch)?, Resampling::Off)
    }

    pub fn encode_batch(&self, batch: &FeatureBatch, rr: Resampling) -> Result<LatentCodes> {
        let mut g = Graph::new();
        let vars = self.encode_graph(&mut g, Bind::frozen(&self.store), batch, rr)?;
        Ok(LatentCodes::from_graph(&g, &vars))
    }

    fn check_codes(&self, codes: &LatentCodes) -> Result<()> {
        let rows = codes.batch * codes.steps;
        let c = &self.config;
        let ok = codes.z_r.dim() == (rows, c.d_r)
            && codes.z_p.dim() == (rows, c.d_p)
            && codes.z_c.dim() == (rows, c.d_c)
            && codes.z_t.dim() == (codes.batch, c.d_t);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("latent code shapes do not match the model".into()))
        }
    }

    /// Decodes a single-utterance code set to a mel spectrogram.
    pub fn decode_speech(&self, codes: &LatentCodes) -> Result<MelSpectrogram> {
        Ok(MelSpectrogram {
            frames: self.decode_speech_batch(codes)?,
            frame_hop: crate::features::ExtractionParams::default().hop,
            frame_len: crate::features::ExtractionParams::default().frame_len,
        })
    }

    pub fn decode_speech_batch(&self, codes: &LatentCodes) -> Result<Array2<f64>> {
        self.check_codes(codes)?;
        let mut g = Graph::new();
        let vars = codes.to_graph(&mut g);
        let y = self.decode_speech_graph(&mut g, Bind::frozen(&self.store), &vars);
        Ok(g.value(y).clone())
    }

    pub fn decode_pitch(&self, codes: &LatentCodes) -> Result<Vec<f64>> {
        self.check_codes(codes)?;
        let mut g = Graph::new();
        let vars = codes.to_graph(&mut g);
        let y = self.decode_pitch_graph(&mut g, Bind::frozen(&self.store), vars.z_r, vars.z_p, codes.steps);
        Ok(g.value(y).column(0).to_vec())
    }

    /// C_1 on one timbre vector.
    pub fn classify_common(&self, z_t: &[f64]) -> Result<ClassifierOutput> {
        if z_t.len() != self.config.d_t {
            return Err(Error::Shape(format!("z_t has {} entries, expected {}", z_t.len(), self.config.d_t)));
        }
        let mut g = Graph::new();
        let x = g.input(Array2::from_shape_vec((1, z_t.len()), z_t.to_vec()).unwrap());
        let logits = self.classify_common_graph(&mut g, Bind::frozen(&self.store), x);
        Ok(ClassifierOutput::from_logits(g.value(logits).row(0).to_vec()))
    }

    /// C_2 on the codes of one utterance.
    pub fn classify_adversarial(&self, codes: &LatentCodes) -> Result<ClassifierOutput> {
        self.check_codes(codes)?;
        let mut g = Graph::new();
        let vars = codes.to_graph(&mut g);
        let logits = self.classify_adversarial_graph(&mut g, Bind::frozen(&self.store), &vars, true);
        Ok(ClassifierOutput::from_logits(g.value(logits).row(0).to_vec()))
    }

    /// Z_t of a whole utterance of any length.
    pub fn timbre_code(&self, mel: &MelSpectrogram) -> Vec<f64> {
        let mut g = Graph::new();
        let z = self.encode_timbre_graph(&mut g, Bind::frozen(&self.store), &mel.frames, mel.num_frames());
        g.value(z).row(0).to_vec()
    }

    pub fn parameter_groups(&self) -> ParameterGroups {
        ParameterGroups::collect(&[&self.store])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_r: 2,
            d_p: 3,
            d_c: 4,
            d_t: 5,
            conv_channels: 6,
            enc_lstm_hidden: 4,
            dec_lstm_hidden: 6,
            pitch_dec_lstm_hidden: 3,
            cls_hidden: 7,
            num_speakers: 4,
            crop_frames: 40,
            ..ModelConfig::default()
        }
    }

    fn inputs(t: usize) -> (MelSpectrogram, NormalizedPitchContour) {
        let mel = Array2::from_shape_fn((t, 80), |(i, j)| ((i * 13 + j * 7) % 23) as f64 * 0.4 - 7.0);
        let values: Vec<f64> = (0..t).map(|i| ((i as f64) * 0.3).sin()).collect();
        (
            MelSpectrogram::new(mel).unwrap(),
            NormalizedPitchContour {
                voiced: values.iter().map(|_| true).collect(),
                values,
            },
        )
    }

    fn adversarial_loss(model: &SrdModel, store: &ParamStore, reverse: bool) -> (f64, crate::nn::Grads) {
        let (mel, pitch) = inputs(40);
        let batch = FeatureBatch::single(&mel, &pitch).unwrap();
        let mut g = Graph::new();
        let p = Bind::trainable(store);
        let codes = model.encode_graph(&mut g, p, &batch, Resampling::Off).unwrap();
        let logits = model.classify_adversarial_graph(&mut g, p, &codes, reverse);
        let loss = g.softmax_cross_entropy(logits, &[1]);
        (g.scalar(loss), g.backward(loss))
    }

    #[test]
    fn reversal_negates_encoder_gradients_only() {
        for seed in 0..5 {
            let model = SrdModel::new(ModelConfig { init_seed: seed, ..tiny() });
            let (plain_loss, plain) = adversarial_loss(&model, &model.store, false);
            let (rev_loss, rev) = adversarial_loss(&model, &model.store, true);
            assert_eq!(plain_loss, rev_loss);
            let lambda = model.config.grl_lambda;
            for (id, gp) in plain.iter() {
                let gr = rev.get(id).unwrap();
                let classifier = model.store.param(id).group == ParamGroup::ClsAdv;
                let expect = if classifier { gp.clone() } else { gp * -lambda };
                let err = (gr - &expect).mapv(f64::abs).sum();
                assert!(err <= 1e-12 * (1.0 + expect.mapv(f64::abs).sum()), "{}", model.store.param(id).name);
            }
        }
    }

    #[test]
    fn adversarial_gradient_matches_finite_differences() {
        let model = SrdModel::new(tiny());
        let (_, grads) = adversarial_loss(&model, &model.store, false);
        let id = model.store.ids().find(|&id| model.store.param(id).name.starts_with("enc_c")).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut plus = model.store.clone();
            plus.get_mut(id).as_slice_mut().unwrap()[k] += h;
            let mut minus = model.store.clone();
            minus.get_mut(id).as_slice_mut().unwrap()[k] -= h;
            let fd = (adversarial_loss(&model, &plus, false).0 - adversarial_loss(&model, &minus, false).0) / (2.0 * h);
            let analytic = grads.get(id).unwrap().as_slice().unwrap()[k];
            assert!((fd - analytic).abs() < 1e-6 + 1e-4 * analytic.abs(), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn default_shapes() {
        let cfg = ModelConfig {
            conv_channels: 16,
            dec_lstm_hidden: 16,
            enc_lstm_hidden: 8,
            pitch_dec_lstm_hidden: 8,
            cls_hidden: 16,
            ..ModelConfig::default()
        };
        let model = SrdModel::new(cfg);
        let (mel, pitch) = inputs(128);
        let codes = model.encode(&mel, &pitch, 3, &ResampleConfig::default()).unwrap();
        assert_eq!(codes.z_r.dim(), (128, 2));
        assert_eq!(codes.z_p.dim(), (128, 64));
        assert_eq!(codes.z_c.dim(), (128, 16));
        assert_eq!(codes.z_t.dim(), (1, 256));
        assert_eq!(model.decode_speech(&codes).unwrap().frames.dim(), (128, 80));
        assert_eq!(model.decode_pitch(&codes).unwrap().len(), 128);
    }

    #[test]
    fn resampling_seed_only_touches_content_and_pitch() {
        let model = SrdModel::new(tiny());
        let (mel, pitch) = inputs(40);
        let rr = ResampleConfig::default();
        let a = model.encode(&mel, &pitch, 1, &rr).unwrap();
        let b = model.encode(&mel, &pitch, 1, &rr).unwrap();
        let c = model.encode(&mel, &pitch, 2, &rr).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z_r, c.z_r);
        assert_eq!(a.z_t, c.z_t);
        assert_ne!(a.z_c, c.z_c);
        assert_ne!(a.z_p, c.z_p);
    }

    #[test]
    fn zero_codes_decode_finite() {
        let model = SrdModel::new(tiny());
        let c = model.config.clone();
        let codes = LatentCodes {
            z_r: Array2::zeros((40, c.d_r)),
            z_p: Array2::zeros((40, c.d_p)),
            z_c: Array2::zeros((40, c.d_c)),
            z_t: Array2::zeros((1, c.d_t)),
            batch: 1,
            steps: 40,
        };
        assert!(model.decode_speech(&codes).unwrap().frames.iter().all(|v| v.is_finite()));
        assert!(model.decode_pitch(&codes).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = SrdModel::new(tiny());
        let (mel, mut pitch) = inputs(40);
        pitch.values.pop();
        pitch.voiced.pop();
        assert!(matches!(model.encode_inference(&mel, &pitch), Err(Error::Shape(_))));
        assert!(model.classify_common(&[0.0; 3]).is_err());
    }

    #[test]
    fn classifiers_produce_distributions() {
        let model = SrdModel::new(tiny());
        let (mel, pitch) = inputs(40);
        let codes = model.encode_inference(&mel, &pitch).unwrap();
        for out in [
            model.classify_common(codes.z_t.row(0).as_slice().unwrap()).unwrap(),
            model.classify_adversarial(&codes).unwrap(),
        ] {
            assert_eq!(out.probs.len(), 4);
            assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(out.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let uniform = ClassifierOutput::from_logits(vec![0.0; 4]);
        assert!((uniform.cross_entropy(2) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn groups_cover_everything_once() {
        let model = SrdModel::new(tiny());
        let groups = model.parameter_groups();
        let total: usize = groups.groups.values().map(Vec::len).sum();
        assert_eq!(total, model.store.len());
        let mut names: Vec<_> = groups.groups.values().flatten().collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), model.store.len());
        for g in [ParamGroup::EncTimbre, ParamGroup::EncIrrelevant, ParamGroup::ClsCommon, ParamGroup::ClsAdv, ParamGroup::Decoders] {
            assert!(model.store.ids_in(g).count() > 0, "{g:?} is empty");
        }
    }
}
