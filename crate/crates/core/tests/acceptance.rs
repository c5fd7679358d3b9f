//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- A2 A7`. Set
//! `SRDVC_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use srdvc::convert::{AspectSet, ConversionRequest, Converter, UtteranceInput};
use srdvc::eval::{logf0_pcc, mcd_dtw, mel_cepstra, pearson, CEPSTRAL_ORDER};
use srdvc::features::toy::toy_features;
use srdvc::features::{MelSpectrogram, PitchContour, UtteranceFeatures};
use srdvc::mi::{club_estimate, MISample, QNetPair, QNET_HIDDEN};
use srdvc::model::{FeatureBatch, LatentCodes, ModelConfig, Resampling, SrdModel};
use srdvc::nn::{Activation, Adam, AdamConfig, Bind, Graph, Grads, Mlp, ParamGroup, ParamStore};
use srdvc::resample::{random_resample, resampled_len, segment_plan, ResampleConfig};
use srdvc::train::{LossBreakdown, RunConfig, TrainConfig, TrainData, TrainState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- A1

fn a1_grl() -> Outcome {
    let base = ModelConfig {
        num_speakers: 3,
        crop_frames: 32,
        ..ModelConfig::desk()
    };
    let loss_and_grads = |model: &SrdModel, store: &ParamStore, batch: &FeatureBatch, reverse: bool| -> (f64, Grads) {
        let mut g = Graph::new();
        let p = Bind::trainable(store);
        let codes = model.encode_graph(&mut g, p, batch, Resampling::Off).unwrap();
        let logits = model.classify_adversarial_graph(&mut g, p, &codes, reverse);
        let loss = g.softmax_cross_entropy(logits, &batch.speakers);
        (g.scalar(loss), g.backward(loss))
    };
    let random_batch = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, t) = (2, 32);
        FeatureBatch {
            mel: Array2::from_shape_simple_fn((b * t, 80), || -4.0 + 2.0 * normal(&mut rng)),
            pitch: Array2::from_shape_simple_fn((b * t, 1), || normal(&mut rng)),
            batch: b,
            steps: t,
            speakers: vec![(seed % 3) as usize, ((seed + 1) % 3) as usize],
        }
    };

    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let model = SrdModel::new(ModelConfig { init_seed: seed, ..base.clone() });
        let batch = random_batch(seed);
        let lambda = model.config.grl_lambda;
        let (_, plain) = loss_and_grads(&model, &model.store, &batch, false);
        let (_, rev) = loss_and_grads(&model, &model.store, &batch, true);
        let (mut diff, mut norm) = (0.0, 0.0);
        for (id, gp) in plain.iter() {
            let gr = rev.get(id).expect("same parameters reached");
            if model.store.param(id).group == ParamGroup::ClsAdv {
                if gr != gp {
                    return outcome(false, format!("seed {seed}: classifier gradient changed by reversal"));
                }
                continue;
            }
            let expect = gp * -lambda;
            diff += (gr - &expect).mapv(|v| v * v).sum();
            norm += expect.mapv(|v| v * v).sum();
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(f64::MIN_POSITIVE));
    }

    let model = SrdModel::new(base);
    let batch = random_batch(1000);
    let (_, rev) = loss_and_grads(&model, &model.store, &batch, true);
    let lambda = model.config.grl_lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let encoder: Vec<_> = model
        .store
        .ids_in(ParamGroup::EncIrrelevant)
        .filter(|&id| rev.get(id).is_some())
        .collect();
    let h = 1e-6;
    let mut fd_worst = 0.0f64;
    for _ in 0..10 {
        let id = encoder[rng.random_range(0..encoder.len())];
        let k = rng.random_range(0..model.store.get(id).len());
        let analytic = -rev.get(id).unwrap().as_slice().unwrap()[k] / lambda;
        let shifted = |delta: f64| {
            let mut st = model.store.clone();
            st.get_mut(id).as_slice_mut().unwrap()[k] += delta;
            loss_and_grads(&model, &st, &batch, false).0
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let err = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        fd_worst = fd_worst.max(err);
    }
    outcome(
        worst < 1e-5 && fd_worst < 1e-3,
        format!("max relative error {worst:.2e} over 100 seeds (< 1e-5); finite-difference max {fd_worst:.2e} on 10 params (< 1e-3)"),
    )
}

// ---------------------------------------------------------------- A2

fn gaussian_pair(n: usize, rho: f64, seed: u64) -> MISample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let (a, b) = (normal(&mut rng), normal(&mut rng));
        x[[i, 0]] = a;
        y[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
    }
    MISample::new(x, y).unwrap()
}

fn a2_club() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, rho) in [0.0f64, 0.5, 0.8, 0.9].into_iter().enumerate() {
        let truth = -0.5 * (1.0 - rho * rho).ln();
        let s = gaussian_pair(10_000, rho, 100 + k as u64);
        let mut q = QNetPair::new("q", 1, 1, QNET_HIDDEN, 200 + k as u64);
        q.fit(&s, 2000, 256, AdamConfig { lr: 3e-3, ..AdamConfig::default() }, 300 + k as u64).unwrap();
        let est = club_estimate(&q, &s).unwrap();
        let ok = if rho == 0.0 {
            est.abs() <= 0.05
        } else {
            est >= truth - 0.15 && est <= truth + 1.0
        };
        pass &= ok;
        let limit = rho * rho / (1.0 - rho * rho);
        parts.push(format!(
            "rho={rho}: estimate {est:.4}, true {truth:.4}, exact-q value {limit:.4} [{}]",
            if ok { "ok" } else { "out of range" }
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- training helpers

fn features(speakers: usize, per_speaker: usize, seed: u64) -> Vec<(usize, UtteranceFeatures)> {
    toy_features(speakers, per_speaker, seed).into_iter().map(|(s, _, f)| (s, f)).collect()
}

fn desk_state(num_speakers: usize, batch_size: usize, seed: u64) -> TrainState {
    let run = RunConfig::desk(0);
    let model = ModelConfig { num_speakers, ..run.model };
    let train = TrainConfig { batch_size, seed, ..run.train };
    TrainState::new(model, train, run.resample).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- A3

fn a3_overfit() -> Outcome {
    let feats = features(2, 4, 3);
    let data = TrainData::from_features(feats.iter().map(|(s, f)| (*s, f))).unwrap();
    let mut state = desk_state(2, 16, 1);
    let (mut s_hist, mut p_hist) = (Vec::new(), Vec::new());
    for _ in 0..2000 {
        let batch = state.next_batch(&data);
        let r = state.train_step(&batch).unwrap();
        s_hist.push(r.loss.s_recon);
        p_hist.push(r.loss.p_recon);
    }
    let window = |h: &[f64]| (mean(&h[..10]), mean(&h[h.len() - 10..]));
    let (s0, s1) = window(&s_hist);
    let (p0, p1) = window(&p_hist);
    outcome(
        s1 < 0.1 * s0 && p1 < 0.1 * p0,
        format!(
            "s_recon {s0:.4} -> {s1:.4} ({:.1}%), p_recon {p0:.4} -> {p1:.4} ({:.1}%); limit 10%",
            100.0 * s1 / s0,
            100.0 * p1 / p0
        ),
    )
}

// ---------------------------------------------------------------- A4 / A5

struct SpeakerRun {
    model: SrdModel,
    train: Vec<(usize, UtteranceFeatures)>,
    held_out: Vec<(usize, UtteranceFeatures)>,
}

fn speaker_run() -> SpeakerRun {
    let all = features(4, 8, 7);
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    let mut seen = [0usize; 4];
    for (s, f) in all {
        seen[s] += 1;
        if seen[s] <= 5 {
            train.push((s, f));
        } else {
            held_out.push((s, f));
        }
    }
    let data = TrainData::from_features(train.iter().map(|(s, f)| (*s, f))).unwrap();
    let mut state = desk_state(4, 16, 2);
    for _ in 0..5000 {
        let batch = state.next_batch(&data);
        state.train_step(&batch).unwrap();
    }
    SpeakerRun {
        model: state.model,
        train,
        held_out,
    }
}

fn a4_classification(run: &SpeakerRun) -> Outcome {
    let correct = run
        .train
        .iter()
        .filter(|(s, f)| run.model.classify_common(&run.model.timbre_code(&f.mel)).unwrap().argmax() == *s)
        .count();
    let acc = correct as f64 / run.train.len() as f64;
    outcome(acc >= 0.95, format!("C1 train accuracy {correct}/{} = {acc:.3} (>= 0.95)", run.train.len()))
}

fn codes_of(model: &SrdModel, f: &UtteranceFeatures) -> (Vec<f64>, Vec<f64>) {
    let codes: LatentCodes = model.encode_inference(&f.mel, &f.normalized_pitch()).unwrap();
    (model.timbre_code(&f.mel), codes.pooled_irrelevant().row(0).to_vec())
}

/// Fresh classifier with the C1 layout, trained full-batch on standardized
/// inputs; returns held-out accuracy.
fn probe_accuracy(train: &[(usize, Vec<f64>)], test: &[(usize, Vec<f64>)], classes: usize, hidden: usize, seed: u64) -> f64 {
    let dim = train[0].1.len();
    let stack = |rows: &[(usize, Vec<f64>)]| Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i].1[j]);
    let (x_train, x_test) = (stack(train), stack(test));
    let mu = x_train.mean_axis(ndarray::Axis(0)).unwrap();
    let sd = x_train.std_axis(ndarray::Axis(0), 0.0).mapv(|v| v.max(1e-8));
    let norm = |x: &Array2<f64>| (x - &mu) / &sd;
    let (x_train, x_test) = (norm(&x_train), norm(&x_test));
    let labels: Vec<usize> = train.iter().map(|(s, _)| *s).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "probe", ParamGroup::ClsCommon, &[dim, hidden, classes], Activation::Relu, &mut rng);
    let mut opt = Adam::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() }, &[&store]);
    for _ in 0..500 {
        let mut g = Graph::new();
        let x = g.input(x_train.clone());
        let logits = mlp.forward(&mut g, Bind::trainable(&store), x);
        let loss = g.softmax_cross_entropy(logits, &labels);
        let grads = g.backward(loss);
        opt.step(&mut [(&mut store, &grads)]);
    }
    let mut g = Graph::new();
    let x = g.input(x_test);
    let logits = mlp.forward(&mut g, Bind::frozen(&store), x);
    let logits = g.value(logits);
    let correct = test
        .iter()
        .enumerate()
        .filter(|(i, (s, _))| {
            let row = logits.row(*i);
            let best = (0..classes).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == *s
        })
        .count();
    correct as f64 / test.len() as f64
}

fn a5_probe(run: &SpeakerRun) -> Outcome {
    let split = |items: &[(usize, UtteranceFeatures)]| {
        let mut t = Vec::new();
        let mut irr = Vec::new();
        for (s, f) in items {
            let (zt, zi) = codes_of(&run.model, f);
            t.push((*s, zt));
            irr.push((*s, zi));
        }
        (t, irr)
    };
    let (t_train, irr_train) = split(&run.train);
    let (t_test, irr_test) = split(&run.held_out);
    let (k, hidden) = (run.model.config.num_speakers, run.model.config.cls_hidden);
    let acc_t = probe_accuracy(&t_train, &t_test, k, hidden, 41);
    let acc_irr = probe_accuracy(&irr_train, &irr_test, k, hidden, 41);
    outcome(
        acc_t - acc_irr >= 0.2,
        format!(
            "held-out probe accuracy z_t {acc_t:.3}, irrelevant {acc_irr:.3}, gap {:.3} (>= 0.2) over {} utterances",
            acc_t - acc_irr,
            t_test.len()
        ),
    )
}

fn a9_conversion(model: &SrdModel) -> Outcome {
    let feats = features(2, 1, 19);
    let (src, tgt) = (UtteranceInput::from_features(&feats[0].1), UtteranceInput::from_features(&feats[1].1));
    let crop_src = UtteranceInput::new(
        MelSpectrogram::new(src.mel.frames.slice(s![..src.num_frames() - 37, ..]).to_owned()).unwrap(),
        srdvc::features::NormalizedPitchContour {
            values: src.pitch.values[..src.num_frames() - 37].to_vec(),
            voiced: src.pitch.voiced[..src.num_frames() - 37].to_vec(),
        },
    )
    .unwrap();
    let c = Converter::from_model(model.clone());
    let sc = c.encode_padded(&crop_src).unwrap();
    let tc = c.encode_padded(&tgt).unwrap();
    let rows = |m: &Array2<f64>, n: usize| m.slice(s![..n, ..]).to_owned();
    let mut failures = Vec::new();
    for aspects in AspectSet::all_subsets() {
        let req = ConversionRequest {
            source: crop_src.clone(),
            target: Some(tgt.clone()),
            aspects,
        };
        let out = c.convert(&req).unwrap();
        let from = |on: bool| if on { &tc } else { &sc };
        let (r, p) = (from(aspects.rhythm), from(aspects.pitch));
        let frames = if aspects.rhythm { tgt.num_frames() } else { crop_src.num_frames() };
        let ok = out.mel.num_frames() == frames
            && rows(&out.codes.z_r, r.steps) == r.z_r
            && rows(&out.codes.z_p, p.steps) == p.z_p
            && rows(&out.codes.z_c, sc.steps) == sc.z_c
            && out.codes.z_t == from(aspects.timbre).z_t
            && c.convert(&req).unwrap() == out;
        if !ok {
            failures.push(aspects.to_string());
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("8 subsets, source {} frames, target {} frames", crop_src.num_frames(), tgt.num_frames())
        } else {
            format!("violations for: {}", failures.join(" | "))
        },
    )
}

// ---------------------------------------------------------------- A6

fn a6_assembly() -> Outcome {
    let cfg = TrainConfig::default();
    let total = LossBreakdown::assemble(1.0, 1.0, 1.0, 1.0, 1.0, &cfg).total;
    outcome(
        (total - 2.21).abs() <= 1e-9 && (cfg.alpha, cfg.beta, cfg.gamma) == (0.1, 0.1, 0.01),
        format!("total {total:.12} (2.21 +/- 1e-9)"),
    )
}

// ---------------------------------------------------------------- A7

fn a7_resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let identity_cfg = ResampleConfig {
        rate_min: 1.0,
        rate_max: 1.0,
        ..ResampleConfig::default()
    };
    for case in 0..1000 {
        let t = rng.random_range(1..300usize);
        let d = rng.random_range(1..6usize);
        let seed: u64 = rng.random();
        let lo = rng.random_range(1..40usize);
        let cfg = ResampleConfig {
            seg_min_frames: lo,
            seg_max_frames: lo + rng.random_range(0..20usize),
            rate_min: rng.random_range(0.3..1.0),
            rate_max: rng.random_range(1.0..2.0),
        };
        let x = Array2::from_shape_simple_fn((t, d), || normal(&mut rng));
        let y = random_resample(x.view(), seed, &cfg);
        if y.dim() != x.dim() {
            return outcome(false, format!("case {case}: shape {:?} -> {:?}", x.dim(), y.dim()));
        }
        if random_resample(x.view(), seed, &cfg) != y {
            return outcome(false, format!("case {case}: repeated call differs"));
        }
        if random_resample(x.view(), seed, &identity_cfg) != x {
            return outcome(false, format!("case {case}: rate 1.0 is not the identity"));
        }
        let row: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let constant = Array2::from_shape_fn((t, d), |(_, j)| row[j]);
        let yc = random_resample(constant.view(), seed, &cfg);
        let prefix = resampled_len(&segment_plan(t, seed, &cfg)).min(t);
        let fixed = (0..t).all(|i| (0..d).all(|j| yc[[i, j]] == if i < prefix { row[j] } else { 0.0 }));
        if !fixed {
            return outcome(false, format!("case {case}: constant sequence not preserved"));
        }
    }
    outcome(true, "shape, determinism, identity rate and constant fixed point exact over 1000 cases")
}

// ---------------------------------------------------------------- A8

fn a8_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_affine = 0.0f64;
    for case in 0..100 {
        let t = rng.random_range(2..200usize);
        let mel = MelSpectrogram::new(Array2::from_shape_simple_fn((t, 80), || -6.0 + 3.0 * normal(&mut rng))).unwrap();
        let cep = mel_cepstra(&mel, CEPSTRAL_ORDER).unwrap();
        let mcd = mcd_dtw(&cep, &cep).unwrap();
        if mcd != 0.0 {
            return outcome(false, format!("case {case}: mcd_dtw(x, x) = {mcd}"));
        }

        let mut f0: Vec<f64> = (0..t).map(|_| rng.random_range(70.0..400.0)).collect();
        let mut voiced: Vec<bool> = (0..t).map(|_| rng.random_bool(0.7)).collect();
        voiced[0] = true;
        voiced[t - 1] = true;
        for (v, f) in voiced.iter().zip(f0.iter_mut()) {
            if !v {
                *f = 0.0;
            }
        }
        let x = PitchContour { f0_hz: f0.clone(), voiced: voiced.clone() };
        if logf0_pcc(&x, &x) != Some(1.0) {
            return outcome(false, format!("case {case}: logf0_pcc(x, x) = {:?}", logf0_pcc(&x, &x)));
        }

        let a = rng.random_range(0.2..3.0);
        let b = rng.random_range(-1.0..1.0);
        let shifted: Vec<f64> = f0.iter().zip(&voiced).map(|(&f, &v)| if v { (a * f.ln() + b).exp() } else { 0.0 }).collect();
        let y = PitchContour { f0_hz: shifted, voiced };
        let Some(r) = logf0_pcc(&x, &y) else {
            return outcome(false, format!("case {case}: affine contour gave no correlation"));
        };
        worst_affine = worst_affine.max((r - 1.0).abs());

        let xs: Vec<f64> = (0..t).map(|_| normal(&mut rng)).collect();
        let ys: Vec<f64> = (0..t).map(|_| normal(&mut rng)).collect();
        if let (Some(r0), Some(r1)) = (pearson(&xs, &ys), pearson(&xs.iter().map(|v| a * v + b).collect::<Vec<_>>(), &ys)) {
            worst_affine = worst_affine.max((r0 - r1).abs());
        }
    }
    outcome(
        worst_affine <= 1e-12,
        format!("identities exact on 100 cases; affine invariance max deviation {worst_affine:.1e} (<= 1e-12)"),
    )
}

// ---------------------------------------------------------------- A10

fn a10_resume() -> Outcome {
    let feats = features(2, 3, 5);
    let data = TrainData::from_features(feats.iter().map(|(s, f)| (*s, f))).unwrap();
    let steps = |state: &mut TrainState, n: usize| {
        for _ in 0..n {
            let batch = state.next_batch(&data);
            state.train_step(&batch).unwrap();
        }
    };
    let mut straight = desk_state(2, 4, 9);
    steps(&mut straight, 200);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = desk_state(2, 4, 9);
    steps(&mut first, 100);
    first.save(&path).unwrap();
    drop(first);
    let mut resumed = TrainState::load(&path).unwrap();
    steps(&mut resumed, 100);

    let stores_equal = |a: &ParamStore, b: &ParamStore| a.len() == b.len() && a.ids().all(|id| a.get(id) == b.get(id));
    let same = resumed.step == straight.step
        && stores_equal(&resumed.model.store, &straight.model.store)
        && resumed.qnets.stores().iter().zip(straight.qnets.stores()).all(|(a, b)| stores_equal(a, b))
        && resumed.vc_opt == straight.vc_opt
        && resumed.q_opt == straight.q_opt;
    outcome(same, format!("step {} parameters and optimizer state {}", resumed.step, if same { "bit-identical" } else { "differ" }))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| f == name);
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(name) {
            return;
        }
        let start = Instant::now();
        let o = f();
        println!(
            "{} {name} {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((name, o));
    };

    run("A1", &mut a1_grl);
    run("A2", &mut a2_club);
    run("A3", &mut a3_overfit);
    run("A6", &mut a6_assembly);
    run("A7", &mut a7_resampling);
    run("A8", &mut a8_metrics);
    run("A10", &mut a10_resume);

    if ["A4", "A5", "A9"].iter().any(|n| wanted(n)) {
        let start = Instant::now();
        let speakers = speaker_run();
        println!("     4-speaker training run finished [{:.1}s]", start.elapsed().as_secs_f64());
        run("A4", &mut || a4_classification(&speakers));
        run("A5", &mut || a5_probe(&speakers));
        run("A9", &mut || a9_conversion(&speakers.model));
    }

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed{}", results.len() - failed.len(), failed.len(), if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) });
    let strict = std::env::var("SRDVC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
