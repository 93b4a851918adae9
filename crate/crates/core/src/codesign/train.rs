//! Joint SGD training of the filter bank and the classifier.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::autodiff::{Tape, Var};
use super::bpf::{BpfChannel, FilterBank, N_CHANNELS};
use super::data::{snr_mix, Clip, Dataset};
use super::features::{average, bank_on_tape, feature_values, forward_features, mean_features};
use super::model::{argmax, loss_bpf, Classifier, LossConfig};
use super::{CodesignError, Diverged};
use crate::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_phi: f64,
    pub momentum: f64,
    /// Mix noise into every training example at an SNR drawn from
    /// `snr_range_db`.
    pub snr_aware: bool,
    pub snr_range_db: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr_classifier: 1e-2,
            lr_phi: 1e-2,
            momentum: 0.9,
            snr_aware: false,
            snr_range_db: [0.0, 20.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CodesignError> {
        let bad = |m: String| Err(CodesignError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, v) in [("lr_classifier", self.lr_classifier), ("lr_phi", self.lr_phi)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("invalid snr_range_db [{lo}, {hi}]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub sum_phi_g: f64,
    pub sum_phi_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub bank: FilterBank,
    pub classifier: Classifier,
    /// Entry 0 evaluates the initial model; entry `e` averages epoch `e`.
    pub history: Vec<EpochRecord>,
}

/// Loss, logits and gradients of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleGrad {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub log_phi_g: [f64; N_CHANNELS],
    pub log_phi_c: [f64; N_CHANNELS],
    /// In [`Classifier::params`] order.
    pub classifier: Vec<f64>,
}

pub fn example_gradient(
    bank: &FilterBank,
    clf: &Classifier,
    audio: &[f32],
    label: usize,
    cfg: &LossConfig,
) -> Result<ExampleGrad, CodesignError> {
    let mut t = Tape::new();
    let bv = bank_on_tape(&mut t, bank)?;
    let cv = clf.on_tape(&mut t);
    let frames = forward_features(&mut t, &bv, bank.fs, audio)?;
    let pooled: Vec<_> = (0..N_CHANNELS)
        .map(|c| {
            let col: Vec<_> = frames.iter().map(|f| f[c]).collect();
            t.mean(&col)
        })
        .collect();
    let logits = clf.forward(&mut t, &cv, &pooled);
    let root = loss_bpf(&mut t, &logits, label, &bv, cfg)?;
    let g = t.backward(root)?;
    let pick = |vars: &[Var]| -> [f64; N_CHANNELS] { std::array::from_fn(|c| g[vars[c].index()]) };
    Ok(ExampleGrad {
        loss: t.value(root),
        logits: logits.iter().map(|l| t.value(*l)).collect(),
        log_phi_g: pick(&bv.log_phi_g),
        log_phi_c: pick(&bv.log_phi_c),
        classifier: cv.params().map(|v| g[v.index()]).collect(),
    })
}

/// Loss of one example through the gradient-free path.
pub fn example_loss(
    bank: &FilterBank,
    clf: &Classifier,
    audio: &[f32],
    label: usize,
    cfg: &LossConfig,
) -> Result<f64, CodesignError> {
    Ok(value_loss(bank, clf, &mean_features(bank, audio)?, label, cfg)?.0)
}

fn value_loss(
    bank: &FilterBank,
    clf: &Classifier,
    features: &[f64; N_CHANNELS],
    label: usize,
    cfg: &LossConfig,
) -> Result<(f64, bool), CodesignError> {
    let logits = clf.logits(features);
    if label >= logits.len() {
        return Err(CodesignError::Input(format!("label {label} out of range")));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    if cfg.lambda_ce != 0.0 {
        loss += cfg.lambda_ce * (lse - logits[label]);
    }
    if cfg.lambda_p != 0.0 {
        loss += cfg.lambda_p * bank.sum_phi_g();
    }
    if cfg.lambda_a != 0.0 {
        loss += cfg.lambda_a * bank.sum_phi_c();
    }
    Ok((loss, argmax(&logits) == label))
}

const NOISE_STREAM: u64 = 0x6e6f_6973_6500;
const SHUFFLE_STREAM: u64 = 0x7368_7566_666c;

fn training_audio<'a>(
    clip: &'a Clip,
    cfg: &TrainConfig,
    seed: u64,
    epoch: usize,
    index: usize,
) -> Result<std::borrow::Cow<'a, [f32]>, CodesignError> {
    if !cfg.snr_aware {
        return Ok(std::borrow::Cow::Borrowed(&clip.audio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, NOISE_STREAM ^ epoch as u64, index as u64));
    let [lo, hi] = cfg.snr_range_db;
    let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Ok(std::borrow::Cow::Owned(snr_mix(&clip.audio, snr, rng.random())?))
}

/// Sets the classifier's fixed input standardization from the bank's
/// features on `clips`.
pub fn fit_normalization(
    bank: &FilterBank,
    clf: &mut Classifier,
    clips: &[Clip],
) -> Result<(), CodesignError> {
    let feats = clips
        .par_iter()
        .map(|c| mean_features(bank, &c.audio))
        .collect::<Result<Vec<_>, _>>()?;
    clf.fit_normalization(&feats);
    Ok(())
}

/// Classification accuracy on `clips`, optionally after mixing in noise at
/// `snr_db`.
pub fn evaluate(
    bank: &FilterBank,
    clf: &Classifier,
    clips: &[Clip],
    snr_db: Option<f64>,
    seed: u64,
) -> Result<f64, CodesignError> {
    if clips.is_empty() {
        return Err(CodesignError::Input("no clips to evaluate".into()));
    }
    let correct = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let feats = match snr_db {
                Some(snr) => {
                    let noisy = snr_mix(&c.audio, snr, mix_seed(seed, NOISE_STREAM, i as u64))?;
                    feature_values(bank, &noisy)?
                }
                None => feature_values(bank, &c.audio)?,
            };
            Ok(clf.predict(&average(&feats)) == c.label)
        })
        .collect::<Result<Vec<bool>, CodesignError>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / clips.len() as f64)
}

struct Params {
    log_phi: Vec<f64>,
    clf: Vec<f64>,
}

fn record(
    epoch: usize,
    loss: f64,
    acc: f64,
    bank: &FilterBank,
) -> EpochRecord {
    EpochRecord {
        epoch,
        loss,
        acc,
        sum_phi_g: bank.sum_phi_g(),
        sum_phi_c: bank.sum_phi_c(),
    }
}

/// Mini-batch SGD with momentum on every `log φ` and classifier weight.
///
/// Examples in a batch are processed in parallel and their gradients summed
/// in batch order, so results do not depend on the thread count.
pub fn train_codesign(
    data: &Dataset,
    bank: &FilterBank,
    classifier: &Classifier,
    loss: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained, CodesignError> {
    cfg.validate()?;
    loss.validate()?;
    data.validate()?;
    classifier.validate()?;
    if classifier.n_classes != data.classes.len() {
        return Err(CodesignError::Config(format!(
            "classifier has {} outputs for {} classes",
            classifier.n_classes,
            data.classes.len()
        )));
    }
    if bank.fs != data.fs {
        return Err(CodesignError::Config(format!(
            "bank sample rate {} differs from dataset rate {}",
            bank.fs, data.fs
        )));
    }
    let mut bank = bank.clone();
    let mut clf = classifier.clone();
    let n = data.train.len();

    let initial = data
        .train
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let audio = training_audio(c, cfg, seed, 0, i)?;
            value_loss(&bank, &clf, &mean_features(&bank, &audio)?, c.label, loss)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let loss0 = initial.iter().map(|(l, _)| l).sum::<f64>() / n as f64;
    let acc0 = initial.iter().filter(|(_, ok)| *ok).count() as f64 / n as f64;
    let mut history = vec![record(0, loss0, acc0, &bank)];
    on_epoch(&history[0]);

    let mut params = Params {
        log_phi: bank
            .channels
            .iter()
            .map(|c| c.log_phi_g)
            .chain(bank.channels.iter().map(|c| c.log_phi_c))
            .collect(),
        clf: clf.params().copied().collect(),
    };
    let mut vel = Params {
        log_phi: vec![0.0; 2 * N_CHANNELS],
        clf: vec![0.0; params.clf.len()],
    };
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| {
                    let clip = &data.train[i];
                    let audio = training_audio(clip, cfg, seed, epoch, i)?;
                    example_gradient(&bank, &clf, &audio, clip.label, loss)
                        .map(|g| (g, clip.label))
                })
                .collect::<Result<Vec<_>, _>>()?;

            let k = 1.0 / batch.len() as f64;
            let mut g_phi = vec![0.0; 2 * N_CHANNELS];
            let mut g_clf = vec![0.0; params.clf.len()];
            let mut batch_loss = 0.0;
            for (g, label) in &grads {
                batch_loss += g.loss;
                correct += usize::from(argmax(&g.logits) == *label);
                for c in 0..N_CHANNELS {
                    g_phi[c] += g.log_phi_g[c];
                    g_phi[N_CHANNELS + c] += g.log_phi_c[c];
                }
                for (a, b) in g_clf.iter_mut().zip(&g.classifier) {
                    *a += b;
                }
            }
            let diverged = |message: String| {
                CodesignError::Divergence(Box::new(Diverged {
                    epoch,
                    message,
                    bank: bank.clone(),
                    classifier: clf.clone(),
                    history: history.clone(),
                }))
            };
            let grads_finite = g_phi.iter().chain(&g_clf).all(|v| v.is_finite());
            if !batch_loss.is_finite() || !grads_finite {
                return Err(diverged(format!("non-finite loss or gradient ({batch_loss})")));
            }
            loss_sum += batch_loss;

            sgd_step(&mut params.log_phi, &mut vel.log_phi, &g_phi, k, cfg.lr_phi, cfg.momentum);
            sgd_step(&mut params.clf, &mut vel.clf, &g_clf, k, cfg.lr_classifier, cfg.momentum);

            let channels: Vec<BpfChannel> = (0..N_CHANNELS)
                .map(|c| BpfChannel {
                    log_phi_g: params.log_phi[c],
                    log_phi_c: params.log_phi[N_CHANNELS + c],
                })
                .collect();
            if channels.iter().any(|c| !(c.phi_g() > 0.0 && c.phi_c() > 0.0)) {
                return Err(diverged("a scaling factor left the positive range".into()));
            }
            if params.clf.iter().any(|v| !v.is_finite()) {
                return Err(diverged("non-finite classifier weight".into()));
            }
            let next = match FilterBank::new(bank.units, bank.fs, channels) {
                Ok(b) => b,
                Err(e) => return Err(diverged(e.to_string())),
            };
            bank = next;
            for (dst, src) in clf.params_mut().zip(&params.clf) {
                *dst = *src;
            }
        }
        let rec = record(epoch, loss_sum / n as f64, correct as f64 / n as f64, &bank);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(Trained {
        bank,
        classifier: clf,
        history,
    })
}

fn sgd_step(p: &mut [f64], v: &mut [f64], g: &[f64], scale: f64, lr: f64, mu: f64) {
    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = mu * *v + scale * g;
        *p -= lr * *v;
    }
}
