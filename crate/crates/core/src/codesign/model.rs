//! Classifier head and the composite training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Tape, Var};
use super::bpf::N_CHANNELS;
use super::features::{BankVars, Frame};
use super::CodesignError;

/// Dense `16 → hidden (ReLU) → n_classes` on standardized time-averaged
/// features. The standardization is fixed, not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Classifier {
    pub hidden: usize,
    pub n_classes: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Row-major `hidden × 16`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `n_classes × hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

pub struct ClassifierVars {
    w1: Vec<Var>,
    b1: Vec<Var>,
    w2: Vec<Var>,
    b2: Vec<Var>,
}

impl ClassifierVars {
    /// Parameter nodes in [`Classifier::params`] order.
    pub fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied()
    }
}

impl Classifier {
    /// He-uniform weights, zero biases, identity standardization.
    pub fn new(n_classes: usize, hidden: usize, seed: u64) -> Result<Self, CodesignError> {
        if n_classes < 2 {
            return Err(CodesignError::Config(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if hidden == 0 {
            return Err(CodesignError::Config("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let b = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        };
        Ok(Classifier {
            hidden,
            n_classes,
            input_mean: vec![0.0; N_CHANNELS],
            input_scale: vec![1.0; N_CHANNELS],
            w1: uniform(hidden * N_CHANNELS, N_CHANNELS),
            b1: vec![0.0; hidden],
            w2: uniform(n_classes * hidden, hidden),
            b2: vec![0.0; n_classes],
        })
    }

    /// Sets the standardization from a sample of time-averaged features.
    pub fn fit_normalization(&mut self, features: &[Frame]) {
        if features.is_empty() {
            return;
        }
        let n = features.len() as f64;
        for c in 0..N_CHANNELS {
            let mean = features.iter().map(|f| f[c]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[c] - mean).powi(2)).sum::<f64>() / n;
            self.input_mean[c] = mean;
            self.input_scale[c] = 1.0 / var.sqrt().max(1e-3);
        }
    }

    pub fn validate(&self) -> Result<(), CodesignError> {
        let shapes = [
            ("input_mean", self.input_mean.len(), N_CHANNELS),
            ("input_scale", self.input_scale.len(), N_CHANNELS),
            ("w1", self.w1.len(), self.hidden * N_CHANNELS),
            ("b1", self.b1.len(), self.hidden),
            ("w2", self.w2.len(), self.n_classes * self.hidden),
            ("b2", self.b2.len(), self.n_classes),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(CodesignError::Config(format!(
                    "classifier {name} has {got} entries, expected {want}"
                )));
            }
        }
        if self.n_classes < 2 {
            return Err(CodesignError::Config("classifier needs at least 2 classes".into()));
        }
        let all = self.input_mean.iter().chain(&self.input_scale).chain(self.params());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(CodesignError::Config("classifier has non-finite weights".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Trainable weights in a fixed order: w1, b1, w2, b2.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
    }

    pub fn logits(&self, features: &Frame) -> Vec<f64> {
        let z: Vec<f64> = (0..N_CHANNELS)
            .map(|c| (features[c] - self.input_mean[c]) * self.input_scale[c])
            .collect();
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * N_CHANNELS..(j + 1) * N_CHANNELS];
                let a = self.b1[j] + row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>();
                a.max(0.0)
            })
            .collect();
        (0..self.n_classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, features: &Frame) -> usize {
        argmax(&self.logits(features))
    }

    pub fn on_tape(&self, t: &mut Tape) -> ClassifierVars {
        let mut leaves = |v: &[f64]| v.iter().map(|x| t.leaf(*x)).collect::<Vec<_>>();
        ClassifierVars {
            w1: leaves(&self.w1),
            b1: leaves(&self.b1),
            w2: leaves(&self.w2),
            b2: leaves(&self.b2),
        }
    }

    /// Logit nodes for time-averaged feature nodes.
    pub fn forward(&self, t: &mut Tape, vars: &ClassifierVars, features: &[Var]) -> Vec<Var> {
        let z: Vec<Var> = features
            .iter()
            .enumerate()
            .map(|(c, f)| {
                let centered = t.add_const(*f, -self.input_mean[c]);
                t.scale(centered, self.input_scale[c])
            })
            .collect();
        let h: Vec<Var> = (0..self.hidden)
            .map(|j| {
                let a = t.affine(&vars.w1[j * N_CHANNELS..(j + 1) * N_CHANNELS], &z, vars.b1[j]);
                t.relu(a)
            })
            .collect();
        (0..self.n_classes)
            .map(|k| t.affine(&vars.w2[k * self.hidden..(k + 1) * self.hidden], &h, vars.b2[k]))
            .collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Weights of cross-entropy, power (Σφg) and area (Σφc) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_ce: f64,
    pub lambda_p: f64,
    pub lambda_a: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_ce: 1.0,
            lambda_p: 0.0,
            lambda_a: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), CodesignError> {
        let l = [self.lambda_ce, self.lambda_p, self.lambda_a];
        if l.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(CodesignError::Config(format!(
                "loss weights must be finite and nonnegative, got {l:?}"
            )));
        }
        if l.iter().all(|x| *x == 0.0) {
            return Err(CodesignError::Config("all loss weights are zero".into()));
        }
        Ok(())
    }
}

/// `λce·CE + λp·Σφg + λa·Σφc`; terms with a zero weight are left off.
pub fn loss_bpf(
    t: &mut Tape,
    logits: &[Var],
    label: usize,
    bank: &BankVars,
    cfg: &LossConfig,
) -> Result<Var, CodesignError> {
    if label >= logits.len() {
        return Err(CodesignError::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut terms = Vec::with_capacity(3);
    if cfg.lambda_ce != 0.0 {
        let ce = t.cross_entropy(logits, label);
        terms.push(t.scale(ce, cfg.lambda_ce));
    }
    for (lambda, logs) in [(cfg.lambda_p, &bank.log_phi_g), (cfg.lambda_a, &bank.log_phi_c)] {
        if lambda != 0.0 {
            let phis: Vec<Var> = logs.iter().map(|l| t.exp(*l)).collect();
            let s = t.sum(&phis);
            terms.push(t.scale(s, lambda));
        }
    }
    Ok(match terms.as_slice() {
        [one] => *one,
        _ => t.sum(&terms),
    })
}
