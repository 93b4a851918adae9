//! Gaussian-process regression with an ARD Matérn-5/2 kernel.
//!
//! Targets are standardized internally; inputs are expected in the unit
//! cube. Hyperparameters are fitted by maximizing the log marginal likelihood
//! with a multi-start coordinate search in log space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{self, CoordinateSearch};

/// Smallest admissible observation-noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-10;

const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
const OUTPUT_SCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
const NOISE_BOUNDS: (f64, f64) = (NOISE_FLOOR, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),
}

/// Matérn-5/2 correlation at scaled distance `r`.
pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    /// Signal variance.
    pub output_scale: f64,
    /// Observation-noise variance.
    pub noise: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, output_scale: f64, noise: f64) -> Result<Self, GpError> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(GpError::InvalidKernel("lengthscales must be positive".into()));
        }
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(GpError::InvalidKernel("output scale must be positive".into()));
        }
        if !(noise >= NOISE_FLOOR && noise.is_finite()) {
            return Err(GpError::InvalidKernel(format!(
                "noise must be at least {NOISE_FLOOR}"
            )));
        }
        Ok(KernelParams {
            lengthscales,
            output_scale,
            noise,
        })
    }

    pub fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Noise-free covariance between two inputs.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.output_scale * matern52(self.scaled_distance(a, b))
    }

    fn to_log(&self, learn_noise: bool) -> Vec<f64> {
        let mut theta: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        theta.push(self.output_scale.ln());
        if learn_noise {
            theta.push(self.noise.ln());
        }
        theta
    }

    fn from_log(theta: &[f64], dim: usize, fixed_noise: Option<f64>) -> Self {
        KernelParams {
            lengthscales: theta[..dim].iter().map(|t| t.exp()).collect(),
            output_scale: theta[dim].exp(),
            noise: fixed_noise.unwrap_or_else(|| theta[dim + 1].exp()),
        }
    }
}

/// How observation noise is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    Learn,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub starts: usize,
    /// Maximum coordinate sweeps per start.
    pub sweeps: usize,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            starts: 8,
            sweeps: 200,
            seed: 0,
            noise: NoiseMode::Learn,
        }
    }
}

/// Posterior mean vector and covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCov {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl MeanCov {
    /// Lower factor `L` with `L Lᵀ ≈ cov`, tolerating exactly singular
    /// (e.g. zero-variance) covariances. Jitter relative to the largest
    /// variance escalates from 1e-10 to 1e-6 when the matrix is indefinite.
    pub fn factor(&self) -> Result<DMatrix<f64>, GpError> {
        psd_factor(&self.cov)
    }

    /// `mean + L·z` for each row `z` of `base` (`n_samples × n_query`).
    pub fn sample(&self, base: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GpError> {
        let l = self.factor()?;
        let q = self.mean.len();
        base.iter()
            .map(|z| {
                if z.len() != q {
                    return Err(GpError::InvalidData(format!(
                        "base row has {} entries, expected {q}",
                        z.len()
                    )));
                }
                Ok((0..q)
                    .map(|i| self.mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
                    .collect())
            })
            .collect()
    }
}

fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, GpError> {
    let n = cov.nrows();
    let scale = (0..n).map(|i| cov[(i, i)]).fold(0.0f64, f64::max);
    if n == 0 || scale <= 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let scaled = cov / scale;
    for jitter in [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6] {
        if let Some(l) = semidefinite_cholesky(&scaled, jitter) {
            return Ok(l * scale.sqrt());
        }
    }
    Err(GpError::IllConditioned(
        "posterior covariance not factorizable at maximum jitter".into(),
    ))
}

/// Cholesky that maps numerically-zero pivots to zero columns instead of
/// failing. Returns `None` on a clearly negative pivot.
fn semidefinite_cholesky(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    const ZERO_PIVOT: f64 = 1e-12;
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -ZERO_PIVOT {
            return None;
        }
        if d <= ZERO_PIVOT {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

/// Squared per-dimension differences for every unordered pair of rows.
struct PairDiffs {
    n: usize,
    dim: usize,
    sq: Vec<f64>,
}

impl PairDiffs {
    fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let dim = x[0].len();
        let mut sq = Vec::with_capacity(n * (n - 1) / 2 * dim);
        for i in 0..n {
            for j in 0..i {
                for k in 0..dim {
                    sq.push((x[i][k] - x[j][k]).powi(2));
                }
            }
        }
        PairDiffs { n, dim, sq }
    }

    fn covariance(&self, kernel: &KernelParams) -> DMatrix<f64> {
        let inv_l2: Vec<f64> = kernel.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut k = DMatrix::<f64>::zeros(self.n, self.n);
        let mut chunks = self.sq.chunks_exact(self.dim);
        for i in 0..self.n {
            for j in 0..i {
                let d = chunks.next().expect("pair count");
                let r2: f64 = d.iter().zip(&inv_l2).map(|(a, b)| a * b).sum();
                let v = kernel.output_scale * matern52(r2.sqrt());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] = kernel.output_scale + kernel.noise;
        }
        k
    }
}

fn lml_from_cov(k: DMatrix<f64>, y: &DVector<f64>) -> Option<(f64, DMatrix<f64>, DVector<f64>)> {
    let n = y.len() as f64;
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let l = chol.unpack();
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some((lml, l, alpha))
}

/// Log marginal likelihood of (already standardized) targets under `kernel`.
pub fn log_marginal_likelihood(
    x: &[Vec<f64>],
    y: &[f64],
    kernel: &KernelParams,
) -> Result<f64, GpError> {
    check_data(x, y, 1)?;
    let pairs = PairDiffs::new(x);
    lml_from_cov(pairs.covariance(kernel), &DVector::from_column_slice(y))
        .map(|(lml, _, _)| lml)
        .ok_or_else(|| GpError::IllConditioned("K + noise·I is not positive definite".into()))
}

fn check_data(x: &[Vec<f64>], y: &[f64], min_rows: usize) -> Result<(), GpError> {
    if x.len() < min_rows {
        return Err(GpError::InvalidData(format!(
            "need at least {min_rows} training rows, got {}",
            x.len()
        )));
    }
    if x.len() != y.len() {
        return Err(GpError::InvalidData(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(GpError::InvalidData("inconsistent input dimension".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpError::InvalidData("non-finite input".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::InvalidData("non-finite target".into()));
    }
    Ok(())
}

fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > f64::EPSILON * mean.abs() && std.is_finite() && std > 0.0 {
        (mean, std)
    } else {
        (mean, 1.0)
    }
}

fn has_conflicting_duplicates(x: &[Vec<f64>], y: &[f64]) -> bool {
    (0..x.len()).any(|i| (0..i).any(|j| x[i] == x[j] && y[i] != y[j]))
}

/// A fitted single-output GP surrogate.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    targets: DVector<f64>,
    kernel: KernelParams,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    lml: f64,
}

/// JSON-friendly snapshot of a model for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub kernel: KernelParams,
    pub y_mean: f64,
    pub y_std: f64,
    pub log_marginal_likelihood: f64,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl GpModel {
    /// Fits hyperparameters with the default multi-start configuration.
    pub fn fit(x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<Self, GpError> {
        GpModel::fit_with(
            x,
            y,
            &FitConfig {
                seed,
                ..FitConfig::default()
            },
        )
    }

    pub fn fit_with(x: &[Vec<f64>], y: &[f64], cfg: &FitConfig) -> Result<Self, GpError> {
        check_data(x, y, 2)?;
        let dim = x[0].len();
        let (y_mean, y_std) = standardization(y);
        let targets = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let fixed_noise = match cfg.noise {
            NoiseMode::Learn => None,
            NoiseMode::Fixed(v) => {
                if !(v >= NOISE_FLOOR) {
                    return Err(GpError::InvalidKernel(format!(
                        "fixed noise must be at least {NOISE_FLOOR}"
                    )));
                }
                Some(v)
            }
        };
        if let Some(noise) = fixed_noise {
            if noise <= 10.0 * NOISE_FLOOR && has_conflicting_duplicates(x, y) {
                return Err(GpError::IllConditioned(
                    "duplicate inputs with conflicting targets at the noise floor".into(),
                ));
            }
        }

        let pairs = PairDiffs::new(x);
        let objective = |theta: &[f64]| -> f64 {
            let kernel = KernelParams::from_log(theta, dim, fixed_noise);
            lml_from_cov(pairs.covariance(&kernel), &targets)
                .map(|(lml, _, _)| lml)
                .unwrap_or(f64::NEG_INFINITY)
        };

        let (lower, upper) = log_bounds(dim, fixed_noise.is_none());
        let search_cfg = CoordinateSearch {
            initial_step: 0.5,
            max_sweeps: cfg.sweeps,
            min_step: 1e-6,
            max_step: 2.0,
            max_evals: usize::MAX,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in 0..cfg.starts.max(1) {
            let theta0 = initial_log_params(start, dim, fixed_noise.is_none(), &mut rng);
            let (theta, value) = search::maximize(&objective, &theta0, &lower, &upper, &search_cfg);
            if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((theta, value));
            }
        }
        let (theta, _) = best.ok_or_else(|| {
            GpError::IllConditioned("no hyperparameter start produced a finite likelihood".into())
        })?;
        let kernel = KernelParams::from_log(&theta, dim, fixed_noise);
        GpModel::assemble(x, y, y_mean, y_std, targets, kernel, &pairs)
    }

    /// Conditions a GP on data with fixed hyperparameters (no fitting).
    pub fn with_kernel(x: &[Vec<f64>], y: &[f64], kernel: KernelParams) -> Result<Self, GpError> {
        check_data(x, y, 1)?;
        if kernel.lengthscales.len() != x[0].len() {
            return Err(GpError::InvalidKernel(format!(
                "{} lengthscales for {}-dimensional inputs",
                kernel.lengthscales.len(),
                x[0].len()
            )));
        }
        let kernel = KernelParams::new(kernel.lengthscales, kernel.output_scale, kernel.noise)?;
        if kernel.noise <= 10.0 * NOISE_FLOOR && has_conflicting_duplicates(x, y) {
            return Err(GpError::IllConditioned(
                "duplicate inputs with conflicting targets at the noise floor".into(),
            ));
        }
        let (y_mean, y_std) = standardization(y);
        let targets = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let pairs = PairDiffs::new(x);
        GpModel::assemble(x, y, y_mean, y_std, targets, kernel, &pairs)
    }

    fn assemble(
        x: &[Vec<f64>],
        y: &[f64],
        y_mean: f64,
        y_std: f64,
        targets: DVector<f64>,
        kernel: KernelParams,
        pairs: &PairDiffs,
    ) -> Result<Self, GpError> {
        let (lml, chol, alpha) = lml_from_cov(pairs.covariance(&kernel), &targets)
            .ok_or_else(|| GpError::IllConditioned("K + noise·I is not positive definite".into()))?;
        Ok(GpModel {
            x: x.to_vec(),
            y: y.to_vec(),
            y_mean,
            y_std,
            targets,
            kernel,
            chol,
            alpha,
            lml,
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_std(&self) -> f64 {
        self.y_std
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Standardized training targets.
    pub fn standardized_targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    /// Log marginal likelihood of the standardized targets at the fitted
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Hyperparameters as `[ln ℓ…, ln σ_f², ln σ_n²]`.
    pub fn log_hyperparameters(&self) -> Vec<f64> {
        self.kernel.to_log(true)
    }

    /// Log marginal likelihood of this model's standardized data at other
    /// log-hyperparameters (same layout as [`Self::log_hyperparameters`]).
    pub fn log_marginal_likelihood_at(&self, theta: &[f64]) -> Result<f64, GpError> {
        let kernel = KernelParams::from_log(theta, self.dim(), None);
        log_marginal_likelihood(&self.x, self.targets.as_slice(), &kernel)
    }

    fn cross_cov(&self, xq: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, xq)))
    }

    /// Posterior mean and variance at one query, in native target units.
    pub fn predict(&self, xq: &[f64]) -> (f64, f64) {
        let k = self.cross_cov(xq);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.kernel.output_scale - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * self.y_std * var)
    }

    /// Joint posterior of the latent function over `xq`, in native units.
    pub fn posterior(&self, xq: &[Vec<f64>]) -> Result<MeanCov, GpError> {
        let q = xq.len();
        if xq.iter().any(|r| r.len() != self.dim()) {
            return Err(GpError::InvalidData("query dimension mismatch".into()));
        }
        let kstar = DMatrix::from_fn(self.x.len(), q, |i, j| self.kernel.eval(&self.x[i], &xq[j]));
        let v = self.chol.solve_lower_triangular(&kstar).ok_or_else(|| {
            GpError::IllConditioned("singular Cholesky factor".into())
        })?;
        let mean_s = kstar.transpose() * &self.alpha;
        let kqq = DMatrix::from_fn(q, q, |i, j| self.kernel.eval(&xq[i], &xq[j]));
        let mut cov = (kqq - v.transpose() * v) * (self.y_std * self.y_std);
        for i in 0..q {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        Ok(MeanCov {
            mean: mean_s.iter().map(|m| self.y_mean + self.y_std * m).collect(),
            cov,
        })
    }

    /// Joint posterior samples: one output row per row of `base`.
    pub fn sample_joint(&self, xq: &[Vec<f64>], base: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GpError> {
        self.posterior(xq)?.sample(base)
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            kernel: self.kernel.clone(),
            y_mean: self.y_mean,
            y_std: self.y_std,
            log_marginal_likelihood: self.lml,
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

fn log_bounds(dim: usize, learn_noise: bool) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![LENGTHSCALE_BOUNDS.0.ln(); dim];
    let mut upper = vec![LENGTHSCALE_BOUNDS.1.ln(); dim];
    lower.push(OUTPUT_SCALE_BOUNDS.0.ln());
    upper.push(OUTPUT_SCALE_BOUNDS.1.ln());
    if learn_noise {
        lower.push(NOISE_BOUNDS.0.ln());
        upper.push(NOISE_BOUNDS.1.ln());
    }
    (lower, upper)
}

fn initial_log_params(start: usize, dim: usize, learn_noise: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut theta = Vec::with_capacity(dim + 2);
    if start == 0 {
        theta.extend(std::iter::repeat_n(0.5f64.ln(), dim));
        theta.push(0.0);
        if learn_noise {
            theta.push(1e-3f64.ln());
        }
    } else {
        for _ in 0..dim {
            theta.push(rng.random_range(0.05f64.ln()..2f64.ln()));
        }
        theta.push(rng.random_range(0.2f64.ln()..5f64.ln()));
        if learn_noise {
            theta.push(rng.random_range(1e-8f64.ln()..1e-2f64.ln()));
        }
    }
    theta
}
