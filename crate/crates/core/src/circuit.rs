//! Analytic transconductor model and metric extraction from Gm and AC sweeps.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvfmt::num;
use crate::design_space::{
    to_minimization, CircuitMetrics, DesignPoint, ObjectiveSpec,
};
use crate::mobo::{EvalError, Evaluation, Evaluator};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SweepError {
    #[error("sweep needs at least 3 points, got {0}")]
    TooShort(usize),
    #[error("sweep axis and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sweep axis is not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("non-finite or out-of-range value at index {0}")]
    BadValue(usize),
}

fn check_axis(axis: &[f64], values: &[f64]) -> Result<(), SweepError> {
    if axis.len() != values.len() {
        return Err(SweepError::LengthMismatch(axis.len(), values.len()));
    }
    if axis.len() < 3 {
        return Err(SweepError::TooShort(axis.len()));
    }
    for i in 0..axis.len() {
        if !axis[i].is_finite() || !values[i].is_finite() {
            return Err(SweepError::BadValue(i));
        }
        if i > 0 && axis[i] <= axis[i - 1] {
            return Err(SweepError::NotIncreasing(i));
        }
    }
    Ok(())
}

/// Transconductance versus gate voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmSweep {
    vg: Vec<f64>,
    gm: Vec<f64>,
}

impl GmSweep {
    pub fn new(vg: Vec<f64>, gm: Vec<f64>) -> Result<Self, SweepError> {
        check_axis(&vg, &gm)?;
        Ok(GmSweep { vg, gm })
    }

    pub fn vg(&self) -> &[f64] {
        &self.vg
    }

    pub fn gm(&self) -> &[f64] {
        &self.gm
    }

    pub fn scaled(&self, k: f64) -> Result<Self, SweepError> {
        GmSweep::new(self.vg.clone(), self.gm.iter().map(|g| g * k).collect())
    }
}

/// Small-signal magnitude versus frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSweep {
    freq: Vec<f64>,
    mag: Vec<f64>,
}

impl AcSweep {
    pub fn new(freq: Vec<f64>, mag: Vec<f64>) -> Result<Self, SweepError> {
        check_axis(&freq, &mag)?;
        if let Some(i) = freq.iter().zip(&mag).position(|(f, m)| *f <= 0.0 || *m <= 0.0) {
            return Err(SweepError::BadValue(i));
        }
        Ok(AcSweep { freq, mag })
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn mag(&self) -> &[f64] {
        &self.mag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn linear(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + step * i as f64).collect()
    }

    pub fn logarithmic(&self) -> Vec<f64> {
        let (a, b) = (self.start.log10(), self.stop.log10());
        let step = (b - a) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| 10f64.powf(a + step * i as f64))
            .collect()
    }

    fn step(&self) -> f64 {
        (self.stop - self.start) / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Allowed linear-fit residual as a fraction of the in-window Gm span.
    pub lin_tol: f64,
    /// Shortest acceptable linear window (V).
    pub min_window: f64,
    pub vg_grid: Grid,
    pub ac_grid: Grid,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            lin_tol: 0.01,
            min_window: 0.1,
            vg_grid: Grid {
                start: 0.0,
                stop: 1.2,
                points: 121,
            },
            ac_grid: Grid {
                start: 1e3,
                stop: 1e9,
                points: 121,
            },
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lin_tol > 0.0 && self.lin_tol < 1.0) {
            return Err("lin_tol must lie in (0, 1)".into());
        }
        for (name, g) in [("vg_grid", &self.vg_grid), ("ac_grid", &self.ac_grid)] {
            if g.points < 3 || !(g.stop > g.start) || !g.start.is_finite() || !g.stop.is_finite() {
                return Err(format!("{name} needs at least 3 points and stop > start"));
            }
        }
        if !(self.ac_grid.start > 0.0) {
            return Err("ac_grid must start above 0 Hz".into());
        }
        if !(self.min_window > self.vg_grid.step()) {
            return Err("min_window must exceed the vg grid step".into());
        }
        Ok(())
    }
}

/// Geometry of the default design space: `w1..w4` in µm and `vcm` in V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sizing {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub vcm: f64,
}

impl Sizing {
    pub fn from_point(x: &DesignPoint) -> Option<Self> {
        match x.0[..] {
            [w1, w2, w3, w4, vcm] => Some(Sizing { w1, w2, w3, w4, vcm }),
            _ => None,
        }
    }

    fn slope(&self) -> f64 {
        40e-6 * (self.w1 * self.w2).sqrt() / 10.0
    }

    fn vth(&self) -> f64 {
        0.3 + 0.1 * (1.0 - self.vcm / 1.2)
    }

    fn vsat(&self) -> f64 {
        0.55 + 0.015 * (self.w3 + self.w4)
    }

    /// Smooth turn-on above `vth` times a roll-off above `vsat`.
    pub fn gm(&self, v: f64) -> f64 {
        const ON: f64 = 0.02;
        const OFF: f64 = 0.05;
        let z = (v - self.vth()) / ON;
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        let rolloff = 1.0 / (1.0 + (-(self.vsat() - v) / OFF).exp());
        self.slope() * ON * softplus * rolloff
    }

    pub fn power(&self) -> f64 {
        1e-5 * ((self.w1 + self.w2 + self.w3 + self.w4) / 20.0) * self.vcm
    }

    pub fn noise(&self) -> f64 {
        3e-8 * (10.0 / (self.w1 * self.w2)).sqrt() / self.vcm.sqrt()
    }

    pub fn load_capacitance(&self) -> f64 {
        0.5e-12 * (self.w3 + self.w4) / 10.0
    }

    pub fn pole_frequency(&self) -> f64 {
        self.gm(self.vth() + 0.25) / (2.0 * PI * self.load_capacitance())
    }
}

/// Raw behavioral-model outputs for one design point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSweeps {
    pub gm: GmSweep,
    pub ac: AcSweep,
    pub power: f64,
    pub noise: f64,
}

/// Evaluates the behavioral model on the configured grids.
///
/// # Panics
///
/// If `x` does not have the five default parameters.
pub fn simulate_analytic(x: &DesignPoint, cfg: &MetricsConfig) -> AnalyticSweeps {
    let s = Sizing::from_point(x).expect("analytic model takes w1, w2, w3, w4, vcm");
    let vg = cfg.vg_grid.linear();
    let gm = vg.iter().map(|v| s.gm(*v)).collect();
    let fc = s.pole_frequency();
    let freq = cfg.ac_grid.logarithmic();
    let mag = freq
        .iter()
        .map(|f| 1.0 / (1.0 + (f / fc).powi(2)).sqrt())
        .collect();
    AnalyticSweeps {
        gm: GmSweep::new(vg, gm).expect("model grid is valid"),
        ac: AcSweep::new(freq, mag).expect("model grid is valid"),
        power: s.power(),
        noise: s.noise(),
    }
}

/// Contiguous index range `[start, end]` of the best linear window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

/// Metrics plus the diagnostics behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub metrics: CircuitMetrics,
    pub window: Option<Window>,
    /// No -3 dB crossing inside the AC grid; `B` is the top grid frequency.
    pub bandwidth_truncated: bool,
}

/// Least-squares line through the points; returns (R², max |residual|).
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let mut ss_res = 0.0;
    let mut max_res: f64 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let r = b - (my + slope * (a - mx));
        ss_res += r * r;
        max_res = max_res.max(r.abs());
    }
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    (r2.clamp(0.0, 1.0), max_res)
}

/// Longest contiguous window (by voltage width, ties to the lower start)
/// whose line fit stays within `lin_tol` of the in-window Gm span.
///
/// Windows with zero span carry no usable range and are rejected.
pub fn linear_window(gm: &GmSweep, cfg: &MetricsConfig) -> Option<(Window, f64)> {
    let (vg, g) = (gm.vg(), gm.gm());
    let n = vg.len();
    let eps = 1e-12 * (vg[n - 1] - vg[0]);
    let mut best: Option<(Window, f64, f64)> = None;
    for len in (1..n).rev() {
        let max_width = (0..n - len).map(|a| vg[a + len] - vg[a]).fold(0.0, f64::max);
        if max_width + eps < cfg.min_window {
            break;
        }
        if let Some((_, _, w)) = best {
            if max_width < w {
                break;
            }
        }
        for a in 0..n - len {
            let b = a + len;
            let width = vg[b] - vg[a];
            if width + eps < cfg.min_window {
                continue;
            }
            if let Some((win, _, w)) = best {
                if width < w || (width == w && a > win.start) {
                    continue;
                }
            }
            let ys = &g[a..=b];
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let span = hi - lo;
            if !(span > 0.0) {
                continue;
            }
            let (r2, max_res) = line_fit(&vg[a..=b], ys);
            if max_res <= cfg.lin_tol * span {
                best = Some((Window { start: a, end: b }, r2, width));
            }
        }
    }
    best.map(|(w, r2, _)| (w, r2))
}

/// -3 dB frequency: first point below `mag[0]/√2`, interpolated in log-log.
/// Returns the top frequency and `true` if the response never drops that far.
pub fn bandwidth(ac: &AcSweep) -> (f64, bool) {
    let (f, m) = (ac.freq(), ac.mag());
    let target = m[0] / 2f64.sqrt();
    match m.iter().position(|v| *v < target) {
        Some(i) => {
            let (lf0, lf1) = (f[i - 1].ln(), f[i].ln());
            let (lm0, lm1) = (m[i - 1].ln(), m[i].ln());
            let t = (target.ln() - lm0) / (lm1 - lm0);
            ((lf0 + t * (lf1 - lf0)).exp(), false)
        }
        None => (f[f.len() - 1], true),
    }
}

pub fn extract_details(gm: &GmSweep, ac: &AcSweep, p: f64, n: f64, cfg: &MetricsConfig) -> Extraction {
    let (window, r, gamma) = match linear_window(gm, cfg) {
        Some((w, r2)) => (Some(w), (gm.gm()[w.end] - gm.gm()[w.start]).abs(), r2),
        None => (None, 0.0, 0.0),
    };
    let (b, bandwidth_truncated) = bandwidth(ac);
    Extraction {
        metrics: CircuitMetrics { r, gamma, b, p, n },
        window,
        bandwidth_truncated,
    }
}

pub fn extract_metrics(gm: &GmSweep, ac: &AcSweep, p: f64, n: f64, cfg: &MetricsConfig) -> CircuitMetrics {
    extract_details(gm, ac, p, n, cfg).metrics
}

pub fn evaluate_point(x: &DesignPoint, cfg: &MetricsConfig) -> (CircuitMetrics, [f64; 5]) {
    let s = simulate_analytic(x, cfg);
    let m = extract_metrics(&s.gm, &s.ac, s.power, s.noise, cfg);
    (m, to_minimization(&m).0)
}

/// The behavioral model as an optimization backend.
#[derive(Debug, Clone, Default)]
pub struct AnalyticEvaluator {
    pub metrics: MetricsConfig,
}

impl Evaluator for AnalyticEvaluator {
    fn objectives(&self) -> Vec<ObjectiveSpec> {
        ObjectiveSpec::circuit()
    }

    fn evaluate(&self, point: &DesignPoint) -> Result<Evaluation, EvalError> {
        if point.0.len() != 5 {
            return Err(EvalError(format!(
                "analytic model takes 5 parameters, got {}",
                point.0.len()
            )));
        }
        let (m, y) = evaluate_point(point, &self.metrics);
        if !m.is_valid() {
            return Err(EvalError(format!("invalid metrics {m:?}")));
        }
        Ok(Evaluation {
            objectives: y.to_vec(),
            metrics: Some(m),
        })
    }
}

pub fn write_gm_csv<W: Write>(sweep: &GmSweep, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vg", "gm"])?;
    for (v, g) in sweep.vg().iter().zip(sweep.gm()) {
        w.write_record([num(*v), num(*g)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ac_csv<W: Write>(sweep: &AcSweep, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq", "mag"])?;
    for (f, m) in sweep.freq().iter().zip(sweep.mag()) {
        w.write_record([num(*f), num(*m)])?;
    }
    w.flush()?;
    Ok(())
}
