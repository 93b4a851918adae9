//! The initial-design + acquisition optimization loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::acquisition::{propose_batch, AcqConfig};
use super::hypervolume::HvError;
use super::pareto::ParetoArchive;
use crate::design_space::{sobol_init, BoundsError, CircuitMetrics, DesignPoint, DesignSpace, ObjectiveSpec};
use crate::gp::{FitConfig, GpError, GpModel, NoiseMode};
use crate::mix_seed as mix;

/// A failed evaluation, carried as its message.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Result of one successful evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Objective values in minimization form, ordered as `Evaluator::objectives`.
    pub objectives: Vec<f64>,
    pub metrics: Option<CircuitMetrics>,
}

/// Maps a design point to objective values. Must be deterministic.
pub trait Evaluator: Sync {
    fn objectives(&self) -> Vec<ObjectiveSpec>;
    fn evaluate(&self, point: &DesignPoint) -> Result<Evaluation, EvalError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Acquisition,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Acquisition => "acquisition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok {
        objectives: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metrics: Option<CircuitMetrics>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub phase: Phase,
    pub x: DesignPoint,
    pub outcome: Outcome,
}

impl Trial {
    /// Minimization-form objectives, if the evaluation succeeded.
    pub fn objectives(&self) -> Option<&[f64]> {
        match &self.outcome {
            Outcome::Ok { objectives, .. } => Some(objectives),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub n_init: usize,
    pub n_acq: usize,
    pub seed: u64,
    pub acq: AcqConfig,
    /// Fixed reference point; derived from the initial phase when absent.
    pub reference: Option<Vec<f64>>,
    pub gp_starts: usize,
    pub gp_sweeps: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            n_init: 10,
            n_acq: 25,
            seed: 0,
            acq: AcqConfig::default(),
            reference: None,
            gp_starts: 8,
            gp_sweeps: 200,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_init < 2 {
            return Err("n_init must be at least 2".into());
        }
        if self.gp_starts == 0 || self.gp_sweeps == 0 {
            return Err("gp_starts and gp_sweeps must be at least 1".into());
        }
        if let Some(r) = &self.reference {
            if r.iter().any(|v| !v.is_finite()) {
                return Err("reference must be finite".into());
            }
        }
        self.acq.validate()
    }
}

#[derive(Debug, Error)]
pub enum MoboError {
    #[error("{failed} of {total} initial evaluations failed")]
    EvaluatorUnreliable { failed: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("surrogate fit for objective {objective} failed: {source}")]
    Model { objective: String, source: GpError },
    #[error(transparent)]
    Hypervolume(#[from] HvError),
}

/// Everything needed to report on or resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub space: DesignSpace,
    pub objectives: Vec<ObjectiveSpec>,
    pub config: OptConfig,
    pub trials: Vec<Trial>,
    /// Frozen once the initial phase completes.
    pub reference: Option<Vec<f64>>,
    /// Hypervolume after each trial, filled once the reference is known.
    pub hv_trace: Vec<f64>,
}

impl OptState {
    pub fn new(space: DesignSpace, objectives: Vec<ObjectiveSpec>, config: OptConfig) -> Self {
        OptState {
            space,
            objectives,
            config,
            trials: Vec::new(),
            reference: None,
            hv_trace: Vec::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.config.n_init + self.config.n_acq
    }

    pub fn is_complete(&self) -> bool {
        self.trials.len() >= self.budget()
    }

    /// Archive of all successful trials (unit-cube inputs).
    pub fn archive(&self) -> Result<ParetoArchive, MoboError> {
        let reference = self
            .reference
            .clone()
            .ok_or_else(|| MoboError::Config("reference point not yet fixed".into()))?;
        let mut archive = ParetoArchive::new(reference);
        for t in &self.trials {
            if let Some(y) = t.objectives() {
                archive.insert(self.space.normalize(&t.x)?, y.to_vec());
            }
        }
        Ok(archive)
    }

    pub fn final_hypervolume(&self) -> f64 {
        self.hv_trace.last().copied().unwrap_or(0.0)
    }
}

/// Reference point: per-objective max plus 10% of the observed span.
///
/// A zero span falls back to 10% of the magnitude (or 0.1 at zero) so the
/// box never collapses.
pub fn reference_from(ys: &[&[f64]]) -> Vec<f64> {
    let m = ys[0].len();
    (0..m)
        .map(|k| {
            let hi = ys.iter().map(|y| y[k]).fold(f64::NEG_INFINITY, f64::max);
            let lo = ys.iter().map(|y| y[k]).fold(f64::INFINITY, f64::min);
            let span = hi - lo;
            let margin = if span > 0.0 {
                0.1 * span
            } else if hi != 0.0 {
                0.1 * hi.abs()
            } else {
                0.1
            };
            hi + margin
        })
        .collect()
}

/// Runs the full schedule from scratch.
pub fn run_optimization<E: Evaluator + ?Sized>(
    space: &DesignSpace,
    evaluator: &E,
    config: &OptConfig,
    on_trial: &mut dyn FnMut(&OptState),
) -> Result<OptState, MoboError> {
    config.validate().map_err(MoboError::Config)?;
    let mut state = OptState::new(space.clone(), evaluator.objectives(), config.clone());
    resume(&mut state, evaluator, on_trial)?;
    Ok(state)
}

/// Continues a (possibly partial) run until its budget is used.
pub fn resume<E: Evaluator + ?Sized>(
    state: &mut OptState,
    evaluator: &E,
    on_trial: &mut dyn FnMut(&OptState),
) -> Result<(), MoboError> {
    state.config.validate().map_err(MoboError::Config)?;
    let n_obj = state.objectives.len();
    if let Some(r) = &state.config.reference {
        if r.len() != n_obj {
            return Err(MoboError::Config(format!(
                "reference has {} entries, expected {n_obj}",
                r.len()
            )));
        }
    }
    let n_init = state.config.n_init;

    if state.trials.len() < n_init {
        let unit = sobol_init(n_init, state.space.dim(), state.config.seed);
        let todo: Vec<DesignPoint> = unit[state.trials.len()..]
            .iter()
            .map(|u| state.space.denormalize(u))
            .collect::<Result<_, _>>()?;
        // Points are independent, so evaluate them together and record in order.
        let results: Vec<Result<Evaluation, EvalError>> =
            todo.par_iter().map(|x| evaluator.evaluate(x)).collect();
        for (x, r) in todo.into_iter().zip(results) {
            record(state, Phase::Init, x, r, n_obj);
            on_trial(state);
        }
    }

    if state.reference.is_none() {
        let init: Vec<&[f64]> = state.trials[..n_init]
            .iter()
            .filter_map(|t| t.objectives())
            .collect();
        let failed = n_init - init.len();
        if 2 * failed >= n_init {
            return Err(MoboError::EvaluatorUnreliable {
                failed,
                total: n_init,
            });
        }
        let reference = match &state.config.reference {
            Some(r) => r.clone(),
            None => reference_from(&init),
        };
        state.reference = Some(reference);
        rebuild_trace(state)?;
        on_trial(state);
    }

    while !state.is_complete() {
        let remaining = state.budget() - state.trials.len();
        let step = state.trials.len() as u64;
        let (xs, ys): (Vec<Vec<f64>>, Vec<&[f64]>) = {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for t in &state.trials {
                if let Some(y) = t.objectives() {
                    xs.push(state.space.normalize(&t.x)?);
                    ys.push(y);
                }
            }
            (xs, ys)
        };
        let fit = |k: usize| {
            let yk: Vec<f64> = ys.iter().map(|y| y[k]).collect();
            let cfg = FitConfig {
                starts: state.config.gp_starts,
                sweeps: state.config.gp_sweeps,
                seed: mix(state.config.seed, step, k as u64 + 1),
                noise: NoiseMode::Learn,
            };
            GpModel::fit_with(&xs, &yk, &cfg).map_err(|source| MoboError::Model {
                objective: state.objectives[k].name.clone(),
                source,
            })
        };
        let models: Vec<GpModel> = (0..n_obj)
            .into_par_iter()
            .map(fit)
            .collect::<Result<_, _>>()?;

        let archive = state.archive()?;
        let acq = AcqConfig {
            seed: mix(state.config.seed, step, 0),
            batch_q: state.config.acq.batch_q.min(remaining),
            ..state.config.acq.clone()
        };
        let batch = propose_batch(&models, &archive, &acq);
        let points: Vec<DesignPoint> = batch
            .iter()
            .map(|u| state.space.denormalize(u))
            .collect::<Result<_, _>>()?;
        let results: Vec<Result<Evaluation, EvalError>> =
            points.par_iter().map(|x| evaluator.evaluate(x)).collect();
        for (x, r) in points.into_iter().zip(results) {
            record(state, Phase::Acquisition, x, r, n_obj);
            push_hv(state)?;
            on_trial(state);
        }
    }
    Ok(())
}

fn record(state: &mut OptState, phase: Phase, x: DesignPoint, r: Result<Evaluation, EvalError>, n_obj: usize) {
    let outcome = match r {
        Ok(e) if e.objectives.len() != n_obj => Outcome::Failed {
            error: format!("evaluator returned {} objectives, expected {n_obj}", e.objectives.len()),
        },
        Ok(e) if e.objectives.iter().any(|v| !v.is_finite()) => Outcome::Failed {
            error: "evaluator returned a non-finite objective".into(),
        },
        Ok(e) => Outcome::Ok {
            objectives: e.objectives,
            metrics: e.metrics,
        },
        Err(e) => Outcome::Failed { error: e.0 },
    };
    let index = state.trials.len();
    state.trials.push(Trial {
        index,
        phase,
        x,
        outcome,
    });
}

fn rebuild_trace(state: &mut OptState) -> Result<(), MoboError> {
    let reference = state.reference.clone().expect("reference fixed");
    let mut archive = ParetoArchive::new(reference);
    state.hv_trace.clear();
    for t in &state.trials {
        if let Some(y) = t.objectives() {
            archive.insert(Vec::new(), y.to_vec());
        }
        state.hv_trace.push(archive.hypervolume()?);
    }
    Ok(())
}

fn push_hv(state: &mut OptState) -> Result<(), MoboError> {
    let hv = state.archive()?.hypervolume()?;
    // The archive only grows, so a smaller value can only be rounding.
    let prev = state.hv_trace.last().copied().unwrap_or(0.0);
    state.hv_trace.push(hv.max(prev));
    Ok(())
}
