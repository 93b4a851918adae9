use serde::{Deserialize, Serialize};

use super::optimizer::{OptState, Phase};
use super::pareto::pareto_front;
use crate::design_space::Sense;

/// Best values of one objective in natural units (not minimization form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub name: String,
    pub sense: Sense,
    pub best_init: f64,
    pub best_overall: f64,
    /// Positive when the metric got better. Relative to `|best_init|` unless
    /// `absolute` is set, in which case it is the plain difference.
    pub improvement: f64,
    /// Set when `best_init` is zero and a relative change is undefined.
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objectives: Vec<ObjectiveReport>,
    pub n_trials: usize,
    pub n_failed: usize,
    pub front_size: usize,
    pub reference: Option<Vec<f64>>,
    pub hv_trace: Vec<f64>,
    pub final_hypervolume: f64,
}

/// Improvement of `overall` over `init` in the metric's natural orientation.
pub fn improvement(sense: Sense, init: f64, overall: f64) -> (f64, bool) {
    let delta = match sense {
        Sense::Maximize => overall - init,
        Sense::Minimize => init - overall,
    };
    if init == 0.0 {
        (delta, true)
    } else {
        (delta / init.abs(), false)
    }
}

/// Per-objective improvement of the whole run over its initial phase.
///
/// # Panics
///
/// If the state has no successful initial trial.
pub fn report(state: &OptState) -> Summary {
    let ok: Vec<(Phase, &[f64])> = state
        .trials
        .iter()
        .filter_map(|t| t.objectives().map(|y| (t.phase, y)))
        .collect();
    assert!(
        ok.iter().any(|(p, _)| *p == Phase::Init),
        "report needs at least one successful initial trial"
    );
    let objectives = state
        .objectives
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            // Minimization form: smaller is better; map back with the sign.
            let best = |init_only: bool| {
                ok.iter()
                    .filter(|(p, _)| !init_only || *p == Phase::Init)
                    .map(|(_, y)| y[k])
                    .fold(f64::INFINITY, f64::min)
                    * spec.sense.sign()
            };
            let best_init = best(true);
            let best_overall = best(false);
            let (improvement, absolute) = improvement(spec.sense, best_init, best_overall);
            ObjectiveReport {
                name: spec.name.clone(),
                sense: spec.sense,
                best_init,
                best_overall,
                improvement,
                absolute,
            }
        })
        .collect();
    let ys: Vec<Vec<f64>> = ok.iter().map(|(_, y)| y.to_vec()).collect();
    Summary {
        objectives,
        n_trials: state.trials.len(),
        n_failed: state.trials.len() - ok.len(),
        front_size: pareto_front(&ys).len(),
        reference: state.reference.clone(),
        hv_trace: state.hv_trace.clone(),
        final_hypervolume: state.final_hypervolume(),
    }
}
