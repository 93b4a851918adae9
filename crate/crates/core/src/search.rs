//! Derivative-free bounded coordinate search shared by hyperparameter fitting
//! and acquisition maximization.

/// Settings for [`maximize`].
#[derive(Debug, Clone, Copy)]
pub struct CoordinateSearch {
    /// Initial step per coordinate.
    pub initial_step: f64,
    /// Maximum number of full sweeps over all coordinates.
    pub max_sweeps: usize,
    /// Search stops once every coordinate step is below this.
    pub min_step: f64,
    /// Upper cap for a grown step.
    pub max_step: f64,
    /// Budget of objective evaluations, counting the one at `x0`.
    pub max_evals: usize,
}

/// Maximizes `f` over the box `[lower, upper]` starting at `x0`.
///
/// Each sweep tries `+step` then `-step` on every coordinate in turn. An
/// accepted move doubles that coordinate's step, a failed pair halves it.
/// Only strict improvements are accepted, so the returned value is never
/// below `f(x0)`.
pub fn maximize<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &CoordinateSearch,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        fx = f64::NEG_INFINITY;
    }
    let mut steps = vec![cfg.initial_step; x.len()];
    let mut trial = x.clone();
    'sweeps: for _ in 0..cfg.max_sweeps {
        for i in 0..x.len() {
            let mut moved = false;
            for dir in [1.0, -1.0] {
                let candidate = (x[i] + dir * steps[i]).clamp(lower[i], upper[i]);
                if candidate == x[i] {
                    continue;
                }
                if evals >= cfg.max_evals {
                    break 'sweeps;
                }
                evals += 1;
                trial.copy_from_slice(&x);
                trial[i] = candidate;
                let ft = f(&trial);
                if ft > fx {
                    x[i] = candidate;
                    fx = ft;
                    moved = true;
                    break;
                }
            }
            steps[i] = if moved {
                (steps[i] * 2.0).min(cfg.max_step)
            } else {
                steps[i] * 0.5
            };
        }
        if steps.iter().all(|s| *s < cfg.min_step) {
            break;
        }
    }
    (x, fx)
}
