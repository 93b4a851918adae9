//! Multi-objective Bayesian optimization: Pareto bookkeeping, exact
//! hypervolume, batch qEHVI acquisition and the optimization loop.

mod acquisition;
mod export;
mod hypervolume;
mod optimizer;
mod pareto;
mod report;

pub use acquisition::{propose_batch, qehvi, qehvi_from_posteriors, AcqConfig, BaseSamples};
pub use export::{write_hv_trace_csv, write_pareto_csv, write_trials_csv};
pub use hypervolume::{hypervolume, HvError};
pub use optimizer::{
    reference_from, resume, run_optimization, EvalError, Evaluation, Evaluator, MoboError,
    OptConfig, OptState, Outcome, Phase, Trial,
};
pub use pareto::{dominates, pareto_front, ArchiveEntry, ParetoArchive};
pub use report::{improvement, report, ObjectiveReport, Summary};
