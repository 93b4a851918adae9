//! Multi-objective Bayesian optimization of analog circuit parameters and
//! gradient-based co-design of a bandpass filter-bank front end with a
//! keyword-spotting classifier.

pub mod circuit;
pub mod codesign;
pub mod csvfmt;
pub mod design_space;
pub mod gp;
pub mod mobo;
pub mod search;
pub mod spice;

pub use design_space::{
    sobol_init, to_minimization, BoundsError, CircuitMetrics, DesignPoint, DesignSpace,
    ObjectiveSpec, ObjectiveVector, Parameter, Scale, Sense, SpaceError,
};
pub use gp::{FitConfig, GpError, GpModel, KernelParams, MeanCov, NoiseMode};
pub use mobo::{
    hypervolume, pareto_front, run_optimization, AcqConfig, Evaluator, OptConfig, OptState,
    ParetoArchive,
};

/// Splitmix-style derivation of independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
