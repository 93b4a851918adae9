//! External SPICE backend: netlist templates, the simulator subprocess and
//! ASCII raw output.

mod evaluator;
mod raw;
mod runner;
mod template;

pub use evaluator::{metrics_from_tables, ScalarSource, SpiceConfig, SpiceEvaluator, SIMULATOR_ENV};
pub use raw::{parse_ascii_raw, write_ascii_raw, ParseError, Plot, SimTables, Variable};
pub use runner::{run_simulation, SimError, SimJob, DEFAULT_CONVERGENCE_MARKERS};
pub use template::{si_format, NetlistTemplate, TemplateError};
