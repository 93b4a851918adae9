use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::raw::{parse_ascii_raw, Plot, SimTables};
use super::runner::{run_simulation, SimError, SimJob, DEFAULT_CONVERGENCE_MARKERS};
use super::template::NetlistTemplate;
use crate::circuit::{extract_metrics, AcSweep, GmSweep, MetricsConfig};
use crate::design_space::{to_minimization, DesignPoint, DesignSpace, ObjectiveSpec};
use crate::mobo::{EvalError, Evaluation, Evaluator};

/// Environment variable that overrides the configured simulator path.
pub const SIMULATOR_ENV: &str = "ANALOG_SPICE_PATH";

fn default_timeout() -> f64 {
    60.0
}

fn default_markers() -> Vec<String> {
    DEFAULT_CONVERGENCE_MARKERS.iter().map(|s| s.to_string()).collect()
}

/// A scalar read from the first point of a plot variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSource {
    pub plot: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiceConfig {
    pub path: PathBuf,
    pub template: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Design parameter name to template placeholder name.
    pub map: BTreeMap<String, String>,
    /// DC sweep plot: its scale is the gate voltage.
    pub gm_plot: String,
    /// Transconductance column; defaults to the first non-scale variable.
    #[serde(default)]
    pub gm_var: Option<String>,
    /// AC plot: its scale is the frequency.
    pub ac_plot: String,
    #[serde(default)]
    pub ac_var: Option<String>,
    /// Supply power (W), absolute value taken.
    pub power: ScalarSource,
    /// Input-referred noise density (V/sqrt(Hz)).
    pub noise: ScalarSource,
    #[serde(default = "default_markers")]
    pub convergence_markers: Vec<String>,
}

impl SpiceConfig {
    /// Simulator path after applying the environment override.
    pub fn simulator_path(&self) -> PathBuf {
        match std::env::var_os(SIMULATOR_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.path.clone(),
        }
    }

    pub fn validate(&self, space: &DesignSpace, template: &NetlistTemplate) -> Result<(), String> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err("spice.timeout_s must be positive".into());
        }
        for param in self.map.keys() {
            if space.index_of(param).is_none() {
                return Err(format!("spice.map names unknown parameter {param}"));
            }
        }
        let mapped: Vec<&String> = self.map.values().collect();
        for slot in template.required_params() {
            if !mapped.contains(&slot) {
                return Err(format!("template placeholder {{{slot}}} is not mapped"));
            }
        }
        Ok(())
    }
}

/// Circuit metrics from one set of simulator tables.
pub fn metrics_from_tables(
    tables: &SimTables,
    cfg: &SpiceConfig,
    metrics: &MetricsConfig,
) -> Result<crate::design_space::CircuitMetrics, String> {
    let find = |name: &str| {
        tables
            .plot(name)
            .ok_or_else(|| format!("no plot named {name:?} in simulator output"))
    };
    let column = |plot: &'_ Plot, var: &Option<String>| -> Result<Vec<f64>, String> {
        match var {
            Some(v) => plot
                .column(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| format!("plot {:?} has no variable {v:?}", plot.name)),
            None if plot.data.len() >= 2 => Ok(plot.data[1].clone()),
            None => Err(format!("plot {:?} has no data column", plot.name)),
        }
    };
    let scalar = |src: &ScalarSource| -> Result<f64, String> {
        let plot = find(&src.plot)?;
        let col = plot
            .column(&src.var)
            .ok_or_else(|| format!("plot {:?} has no variable {:?}", src.plot, src.var))?;
        col.first()
            .map(|v| v.abs())
            .ok_or_else(|| format!("plot {:?} is empty", src.plot))
    };

    let gm_plot = find(&cfg.gm_plot)?;
    let gm = GmSweep::new(gm_plot.data[0].clone(), column(gm_plot, &cfg.gm_var)?)
        .map_err(|e| format!("gm sweep: {e}"))?;
    let ac_plot = find(&cfg.ac_plot)?;
    let ac = AcSweep::new(ac_plot.data[0].clone(), column(ac_plot, &cfg.ac_var)?)
        .map_err(|e| format!("ac sweep: {e}"))?;
    Ok(extract_metrics(
        &gm,
        &ac,
        scalar(&cfg.power)?,
        scalar(&cfg.noise)?,
        metrics,
    ))
}

/// Evaluates design points by simulating a rendered netlist.
#[derive(Debug, Clone)]
pub struct SpiceEvaluator {
    pub space: DesignSpace,
    pub template: NetlistTemplate,
    pub config: SpiceConfig,
    pub metrics: MetricsConfig,
    /// Parent of the per-evaluation working directories.
    pub scratch: PathBuf,
}

impl SpiceEvaluator {
    /// Loads the template named in `config`, resolved against `base_dir`.
    pub fn load(
        space: DesignSpace,
        config: SpiceConfig,
        metrics: MetricsConfig,
        base_dir: &Path,
        scratch: PathBuf,
    ) -> Result<Self, String> {
        let path = base_dir.join(&config.template);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read template {}: {e}", path.display()))?;
        let template = NetlistTemplate::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        config.validate(&space, &template)?;
        Ok(SpiceEvaluator {
            space,
            template,
            config,
            metrics,
            scratch,
        })
    }

    pub fn simulate(&self, point: &DesignPoint) -> Result<SimTables, SimError> {
        let names: Vec<&str> = self.space.names().collect();
        let netlist = self
            .template
            .render_point(&names, &point.0, &self.config.map)
            .map_err(|e| SimError::SimulatorError(format!("netlist: {e}")))?;
        std::fs::create_dir_all(&self.scratch)?;
        let dir = tempfile::Builder::new()
            .prefix("sim-")
            .tempdir_in(&self.scratch)?;
        let job = SimJob {
            simulator_path: self.config.simulator_path(),
            timeout: Duration::from_secs_f64(self.config.timeout_s),
            workdir: dir.path().to_path_buf(),
            convergence_markers: self.config.convergence_markers.clone(),
        };
        let raw = run_simulation(&netlist, &job)?;
        parse_ascii_raw(&raw).map_err(|e| SimError::SimulatorError(format!("raw output: {e}")))
    }
}

impl Evaluator for SpiceEvaluator {
    fn objectives(&self) -> Vec<ObjectiveSpec> {
        ObjectiveSpec::circuit()
    }

    fn evaluate(&self, point: &DesignPoint) -> Result<Evaluation, EvalError> {
        let tables = self.simulate(point).map_err(|e| EvalError(e.to_string()))?;
        let m = metrics_from_tables(&tables, &self.config, &self.metrics).map_err(EvalError)?;
        if !m.is_valid() {
            return Err(EvalError(format!("invalid metrics {m:?}")));
        }
        Ok(Evaluation {
            objectives: to_minimization(&m).0.to_vec(),
            metrics: Some(m),
        })
    }
}
