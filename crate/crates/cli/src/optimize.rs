use std::path::{Path, PathBuf};

use gmopt_core::circuit::AnalyticEvaluator;
use gmopt_core::mobo::{
    report, resume, write_hv_trace_csv, write_pareto_csv, write_trials_csv, MoboError, OptState,
};
use gmopt_core::spice::SpiceEvaluator;
use gmopt_core::{DesignSpace, Evaluator};

use crate::config::{self, Mode};
use crate::{create_dir, write_file, Backend, CliError};

const ANALYTIC_PARAMS: [&str; 5] = ["w1", "w2", "w3", "w4", "vcm"];

fn csv_bytes(
    state: &OptState,
    f: fn(&OptState, &mut Vec<u8>) -> csv::Result<()>,
) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(state, &mut buf).map_err(CliError::runtime)?;
    Ok(buf)
}

fn save_state(path: &Path, state: &OptState) -> Result<(), CliError> {
    let json = serde_json::to_vec_pretty(state).map_err(CliError::runtime)?;
    write_file(path, &json)
}

pub fn run(
    config_path: &Path,
    backend: Backend,
    out: Option<PathBuf>,
    resume_run: bool,
) -> Result<(), CliError> {
    let l = config::load(config_path, Mode::Optimize)?;
    let space = l
        .cfg
        .design_space
        .clone()
        .unwrap_or_else(DesignSpace::default_analytic);
    let mut opt = l.cfg.mobo.clone().unwrap_or_default();
    opt.seed = l.cfg.seed;
    opt.validate().map_err(|m| l.err(&["mobo"], m))?;
    let metrics = l.cfg.metrics.clone().unwrap_or_default();
    metrics.validate().map_err(|m| l.err(&["metrics"], m))?;
    let out_dir = out.unwrap_or_else(|| l.cfg.out_dir.clone());

    let evaluator: Box<dyn Evaluator> = match backend {
        Backend::Analytic => {
            let names: Vec<&str> = space.names().collect();
            if names != ANALYTIC_PARAMS {
                return Err(l
                    .err(
                        &["design_space"],
                        format!(
                            "the analytic backend needs parameters {ANALYTIC_PARAMS:?}, got {names:?}"
                        ),
                    )
                    .into());
            }
            Box::new(AnalyticEvaluator { metrics })
        }
        Backend::Spice => {
            let sc = l
                .cfg
                .spice
                .clone()
                .ok_or_else(|| l.err(&[], "the spice backend needs a spice section"))?;
            let ev = SpiceEvaluator::load(space.clone(), sc, metrics, &l.dir(), out_dir.join("sim"))
                .map_err(|m| l.err(&["spice"], m))?;
            Box::new(ev)
        }
    };

    let state_path = out_dir.join("state.json");
    let mut state = if resume_run {
        let text = std::fs::read_to_string(&state_path).map_err(|e| {
            CliError::usage(format!("cannot resume from {}: {e}", state_path.display()))
        })?;
        let state: OptState = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", state_path.display())))?;
        if state.space != space || state.config != opt || state.objectives != evaluator.objectives()
        {
            return Err(CliError::usage(format!(
                "{} was written by a different configuration",
                state_path.display()
            )));
        }
        state
    } else {
        OptState::new(space, evaluator.objectives(), opt)
    };

    create_dir(&out_dir)?;
    let budget = state.budget();
    let mut write_err = None;
    let result = resume(&mut state, &*evaluator, &mut |s| {
        let t = s.trials.last().expect("called after a trial");
        let hv = s.hv_trace.last().map(|h| format!(" hv {h:.6e}")).unwrap_or_default();
        let status = if t.objectives().is_some() { "ok" } else { "failed" };
        eprintln!("trial {}/{budget} {} {status}{hv}", t.index + 1, t.phase.as_str());
        if write_err.is_none() {
            write_err = save_state(&state_path, s).err();
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Err(e) = result {
        // Keep whatever was completed so the run can be resumed.
        save_state(&state_path, &state)?;
        return Err(match (&e, backend) {
            (MoboError::EvaluatorUnreliable { .. }, Backend::Spice) => CliError::simulator(e),
            _ => CliError::runtime(e),
        });
    }

    save_state(&state_path, &state)?;
    write_file(&out_dir.join("trials.csv"), &csv_bytes(&state, |s, b| write_trials_csv(s, b))?)?;
    write_file(&out_dir.join("pareto.csv"), &csv_bytes(&state, |s, b| write_pareto_csv(s, b))?)?;
    write_file(
        &out_dir.join("hv_trace.csv"),
        &csv_bytes(&state, |s, b| write_hv_trace_csv(s, b))?,
    )?;
    let summary = report(&state);
    let json = serde_json::to_vec_pretty(&summary).map_err(CliError::runtime)?;
    write_file(&out_dir.join("report.json"), &json)?;
    eprintln!(
        "{} trials, {} on the front, final hypervolume {:.6e}",
        summary.n_trials, summary.front_size, summary.final_hypervolume
    );
    for o in &summary.objectives {
        eprintln!(
            "  {}: initial best {:.4e}, overall best {:.4e}, improvement {:+.2}{}",
            o.name,
            o.best_init,
            o.best_overall,
            if o.absolute { o.improvement } else { 100.0 * o.improvement },
            if o.absolute { "" } else { "%" }
        );
    }
    Ok(())
}
