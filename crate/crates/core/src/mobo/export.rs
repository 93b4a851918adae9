//! CSV views of an optimization run.

use std::io::Write;

use super::optimizer::{OptState, Trial};
use super::pareto::pareto_front;
use crate::csvfmt::num;

fn header(state: &OptState) -> Vec<String> {
    let mut h = vec!["trial".to_string(), "phase".to_string()];
    h.extend(state.space.names().map(str::to_string));
    h.extend(state.objectives.iter().map(|o| o.name.clone()));
    h
}

fn row(state: &OptState, t: &Trial) -> Vec<String> {
    let mut r = vec![t.index.to_string(), t.phase.as_str().to_string()];
    r.extend(t.x.0.iter().map(|v| num(*v)));
    match t.objectives() {
        Some(y) => r.extend(
            y.iter()
                .zip(&state.objectives)
                .map(|(v, o)| num(v * o.sense.sign())),
        ),
        None => r.extend(state.objectives.iter().map(|_| "nan".to_string())),
    }
    r
}

/// `trial,phase,<params>,<objectives>` with metrics in natural units; failed
/// trials carry `nan` objectives.
pub fn write_trials_csv<W: Write>(state: &OptState, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(state))?;
    for t in &state.trials {
        w.write_record(row(state, t))?;
    }
    w.flush()?;
    Ok(())
}

/// The nondominated successful trials, same columns as the trials file.
pub fn write_pareto_csv<W: Write>(state: &OptState, out: W) -> csv::Result<()> {
    let ok: Vec<&Trial> = state.trials.iter().filter(|t| t.objectives().is_some()).collect();
    let ys: Vec<Vec<f64>> = ok.iter().map(|t| t.objectives().unwrap().to_vec()).collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(state))?;
    for i in pareto_front(&ys) {
        w.write_record(row(state, ok[i]))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_hv_trace_csv<W: Write>(state: &OptState, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "hypervolume"])?;
    for (i, hv) in state.hv_trace.iter().enumerate() {
        w.write_record([i.to_string(), num(*hv)])?;
    }
    w.flush()?;
    Ok(())
}
