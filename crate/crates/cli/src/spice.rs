use std::path::{Path, PathBuf};

use gmopt_core::codesign::{netlist_values, ModelFile};
use gmopt_core::csvfmt::num;
use gmopt_core::spice::{parse_ascii_raw, NetlistTemplate, Plot};
use serde::Serialize;

use crate::config::{self, Mode};
use crate::{create_dir, write_file, CliError};

pub fn render(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let l = config::load(config_path, Mode::SpiceRender)?;
    let r = l
        .cfg
        .render
        .clone()
        .ok_or_else(|| l.err(&[], "spice-render needs a render section"))?;
    let tpath = l.resolve(&r.template);
    let text = std::fs::read_to_string(&tpath).map_err(|e| {
        l.err(&["render", "template"], format!("cannot read {}: {e}", tpath.display()))
    })?;
    let template = NetlistTemplate::parse(&text)
        .map_err(|e| l.err(&["render", "template"], format!("{}: {e}", tpath.display())))?;

    let mut values = r.values.clone();
    if let Some(m) = &r.model {
        let mpath = l.resolve(m);
        let model: ModelFile = std::fs::read_to_string(&mpath)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
            .map_err(|e| l.err(&["render", "model"], format!("{}: {e}", mpath.display())))?;
        let bank = model
            .bank()
            .map_err(|e| l.err(&["render", "model"], format!("{}: {e}", mpath.display())))?;
        for (k, v) in netlist_values(&bank) {
            if values.insert(k.clone(), v).is_some() {
                return Err(l
                    .err(&["render", "values", &k], format!("{k} is also set by the model"))
                    .into());
            }
        }
    }
    let netlist = template.render(&values).map_err(|e| l.err(&["render"], e))?;
    if r.output.is_empty() || r.output.contains(['/', '\\']) {
        return Err(l
            .err(&["render", "output"], "output must be a plain file name")
            .into());
    }

    let out_dir = out.unwrap_or_else(|| l.cfg.out_dir.clone());
    create_dir(&out_dir)?;
    let path = out_dir.join(&r.output);
    write_file(&path, netlist.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct VariableInfo<'a> {
    name: &'a str,
    kind: &'a str,
}

#[derive(Serialize)]
struct PlotInfo<'a> {
    index: usize,
    title: &'a str,
    name: &'a str,
    flags: &'a str,
    complex: bool,
    n_points: usize,
    variables: Vec<VariableInfo<'a>>,
    file: String,
}

fn plot_csv(plot: &Plot) -> csv::Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut w = csv::Writer::from_writer(&mut buf);
    w.write_record(plot.variables.iter().map(|v| v.name.as_str()))?;
    for p in 0..plot.n_points() {
        w.write_record(plot.data.iter().map(|col| num(col[p])))?;
    }
    w.flush()?;
    drop(w);
    Ok(buf)
}

/// Writes `plot<i>.csv` per plot (complex values as magnitudes) and a
/// `plots.json` summary.
pub fn parse(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let l = config::load(config_path, Mode::SpiceParse)?;
    let p = l
        .cfg
        .parse
        .clone()
        .ok_or_else(|| l.err(&[], "spice-parse needs a parse section"))?;
    let raw_path = l.resolve(&p.raw);
    let text = std::fs::read_to_string(&raw_path).map_err(|e| {
        l.err(&["parse", "raw"], format!("cannot read {}: {e}", raw_path.display()))
    })?;
    let tables = parse_ascii_raw(&text)
        .map_err(|e| CliError::simulator(format!("{}:{}: {}", raw_path.display(), e.line, e.message)))?;

    let out_dir = out.unwrap_or_else(|| l.cfg.out_dir.clone());
    create_dir(&out_dir)?;
    let mut infos = Vec::new();
    for (i, plot) in tables.plots.iter().enumerate() {
        let file = format!("plot{i}.csv");
        write_file(&out_dir.join(&file), &plot_csv(plot).map_err(CliError::runtime)?)?;
        eprintln!(
            "{file}: {} ({} variables, {} points)",
            plot.name,
            plot.variables.len(),
            plot.n_points()
        );
        infos.push(PlotInfo {
            index: i,
            title: &plot.title,
            name: &plot.name,
            flags: &plot.flags,
            complex: plot.complex,
            n_points: plot.n_points(),
            variables: plot
                .variables
                .iter()
                .map(|v| VariableInfo {
                    name: &v.name,
                    kind: &v.kind,
                })
                .collect(),
            file,
        });
    }
    write_file(
        &out_dir.join("plots.json"),
        &serde_json::to_vec_pretty(&infos).map_err(CliError::runtime)?,
    )
}
