//! Model files and CSV reports for trained banks.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bpf::{BpfChannel, FilterBank, UnitConstants};
use super::model::Classifier;
use super::train::EpochRecord;
use super::CodesignError;
use crate::csvfmt::num;
use crate::spice::{NetlistTemplate, TemplateError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRecord {
    pub phi_g: f64,
    pub phi_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub units: UnitConstants,
    pub fs: f64,
    pub classes: Vec<String>,
    pub channels: Vec<ChannelRecord>,
    pub classifier: Classifier,
}

impl ModelFile {
    pub fn new(bank: &FilterBank, classifier: &Classifier, classes: &[String]) -> Self {
        ModelFile {
            units: bank.units,
            fs: bank.fs,
            classes: classes.to_vec(),
            channels: bank
                .channels
                .iter()
                .map(|c| ChannelRecord {
                    phi_g: c.phi_g(),
                    phi_c: c.phi_c(),
                })
                .collect(),
            classifier: classifier.clone(),
        }
    }

    pub fn bank(&self) -> Result<FilterBank, CodesignError> {
        if let Some(c) = self.channels.iter().find(|c| !(c.phi_g > 0.0 && c.phi_c > 0.0)) {
            return Err(CodesignError::Config(format!(
                "scaling factors must be positive, got ({}, {})",
                c.phi_g, c.phi_c
            )));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| BpfChannel::from_phi(c.phi_g, c.phi_c))
            .collect();
        FilterBank::new(self.units, self.fs, channels)
    }

    pub fn validate(&self) -> Result<(), CodesignError> {
        self.bank()?;
        self.classifier.validate()?;
        if self.classes.len() != self.classifier.n_classes {
            return Err(CodesignError::Config(format!(
                "{} class names for {} classifier outputs",
                self.classes.len(),
                self.classifier.n_classes
            )));
        }
        Ok(())
    }
}

fn csv_err(e: impl std::fmt::Display) -> CodesignError {
    CodesignError::Io(e.to_string())
}

/// `channel,f_hz,mag_db` of the analog responses on a log grid.
pub fn write_response_csv<W: Write>(
    out: W,
    bank: &FilterBank,
    f_lo: f64,
    f_hi: f64,
    points: usize,
) -> Result<(), CodesignError> {
    if !(f_lo > 0.0 && f_lo < f_hi && points >= 2) {
        return Err(CodesignError::Config(format!(
            "invalid response grid {f_lo}..{f_hi} with {points} points"
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "f_hz", "mag_db"]).map_err(csv_err)?;
    let ratio = (f_hi / f_lo).ln() / (points - 1) as f64;
    for (i, ch) in bank.channels.iter().enumerate() {
        for k in 0..points {
            let f = f_lo * (ratio * k as f64).exp();
            let db = 20.0 * ch.freq_response(&bank.units, f).norm().log10();
            w.write_record([i.to_string(), num(f), num(db)]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// `epoch,loss,acc,sum_phi_g,sum_phi_c`.
pub fn write_history_csv<W: Write>(out: W, history: &[EpochRecord]) -> Result<(), CodesignError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "acc", "sum_phi_g", "sum_phi_c"])
        .map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            num(r.loss),
            num(r.acc),
            num(r.sum_phi_g),
            num(r.sum_phi_c),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Per-channel scaling factors, response figures and component values.
pub fn write_bank_csv<W: Write>(out: W, bank: &FilterBank) -> Result<(), CodesignError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channel", "phi_g", "phi_c", "f0_hz", "q", "gain", "gm2_s", "c2_f"])
        .map_err(csv_err)?;
    for (i, ch) in bank.channels.iter().enumerate() {
        let d = ch.derived(&bank.units);
        w.write_record([
            i.to_string(),
            num(ch.phi_g()),
            num(ch.phi_c()),
            num(d.f0),
            num(d.q),
            num(d.gain),
            num(ch.gm2(&bank.units)),
            num(ch.c2(&bank.units)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Component values `gm2_<i>` (S) and `c2_<i>` (F) for netlist templates.
pub fn netlist_values(bank: &FilterBank) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for (i, ch) in bank.channels.iter().enumerate() {
        m.insert(format!("gm2_{i}"), ch.gm2(&bank.units));
        m.insert(format!("c2_{i}"), ch.c2(&bank.units));
    }
    m
}

pub fn render_bank_netlist(
    template: &NetlistTemplate,
    bank: &FilterBank,
) -> Result<String, TemplateError> {
    template.render(&netlist_values(bank))
}
