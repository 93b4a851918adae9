use std::io::Write;
use std::path::{Path, PathBuf};

use gmopt_core::codesign::{
    evaluate, fit_normalization, init_bank, load_wav_dir, synthetic, train_codesign,
    write_bank_csv, write_history_csv, write_response_csv, BpfChannel, Classifier, CodesignError,
    FilterBank, ModelFile, UnitConstants,
};
use gmopt_core::csvfmt::num;
use gmopt_core::mix_seed;
use serde::Serialize;

use crate::config::{self, DatasetSource, Mode};
use crate::{create_dir, write_file, CliError};

const DATA_STREAM: u64 = 1;
const CLASSIFIER_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Serialize)]
struct SnrAccuracy {
    snr_db: f64,
    acc: f64,
}

#[derive(Serialize)]
struct EvalReport {
    train_acc: f64,
    test_acc: f64,
    sum_phi_g: f64,
    sum_phi_c: f64,
    initial_sum_phi_g: f64,
    initial_sum_phi_c: f64,
    noisy: Vec<SnrAccuracy>,
}

fn runtime(e: CodesignError) -> CliError {
    CliError::runtime(e)
}

fn bytes_of(
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), CodesignError>,
) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn save_model(
    path: &Path,
    bank: &FilterBank,
    clf: &Classifier,
    classes: &[String],
) -> Result<(), CliError> {
    let json = serde_json::to_vec_pretty(&ModelFile::new(bank, clf, classes))
        .map_err(CliError::runtime)?;
    write_file(path, &json)
}

pub fn train(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let l = config::load(config_path, Mode::TrainAfe)?;
    let seed = l.cfg.seed;
    let afe = l
        .cfg
        .afe
        .clone()
        .ok_or_else(|| l.err(&[], "train-afe needs an afe section"))?;
    let loss = l.cfg.loss.clone().unwrap_or_default();
    loss.validate().map_err(|e| l.err(&["loss"], e))?;
    afe.train.validate().map_err(|e| l.err(&["afe", "train"], e))?;
    if afe.eval_snr_db.iter().any(|s| s.is_nan()) {
        return Err(l.err(&["afe", "eval_snr_db"], "SNR values must not be NaN").into());
    }

    let data = match &afe.dataset {
        DatasetSource::Synthetic(c) => synthetic(c, mix_seed(seed, DATA_STREAM, 0))
            .map_err(|e| l.err(&["afe", "dataset"], e))?,
        DatasetSource::WavDir(p) => {
            load_wav_dir(&l.resolve(p)).map_err(|e| l.err(&["afe", "dataset"], e))?
        }
    };
    if data.test.is_empty() {
        return Err(l.err(&["afe", "dataset"], "the dataset has no test clips").into());
    }
    let bank = init_bank(afe.units, afe.f_low, afe.f_high, afe.q0, data.fs)
        .map_err(|e| l.err(&["afe"], e))?;
    let mut clf = Classifier::new(
        data.classes.len(),
        afe.hidden,
        mix_seed(seed, CLASSIFIER_STREAM, 0),
    )
    .map_err(|e| l.err(&["afe", "hidden"], e))?;
    let f_hi = afe.response_f_hi.unwrap_or(data.fs / 2.0);
    if !(afe.response_f_lo > 0.0 && afe.response_f_lo < f_hi && afe.response_points >= 2) {
        return Err(l
            .err(
                &["afe", "response_f_lo"],
                format!(
                    "invalid response grid {}..{f_hi} Hz with {} points",
                    afe.response_f_lo, afe.response_points
                ),
            )
            .into());
    }
    let response = |bank: &FilterBank| {
        bytes_of(|b| write_response_csv(b, bank, afe.response_f_lo, f_hi, afe.response_points))
    };

    let out_dir = out.unwrap_or_else(|| l.cfg.out_dir.clone());
    create_dir(&out_dir)?;
    fit_normalization(&bank, &mut clf, &data.train).map_err(runtime)?;
    write_file(&out_dir.join("response_initial.csv"), &response(&bank)?)?;
    write_file(
        &out_dir.join("bank_initial.csv"),
        &bytes_of(|b| write_bank_csv(b, &bank))?,
    )?;

    let trained = match train_codesign(&data, &bank, &clf, &loss, &afe.train, seed, &mut |r| {
        eprintln!(
            "epoch {:>3} loss {:.5} acc {:.4} sum_phi_g {:.4} sum_phi_c {:.4}",
            r.epoch, r.loss, r.acc, r.sum_phi_g, r.sum_phi_c
        );
    }) {
        Ok(t) => t,
        Err(CodesignError::Divergence(d)) => {
            save_model(
                &out_dir.join("model_last_good.json"),
                &d.bank,
                &d.classifier,
                &data.classes,
            )?;
            write_file(
                &out_dir.join("history.csv"),
                &bytes_of(|b| write_history_csv(b, &d.history))?,
            )?;
            return Err(CliError::diverged(format!(
                "training diverged in epoch {}: {}; last good state in {}",
                d.epoch,
                d.message,
                out_dir.join("model_last_good.json").display()
            )));
        }
        Err(e) => return Err(runtime(e)),
    };

    save_model(
        &out_dir.join("model.json"),
        &trained.bank,
        &trained.classifier,
        &data.classes,
    )?;
    write_file(
        &out_dir.join("history.csv"),
        &bytes_of(|b| write_history_csv(b, &trained.history))?,
    )?;
    write_file(&out_dir.join("response_learned.csv"), &response(&trained.bank)?)?;
    write_file(
        &out_dir.join("bank_learned.csv"),
        &bytes_of(|b| write_bank_csv(b, &trained.bank))?,
    )?;

    let eval_seed = mix_seed(seed, EVAL_STREAM, 0);
    let acc = |clips, snr| {
        evaluate(&trained.bank, &trained.classifier, clips, snr, eval_seed).map_err(runtime)
    };
    let report = EvalReport {
        train_acc: acc(&data.train, None)?,
        test_acc: acc(&data.test, None)?,
        sum_phi_g: trained.bank.sum_phi_g(),
        sum_phi_c: trained.bank.sum_phi_c(),
        initial_sum_phi_g: bank.sum_phi_g(),
        initial_sum_phi_c: bank.sum_phi_c(),
        noisy: afe
            .eval_snr_db
            .iter()
            .map(|&s| {
                Ok(SnrAccuracy {
                    snr_db: s,
                    acc: acc(&data.test, Some(s))?,
                })
            })
            .collect::<Result<_, CliError>>()?,
    };
    eprintln!(
        "test accuracy {:.4}, sum phi {:.4} -> {:.4}",
        report.test_acc,
        report.initial_sum_phi_g + report.initial_sum_phi_c,
        report.sum_phi_g + report.sum_phi_c
    );
    for n in &report.noisy {
        eprintln!("  {:+.1} dB: accuracy {:.4}", n.snr_db, n.acc);
    }
    write_file(
        &out_dir.join("eval.json"),
        &serde_json::to_vec_pretty(&report).map_err(CliError::runtime)?,
    )
}

/// `lo:hi:n`, a linear grid including both ends.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("expected lo:hi:n, got {spec:?}"));
    };
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower frequency {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper frequency {hi:?}"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad point count {n:?}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
        return Err(format!("need 0 <= lo < hi, got {lo}:{hi}"));
    }
    if n < 2 {
        return Err("need at least 2 points".into());
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

pub fn eval_filter(phi_g: f64, phi_c: f64, freqs: &str, out: Option<&Path>) -> Result<(), CliError> {
    if !(phi_g > 0.0 && phi_g.is_finite() && phi_c > 0.0 && phi_c.is_finite()) {
        return Err(CliError::usage(format!(
            "scaling factors must be positive and finite, got {phi_g}, {phi_c}"
        )));
    }
    let grid = parse_grid(freqs).map_err(|e| CliError::usage(format!("--freqs: {e}")))?;
    let units = UnitConstants::default();
    let ch = BpfChannel::from_phi(phi_g, phi_c);
    let mut buf = Vec::new();
    let mut rows = || -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["f_hz", "mag", "mag_db", "phase_rad"])?;
        for &f in &grid {
            let h = ch.freq_response(&units, f);
            let mag = h.norm();
            w.write_record([num(f), num(mag), num(20.0 * mag.log10()), num(h.arg())])?;
        }
        w.flush()?;
        Ok(())
    };
    rows().map_err(CliError::runtime)?;
    let bytes = buf;
    match out {
        Some(p) => write_file(p, &bytes),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::runtime(format!("cannot write output: {e}"))),
    }
}
