//! Audio clips: the synthetic tone "keywords", a WAV reader and noise mixing.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::CodesignError;
use crate::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub audio: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fs: f64,
    pub classes: Vec<String>,
    pub train: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), CodesignError> {
        if self.classes.len() < 2 {
            return Err(CodesignError::Input(format!(
                "dataset needs at least 2 classes, has {}",
                self.classes.len()
            )));
        }
        if self.train.is_empty() {
            return Err(CodesignError::Input("training split is empty".into()));
        }
        let k = self.classes.len();
        if let Some(c) = self.train.iter().chain(&self.test).find(|c| c.label >= k) {
            return Err(CodesignError::Input(format!(
                "label {} out of range for {k} classes",
                c.label
            )));
        }
        Ok(())
    }
}

/// Each class `k` is two tones at `base_a·2^k` and `base_b·2^k` Hz with
/// independent frequency jitter and random phase, plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub duration_s: f64,
    pub fs: f64,
    pub snr_db: f64,
    pub jitter: f64,
    pub base_a: f64,
    pub base_b: f64,
    pub amplitude: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 4,
            train_per_class: 200,
            test_per_class: 50,
            duration_s: 1.0,
            fs: 16_000.0,
            snr_db: 20.0,
            jitter: 0.02,
            base_a: 300.0,
            base_b: 450.0,
            amplitude: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CodesignError> {
        let bad = |m: String| Err(CodesignError::Config(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        if !(self.fs > 0.0 && self.duration_s > 0.0 && self.amplitude > 0.0) {
            return bad("fs, duration_s and amplitude must be positive".into());
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter must be in [0, 0.5), got {}", self.jitter));
        }
        if !(self.base_a > 0.0 && self.base_b > 0.0) {
            return bad("tone bases must be positive".into());
        }
        let top = self.base_a.max(self.base_b) * 2f64.powi(self.n_classes as i32 - 1);
        if top * (1.0 + self.jitter) >= self.fs / 2.0 {
            return bad(format!(
                "highest tone {top} Hz does not fit below fs/2 = {} Hz",
                self.fs / 2.0
            ));
        }
        Ok(())
    }
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

pub fn synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset, CodesignError> {
    cfg.validate()?;
    let n = (cfg.duration_s * cfg.fs).round() as usize;
    let clip = |stream: u64, label: usize, i: usize| -> Result<Clip, CodesignError> {
        let s = mix_seed(seed, stream << 32 | label as u64, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let scale = 2f64.powi(label as i32);
        let mut tones = [(0.0, 0.0); 2];
        for (tone, base) in tones.iter_mut().zip([cfg.base_a, cfg.base_b]) {
            let f = base * scale * (1.0 + rng.random_range(-cfg.jitter..=cfg.jitter));
            *tone = (2.0 * PI * f / cfg.fs, rng.random_range(0.0..2.0 * PI));
        }
        let clean: Vec<f32> = (0..n)
            .map(|k| {
                let v: f64 = tones.iter().map(|(w, p)| (w * k as f64 + p).sin()).sum();
                (cfg.amplitude * v) as f32
            })
            .collect();
        let audio = snr_mix(&clean, cfg.snr_db, rng.random())?;
        Ok(Clip { audio, label })
    };
    let mut train = Vec::with_capacity(cfg.n_classes * cfg.train_per_class);
    let mut test = Vec::with_capacity(cfg.n_classes * cfg.test_per_class);
    for label in 0..cfg.n_classes {
        for i in 0..cfg.train_per_class {
            train.push(clip(TRAIN_STREAM, label, i)?);
        }
        for i in 0..cfg.test_per_class {
            test.push(clip(TEST_STREAM, label, i)?);
        }
    }
    Ok(Dataset {
        fs: cfg.fs,
        classes: (0..cfg.n_classes).map(|k| format!("class{k}")).collect(),
        train,
        test,
    })
}

/// Adds white Gaussian noise at `snr_db`. The noise is rescaled to the exact
/// target power, so the realized ratio matches up to `f32` rounding.
/// `snr_db = +∞` returns the input unchanged.
pub fn snr_mix(clean: &[f32], snr_db: f64, seed: u64) -> Result<Vec<f32>, CodesignError> {
    if snr_db == f64::INFINITY {
        return Ok(clean.to_vec());
    }
    if !snr_db.is_finite() {
        return Err(CodesignError::Input(format!("invalid SNR {snr_db}")));
    }
    let p_signal = power(clean.iter().map(|x| f64::from(*x)));
    if !(p_signal > 0.0 && p_signal.is_finite()) {
        return Err(CodesignError::Input("signal has zero power".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..clean.len()).map(|_| rng.sample(StandardNormal)).collect();
    let p_noise = power(noise.iter().copied());
    let gain = (p_signal / 10f64.powf(snr_db / 10.0) / p_noise).sqrt();
    Ok(clean
        .iter()
        .zip(&noise)
        .map(|(x, n)| (f64::from(*x) + gain * n) as f32)
        .collect())
}

pub(crate) fn power(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.map(|x| x * x).sum::<f64>() / n
}

/// Reads `root/train/<class>/*.wav` and `root/test/<class>/*.wav`. Clips must
/// be 16-bit PCM mono with one common sample rate; class names come from the
/// sorted training subdirectories.
pub fn load_wav_dir(root: &Path) -> Result<Dataset, CodesignError> {
    let train_dir = root.join("train");
    let classes = subdirs(&train_dir)?;
    let mut fs = None;
    let mut load = |split: &Path, required: bool| -> Result<Vec<Clip>, CodesignError> {
        let mut clips = Vec::new();
        for (label, class) in classes.iter().enumerate() {
            let dir = split.join(class);
            if !dir.is_dir() {
                if required {
                    return Err(io_error(&dir, "missing class directory"));
                }
                continue;
            }
            for path in wav_files(&dir)? {
                let (audio, rate) = read_wav(&path)?;
                match fs {
                    None => fs = Some(rate),
                    Some(r) if r != rate => {
                        return Err(io_error(&path, &format!("sample rate {rate}, expected {r}")))
                    }
                    _ => {}
                }
                clips.push(Clip { audio, label });
            }
        }
        Ok(clips)
    };
    let train = load(&train_dir, true)?;
    let test_dir = root.join("test");
    let test = if test_dir.is_dir() {
        load(&test_dir, false)?
    } else {
        Vec::new()
    };
    let Some(fs) = fs else {
        return Err(io_error(&train_dir, "no .wav files found"));
    };
    let ds = Dataset {
        fs: f64::from(fs),
        classes,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

fn io_error(path: &Path, msg: &str) -> CodesignError {
    CodesignError::Input(format!("{}: {msg}", path.display()))
}

fn subdirs(dir: &Path) -> Result<Vec<String>, CodesignError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_error(dir, &e.to_string()))? {
        let entry = entry.map_err(|e| io_error(dir, &e.to_string()))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, CodesignError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, &e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn read_wav(path: &Path) -> Result<(Vec<f32>, u32), CodesignError> {
    let reader = hound::WavReader::open(path).map_err(|e| io_error(path, &e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(io_error(path, "expected 16-bit PCM mono"));
    }
    let audio = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f32::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_error(path, &e.to_string()))?;
    Ok((audio, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measured_snr(clean: &[f32], noisy: &[f32]) -> f64 {
        let ps = power(clean.iter().map(|x| f64::from(*x)));
        let pn = power(clean.iter().zip(noisy).map(|(c, n)| f64::from(*n) - f64::from(*c)));
        10.0 * (ps / pn).log10()
    }

    #[test]
    fn snr_is_exact_and_seeded() {
        let clean: Vec<f32> = (0..4000).map(|k| (k as f32 * 0.05).sin()).collect();
        for snr in [0.0, 10.0, 20.0] {
            let noisy = snr_mix(&clean, snr, 9).unwrap();
            assert!((measured_snr(&clean, &noisy) - snr).abs() < 0.01);
            assert_eq!(noisy, snr_mix(&clean, snr, 9).unwrap());
        }
        assert_eq!(snr_mix(&clean, f64::INFINITY, 1).unwrap(), clean);
        assert!(matches!(snr_mix(&[0.0; 10], 10.0, 1), Err(CodesignError::Input(_))));
    }

    #[test]
    fn synthetic_shapes_and_determinism() {
        let cfg = SyntheticConfig {
            train_per_class: 3,
            test_per_class: 2,
            duration_s: 0.1,
            ..Default::default()
        };
        let a = synthetic(&cfg, 5).unwrap();
        assert_eq!(a.train.len(), 12);
        assert_eq!(a.test.len(), 8);
        assert!(a.train.iter().all(|c| c.audio.len() == 1600));
        assert_eq!(a, synthetic(&cfg, 5).unwrap());
        assert_ne!(a.train[0], synthetic(&cfg, 6).unwrap().train[0]);
        let too_many = SyntheticConfig { n_classes: 6, ..cfg };
        assert!(too_many.validate().is_err());
    }

    #[test]
    fn wav_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        for (split, n) in [("train", 2), ("test", 1)] {
            for class in ["no", "yes"] {
                let d = dir.path().join(split).join(class);
                fs::create_dir_all(&d).unwrap();
                for i in 0..n {
                    let mut w = hound::WavWriter::create(d.join(format!("{i}.wav")), spec).unwrap();
                    for k in 0..800 {
                        w.write_sample(((k * 37) % 1000) as i16 - 500).unwrap();
                    }
                    w.finalize().unwrap();
                }
            }
        }
        let ds = load_wav_dir(dir.path()).unwrap();
        assert_eq!(ds.classes, ["no", "yes"]);
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.test.len(), 2);
        assert_eq!(ds.train[3].label, 1);
        assert_eq!(ds.train[0].audio[0], -500.0 / 32768.0);
        assert_eq!(ds.fs, 16_000.0);
    }
}
