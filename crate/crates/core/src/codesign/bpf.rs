//! Transconductor-capacitor bandpass channels and their digital realization.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::autodiff::{Tape, Var};
use super::CodesignError;

pub const N_CHANNELS: usize = 16;

/// Global unit transconductance and capacitance shared by every channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConstants {
    pub gm1: f64,
    pub c1: f64,
}

impl Default for UnitConstants {
    fn default() -> Self {
        UnitConstants {
            gm1: 3.84e-9,
            c1: 3.2e-12,
        }
    }
}

impl UnitConstants {
    pub fn validate(&self) -> Result<(), CodesignError> {
        if !(self.gm1 > 0.0 && self.gm1.is_finite() && self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(CodesignError::Config(format!(
                "unit constants must be positive and finite (gm1 {}, c1 {})",
                self.gm1, self.c1
            )));
        }
        Ok(())
    }

    /// Center frequency of a channel with φg = φC = 1.
    pub fn f_unit(&self) -> f64 {
        self.gm1 / (4.0 * PI * self.c1)
    }

    /// gm1 / (2·c1), in rad/s.
    fn omega_unit(&self) -> f64 {
        self.gm1 / (2.0 * self.c1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpfChannel {
    pub log_phi_g: f64,
    pub log_phi_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub f0: f64,
    pub q: f64,
    pub gain: f64,
}

impl BpfChannel {
    pub fn from_phi(phi_g: f64, phi_c: f64) -> Self {
        BpfChannel {
            log_phi_g: phi_g.ln(),
            log_phi_c: phi_c.ln(),
        }
    }

    pub fn phi_g(&self) -> f64 {
        self.log_phi_g.exp()
    }

    pub fn phi_c(&self) -> f64 {
        self.log_phi_c.exp()
    }

    pub fn gm2(&self, units: &UnitConstants) -> f64 {
        self.phi_g() * units.gm1
    }

    pub fn c2(&self, units: &UnitConstants) -> f64 {
        self.phi_c() * units.c1
    }

    pub fn derived(&self, units: &UnitConstants) -> Derived {
        let (pg, pc) = (self.phi_g(), self.phi_c());
        Derived {
            f0: units.f_unit() * (pg / pc).sqrt(),
            q: (pg * pc).sqrt(),
            gain: pc,
        }
    }

    /// Analog transfer function at `f` Hz.
    pub fn freq_response(&self, units: &UnitConstants, f: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let (gm1, c1) = (units.gm1, units.c1);
        let (gm2, c2) = (self.gm2(units), self.c2(units));
        let num = -s * (gm1 / (2.0 * c1));
        let den = s * s + s * (gm1 / (2.0 * c2)) + gm1 * gm2 / (4.0 * c1 * c2);
        num / den
    }

    /// Bilinear-transform coefficients, prewarped at the current f0.
    pub fn discretize(&self, units: &UnitConstants, fs: f64) -> Result<Biquad, CodesignError> {
        let mut t = Tape::new();
        let lg = t.leaf(self.log_phi_g);
        let lc = t.leaf(self.log_phi_c);
        let c = biquad_on_tape(&mut t, units, fs, lg, lc)?;
        let b0 = t.value(c.b0);
        Ok(Biquad {
            b0,
            b1: 0.0,
            b2: -b0,
            a1: t.value(c.a1),
            a2: t.value(c.a2),
        })
    }
}

/// `y[n] = b0·x[n] + b1·x[n-1] + b2·x[n-2] - a1·y[n-1] - a2·y[n-2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Response at `f` Hz for sample rate `fs`.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }
}

/// Tape nodes for the free coefficients; `b1 = 0` and `b2 = -b0`.
#[derive(Debug, Clone, Copy)]
pub struct BiquadVars {
    pub b0: Var,
    pub a1: Var,
    pub a2: Var,
}

pub fn biquad_on_tape(
    t: &mut Tape,
    units: &UnitConstants,
    fs: f64,
    log_phi_g: Var,
    log_phi_c: Var,
) -> Result<BiquadVars, CodesignError> {
    let u = units.omega_unit();
    let diff = t.sub(log_phi_g, log_phi_c);
    let half = t.scale(diff, 0.5);
    let e = t.exp(half);
    let w0 = t.scale(e, u);
    let f0 = t.value(w0) / (2.0 * PI);
    if !(f0 < fs / 2.0) {
        return Err(CodesignError::Alias { f0, fs });
    }
    let neg_lc = t.neg(log_phi_c);
    let inv_pc = t.exp(neg_lc);
    let a = t.scale(inv_pc, u);
    let arg = t.scale(w0, 0.5 / fs);
    let tn = t.tan(arg);
    let c = t.div(w0, tn);

    let c2 = t.mul(c, c);
    let w2 = t.mul(w0, w0);
    let ac = t.mul(a, c);
    let cw = t.add(c2, w2);
    let d0 = t.add(cw, ac);
    let d2 = t.sub(cw, ac);

    let num_b0 = t.scale(c, -u);
    let b0 = t.div(num_b0, d0);
    let wc = t.sub(w2, c2);
    let num_a1 = t.scale(wc, 2.0);
    let a1 = t.div(num_a1, d0);
    let a2 = t.div(d2, d0);
    Ok(BiquadVars { b0, a1, a2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub units: UnitConstants,
    pub fs: f64,
    pub channels: Vec<BpfChannel>,
}

impl FilterBank {
    pub fn new(
        units: UnitConstants,
        fs: f64,
        channels: Vec<BpfChannel>,
    ) -> Result<Self, CodesignError> {
        units.validate()?;
        if channels.len() != N_CHANNELS {
            return Err(CodesignError::Config(format!(
                "a bank has {N_CHANNELS} channels, got {}",
                channels.len()
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(CodesignError::Config(format!("invalid sample rate {fs}")));
        }
        let bank = FilterBank {
            units,
            fs,
            channels,
        };
        for ch in &bank.channels {
            if !(ch.log_phi_g.is_finite() && ch.log_phi_c.is_finite()) {
                return Err(CodesignError::Config("non-finite channel parameter".into()));
            }
            let f0 = ch.derived(&units).f0;
            if !(f0 < fs / 2.0) {
                return Err(CodesignError::Alias { f0, fs });
            }
        }
        Ok(bank)
    }

    pub fn sum_phi_g(&self) -> f64 {
        self.channels.iter().map(BpfChannel::phi_g).sum()
    }

    pub fn sum_phi_c(&self) -> f64 {
        self.channels.iter().map(BpfChannel::phi_c).sum()
    }

    pub fn derived(&self) -> Vec<Derived> {
        self.channels.iter().map(|c| c.derived(&self.units)).collect()
    }

    pub fn discretize(&self) -> Result<Vec<Biquad>, CodesignError> {
        self.channels
            .iter()
            .map(|c| c.discretize(&self.units, self.fs))
            .collect()
    }
}

/// Center frequencies geometrically spaced over `[f_low, f_high]`, all with
/// quality factor `q0`.
pub fn init_bank(
    units: UnitConstants,
    f_low: f64,
    f_high: f64,
    q0: f64,
    fs: f64,
) -> Result<FilterBank, CodesignError> {
    units.validate()?;
    if !(f_low > 0.0 && f_low < f_high && f_high < fs / 2.0 && fs.is_finite()) {
        return Err(CodesignError::Config(format!(
            "need 0 < f_low < f_high < fs/2, got f_low {f_low}, f_high {f_high}, fs {fs}"
        )));
    }
    if !(q0 > 0.0 && q0.is_finite()) {
        return Err(CodesignError::Config(format!("q0 must be positive, got {q0}")));
    }
    let ratio = (f_high / f_low).powf(1.0 / (N_CHANNELS - 1) as f64);
    let channels = (0..N_CHANNELS)
        .map(|i| {
            let f0 = if i == N_CHANNELS - 1 {
                f_high
            } else {
                f_low * ratio.powi(i as i32)
            };
            channel_for(&units, f0, q0)
        })
        .collect();
    FilterBank::new(units, fs, channels)
}

/// Channel with center frequency `f0` and quality factor `q`.
pub fn channel_for(units: &UnitConstants, f0: f64, q: f64) -> BpfChannel {
    let r = f0 / units.f_unit();
    BpfChannel::from_phi(q * r, q / r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_channel_sits_at_f_unit() {
        let u = UnitConstants::default();
        assert!((u.f_unit() - 95.492_965_855_137_2).abs() < 1e-9);
        let d = BpfChannel::from_phi(1.0, 1.0).derived(&u);
        assert!((d.f0 - u.f_unit()).abs() < 1e-12);
        assert!((d.q - 1.0).abs() < 1e-15);
        let d = BpfChannel::from_phi(4.0, 1.0).derived(&u);
        assert!((d.q - 2.0).abs() < 1e-12);
        assert!((BpfChannel::from_phi(3.0, 0.5).derived(&u).gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn response_at_f0_is_minus_phi_c() {
        let u = UnitConstants::default();
        let ch = BpfChannel::from_phi(7.5, 0.3);
        let h = ch.freq_response(&u, ch.derived(&u).f0);
        assert!((h.norm() - 0.3).abs() < 1e-9 * 0.3);
        assert!((h.arg().abs() - PI).abs() < 1e-9);
        assert!(ch.freq_response(&u, 1e-6).norm() < 1e-6);
    }

    #[test]
    fn init_bank_spacing_and_q() {
        let u = UnitConstants::default();
        let bank = init_bank(u, 100.0, 8000.0, 3.0, 48_000.0).unwrap();
        let d = bank.derived();
        let ratio = 80f64.powf(1.0 / 15.0);
        for w in d.windows(2) {
            assert!((w[1].f0 / w[0].f0 - ratio).abs() < 1e-9);
        }
        for x in &d {
            assert!((x.q - 3.0).abs() < 1e-9);
        }
        let last = bank.channels[15];
        let spread = last.phi_g() / last.phi_c();
        assert!((spread - (8000.0 / u.f_unit()).powi(2)).abs() < 1e-6 * spread);
        assert!((7000.0..7040.0).contains(&spread));
    }

    #[test]
    fn init_bank_rejects_bad_bounds() {
        let u = UnitConstants::default();
        assert!(init_bank(u, 100.0, 8000.0, 3.0, 16_000.0).is_err());
        assert!(init_bank(u, 500.0, 100.0, 3.0, 16_000.0).is_err());
        assert!(init_bank(u, 100.0, 1000.0, 0.0, 16_000.0).is_err());
    }

    #[test]
    fn discretization_zeros_and_prewarp() {
        let u = UnitConstants::default();
        let fs = 16_000.0;
        for (f0, q) in [(150.0, 2.0), (1000.0, 3.0), (6000.0, 5.0)] {
            let ch = channel_for(&u, f0, q);
            let bq = ch.discretize(&u, fs).unwrap();
            assert_eq!(bq.b0 + bq.b1 + bq.b2, 0.0);
            assert_eq!(bq.b0 - bq.b1 + bq.b2, 0.0);
            let h = bq.response(f0, fs).norm();
            assert!((h - ch.phi_c()).abs() < 1e-6 * ch.phi_c(), "{h} vs {}", ch.phi_c());
        }
    }

    #[test]
    fn aliasing_channel_is_rejected() {
        let u = UnitConstants::default();
        let ch = channel_for(&u, 9000.0, 2.0);
        assert!(matches!(ch.discretize(&u, 16_000.0), Err(CodesignError::Alias { .. })));
    }
}
