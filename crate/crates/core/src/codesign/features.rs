//! Filter-bank features: biquad, full-wave rectifier, framed mean, log.
//!
//! The rectifier integrates `|y|` over the linear interpolation between
//! samples, so a frame feature is the mean rectified level in continuous
//! time rather than a mean of sampled magnitudes.
//!
//! The filter runs on all channels at once. Gradients with respect to the
//! coefficients come from forward sensitivity recursions, and each frame
//! feature enters the tape as one node whose parents are its channel's
//! coefficient nodes.

use super::autodiff::{Tape, Var};
use super::bpf::{biquad_on_tape, Biquad, BiquadVars, FilterBank, N_CHANNELS};
use super::CodesignError;

pub const LOG_FLOOR: f64 = 1e-6;

pub type Frame = [f64; N_CHANNELS];

/// Hop of 16 ms; a frame is exactly two hops.
pub fn hop_len(fs: f64) -> usize {
    ((0.016 * fs).round() as usize).max(1)
}

pub fn frame_len(fs: f64) -> usize {
    2 * hop_len(fs)
}

fn check_audio(audio: &[f32], fs: f64) -> Result<usize, CodesignError> {
    if audio.is_empty() {
        return Err(CodesignError::Input("empty audio".into()));
    }
    let frame = frame_len(fs);
    if audio.len() < frame {
        return Err(CodesignError::Input(format!(
            "audio has {} samples, shorter than one {frame}-sample frame",
            audio.len()
        )));
    }
    if let Some(i) = audio.iter().position(|x| !x.is_finite()) {
        return Err(CodesignError::Input(format!("non-finite sample at index {i}")));
    }
    Ok(hop_len(fs))
}

/// Per-hop block sums of the rectified output for every channel. With
/// `GRAD`, also their derivatives with respect to `a1` and `a2`, where
/// `y = b0·u`.
struct Blocks {
    abs_u: Vec<Frame>,
    du_a1: Vec<Frame>,
    du_a2: Vec<Frame>,
}

/// Area under `|v|` for `v` linear from `a` to `b` over one sample period,
/// with its partials. Splitting at the zero crossing keeps the area
/// continuously differentiable in `a` and `b`.
#[inline(always)]
fn segment_area(a: f64, b: f64) -> (f64, f64, f64) {
    let (sa, sb) = (1f64.copysign(a), 1f64.copysign(b));
    let s = a.abs() + b.abs();
    if a * b < 0.0 {
        let inv = 1.0 / s;
        let area = 0.5 * (a * a + b * b) * inv;
        (area, (a - area * sa) * inv, (b - area * sb) * inv)
    } else {
        (0.5 * s, 0.5 * sa, 0.5 * sb)
    }
}

fn filter_blocks<const GRAD: bool>(a1: &Frame, a2: &Frame, audio: &[f32], hop: usize) -> Blocks {
    let n_blocks = audio.len() / hop;
    let mut out = Blocks {
        abs_u: Vec::with_capacity(n_blocks),
        du_a1: Vec::with_capacity(if GRAD { n_blocks } else { 0 }),
        du_a2: Vec::with_capacity(if GRAD { n_blocks } else { 0 }),
    };
    let z = [0.0; N_CHANNELS];
    let (mut u1, mut u2) = (z, z);
    let (mut p1, mut p2) = (z, z);
    let (mut q1, mut q2) = (z, z);
    let (mut x1, mut x2) = (0.0f64, 0.0f64);
    for block in audio[..n_blocks * hop].chunks_exact(hop) {
        let (mut acc, mut acc_p, mut acc_q) = (z, z, z);
        for &x in block {
            let x = f64::from(x);
            let dx = x - x2;
            x2 = x1;
            x1 = x;
            for c in 0..N_CHANNELS {
                let u = dx - a1[c] * u1[c] - a2[c] * u2[c];
                let (area, d_prev, d_cur) = segment_area(u1[c], u);
                acc[c] += area;
                if GRAD {
                    let p = -u1[c] - a1[c] * p1[c] - a2[c] * p2[c];
                    let q = -u2[c] - a1[c] * q1[c] - a2[c] * q2[c];
                    acc_p[c] += d_prev * p1[c] + d_cur * p;
                    acc_q[c] += d_prev * q1[c] + d_cur * q;
                    p2[c] = p1[c];
                    p1[c] = p;
                    q2[c] = q1[c];
                    q1[c] = q;
                }
                u2[c] = u1[c];
                u1[c] = u;
            }
        }
        out.abs_u.push(acc);
        if GRAD {
            out.du_a1.push(acc_p);
            out.du_a2.push(acc_q);
        }
    }
    out
}

fn coefficient_arrays(coefs: &[Biquad]) -> (Frame, Frame, Frame) {
    let mut b0 = [0.0; N_CHANNELS];
    let mut a1 = [0.0; N_CHANNELS];
    let mut a2 = [0.0; N_CHANNELS];
    for (c, q) in coefs.iter().enumerate() {
        b0[c] = q.b0;
        a1[c] = q.a1;
        a2[c] = q.a2;
    }
    (b0, a1, a2)
}

/// Log frame features without gradients, `frames × 16`.
pub fn feature_values(bank: &FilterBank, audio: &[f32]) -> Result<Vec<Frame>, CodesignError> {
    let hop = check_audio(audio, bank.fs)?;
    let (b0, a1, a2) = coefficient_arrays(&bank.discretize()?);
    let blocks = filter_blocks::<false>(&a1, &a2, audio, hop);
    let scale = 1.0 / (2 * hop) as f64;
    Ok(blocks
        .abs_u
        .windows(2)
        .map(|w| {
            let mut f = [0.0; N_CHANNELS];
            for c in 0..N_CHANNELS {
                f[c] = (b0[c].abs() * (w[0][c] + w[1][c]) * scale + LOG_FLOOR).ln();
            }
            f
        })
        .collect())
}

/// Time average of [`feature_values`].
pub fn mean_features(bank: &FilterBank, audio: &[f32]) -> Result<Frame, CodesignError> {
    Ok(average(&feature_values(bank, audio)?))
}

pub(crate) fn average(frames: &[Frame]) -> Frame {
    let mut m = [0.0; N_CHANNELS];
    for f in frames {
        for c in 0..N_CHANNELS {
            m[c] += f[c];
        }
    }
    let k = 1.0 / frames.len() as f64;
    m.map(|v| v * k)
}

/// Trainable bank parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BankVars {
    pub log_phi_g: Vec<Var>,
    pub log_phi_c: Vec<Var>,
    pub coefs: Vec<BiquadVars>,
}

pub fn bank_on_tape(t: &mut Tape, bank: &FilterBank) -> Result<BankVars, CodesignError> {
    let log_phi_g: Vec<Var> = bank.channels.iter().map(|c| t.leaf(c.log_phi_g)).collect();
    let log_phi_c: Vec<Var> = bank.channels.iter().map(|c| t.leaf(c.log_phi_c)).collect();
    let coefs = (0..N_CHANNELS)
        .map(|c| biquad_on_tape(t, &bank.units, bank.fs, log_phi_g[c], log_phi_c[c]))
        .collect::<Result<_, _>>()?;
    Ok(BankVars {
        log_phi_g,
        log_phi_c,
        coefs,
    })
}

/// Log frame features as tape nodes, `frames × 16`.
pub fn forward_features(
    t: &mut Tape,
    vars: &BankVars,
    fs: f64,
    audio: &[f32],
) -> Result<Vec<[Var; N_CHANNELS]>, CodesignError> {
    let hop = check_audio(audio, fs)?;
    let mut b0 = [0.0; N_CHANNELS];
    let mut a1 = [0.0; N_CHANNELS];
    let mut a2 = [0.0; N_CHANNELS];
    for (c, v) in vars.coefs.iter().enumerate() {
        b0[c] = t.value(v.b0);
        a1[c] = t.value(v.a1);
        a2[c] = t.value(v.a2);
    }
    let blocks = filter_blocks::<true>(&a1, &a2, audio, hop);
    let scale = 1.0 / (2 * hop) as f64;
    let n_frames = blocks.abs_u.len() - 1;
    let mut frames = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        let mut row = [vars.coefs[0].b0; N_CHANNELS];
        for c in 0..N_CHANNELS {
            let mean_abs_u = (blocks.abs_u[j][c] + blocks.abs_u[j + 1][c]) * scale;
            let m = b0[c].abs() * mean_abs_u;
            let inv = 1.0 / (m + LOG_FLOOR);
            let d_b0 = 1f64.copysign(b0[c]) * mean_abs_u * inv;
            let d_a1 = b0[c].abs() * (blocks.du_a1[j][c] + blocks.du_a1[j + 1][c]) * scale * inv;
            let d_a2 = b0[c].abs() * (blocks.du_a2[j][c] + blocks.du_a2[j + 1][c]) * scale * inv;
            let v = &vars.coefs[c];
            row[c] = t.custom(
                (m + LOG_FLOOR).ln(),
                &[(v.b0, d_b0), (v.a1, d_a1), (v.a2, d_a2)],
            );
        }
        frames.push(row);
    }
    Ok(frames)
}
