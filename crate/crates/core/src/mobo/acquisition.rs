//! Monte-Carlo batch expected hypervolume improvement.
//!
//! Joint posterior samples of a candidate batch are drawn from fixed base
//! normals (quasi-random, per objective), clipped to the reference point, and
//! scored by the exact hypervolume they add to the current front.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::hypervolume::{exclusive_contribution, nondominated};
use super::pareto::ParetoArchive;
use crate::design_space::{fold_seed, sobol_init};
use crate::gp::{GpError, GpModel, MeanCov};
use crate::search::{self, CoordinateSearch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcqConfig {
    pub mc_samples: usize,
    pub batch_q: usize,
    pub restarts: usize,
    pub probe_count: usize,
    /// Objective evaluations per restart during refinement.
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        AcqConfig {
            mc_samples: 128,
            batch_q: 1,
            restarts: 10,
            probe_count: 512,
            local_steps: 100,
            seed: 0,
        }
    }
}

impl AcqConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("mc_samples", self.mc_samples),
            ("restarts", self.restarts),
            ("probe_count", self.probe_count),
            ("local_steps", self.local_steps),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if !(1..=4).contains(&self.batch_q) {
            return Err("batch_q must be between 1 and 4".into());
        }
        if self.mc_samples > 1 << 16 || self.probe_count > 1 << 16 {
            return Err("mc_samples and probe_count must not exceed 65536".into());
        }
        Ok(())
    }

    /// The fixed base normals used for one acquisition round.
    pub fn base_samples(&self, n_objectives: usize) -> BaseSamples {
        BaseSamples::quasi_normal(self.mc_samples, self.batch_q, n_objectives, self.seed)
    }

    /// Unit-cube probe points that rank local-search starts.
    pub fn probes(&self, dim: usize) -> Vec<Vec<f64>> {
        sobol_init(self.probe_count, dim, self.seed ^ 0x5eed_9b0b_e5u64)
    }
}

/// Standard-normal draws indexed by (objective, sample, batch slot).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSamples {
    n_objectives: usize,
    mc: usize,
    q: usize,
    z: Vec<f64>,
}

impl BaseSamples {
    /// Scrambled-Sobol points pushed through the inverse normal CDF.
    pub fn quasi_normal(mc: usize, q: usize, n_objectives: usize, seed: u64) -> Self {
        let normal = Normal::standard();
        let dims = q * n_objectives;
        let half_cell = 0.5 / (1u64 << 24) as f64;
        let seed = fold_seed(seed) as u64;
        let pts = sobol_init(mc, dims, seed);
        let mut z = vec![0.0; n_objectives * mc * q];
        for (s, p) in pts.iter().enumerate() {
            for obj in 0..n_objectives {
                for j in 0..q {
                    let u = p[obj * q + j] + half_cell;
                    z[(obj * mc + s) * q + j] = normal.inverse_cdf(u);
                }
            }
        }
        BaseSamples {
            n_objectives,
            mc,
            q,
            z,
        }
    }

    /// Builds base samples from explicit `[objective][sample][slot]` draws.
    pub fn from_draws(draws: &[Vec<Vec<f64>>]) -> Self {
        let n_objectives = draws.len();
        let mc = draws.first().map_or(0, |d| d.len());
        let q = draws
            .first()
            .and_then(|d| d.first())
            .map_or(0, |r| r.len());
        let mut z = Vec::with_capacity(n_objectives * mc * q);
        for d in draws {
            assert_eq!(d.len(), mc, "ragged base samples");
            for row in d {
                assert_eq!(row.len(), q, "ragged base samples");
                z.extend_from_slice(row);
            }
        }
        BaseSamples {
            n_objectives,
            mc,
            q,
            z,
        }
    }

    pub fn mc_samples(&self) -> usize {
        self.mc
    }

    pub fn batch_capacity(&self) -> usize {
        self.q
    }

    fn get(&self, obj: usize, s: usize, j: usize) -> f64 {
        self.z[(obj * self.mc + s) * self.q + j]
    }
}

/// Front objective vectors, clipped and flattened for repeated scoring.
struct FrontCache {
    flat: Vec<f64>,
    reference: Vec<f64>,
}

impl FrontCache {
    fn new(front: &[Vec<f64>], reference: &[f64]) -> Self {
        let m = reference.len();
        let mut flat = Vec::with_capacity(front.len() * m);
        for p in front {
            assert_eq!(p.len(), m, "front/reference dimension mismatch");
            flat.extend(p.iter().zip(reference).map(|(v, r)| v.min(*r)));
        }
        FrontCache {
            flat: nondominated(&flat, m),
            reference: reference.to_vec(),
        }
    }

    fn mean_improvement(&self, posteriors: &[MeanCov], base: &BaseSamples) -> Result<f64, GpError> {
        let m = self.reference.len();
        assert_eq!(posteriors.len(), m, "one posterior per objective");
        assert!(base.n_objectives >= m, "base samples cover too few objectives");
        let q = posteriors[0].mean.len();
        assert!(q <= base.q, "batch larger than base-sample capacity");
        let factors: Vec<DMatrix<f64>> = posteriors
            .iter()
            .map(|p| p.factor())
            .collect::<Result<_, _>>()?;

        let mut total = 0.0;
        let mut point = vec![0.0; m];
        let mut set = Vec::with_capacity(self.flat.len() + q * m);
        for s in 0..base.mc {
            set.clear();
            set.extend_from_slice(&self.flat);
            let mut gain = 0.0;
            for j in 0..q {
                for (obj, (post, l)) in posteriors.iter().zip(&factors).enumerate() {
                    let mut v = post.mean[j];
                    for k in 0..=j {
                        v += l[(j, k)] * base.get(obj, s, k);
                    }
                    point[obj] = v.min(self.reference[obj]);
                }
                gain += exclusive_contribution(&point, &set, &self.reference);
                if q > 1 {
                    set.extend_from_slice(&point);
                }
            }
            total += gain;
        }
        Ok(total / base.mc as f64)
    }
}

/// qEHVI from per-objective joint posteriors over a batch.
pub fn qehvi_from_posteriors(
    posteriors: &[MeanCov],
    front: &[Vec<f64>],
    reference: &[f64],
    base: &BaseSamples,
) -> Result<f64, GpError> {
    FrontCache::new(front, reference).mean_improvement(posteriors, base)
}

fn batch_posteriors(models: &[GpModel], batch: &[Vec<f64>]) -> Result<Vec<MeanCov>, GpError> {
    models
        .iter()
        .map(|model| {
            if batch.len() == 1 {
                let (mean, var) = model.predict(&batch[0]);
                Ok(MeanCov {
                    mean: vec![mean],
                    cov: DMatrix::from_element(1, 1, var),
                })
            } else {
                model.posterior(batch)
            }
        })
        .collect()
}

/// qEHVI of a unit-cube batch under independent per-objective models.
pub fn qehvi(
    models: &[GpModel],
    archive: &ParetoArchive,
    batch: &[Vec<f64>],
    base: &BaseSamples,
) -> Result<f64, GpError> {
    let posteriors = batch_posteriors(models, batch)?;
    qehvi_from_posteriors(&posteriors, &archive.front_objectives(), archive.reference(), base)
}

/// Greedy sequential batch maximization of qEHVI over the unit cube.
///
/// Each slot is chosen with the already accepted slots fixed: scrambled-Sobol
/// probes rank starting points, the best `restarts` probes are refined by
/// bounded coordinate search, and the best refined point is accepted.
pub fn propose_batch(models: &[GpModel], archive: &ParetoArchive, cfg: &AcqConfig) -> Vec<Vec<f64>> {
    let dim = models[0].dim();
    let base = cfg.base_samples(models.len());
    let cache = FrontCache::new(&archive.front_objectives(), archive.reference());
    let probes = cfg.probes(dim);
    let lower = vec![0.0; dim];
    let upper = vec![1.0; dim];
    let search_cfg = CoordinateSearch {
        initial_step: 0.05,
        max_sweeps: cfg.local_steps,
        min_step: 1e-4,
        max_step: 0.25,
        max_evals: cfg.local_steps,
    };

    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_q);
    for _ in 0..cfg.batch_q {
        let score = |candidate: &[f64]| -> f64 {
            let mut trial = batch.clone();
            trial.push(candidate.to_vec());
            batch_posteriors(models, &trial)
                .and_then(|p| cache.mean_improvement(&p, &base))
                .unwrap_or(f64::NEG_INFINITY)
        };
        let probe_values: Vec<f64> = probes.par_iter().map(|p| score(p)).collect();
        let mut ranked: Vec<usize> = (0..probes.len()).collect();
        ranked.sort_by(|&a, &b| probe_values[b].total_cmp(&probe_values[a]).then(a.cmp(&b)));
        ranked.truncate(cfg.restarts);

        let refined: Vec<(Vec<f64>, f64)> = ranked
            .par_iter()
            .map(|&i| search::maximize(&score, &probes[i], &lower, &upper, &search_cfg))
            .collect();
        let mut best = 0;
        for (k, (_, v)) in refined.iter().enumerate() {
            if *v > refined[best].1 {
                best = k;
            }
        }
        batch.push(refined[best].0.clone());
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_var(mean: f64) -> MeanCov {
        MeanCov {
            mean: vec![mean],
            cov: DMatrix::zeros(1, 1),
        }
    }

    #[test]
    fn dominated_zero_variance_candidate_scores_zero() {
        let base = BaseSamples::quasi_normal(64, 1, 2, 1);
        let v = qehvi_from_posteriors(
            &[zero_var(1.5), zero_var(1.2)],
            &[vec![1.0, 1.0]],
            &[2.0, 2.0],
            &base,
        )
        .unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn deterministic_improvement() {
        let base = BaseSamples::quasi_normal(64, 1, 2, 1);
        let v = qehvi_from_posteriors(
            &[zero_var(0.5), zero_var(0.5)],
            &[vec![1.0, 1.0]],
            &[2.0, 2.0],
            &base,
        )
        .unwrap();
        assert!((v - 1.25).abs() < 1e-12);
    }

    #[test]
    fn duplicate_batch_equals_single() {
        let base = BaseSamples::quasi_normal(32, 2, 2, 3);
        let single = qehvi_from_posteriors(
            &[zero_var(0.5), zero_var(0.7)],
            &[vec![1.0, 1.0]],
            &[2.0, 2.0],
            &base,
        )
        .unwrap();
        let pair = |m: f64| MeanCov {
            mean: vec![m, m],
            cov: DMatrix::zeros(2, 2),
        };
        let double = qehvi_from_posteriors(
            &[pair(0.5), pair(0.7)],
            &[vec![1.0, 1.0]],
            &[2.0, 2.0],
            &base,
        )
        .unwrap();
        assert!((single - double).abs() < 1e-12);
    }

    #[test]
    fn candidate_at_reference_scores_zero() {
        let base = BaseSamples::quasi_normal(16, 1, 2, 0);
        let v = qehvi_from_posteriors(
            &[zero_var(2.0), zero_var(5.0)],
            &[vec![1.0, 1.0]],
            &[2.0, 2.0],
            &base,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn quasi_normal_moments() {
        let base = BaseSamples::quasi_normal(4096, 1, 1, 7);
        let z: Vec<f64> = (0..4096).map(|s| base.get(0, s, 0)).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-2);
        assert!((var - 1.0).abs() < 2e-2);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(AcqConfig::default().validate().is_ok());
        let bad = AcqConfig {
            batch_q: 5,
            ..AcqConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AcqConfig {
            mc_samples: 0,
            ..AcqConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
