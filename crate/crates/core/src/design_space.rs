//! Tunable circuit parameters, box bounds, unit-cube mapping and the
//! five-objective minimization form used by the optimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a parameter is mapped onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// One tunable circuit parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameter {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl Parameter {
    pub fn linear(name: &str, unit: &str, lower: f64, upper: f64) -> Self {
        Parameter {
            name: name.to_string(),
            unit: unit.to_string(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn log(name: &str, unit: &str, lower: f64, upper: f64) -> Self {
        Parameter {
            scale: Scale::Log,
            ..Parameter::linear(name, unit, lower, upper)
        }
    }

    fn to_unit(&self, value: f64) -> f64 {
        let u = match self.scale {
            Scale::Linear => (value - self.lower) / (self.upper - self.lower),
            Scale::Log => {
                let lo = self.lower.log10();
                (value.log10() - lo) / (self.upper.log10() - lo)
            }
        };
        u.clamp(0.0, 1.0)
    }

    fn from_unit(&self, u: f64) -> f64 {
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => {
                let lo = self.lower.log10();
                10f64.powf(lo + u * (self.upper.log10() - lo))
            }
        };
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("design space has no parameters")]
    Empty,
    #[error("parameter `{0}`: lower bound must be finite and below the upper bound")]
    InvalidBounds(String),
    #[error("parameter `{0}`: log scale requires a positive lower bound")]
    NonPositiveLog(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter name must not be empty")]
    EmptyName,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("`{name}` = {value} outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("unit-cube coordinate {index} = {value} outside [0, 1]")]
    OutOfUnitCube { index: usize, value: f64 },
}

/// A validated, ordered set of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct DesignSpace {
    parameters: Vec<Parameter>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    parameters: Vec<Parameter>,
}

impl TryFrom<RawSpace> for DesignSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        DesignSpace::new(raw.parameters)
    }
}

impl From<DesignSpace> for RawSpace {
    fn from(space: DesignSpace) -> Self {
        RawSpace {
            parameters: space.parameters,
        }
    }
}

impl DesignSpace {
    pub fn new(parameters: Vec<Parameter>) -> Result<Self, SpaceError> {
        if parameters.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (i, p) in parameters.iter().enumerate() {
            if p.name.is_empty() {
                return Err(SpaceError::EmptyName);
            }
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(SpaceError::InvalidBounds(p.name.clone()));
            }
            if p.scale == Scale::Log && p.lower <= 0.0 {
                return Err(SpaceError::NonPositiveLog(p.name.clone()));
            }
            if parameters[..i].iter().any(|q| q.name == p.name) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(DesignSpace { parameters })
    }

    /// Default space for the analytic transconductor: four device widths in
    /// micrometres and the common-mode voltage.
    pub fn default_analytic() -> Self {
        DesignSpace::new(vec![
            Parameter::linear("w1", "um", 1.0, 20.0),
            Parameter::linear("w2", "um", 1.0, 20.0),
            Parameter::linear("w3", "um", 1.0, 20.0),
            Parameter::linear("w4", "um", 1.0, 20.0),
            Parameter::linear("vcm", "V", 0.5, 1.2),
        ])
        .expect("default space is valid")
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.parameters.iter().map(|p| p.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn check(&self, point: &DesignPoint) -> Result<(), BoundsError> {
        if point.0.len() != self.dim() {
            return Err(BoundsError::DimensionMismatch {
                expected: self.dim(),
                found: point.0.len(),
            });
        }
        for (p, &v) in self.parameters.iter().zip(&point.0) {
            if !(v >= p.lower && v <= p.upper) {
                return Err(BoundsError::OutOfBounds {
                    name: p.name.clone(),
                    value: v,
                    lower: p.lower,
                    upper: p.upper,
                });
            }
        }
        Ok(())
    }

    /// Maps an in-bounds point onto `[0, 1]^d` (affine, or affine in log10).
    pub fn normalize(&self, point: &DesignPoint) -> Result<Vec<f64>, BoundsError> {
        self.check(point)?;
        Ok(self
            .parameters
            .iter()
            .zip(&point.0)
            .map(|(p, &v)| p.to_unit(v))
            .collect())
    }

    pub fn denormalize(&self, unit: &[f64]) -> Result<DesignPoint, BoundsError> {
        if unit.len() != self.dim() {
            return Err(BoundsError::DimensionMismatch {
                expected: self.dim(),
                found: unit.len(),
            });
        }
        if let Some((index, &value)) = unit
            .iter()
            .enumerate()
            .find(|(_, u)| !(**u >= 0.0 && **u <= 1.0))
        {
            return Err(BoundsError::OutOfUnitCube { index, value });
        }
        Ok(DesignPoint(
            self.parameters
                .iter()
                .zip(unit)
                .map(|(p, &u)| p.from_unit(u))
                .collect(),
        ))
    }

    pub fn center(&self) -> DesignPoint {
        self.denormalize(&vec![0.5; self.dim()])
            .expect("center is inside the unit cube")
    }
}

/// Parameter values in native units, ordered as in the owning [`DesignSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(pub Vec<f64>);

impl DesignPoint {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// The five circuit performance figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetrics {
    /// Tunable Gm range (S).
    #[serde(rename = "R")]
    pub r: f64,
    /// Gm-V linearity in `[0, 1]`.
    #[serde(rename = "Gamma")]
    pub gamma: f64,
    /// Bandwidth (Hz).
    #[serde(rename = "B")]
    pub b: f64,
    /// Power (W).
    #[serde(rename = "P")]
    pub p: f64,
    /// Input-referred noise (V/sqrt(Hz)).
    #[serde(rename = "N")]
    pub n: f64,
}

impl CircuitMetrics {
    pub fn is_valid(&self) -> bool {
        let all_finite = [self.r, self.gamma, self.b, self.p, self.n]
            .iter()
            .all(|v| v.is_finite());
        all_finite
            && self.r >= 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.b >= 0.0
            && self.p >= 0.0
            && self.n >= 0.0
    }
}

/// Whether a metric is better when larger or smaller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// Factor mapping a natural metric value to minimization form and back.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        }
    }
}

/// Name and orientation of one optimization objective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub sense: Sense,
}

impl ObjectiveSpec {
    pub fn new(name: &str, sense: Sense) -> Self {
        ObjectiveSpec {
            name: name.to_string(),
            sense,
        }
    }

    /// The circuit objectives in the order R, Gamma, B, P, N.
    pub fn circuit() -> Vec<ObjectiveSpec> {
        vec![
            ObjectiveSpec::new("R", Sense::Maximize),
            ObjectiveSpec::new("Gamma", Sense::Maximize),
            ObjectiveSpec::new("B", Sense::Maximize),
            ObjectiveSpec::new("P", Sense::Minimize),
            ObjectiveSpec::new("N", Sense::Minimize),
        ]
    }
}

/// `(-R, -Gamma, -B, P, N)`, in native units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(pub [f64; 5]);

impl ObjectiveVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn to_minimization(m: &CircuitMetrics) -> ObjectiveVector {
    ObjectiveVector([-m.r, -m.gamma, -m.b, m.p, m.n])
}

/// `n` points of an Owen-scrambled Sobol sequence in `[0, 1)^d`.
///
/// The sequence is index-addressed, so the first `k` points for a seed do not
/// depend on `n`.
///
/// # Panics
///
/// If `n > 2^16` or `d` exceeds the number of available Sobol dimensions.
pub fn sobol_init(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(n <= 1 << 16, "at most 2^16 Sobol points are supported");
    assert!(
        d <= sobol_burley::NUM_DIMENSIONS as usize,
        "at most {} Sobol dimensions are supported",
        sobol_burley::NUM_DIMENSIONS
    );
    let seed = fold_seed(seed);
    (0..n as u32)
        .map(|i| {
            (0..d as u32)
                .map(|j| sobol_burley::sample(i, j, seed) as f64)
                .collect()
        })
        .collect()
}

pub(crate) fn fold_seed(seed: u64) -> u32 {
    (seed ^ (seed >> 32)) as u32
}
