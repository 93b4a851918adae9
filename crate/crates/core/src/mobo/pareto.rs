use serde::{Deserialize, Serialize};

use super::hypervolume::{hypervolume, HvError};

/// `a` dominates `b` under minimization: no worse anywhere, better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Indices of the nondominated rows of `ys`. Among exact duplicates only the
/// lowest index is kept.
pub fn pareto_front(ys: &[Vec<f64>]) -> Vec<usize> {
    (0..ys.len())
        .filter(|&i| {
            !ys.iter().enumerate().any(|(j, yj)| {
                dominates(yj, &ys[i]) || (j < i && yj == &ys[i])
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    /// Unit-cube input.
    pub x: Vec<f64>,
    /// Minimization-form objectives.
    pub y: Vec<f64>,
}

/// Successful observations, their nondominated subset and the frozen
/// reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
    front: Vec<usize>,
    reference: Vec<f64>,
}

impl ParetoArchive {
    pub fn new(reference: Vec<f64>) -> Self {
        ParetoArchive {
            entries: Vec::new(),
            front: Vec::new(),
            reference,
        }
    }

    pub fn insert(&mut self, x: Vec<f64>, y: Vec<f64>) {
        assert_eq!(y.len(), self.reference.len(), "objective count mismatch");
        self.entries.push(ArchiveEntry { x, y });
        let ys: Vec<Vec<f64>> = self.entries.iter().map(|e| e.y.clone()).collect();
        self.front = pareto_front(&ys);
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn front_indices(&self) -> &[usize] {
        &self.front
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Front objective vectors clipped to the reference point.
    pub fn front_objectives(&self) -> Vec<Vec<f64>> {
        self.front
            .iter()
            .map(|&i| {
                self.entries[i]
                    .y
                    .iter()
                    .zip(&self.reference)
                    .map(|(v, r)| v.min(*r))
                    .collect()
            })
            .collect()
    }

    pub fn hypervolume(&self) -> Result<f64, HvError> {
        hypervolume(&self.front_objectives(), &self.reference)
    }
}
