//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every node stores its value and the local partials towards its parents.
//! Nodes are appended after their parents, so one reverse pass over the tape
//! accumulates exact gradients of a scalar root.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} refers to parent {parent}, which is not older")]
    Cycle { node: usize, parent: usize },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    values: Vec<f64>,
    /// `edges[starts[i]..starts[i + 1]]` are the parents of node `i`.
    starts: Vec<usize>,
    edges: Vec<(usize, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            starts: vec![0],
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    /// Independent input (parameter or data).
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, std::iter::empty())
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(value)
    }

    /// Node with explicit local partials, for fused operations.
    ///
    /// # Panics
    ///
    /// If a parent is not already on the tape.
    pub fn custom(&mut self, value: f64, partials: &[(Var, f64)]) -> Var {
        let node = self.values.len();
        for (p, _) in partials {
            assert!(p.0 < node, "parent {} of node {node} is not on the tape", p.0);
        }
        self.push(value, partials.iter().map(|(p, d)| (p.0, *d)))
    }

    fn push(&mut self, value: f64, parents: impl Iterator<Item = (usize, f64)>) -> Var {
        self.values.push(value);
        self.edges.extend(parents);
        self.starts.push(self.edges.len());
        Var(self.values.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, [(a.0, 1.0), (b.0, 1.0)].into_iter())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, [(a.0, 1.0), (b.0, -1.0)].into_iter())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, [(a.0, y), (b.0, x)].into_iter())
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, [(a.0, 1.0 / y), (b.0, -x / (y * y))].into_iter())
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, std::iter::once((a.0, k)))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, std::iter::once((a.0, 1.0)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(v, std::iter::once((a.0, v)))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x.ln(), std::iter::once((a.0, 1.0 / x)))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).sqrt();
        self.push(v, std::iter::once((a.0, 0.5 / v)))
    }

    pub fn tan(&mut self, a: Var) -> Var {
        let t = self.value(a).tan();
        self.push(t, std::iter::once((a.0, 1.0 + t * t)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (v, d) = if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) };
        self.push(v, std::iter::once((a.0, d)))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|x| self.value(*x)).sum();
        self.push(v, xs.iter().map(|x| (x.0, 1.0)))
    }

    pub fn mean(&mut self, xs: &[Var]) -> Var {
        let k = 1.0 / xs.len() as f64;
        let v = xs.iter().map(|x| self.value(*x)).sum::<f64>() * k;
        self.push(v, xs.iter().map(|x| (x.0, k)))
    }

    /// `bias + Σ weights[i]·inputs[i]` as one node.
    pub fn affine(&mut self, weights: &[Var], inputs: &[Var], bias: Var) -> Var {
        debug_assert_eq!(weights.len(), inputs.len());
        let mut v = self.value(bias);
        for (w, x) in weights.iter().zip(inputs) {
            v += self.value(*w) * self.value(*x);
        }
        let node = self.values.len();
        self.values.push(v);
        for (w, x) in weights.iter().zip(inputs) {
            let (wv, xv) = (self.values[w.0], self.values[x.0]);
            self.edges.push((w.0, xv));
            self.edges.push((x.0, wv));
        }
        self.edges.push((bias.0, 1.0));
        self.starts.push(self.edges.len());
        Var(node)
    }

    /// Softmax cross-entropy `logsumexp(logits) - logits[label]`.
    pub fn cross_entropy(&mut self, logits: &[Var], label: usize) -> Var {
        let z: Vec<f64> = logits.iter().map(|l| self.value(*l)).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let value = m + total.ln() - z[label];
        let partials: Vec<(Var, f64)> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| (*l, e[i] / total - if i == label { 1.0 } else { 0.0 }))
            .collect();
        self.custom(value, &partials)
    }

    /// Gradient of `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var) -> Result<Vec<f64>, GraphError> {
        if root.0 >= self.values.len() {
            return Err(GraphError::UnknownNode(root.0));
        }
        let mut grad = vec![0.0; root.0 + 1];
        grad[root.0] = 1.0;
        for node in (0..=root.0).rev() {
            let g = grad[node];
            if g == 0.0 {
                continue;
            }
            for &(parent, d) in &self.edges[self.starts[node]..self.starts[node + 1]] {
                if parent >= node {
                    return Err(GraphError::Cycle { node, parent });
                }
                grad[parent] += g * d;
            }
        }
        grad.resize(self.values.len(), 0.0);
        Ok(grad)
    }
}
