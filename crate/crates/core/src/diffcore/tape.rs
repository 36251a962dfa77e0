//! A small scalar reverse-mode tape.
//!
//! Every operation appends a node holding its value and the local partial
//! derivatives with respect to (at most two) parent nodes. `gradient` runs a
//! single backward sweep. The tape is used for generic loss compositions and
//! as an independent route for checking the batched, hand-derived gradients
//! of the causal objective.

use crate::error::{Error, Result};
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    op: &'static str,
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, op: &'static str, parents: &[(Var, f64)]) -> Var {
        let mut slots = [(0, 0.0); 2];
        for (slot, (v, d)) in slots.iter_mut().zip(parents) {
            *slot = (v.0, *d);
        }
        self.nodes.push(Node {
            value,
            op,
            parents: slots,
            arity: parents.len() as u8,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node (an input or parameter).
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, "input", &[])
    }

    pub fn vars(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(value, "constant", &[])
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, "add", &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, "sub", &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, "mul", &[(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, "div", &[(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, "neg", &[(a, -1.0)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.push(v, "scale", &[(a, c)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, "add_const", &[(a, 1.0)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x.ln(), "ln", &[(a, 1.0 / x)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).exp();
        self.push(y, "exp", &[(a, y)])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).sqrt();
        self.push(y, "sqrt", &[(a, 0.5 / y)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let s = math::sigmoid(self.value(a));
        self.push(s, "sigmoid", &[(a, s * (1.0 - s))])
    }

    /// `ln σ(a)`, evaluated without forming σ.
    pub fn ln_sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(math::ln_sigmoid(x), "ln_sigmoid", &[(a, math::sigmoid(-x))])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.push(t, "tanh", &[(a, 1.0 - t * t)])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (v, d) = if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) };
        self.push(v, "relu", &[(a, d)])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(math::softplus(x), "softplus", &[(a, math::sigmoid(x))])
    }

    /// `ln Γ(a)`, derivative ψ(a).
    pub fn ln_gamma(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(math::ln_gamma(x), "ln_gamma", &[(a, math::digamma(x))])
    }

    /// `max(a, floor)`; the derivative is zero on the clamped side.
    pub fn max_const(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        if x >= floor {
            self.push(x, "max_const", &[(a, 1.0)])
        } else {
            self.push(floor, "max_const", &[(a, 0.0)])
        }
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let products: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&products)
    }

    /// Cosine similarity with the product of norms floored at `norm_floor`.
    pub fn cosine(&mut self, a: &[Var], b: &[Var], norm_floor: f64) -> Var {
        let ab = self.dot(a, b);
        let aa = self.dot(a, a);
        let bb = self.dot(b, b);
        let na = self.sqrt(aa);
        let nb = self.sqrt(bb);
        let denom = self.mul(na, nb);
        let denom = self.max_const(denom, norm_floor);
        self.div(ab, denom)
    }

    /// Adjoints of every node with respect to `output`.
    ///
    /// Fails on the first non-finite value or adjoint, naming the operation
    /// that produced it.
    pub fn adjoints(&self, output: Var) -> Result<Vec<f64>> {
        for (i, node) in self.nodes[..=output.0].iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::non_finite(format!("tape node {i} ({})", node.op)));
            }
        }
        let mut adj = vec![0.0; output.0 + 1];
        adj[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            for &(p, d) in &node.parents[..node.arity as usize] {
                adj[p] += a * d;
            }
        }
        if let Some(i) = adj.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!(
                "adjoint of tape node {i} ({})",
                self.nodes[i].op
            )));
        }
        Ok(adj)
    }

    /// Gradient of `output` with respect to the listed leaves.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<f64>> {
        let adj = self.adjoints(output)?;
        Ok(wrt
            .iter()
            .map(|v| adj.get(v.0).copied().unwrap_or(0.0))
            .collect())
    }
}
