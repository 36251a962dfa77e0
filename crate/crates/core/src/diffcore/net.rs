//! Dense feed-forward networks with batched forward and backward passes.
//!
//! Flattened parameter order is layer-major; within a layer the weights come
//! first (output-major: all input weights of output unit 0, then unit 1, ...)
//! followed by the biases. Checkpoints store exactly this vector.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    /// `1 + softplus(z)`, strictly above one.
    SoftplusShifted,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => math::sigmoid(z),
            Activation::SoftplusShifted => 1.0 + math::softplus(z),
        }
    }

    /// Derivative at pre-activation `z` whose output is `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::SoftplusShifted => math::sigmoid(z),
        }
    }

    pub fn on_tape(self, tape: &mut Tape, z: Var) -> Var {
        match self {
            Activation::Identity => z,
            Activation::Tanh => tape.tanh(z),
            Activation::Relu => tape.relu(z),
            Activation::Sigmoid => tape.sigmoid(z),
            Activation::SoftplusShifted => {
                let s = tape.softplus(z);
                tape.add_const(s, 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetSnapshot", into = "NetSnapshot")]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    /// Per layer, stored transposed: `fan_in × fan_out`, so the column-major
    /// storage is already in flattened (output-major) order.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Serialized form of a [`DenseNet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSnapshot {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub params: Vec<f64>,
}

impl From<DenseNet> for NetSnapshot {
    fn from(net: DenseNet) -> Self {
        NetSnapshot {
            params: net.params(),
            layer_dims: net.layer_dims,
            hidden_activation: net.hidden_activation,
            output_activation: net.output_activation,
        }
    }
}

impl TryFrom<NetSnapshot> for DenseNet {
    type Error = Error;

    fn try_from(s: NetSnapshot) -> Result<Self> {
        let mut net = DenseNet::zeros(&s.layer_dims, s.hidden_activation, s.output_activation)?;
        net.set_params(&s.params)?;
        Ok(net)
    }
}

/// Intermediate values of a batched forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// Input to each layer; `layer_inputs[0]` is the batch itself.
    layer_inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl BatchTrace {
    /// `N × out` network outputs.
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl DenseNet {
    pub fn zeros(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer_dims must list at least input and output sizes, all positive: {layer_dims:?}"
            )));
        }
        let weights = layer_dims
            .windows(2)
            .map(|w| DMatrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(DenseNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, hidden_activation, output_activation)?;
        for w in &mut net.weights {
            let bound = 1.0 / (w.nrows() as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                context: "DenseNet::set_params",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.len();
            w.as_mut_slice()
                .copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let nb = b.len();
            b.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "DenseNet::forward",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut current = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let act = self.activation(l);
            current = (0..w.ncols())
                .map(|o| {
                    let col = w.column(o);
                    let z = b[o] + col.iter().zip(&current).map(|(a, x)| a * x).sum::<f64>();
                    act.apply(z)
                })
                .collect();
        }
        Ok(current)
    }

    /// Batched forward pass over the rows of `inputs` (`N × input_dim`).
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<BatchTrace> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "DenseNet::forward_batch",
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        let mut current = inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = &current * w;
            for (o, mut col) in z.column_iter_mut().enumerate() {
                col.add_scalar_mut(b[o]);
            }
            let act = self.activation(l);
            let a = z.map(|v| act.apply(v));
            layer_inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok(BatchTrace {
            layer_inputs,
            pre_activations,
            output: current,
        })
    }

    /// Backpropagates `d_output` (`N × output_dim`, gradient of the loss with
    /// respect to the post-activation outputs). Parameter gradients are
    /// accumulated into `grad` (length `num_params`); the gradient with
    /// respect to the batch inputs is returned.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        d_output: &DMatrix<f64>,
        grad: &mut [f64],
    ) -> DMatrix<f64> {
        assert_eq!(grad.len(), self.num_params());
        let offsets: Vec<usize> = self
            .layer_dims
            .windows(2)
            .scan(0, |acc, w| {
                let start = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(start)
            })
            .collect();

        let mut d_a = d_output.clone();
        let mut output = &trace.output;
        for l in (0..self.weights.len()).rev() {
            let act = self.activation(l);
            let z = &trace.pre_activations[l];
            let mut d_z = d_a;
            for ((dz, &zv), &av) in d_z.iter_mut().zip(z.iter()).zip(output.iter()) {
                *dz *= act.derivative(zv, av);
            }
            let input = &trace.layer_inputs[l];
            let d_w = input.tr_mul(&d_z);
            let off = offsets[l];
            let n_w = d_w.len();
            for (g, v) in grad[off..off + n_w].iter_mut().zip(d_w.iter()) {
                *g += v;
            }
            for (o, col) in d_z.column_iter().enumerate() {
                grad[off + n_w + o] += col.sum();
            }
            d_a = &d_z * self.weights[l].transpose();
            output = input;
        }
        d_a
    }

    /// Forward pass on a tape, with parameters given as tape leaves in
    /// flattened order.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[Var]) -> Vec<Var> {
        assert_eq!(params.len(), self.num_params());
        assert_eq!(input.len(), self.input_dim());
        let mut offset = 0;
        let mut current = input.to_vec();
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let act = self.activation(l);
            current = (0..fan_out)
                .map(|o| {
                    let lin = tape.dot(&weights[o * fan_in..(o + 1) * fan_in], &current);
                    let z = tape.add(lin, bias[o]);
                    act.on_tape(tape, z)
                })
                .collect();
        }
        current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_identity_output_is_zero() {
        let net = DenseNet::zeros(&[3, 4, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_net_sigmoid_output_is_half() {
        let net = DenseNet::zeros(&[3, 4, 2], Activation::Tanh, Activation::Sigmoid).unwrap();
        assert_eq!(net.forward(&[7.0, -2.0, 0.5]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn unit_net_at_zero() {
        let mut net = DenseNet::zeros(&[1, 1, 1], Activation::Tanh, Activation::Identity).unwrap();
        net.set_params(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![1f64.tanh()]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = DenseNet::zeros(&[3, 2, 1], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::Shape {
                expected: 3,
                got: 1,
                ..
            })
        ));
        assert!(net.forward_batch(&DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn flatten_order_is_output_major_weights_then_bias() {
        let mut net = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        // unit o: weights (w_o0, w_o1), then biases (b0, b1, b2)
        net.set_params(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.1, 0.2, 0.3])
            .unwrap();
        let out = net.forward(&[1.0, 10.0]).unwrap();
        assert_eq!(out, vec![21.1, 43.2, 65.3]);
        assert_eq!(
            net.params(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.1, 0.2, 0.3]
        );
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a =
            DenseNet::init_uniform(&[4, 8, 2], Activation::Tanh, Activation::Identity, &mut rng)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b =
            DenseNet::init_uniform(&[4, 8, 2], Activation::Tanh, Activation::Identity, &mut rng)
                .unwrap();
        assert_eq!(a, b);
        let p = a.params();
        // first layer weights bounded by 1/sqrt(4)
        assert!(p[..32].iter().all(|v| v.abs() <= 0.5));
        assert!(p[32..40].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net =
            DenseNet::init_uniform(&[3, 5, 2], Activation::Tanh, Activation::Sigmoid, &mut rng)
                .unwrap();
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -0.4, 2.0, 1.0, 0.0, -1.0]);
        let trace = net.forward_batch(&x).unwrap();
        for r in 0..2 {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            let single = net.forward(&row).unwrap();
            for o in 0..2 {
                assert!((trace.output()[(r, o)] - single[o]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::init_uniform(
            &[2, 3, 1],
            Activation::Relu,
            Activation::SoftplusShifted,
            &mut rng,
        )
        .unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
