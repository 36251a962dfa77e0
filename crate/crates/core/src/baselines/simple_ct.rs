use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctpm::{train_restarts, Batch, BatchWeighting, ObjectiveSpec, TrainConfig, Trained};
use crate::diffcore::{Activation, BatchTrace, DenseNet};
use crate::error::{Error, Result};

/// `σ(w·[x, y] + b)` used directly as the batch weight, trained on the same
/// objective as the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleCtModel {
    net: DenseNet,
    overall_propensity: f64,
}

impl SimpleCtModel {
    fn layer_dims(joint_dim: usize) -> [usize; 2] {
        [joint_dim, 1]
    }

    pub fn zeros(joint_dim: usize, overall_propensity: f64) -> Result<Self> {
        Self::new(
            DenseNet::zeros(
                &Self::layer_dims(joint_dim),
                Activation::Identity,
                Activation::Sigmoid,
            )?,
            overall_propensity,
        )
    }

    pub fn init<R: Rng + ?Sized>(
        joint_dim: usize,
        overall_propensity: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(
            DenseNet::init_uniform(
                &Self::layer_dims(joint_dim),
                Activation::Identity,
                Activation::Sigmoid,
                rng,
            )?,
            overall_propensity,
        )
    }

    fn new(net: DenseNet, overall_propensity: f64) -> Result<Self> {
        if !(overall_propensity > 0.0 && overall_propensity < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overall propensity must lie in (0, 1), got {overall_propensity}"
            )));
        }
        Ok(SimpleCtModel {
            net,
            overall_propensity,
        })
    }

    /// `(w, b)` with `w` over the concatenated features.
    pub fn coefficients(&self) -> (Vec<f64>, f64) {
        let p = self.net.params();
        let (w, b) = p.split_at(p.len() - 1);
        (w.to_vec(), b[0])
    }

    pub fn score(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut joint = x.to_vec();
        joint.extend_from_slice(y);
        Ok(self.net.forward(&joint)?[0])
    }

    pub fn score_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.0)
    }
}

impl BatchWeighting for SimpleCtModel {
    type Trace = BatchTrace;

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn overall_propensity(&self) -> f64 {
        self.overall_propensity
    }

    fn forward(&self, batch: &Batch) -> Result<(Vec<f64>, BatchTrace)> {
        let t = self.net.forward_batch(&batch.joint)?;
        Ok((t.output().column(0).iter().copied().collect(), t))
    }

    fn backward(&self, _batch: &Batch, trace: &BatchTrace, d_weights: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        let d = DMatrix::from_column_slice(d_weights.len(), 1, d_weights);
        self.net.backward_batch(trace, &d, &mut grad);
        grad
    }
}

pub fn train_simple_ct(
    train: &Batch,
    validation: &Batch,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
    overall_propensity: f64,
) -> Result<Trained<SimpleCtModel>> {
    let dim = train.joint.ncols();
    train_restarts(
        |rng| SimpleCtModel::init(dim, overall_propensity, rng),
        train,
        validation,
        spec,
        config,
    )
}
