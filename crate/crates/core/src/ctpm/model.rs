use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{
    normalize_weights, weighted_effect, weighted_loss, Batch, NormalizedWeights, ObjectiveSpec,
};
use super::policy::{PolicyFamily, PolicyParams};
use super::train::BatchWeighting;
use crate::dataset::Dataset;
use crate::diffcore::{Activation, BatchTrace, DenseNet};
use crate::error::{Error, Result};
use crate::propensity::PropensityModel;

/// Floor on `‖a‖·‖b‖` inside the cosine during training and scoring.
pub const COSINE_NORM_FLOOR: f64 = 1e-8;

/// Embeddings shorter than this make the standalone affinity undefined.
pub const MIN_EMBEDDING_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_units: usize,
    pub embedding_dim: usize,
    pub hidden_activation: Activation,
    pub policy: PolicyFamily,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_units: 8,
            embedding_dim: 8,
            hidden_activation: Activation::Tanh,
            policy: PolicyFamily::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.embedding_dim == 0 {
            return Err(Error::Config(
                "hidden_units and embedding_dim must be positive".into(),
            ));
        }
        if let PolicyFamily::SigmoidBell { sharpness } = self.policy {
            if !(sharpness > 0.0 && sharpness.is_finite()) {
                return Err(Error::Config(format!(
                    "sharpness must be positive, got {sharpness}"
                )));
            }
        }
        if matches!(
            self.hidden_activation,
            Activation::Identity | Activation::SoftplusShifted
        ) {
            return Err(Error::Config(
                "hidden_activation must be tanh, relu or sigmoid".into(),
            ));
        }
        Ok(())
    }
}

/// How records are ranked at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingIntensity {
    /// Likelihood of the logged intensity.
    #[default]
    Observed,
    /// Likelihood at the predicted optimal intensity.
    Optimal,
}

/// Prior `g(x)`, bipartite embeddings `f_sp`, `f_cp` with affinity
/// `h = 1 + cos(f_sp(x), f_cp(y))`, and a policy network producing the
/// intensity likelihood `p(P | x, y)`. A match's weight is `g · h · p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CtpmParts", into = "CtpmParts")]
pub struct CtpmModel {
    g_net: DenseNet,
    f_sp: DenseNet,
    f_cp: DenseNet,
    policy_net: DenseNet,
    family: PolicyFamily,
    propensity: PropensityModel,
    overall_propensity: f64,
}

/// Serialized form of a [`CtpmModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtpmParts {
    pub g_net: DenseNet,
    pub f_sp: DenseNet,
    pub f_cp: DenseNet,
    pub policy_net: DenseNet,
    pub family: PolicyFamily,
    pub propensity: PropensityModel,
    pub overall_propensity: f64,
}

impl From<CtpmModel> for CtpmParts {
    fn from(m: CtpmModel) -> Self {
        CtpmParts {
            g_net: m.g_net,
            f_sp: m.f_sp,
            f_cp: m.f_cp,
            policy_net: m.policy_net,
            family: m.family,
            propensity: m.propensity,
            overall_propensity: m.overall_propensity,
        }
    }
}

impl TryFrom<CtpmParts> for CtpmModel {
    type Error = Error;

    fn try_from(p: CtpmParts) -> Result<Self> {
        let dx = p.g_net.input_dim();
        let e = p.f_sp.output_dim();
        let expected_output = match p.family {
            PolicyFamily::SigmoidBell { .. } => Activation::Sigmoid,
            PolicyFamily::Beta => Activation::SoftplusShifted,
        };
        let consistent = p.g_net.output_dim() == 1
            && p.g_net.output_activation() == Activation::Sigmoid
            && p.f_sp.input_dim() == dx
            && p.f_cp.output_dim() == e
            && p.policy_net.input_dim() == dx + p.f_cp.input_dim()
            && p.policy_net.output_dim() == p.family.arity()
            && p.policy_net.output_activation() == expected_output;
        if !consistent {
            return Err(Error::InvalidArgument(
                "inconsistent CTPM network shapes".into(),
            ));
        }
        if !(p.overall_propensity > 0.0 && p.overall_propensity < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overall propensity must lie in (0, 1), got {}",
                p.overall_propensity
            )));
        }
        Ok(CtpmModel {
            g_net: p.g_net,
            f_sp: p.f_sp,
            f_cp: p.f_cp,
            policy_net: p.policy_net,
            family: p.family,
            propensity: p.propensity,
            overall_propensity: p.overall_propensity,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CtpmModel {
    fn build(
        subject_dim: usize,
        candidate_dim: usize,
        config: &ModelConfig,
        propensity: PropensityModel,
        overall_propensity: f64,
        mut make: impl FnMut(&[usize], Activation, Activation) -> Result<DenseNet>,
    ) -> Result<Self> {
        config.validate()?;
        let (h, e, act) = (
            config.hidden_units,
            config.embedding_dim,
            config.hidden_activation,
        );
        let policy_out = match config.policy {
            PolicyFamily::SigmoidBell { .. } => Activation::Sigmoid,
            PolicyFamily::Beta => Activation::SoftplusShifted,
        };
        CtpmParts {
            g_net: make(&[subject_dim, h, 1], act, Activation::Sigmoid)?,
            f_sp: make(&[subject_dim, h, e], act, Activation::Identity)?,
            f_cp: make(&[candidate_dim, h, e], act, Activation::Identity)?,
            policy_net: make(
                &[subject_dim + candidate_dim, h, config.policy.arity()],
                act,
                policy_out,
            )?,
            family: config.policy,
            propensity,
            overall_propensity,
        }
        .try_into()
    }

    /// Randomly initialized model (see [`DenseNet::init_uniform`]).
    pub fn init<R: Rng + ?Sized>(
        subject_dim: usize,
        candidate_dim: usize,
        config: &ModelConfig,
        propensity: PropensityModel,
        overall_propensity: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(
            subject_dim,
            candidate_dim,
            config,
            propensity,
            overall_propensity,
            |d, h, o| DenseNet::init_uniform(d, h, o, rng),
        )
    }

    /// All weights and biases zero.
    pub fn zeros(
        subject_dim: usize,
        candidate_dim: usize,
        config: &ModelConfig,
        propensity: PropensityModel,
        overall_propensity: f64,
    ) -> Result<Self> {
        Self::build(
            subject_dim,
            candidate_dim,
            config,
            propensity,
            overall_propensity,
            DenseNet::zeros,
        )
    }

    pub fn from_parts(parts: CtpmParts) -> Result<Self> {
        parts.try_into()
    }

    pub fn g_net(&self) -> &DenseNet {
        &self.g_net
    }

    pub fn subject_embedding_net(&self) -> &DenseNet {
        &self.f_sp
    }

    pub fn candidate_embedding_net(&self) -> &DenseNet {
        &self.f_cp
    }

    pub fn policy_net(&self) -> &DenseNet {
        &self.policy_net
    }

    pub fn family(&self) -> PolicyFamily {
        self.family
    }

    pub fn propensity(&self) -> &PropensityModel {
        &self.propensity
    }

    pub fn subject_dim(&self) -> usize {
        self.g_net.input_dim()
    }

    pub fn candidate_dim(&self) -> usize {
        self.f_cp.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.f_sp.output_dim()
    }

    /// `g(x) ∈ (0, 1)`.
    pub fn subject_prior(&self, x: &[f64]) -> Result<f64> {
        Ok(self.g_net.forward(x)?[0])
    }

    pub fn embeddings(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.f_sp.forward(x)?, self.f_cp.forward(y)?))
    }

    /// `1 + cos(f_sp(x), f_cp(y)) ∈ [0, 2]`.
    pub fn match_affinity(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (a, b) = self.embeddings(x, y)?;
        let (na, nb) = (dot(&a, &a).sqrt(), dot(&b, &b).sqrt());
        if na < MIN_EMBEDDING_NORM || nb < MIN_EMBEDDING_NORM {
            return Err(Error::Degenerate(format!(
                "embedding norm below {MIN_EMBEDDING_NORM:e}; cosine undefined"
            )));
        }
        Ok((1.0 + dot(&a, &b) / (na * nb)).clamp(0.0, 2.0))
    }

    fn guarded_affinity(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (a, b) = self.embeddings(x, y)?;
        let denom = (dot(&a, &a).sqrt() * dot(&b, &b).sqrt()).max(COSINE_NORM_FLOOR);
        Ok(1.0 + dot(&a, &b) / denom)
    }

    pub fn policy_params(&self, x: &[f64], y: &[f64]) -> Result<PolicyParams> {
        let mut joint = x.to_vec();
        joint.extend_from_slice(y);
        Ok(self
            .family
            .params_from_outputs(&self.policy_net.forward(&joint)?))
    }

    pub fn optimal_intensity(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.policy_params(x, y)?.mode())
    }

    /// Un-normalized effectiveness `g · h · p(P)`.
    pub fn score(&self, x: &[f64], y: &[f64], intensity: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::InvalidArgument(format!(
                "intensity {intensity} outside [0, 1]"
            )));
        }
        Ok(self.subject_prior(x)?
            * self.guarded_affinity(x, y)?
            * self.policy_params(x, y)?.likelihood(intensity))
    }

    pub fn batch_weights(&self, batch: &Batch) -> Result<NormalizedWeights> {
        normalize_weights(self.forward(batch)?.0)
    }

    /// Weighted treatment effect on one outcome column.
    pub fn ate_estimate(&self, batch: &Batch, outcome: &str) -> Result<f64> {
        let w = self.batch_weights(batch)?;
        weighted_effect(
            batch,
            &w.normalized,
            batch.outcome(outcome)?,
            self.overall_propensity,
        )
    }

    pub fn composite_objective(&self, batch: &Batch, spec: &ObjectiveSpec) -> Result<f64> {
        let (w, _) = self.forward(batch)?;
        Ok(weighted_loss(spec, batch, w, self.overall_propensity)?.loss)
    }

    /// Ranking scores for every batch record.
    pub fn score_batch(&self, batch: &Batch, mode: RankingIntensity) -> Result<Vec<f64>> {
        let t = self.trace(batch)?;
        Ok(match mode {
            RankingIntensity::Observed => t.raw_weights(),
            RankingIntensity::Optimal => (0..batch.len())
                .map(|i| {
                    let p = t.params[i];
                    t.prior[i] * t.affinity[i] * p.likelihood(p.mode())
                })
                .collect(),
        })
    }

    pub fn optimal_intensity_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        let out = self.policy_net.forward_batch(&batch.joint)?;
        Ok(out
            .output()
            .row_iter()
            .map(|r| {
                let v: Vec<f64> = r.iter().copied().collect();
                self.family.params_from_outputs(&v).mode()
            })
            .collect())
    }

    fn trace(&self, batch: &Batch) -> Result<CtpmTrace> {
        let g = self.g_net.forward_batch(&batch.subject)?;
        let sp = self.f_sp.forward_batch(&batch.subject)?;
        let cp = self.f_cp.forward_batch(&batch.candidate)?;
        let policy = self.policy_net.forward_batch(&batch.joint)?;
        let n = batch.len();
        let prior: Vec<f64> = g.output().column(0).iter().copied().collect();
        let mut cosine = Vec::with_capacity(n);
        let mut affinity = Vec::with_capacity(n);
        for i in 0..n {
            let a = sp.output().row(i);
            let b = cp.output().row(i);
            let (na, nb) = (a.norm(), b.norm());
            let product = na * nb;
            let floored = product < COSINE_NORM_FLOOR;
            let denom = if floored { COSINE_NORM_FLOOR } else { product };
            let c = a.dot(&b) / denom;
            cosine.push(CosineParts {
                c,
                na,
                nb,
                denom,
                floored,
            });
            affinity.push(1.0 + c);
        }
        let arity = self.family.arity();
        let mut params = Vec::with_capacity(n);
        let mut likelihood = Vec::with_capacity(n);
        for i in 0..n {
            let raw: Vec<f64> = (0..arity).map(|k| policy.output()[(i, k)]).collect();
            let p = self.family.params_from_outputs(&raw);
            likelihood.push(p.likelihood(batch.intensity[i]));
            params.push(p);
        }
        Ok(CtpmTrace {
            g,
            sp,
            cp,
            policy,
            prior,
            cosine,
            affinity,
            params,
            likelihood,
        })
    }

    fn param_offsets(&self) -> [usize; 4] {
        let a = self.g_net.num_params();
        let b = a + self.f_sp.num_params();
        let c = b + self.f_cp.num_params();
        [0, a, b, c]
    }

    /// Writes subject and candidate embeddings for every record of `ds`.
    pub fn export_embeddings(&self, ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        self.export_embeddings_to(ds, std::fs::File::create(path)?)
    }

    pub fn export_embeddings_to<W: std::io::Write>(&self, ds: &Dataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let e = self.embedding_dim();
        let mut header = vec!["subject_id".to_string(), "candidate_id".to_string()];
        header.extend((0..e).map(|k| format!("subject_{k}")));
        header.extend((0..e).map(|k| format!("candidate_{k}")));
        w.write_record(&header)?;
        for r in &ds.records {
            let (a, b) = self.embeddings(&r.x, &r.y)?;
            let mut row = vec![r.subject_id.clone(), r.candidate_id.clone()];
            row.extend(a.iter().chain(&b).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct CosineParts {
    c: f64,
    na: f64,
    nb: f64,
    denom: f64,
    floored: bool,
}

/// Forward-pass state kept for backpropagation.
#[derive(Debug, Clone)]
pub struct CtpmTrace {
    g: BatchTrace,
    sp: BatchTrace,
    cp: BatchTrace,
    policy: BatchTrace,
    prior: Vec<f64>,
    cosine: Vec<CosineParts>,
    affinity: Vec<f64>,
    params: Vec<PolicyParams>,
    likelihood: Vec<f64>,
}

impl CtpmTrace {
    fn raw_weights(&self) -> Vec<f64> {
        (0..self.prior.len())
            .map(|i| self.prior[i] * self.affinity[i] * self.likelihood[i])
            .collect()
    }
}

impl BatchWeighting for CtpmModel {
    type Trace = CtpmTrace;

    fn num_params(&self) -> usize {
        self.param_offsets()[3] + self.policy_net.num_params()
    }

    /// `[g | f_sp | f_cp | policy]`, each in network flattening order.
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for net in [&self.g_net, &self.f_sp, &self.f_cp, &self.policy_net] {
            net.write_params(&mut out);
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                context: "CtpmModel::set_params",
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let o = self.param_offsets();
        self.g_net.set_params(&params[o[0]..o[1]])?;
        self.f_sp.set_params(&params[o[1]..o[2]])?;
        self.f_cp.set_params(&params[o[2]..o[3]])?;
        self.policy_net.set_params(&params[o[3]..])
    }

    fn overall_propensity(&self) -> f64 {
        self.overall_propensity
    }

    fn forward(&self, batch: &Batch) -> Result<(Vec<f64>, CtpmTrace)> {
        let t = self.trace(batch)?;
        Ok((t.raw_weights(), t))
    }

    fn backward(&self, batch: &Batch, t: &CtpmTrace, d_weights: &[f64]) -> Vec<f64> {
        let n = batch.len();
        let e = self.embedding_dim();
        let arity = self.family.arity();
        let o = self.param_offsets();
        let mut grad = vec![0.0; self.num_params()];

        let d_prior = DMatrix::from_fn(n, 1, |i, _| d_weights[i] * t.affinity[i] * t.likelihood[i]);
        self.g_net
            .backward_batch(&t.g, &d_prior, &mut grad[o[0]..o[1]]);

        let mut d_sp = DMatrix::zeros(n, e);
        let mut d_cp = DMatrix::zeros(n, e);
        for i in 0..n {
            let dc = d_weights[i] * t.prior[i] * t.likelihood[i];
            let cp = t.cosine[i];
            let a = t.sp.output().row(i);
            let b = t.cp.output().row(i);
            for k in 0..e {
                let (ak, bk) = (a[k], b[k]);
                if cp.floored {
                    d_sp[(i, k)] = dc * bk / cp.denom;
                    d_cp[(i, k)] = dc * ak / cp.denom;
                } else {
                    d_sp[(i, k)] = dc * (bk / cp.denom - cp.c * ak / (cp.na * cp.na));
                    d_cp[(i, k)] = dc * (ak / cp.denom - cp.c * bk / (cp.nb * cp.nb));
                }
            }
        }
        self.f_sp
            .backward_batch(&t.sp, &d_sp, &mut grad[o[1]..o[2]]);
        self.f_cp
            .backward_batch(&t.cp, &d_cp, &mut grad[o[2]..o[3]]);

        let mut d_policy = DMatrix::zeros(n, arity);
        for i in 0..n {
            let dp = d_weights[i] * t.prior[i] * t.affinity[i] * t.likelihood[i];
            let dlog = t.params[i].ln_likelihood_gradient(batch.intensity[i]);
            for k in 0..arity {
                d_policy[(i, k)] = dp * dlog[k];
            }
        }
        self.policy_net
            .backward_batch(&t.policy, &d_policy, &mut grad[o[3]..]);
        grad
    }
}
