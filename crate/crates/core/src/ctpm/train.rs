//! Full-batch Adam training with random restarts, shared by every model that
//! produces per-record batch weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{weighted_loss, Batch, ObjectiveSpec};
use crate::diffcore::{AdamState, Differentiable};
use crate::error::{Error, Result};

/// A model whose only contact with the objective is a positive weight per
/// batch record.
pub trait BatchWeighting: Clone {
    /// Whatever the forward pass keeps for the backward pass.
    type Trace;

    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// Overall treated rate `ê` used by the estimator.
    fn overall_propensity(&self) -> f64;
    /// Raw (un-normalized) weights for every batch record.
    fn forward(&self, batch: &Batch) -> Result<(Vec<f64>, Self::Trace)>;
    /// Parameter gradient given `∂loss/∂w` for each record.
    fn backward(&self, batch: &Batch, trace: &Self::Trace, d_weights: &[f64]) -> Vec<f64>;
}

pub fn objective_value<M: BatchWeighting>(
    model: &M,
    batch: &Batch,
    spec: &ObjectiveSpec,
) -> Result<f64> {
    let (w, _) = model.forward(batch)?;
    Ok(weighted_loss(spec, batch, w, model.overall_propensity())?.loss)
}

pub fn objective_and_gradient<M: BatchWeighting>(
    model: &M,
    batch: &Batch,
    spec: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    let (w, trace) = model.forward(batch)?;
    let l = weighted_loss(spec, batch, w, model.overall_propensity())?;
    Ok((l.loss, model.backward(batch, &trace, &l.d_weights)))
}

/// The objective as a function of a model's flattened parameters.
pub struct ObjectiveFn<'a, M> {
    pub model: &'a M,
    pub batch: &'a Batch,
    pub spec: &'a ObjectiveSpec,
}

impl<M: BatchWeighting> ObjectiveFn<'_, M> {
    fn with_params(&self, params: &[f64]) -> Result<M> {
        let mut m = self.model.clone();
        m.set_params(params)?;
        Ok(m)
    }
}

impl<M: BatchWeighting> Differentiable for ObjectiveFn<'_, M> {
    fn value(&self, params: &[f64]) -> Result<f64> {
        objective_value(&self.with_params(params)?, self.batch, self.spec)
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        objective_and_gradient(&self.with_params(params)?, self.batch, self.spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Return each restart's parameters from the update count with the
    /// lowest validation loss instead of those after the last update.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 650,
            restarts: 6,
            learning_rate: AdamState::DEFAULT_LEARNING_RATE,
            seed: 0,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "iterations and restarts must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Loss trace of one restart. `train_loss[i]` and `validation_loss[i]` are
/// measured before update `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartHistory {
    pub restart: usize,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Number of updates applied to the returned parameters; `None` if aborted.
    pub selected_iteration: Option<usize>,
    /// Validation loss of the returned parameters; `None` if aborted.
    pub selected_validation_loss: Option<f64>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub selected_restart: usize,
    pub histories: Vec<RestartHistory>,
}

impl<M> Trained<M> {
    pub fn best_validation_loss(&self) -> f64 {
        self.histories[self.selected_restart]
            .selected_validation_loss
            .expect("selected restart completed")
    }
}

enum Outcome<M> {
    Completed(M, usize, f64),
    Aborted(String),
}

/// Runs `config.restarts` independent optimizations from `init` and keeps
/// the one with the lowest validation loss. A restart that hits a
/// numeric failure is abandoned; the call fails only if all are.
pub fn train_restarts<M, F>(
    mut init: F,
    train: &Batch,
    validation: &Batch,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
) -> Result<Trained<M>>
where
    M: BatchWeighting,
    F: FnMut(&mut ChaCha8Rng) -> Result<M>,
{
    config.validate()?;
    train.require_both_cohorts()?;
    validation.require_both_cohorts()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut histories = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, f64, M)> = None;

    for restart in 0..config.restarts {
        let seed: u64 = master.random();
        let model = init(&mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut history = RestartHistory {
            restart,
            seed,
            train_loss: Vec::with_capacity(config.iterations),
            validation_loss: Vec::with_capacity(config.iterations),
            selected_iteration: None,
            selected_validation_loss: None,
            aborted: None,
        };
        match run_restart(model, train, validation, spec, config, &mut history)? {
            Outcome::Completed(model, iteration, val) => {
                log::info!("restart {restart}: validation loss {val:.6} after {iteration} updates");
                history.selected_iteration = Some(iteration);
                history.selected_validation_loss = Some(val);
                if best.as_ref().is_none_or(|(_, b, _)| val < *b) {
                    best = Some((restart, val, model));
                }
            }
            Outcome::Aborted(reason) => {
                log::warn!("restart {restart} aborted: {reason}");
                history.aborted = Some(reason);
            }
        }
        histories.push(history);
    }

    match best {
        Some((selected_restart, _, model)) => Ok(Trained {
            model,
            selected_restart,
            histories,
        }),
        None => Err(Error::AllRestartsFailed(config.restarts)),
    }
}

/// Numeric failures abort the restart; anything else is a caller error.
fn numeric_or_fail<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e @ (Error::NonFinite { .. } | Error::Degenerate(_))) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn run_restart<M: BatchWeighting>(
    mut model: M,
    train: &Batch,
    validation: &Batch,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
    history: &mut RestartHistory,
) -> Result<Outcome<M>> {
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut kept: Option<(usize, f64, Vec<f64>)> = None;
    for iteration in 0..config.iterations {
        let (loss, grad) = match numeric_or_fail(objective_and_gradient(&model, train, spec))? {
            Ok(v) => v,
            Err(reason) => return Ok(Outcome::Aborted(reason)),
        };
        let val = match numeric_or_fail(objective_value(&model, validation, spec))? {
            Ok(v) => v,
            Err(reason) => return Ok(Outcome::Aborted(reason)),
        };
        history.train_loss.push(loss);
        history.validation_loss.push(val);
        if config.keep_best && kept.as_ref().is_none_or(|(_, b, _)| val < *b) {
            kept = Some((iteration, val, params.clone()));
        }
        if let Err(reason) = numeric_or_fail(adam.step(&mut params, &grad))? {
            return Ok(Outcome::Aborted(reason));
        }
        model.set_params(&params)?;
    }
    let last = match numeric_or_fail(objective_value(&model, validation, spec))? {
        Ok(val) => val,
        Err(reason) => return Ok(Outcome::Aborted(reason)),
    };
    match kept {
        Some((iteration, val, best)) if val <= last => {
            model.set_params(&best)?;
            Ok(Outcome::Completed(model, iteration, val))
        }
        _ => Ok(Outcome::Completed(model, config.iterations, last)),
    }
}
