//! Continuous treatment policy matching: a prior over subjects, bipartite
//! match affinity, and a per-match intensity likelihood, combined into
//! batch-normalized weights that drive a propensity-corrected treatment
//! effect estimate.

mod model;
mod objective;
mod policy;
mod train;

pub use model::{
    CtpmModel, CtpmParts, CtpmTrace, ModelConfig, RankingIntensity, COSINE_NORM_FLOOR,
    MIN_EMBEDDING_NORM,
};
pub use objective::{
    guarded, normalize_weights, weighted_effect, weighted_loss, Batch, NormalizedWeights,
    ObjectiveForm, ObjectiveSpec, OutcomeRoles, Role, RoleValues, WeightedLoss, MIN_PARTITION,
    RATIO_GUARD,
};
pub use policy::{policy_density, PolicyFamily, PolicyParams, BETA_INTENSITY_MARGIN};
pub use train::{
    objective_and_gradient, objective_value, train_restarts, BatchWeighting, ObjectiveFn,
    RestartHistory, TrainConfig, Trained,
};
