//! MaxMachine: probabilistic Boolean matrix factorization where each latent
//! dimension carries its own reliability and a cell's probability is the
//! maximum reliability over its active dimensions. Includes exact Gibbs
//! sampling with analytic MAP reliability updates, a clamped-one-hot
//! hierarchical layer for side information, a type-frequency baseline,
//! holdout ROC-AUC evaluation, synthetic generators, and enumeration
//! oracles.

pub mod artifact;
pub mod baseline;
pub mod binmat;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod model;
pub mod oracle;
pub mod sampler;

pub use artifact::{build_artifact, ModelArtifact, ARTIFACT_VERSION};
pub use baseline::{fit as fit_baseline, TypeFrequencyTable, DEFAULT_SMOOTHING};
pub use binmat::{boolean_or_product, BinaryMatrix};
pub use config::{load_config, Config};
pub use dataset::{load_triplets, TripletDataset, UNKNOWN_TYPE};
pub use error::{Error, Result};
pub use eval::{
    applicability_report, evaluate, make_holdout, roc_auc, ApplicabilityRow, ClusterRow,
    EvalReport, HoldoutMask,
};
pub use hierarchy::{
    ClampTarget, FactorMatrix, HierarchicalModel, LayerId, TypeClamp,
};
pub use model::{
    beta_map_estimate, dimension_stats, posterior_predictive, DimensionStats, FactorLayer,
    PriorConfig, RELIABILITY_EPS,
};
pub use oracle::{
    exact_conditional, exact_posterior, generate, joint_log_weight, ExactPosterior, PlantedTruth,
    SynthConfig, TargetBit,
};
pub use sampler::{
    conditional_log_odds_u, conditional_log_odds_z, run, sweep, update_reliabilities_map, BurnIn,
    GibbsConfig, PosteriorTrace, TraceSample,
};
