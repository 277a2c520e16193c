//! Personalized preference learning over fixed-dimension feature vectors.
//!
//! The pipeline has two stages. Stage 1 fits a context-aware mixture of K
//! Bradley-Terry reward heads to binary preference pairs by regularized
//! maximum likelihood with hand-derived gradients. Stage 2 freezes the heads
//! and adapts the router online from a small budget of context-annotated
//! pairs using a Hedge (multiplicative-weights) soft-labeling scheme.
//!
//! A planted-population simulator provides ground truth for recovery
//! experiments, and the evaluation module includes an estimator for the
//! irreducible cross-entropy lower bound that any single reward model incurs
//! on a genuinely mixed population, together with an empirical verifier.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `prefmix` binary for the file-based pipeline.

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod par;
pub mod population;
pub mod rng;
pub mod routing;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    bt_probability, entropy, init_model, softmax, FeatureVector, MixtureModel, PreferenceExample,
    RewardHead, RouterParams, PROB_CLAMP,
};
pub use population::{
    bayes_accuracy, binarize_rated_corpus, oracle_population_ce, ContextMode, HeadLayout,
    McEstimate, PlantedConfig, PopulationSpec, RatedItem, SamplerSpec, TruePopulation,
    WinPredictor,
};
