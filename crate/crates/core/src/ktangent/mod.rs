//! The k-tangent-spaces discriminative model and the family of weak learners
//! built on it.

mod learner;
mod model;

pub use learner::{
    IdentityPoleLearner, KTangentLearner, KarcherPoleLearner, LearnerConfig, LearnerFactory,
    LearnerRegistry, RawVectorLearner, TangentLearner,
};
pub use model::{
    default_ridge, fit_on_poles, fit_weighted_ridge, train_ktangent, train_ktangent_from_centers,
    KTangentModel, Label, LabeledSample, Projection, TrainSettings, WeakRegressor,
    DEFAULT_RIDGE_SCALE,
};
