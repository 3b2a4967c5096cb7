//! Interchangeable ways of turning labeled SPD samples into a weak model,
//! looked up by name at runtime.

use std::collections::BTreeMap;

use super::model::{
    fit_on_poles, train_ktangent, KTangentModel, LabeledSample, Projection, TrainSettings,
};
use crate::{Error, Result};

/// Knobs shared by every learner; each learner reads the ones it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerConfig {
    /// Number of tangent spaces for the k-tangent learner.
    pub k: usize,
    pub train: TrainSettings,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            k: 3,
            train: TrainSettings::default(),
        }
    }
}

/// A strategy for fitting the weak model used inside each boosting round.
pub trait TangentLearner: Send + Sync {
    fn name(&self) -> &str;

    /// Fits against per-sample regression targets; sample weights come from
    /// [`LabeledSample::weight`].
    fn fit(&self, samples: &[LabeledSample], responses: &[f64], seed: u64)
        -> Result<KTangentModel>;
}

fn positive_count(samples: &[LabeledSample]) -> Result<usize> {
    match samples.iter().filter(|s| s.label.is_positive()).count() {
        0 => Err(Error::TooFewPositives { needed: 1, got: 0 }),
        n => Ok(n),
    }
}

fn sample_dim(samples: &[LabeledSample]) -> Result<usize> {
    samples
        .first()
        .map(|s| s.point.dim())
        .ok_or(Error::EmptyInput("no training samples"))
}

/// Regression directly on the vectorized matrices, without any log map.
pub struct RawVectorLearner {
    pub train: TrainSettings,
}

impl TangentLearner for RawVectorLearner {
    fn name(&self) -> &str {
        "raw"
    }

    fn fit(
        &self,
        samples: &[LabeledSample],
        responses: &[f64],
        _seed: u64,
    ) -> Result<KTangentModel> {
        let dim = sample_dim(samples)?;
        let n = positive_count(samples)?;
        fit_on_poles(
            samples,
            responses,
            Projection::Ambient,
            vec![crate::spd::SpdMatrix::identity(dim)],
            vec![n],
            self.train.ridge,
        )
    }
}

/// A single tangent space at the identity matrix.
pub struct IdentityPoleLearner {
    pub train: TrainSettings,
}

impl TangentLearner for IdentityPoleLearner {
    fn name(&self) -> &str {
        "identity"
    }

    fn fit(
        &self,
        samples: &[LabeledSample],
        responses: &[f64],
        _seed: u64,
    ) -> Result<KTangentModel> {
        let dim = sample_dim(samples)?;
        let n = positive_count(samples)?;
        fit_on_poles(
            samples,
            responses,
            Projection::Tangent,
            vec![crate::spd::SpdMatrix::identity(dim)],
            vec![n],
            self.train.ridge,
        )
    }
}

/// A single tangent space at the Karcher mean of the positives; the k = 1
/// case of [`KTangentLearner`].
pub struct KarcherPoleLearner {
    pub train: TrainSettings,
}

impl TangentLearner for KarcherPoleLearner {
    fn name(&self) -> &str {
        "karcher"
    }

    fn fit(
        &self,
        samples: &[LabeledSample],
        responses: &[f64],
        seed: u64,
    ) -> Result<KTangentModel> {
        train_ktangent(samples, 1, responses, seed, &self.train)
    }
}

/// K tangent spaces at the geodesic k-means centers of the positives.
pub struct KTangentLearner {
    pub k: usize,
    pub train: TrainSettings,
}

impl TangentLearner for KTangentLearner {
    fn name(&self) -> &str {
        "ktangent"
    }

    fn fit(
        &self,
        samples: &[LabeledSample],
        responses: &[f64],
        seed: u64,
    ) -> Result<KTangentModel> {
        train_ktangent(samples, self.k, responses, seed, &self.train)
    }
}

pub type LearnerFactory = fn(&LearnerConfig) -> Box<dyn TangentLearner>;

/// Name → factory table for [`TangentLearner`] implementations.
#[derive(Clone, Default)]
pub struct LearnerRegistry {
    factories: BTreeMap<String, LearnerFactory>,
}

impl LearnerRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding `raw`, `identity`, `karcher` and `ktangent`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("raw", |c| Box::new(RawVectorLearner { train: c.train }));
        r.register("identity", |c| {
            Box::new(IdentityPoleLearner { train: c.train })
        });
        r.register("karcher", |c| {
            Box::new(KarcherPoleLearner { train: c.train })
        });
        r.register("ktangent", |c| {
            Box::new(KTangentLearner {
                k: c.k,
                train: c.train,
            })
        });
        r
    }

    /// Adds or replaces a learner.
    pub fn register(&mut self, name: &str, factory: LearnerFactory) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str, config: &LearnerConfig) -> Result<Box<dyn TangentLearner>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownMapping(name.to_owned()))?;
        Ok(factory(config))
    }
}
