//! LogitBoost stages of k-tangent weak units over rectangular subregions,
//! chained into a rejection cascade.

mod cascade;
mod stage;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Region, DEFAULT_EPS, MIN_REGION_PIXELS};
use crate::ktangent::{KTangentModel, LearnerConfig, LearnerRegistry, TangentLearner};
use crate::{Error, Result};

pub use cascade::{
    classify_window, scan_image, train_cascade, train_cascade_with, CascadeDecision, CascadeModel,
    CascadeTraining, Detection, ImageMiner, NegativeMiner, PoolMiner, MODEL_SCHEMA_VERSION,
    STAGE_SCORE_OFFSET,
};
pub use stage::{
    logitboost_stage, logitboost_stage_with, stage_score, working_response, RoundReport,
    StageReport, TrainWindow, OUTPUT_CLAMP, WEIGHT_FLOOR,
};

/// Smallest detection window accepted by [`CascadeModel`].
pub const MIN_WINDOW: usize = 16;

/// One boosted weak unit: a k-tangent model applied to the descriptor of a
/// fixed subregion of the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakUnit {
    /// Pixel rectangle relative to the window's top-left corner.
    pub region: Region,
    pub model: KTangentModel,
}

/// A boosted stage; windows whose accumulated score falls below `threshold`
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub units: Vec<WeakUnit>,
    pub threshold: f64,
}

/// Training parameters for stages and cascades.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostParams {
    /// Name of the learner in the [`LearnerRegistry`].
    pub mapping: String,
    pub learner: LearnerConfig,
    /// Candidate regions tried per boosting round.
    pub candidate_regions: usize,
    pub max_rounds: usize,
    pub max_stages: usize,
    /// Fraction of stage-entry positives each stage must keep.
    pub target_detection_rate: f64,
    /// A stage stops adding units once its false-positive rate is at or
    /// below this value.
    pub max_false_positive_rate: f64,
    pub eps: f64,
    pub seed: u64,
    /// Negatives per stage; `None` means twice the number of positives.
    pub negatives_per_stage: Option<usize>,
    /// Mining gives up after this many sampled windows per requested negative.
    pub mining_attempts: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            mapping: "ktangent".to_owned(),
            learner: LearnerConfig::default(),
            candidate_regions: 50,
            max_rounds: 10,
            max_stages: 6,
            target_detection_rate: 0.995,
            max_false_positive_rate: 0.5,
            eps: DEFAULT_EPS,
            seed: 0,
            negatives_per_stage: None,
            mining_attempts: 50,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.candidate_regions == 0 {
            return bad("candidate region count must be at least 1");
        }
        if self.max_rounds == 0 || self.max_stages == 0 {
            return bad("rounds and stages must be at least 1");
        }
        if !(self.target_detection_rate > 0.0 && self.target_detection_rate <= 1.0) {
            return bad("target detection rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.max_false_positive_rate) {
            return bad("false-positive target must lie in [0, 1]");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be finite and non-negative");
        }
        if self.learner.k == 0 {
            return bad("k must be at least 1");
        }
        if let Some(r) = self.learner.train.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return bad("ridge must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn create_learner(&self, registry: &LearnerRegistry) -> Result<Box<dyn TangentLearner>> {
        registry.create(&self.mapping, &self.learner)
    }

    pub fn fingerprint(&self) -> ConfigFingerprint {
        ConfigFingerprint {
            mapping: self.mapping.clone(),
            k: self.learner.k,
            ridge: self.learner.train.ridge,
            eps: self.eps,
            seed: self.seed,
            candidate_regions: self.candidate_regions,
            max_rounds: self.max_rounds,
            max_stages: self.max_stages,
            target_detection_rate: self.target_detection_rate,
            max_false_positive_rate: self.max_false_positive_rate,
        }
    }
}

/// The parameters a cascade was trained with, stored alongside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigFingerprint {
    pub mapping: String,
    pub k: usize,
    pub ridge: Option<f64>,
    pub eps: f64,
    pub seed: u64,
    pub candidate_regions: usize,
    pub max_rounds: usize,
    pub max_stages: usize,
    pub target_detection_rate: f64,
    pub max_false_positive_rate: f64,
}

/// Uniformly random subwindows of a `window_w`×`window_h` window with width
/// in `[w/5, w]`, height in `[h/5, h]` and at least 9 pixels.
pub fn sample_candidate_regions(
    window_w: usize,
    window_h: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Region>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if window_w * window_h < MIN_REGION_PIXELS {
        return Err(Error::ImageTooSmall {
            width: window_w,
            height: window_h,
            min_width: 3,
            min_height: 3,
        });
    }
    let min_w = (window_w / 5).max(1);
    let min_h = (window_h / 5).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = rng.gen_range(min_w..=window_w);
        let h = rng.gen_range(min_h..=window_h);
        if w * h < MIN_REGION_PIXELS {
            continue;
        }
        let x0 = rng.gen_range(0..=window_w - w);
        let y0 = rng.gen_range(0..=window_h - h);
        out.push(Region { x0, y0, w, h });
    }
    Ok(out)
}
