use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stage::{logitboost_stage_with, stage_score, StageReport, TrainWindow};
use super::{BoostParams, BoostStage, ConfigFingerprint, MIN_WINDOW};
use crate::descriptor::{DescriptorSource, GrayImage, IntegralTensors, Region};
use crate::io::write_atomic;
use crate::ktangent::{Label, LearnerRegistry, TangentLearner};
use crate::seed::{derive_seed, SeedStream};
use crate::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Added per passed stage in [`CascadeDecision::ranking_score`], so windows
/// that get further through the cascade always rank higher.
pub const STAGE_SCORE_OFFSET: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub schema_version: u32,
    pub window_w: usize,
    pub window_h: usize,
    pub config: ConfigFingerprint,
    pub stages: Vec<BoostStage>,
}

impl CascadeModel {
    /// A cascade without stages; it accepts every window.
    pub fn empty(window_w: usize, window_h: usize, config: ConfigFingerprint) -> Result<Self> {
        if window_w < MIN_WINDOW || window_h < MIN_WINDOW {
            return Err(Error::InvalidArgument(format!(
                "window {window_w}x{window_h} is smaller than {MIN_WINDOW}x{MIN_WINDOW}"
            )));
        }
        Ok(Self {
            schema_version: MODEL_SCHEMA_VERSION,
            window_w,
            window_h,
            config,
            stages: Vec::new(),
        })
    }

    /// The first `n` stages as a cascade of their own.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            stages: self.stages[..n.min(self.stages.len())].to_vec(),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window_w < MIN_WINDOW || self.window_h < MIN_WINDOW {
            return Err(Error::InvalidArgument(format!(
                "model window {}x{} is smaller than {MIN_WINDOW}x{MIN_WINDOW}",
                self.window_w, self.window_h
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.units.is_empty() || !s.threshold.is_finite() {
                return Err(Error::InvalidArgument(format!("stage {i} is malformed")));
            }
            for u in &s.units {
                u.region.check_within(self.window_w, self.window_h)?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::InvalidArgument("model file has no schema_version".into()))?;
        if version != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion(version as u32));
        }
        let model: Self = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }

    /// Writes the model as JSON through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_owned()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeDecision {
    pub accepted: bool,
    /// Accumulated score of the last stage evaluated (0 without stages).
    pub score: f64,
    /// `score` minus the last evaluated stage's threshold.
    pub margin: f64,
    pub stages_passed: usize,
    /// Weak units evaluated before the decision was made.
    pub units_evaluated: usize,
}

impl CascadeDecision {
    /// A scalar that orders windows first by how many stages they passed,
    /// then by their margin at the deciding stage.
    pub fn ranking_score(&self) -> f64 {
        self.stages_passed as f64 * STAGE_SCORE_OFFSET + self.margin
    }
}

/// Runs the cascade on one window, stopping at the first rejecting stage.
pub fn classify_window<S: DescriptorSource + ?Sized>(
    model: &CascadeModel,
    source: &S,
) -> Result<CascadeDecision> {
    if let Some((w, h)) = source.extent() {
        if w < model.window_w || h < model.window_h {
            return Err(Error::WindowTooSmall {
                width: w,
                height: h,
                window_w: model.window_w,
                window_h: model.window_h,
            });
        }
    }
    let mut decision = CascadeDecision {
        accepted: true,
        score: 0.0,
        margin: 0.0,
        stages_passed: 0,
        units_evaluated: 0,
    };
    for stage in &model.stages {
        let f = stage_score(stage, source, model.config.eps)?;
        decision.units_evaluated += stage.units.len();
        decision.score = f;
        decision.margin = f - stage.threshold;
        if f < stage.threshold {
            decision.accepted = false;
            return Ok(decision);
        }
        decision.stages_passed += 1;
    }
    Ok(decision)
}

/// An accepted window found by [`scan_image`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub region: Region,
    pub score: f64,
}

/// Classifies every stride-aligned window of `img` at a single scale. Each
/// window's features are computed from the window alone.
pub fn scan_image(model: &CascadeModel, img: &GrayImage, stride: usize) -> Result<Vec<Detection>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let (ww, wh) = (model.window_w, model.window_h);
    if img.width() < ww || img.height() < wh {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min_width: ww,
            min_height: wh,
        });
    }
    let positions: Vec<(usize, usize)> = (0..=img.height() - wh)
        .step_by(stride)
        .flat_map(|y| (0..=img.width() - ww).step_by(stride).map(move |x| (x, y)))
        .collect();
    let results: Vec<Option<Detection>> = positions
        .par_iter()
        .map(|&(x, y)| {
            let region = Region {
                x0: x,
                y0: y,
                w: ww,
                h: wh,
            };
            let ints = IntegralTensors::from_image(&img.crop(&region)?)?;
            let d = classify_window(model, &ints)?;
            Ok(d.accepted.then_some(Detection {
                region,
                score: d.score,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Supplies negative windows for each cascade stage.
pub trait NegativeMiner {
    type Source: DescriptorSource + Send;

    /// Up to `quota` negatives that the current cascade accepts.
    fn mine(&mut self, model: &CascadeModel, quota: usize, seed: u64) -> Result<Vec<Self::Source>>;
}

/// Samples windows uniformly (with replacement) from person-free images.
pub struct ImageMiner<'a> {
    images: &'a [GrayImage],
    /// Sampled windows per requested negative before giving up.
    attempts: usize,
}

impl<'a> ImageMiner<'a> {
    pub fn new(images: &'a [GrayImage], attempts: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyInput("no negative source images"));
        }
        Ok(Self {
            images,
            attempts: attempts.max(1),
        })
    }
}

impl NegativeMiner for ImageMiner<'_> {
    type Source = IntegralTensors;

    fn mine(
        &mut self,
        model: &CascadeModel,
        quota: usize,
        seed: u64,
    ) -> Result<Vec<IntegralTensors>> {
        let (ww, wh) = (model.window_w, model.window_h);
        let usable: Vec<&GrayImage> = self
            .images
            .iter()
            .filter(|i| i.width() >= ww && i.height() >= wh)
            .collect();
        if usable.is_empty() {
            let i = &self.images[0];
            return Err(Error::ImageTooSmall {
                width: i.width(),
                height: i.height(),
                min_width: ww,
                min_height: wh,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = quota.saturating_mul(self.attempts);
        let mut tried = 0;
        let mut out = Vec::with_capacity(quota);
        while out.len() < quota && tried < budget {
            let batch = (2 * (quota - out.len()))
                .clamp(64, 4096)
                .min(budget - tried);
            tried += batch;
            let picks: Vec<(usize, usize, usize)> = (0..batch)
                .map(|_| {
                    let i = rng.gen_range(0..usable.len());
                    let img = usable[i];
                    (
                        i,
                        rng.gen_range(0..=img.width() - ww),
                        rng.gen_range(0..=img.height() - wh),
                    )
                })
                .collect();
            let accepted: Vec<Option<IntegralTensors>> = picks
                .par_iter()
                .map(|&(i, x, y)| {
                    let crop = usable[i].crop(&Region {
                        x0: x,
                        y0: y,
                        w: ww,
                        h: wh,
                    })?;
                    let ints = IntegralTensors::from_image(&crop)?;
                    Ok(classify_window(model, &ints)?.accepted.then_some(ints))
                })
                .collect::<Result<_>>()?;
            out.extend(accepted.into_iter().flatten().take(quota - out.len()));
        }
        Ok(out)
    }
}

/// Draws negatives from a fixed pool, in pool order, without replacement.
pub struct PoolMiner<S> {
    pool: Vec<S>,
}

impl<S> PoolMiner<S> {
    pub fn new(pool: Vec<S>) -> Self {
        Self { pool }
    }
}

impl<S: DescriptorSource + Clone + Send> NegativeMiner for PoolMiner<S> {
    type Source = S;

    fn mine(&mut self, model: &CascadeModel, quota: usize, _seed: u64) -> Result<Vec<S>> {
        let flags: Vec<bool> = self
            .pool
            .par_iter()
            .map(|s| classify_window(model, s).map(|d| d.accepted))
            .collect::<Result<_>>()?;
        Ok(self
            .pool
            .iter()
            .zip(flags)
            .filter(|(_, f)| *f)
            .map(|(s, _)| s.clone())
            .take(quota)
            .collect())
    }
}

/// A trained cascade plus per-stage diagnostics.
#[derive(Debug)]
pub struct CascadeTraining {
    pub model: CascadeModel,
    pub reports: Vec<StageReport>,
    /// Set when mining stopped training early; the model holds the stages
    /// trained before that point.
    pub warning: Option<Error>,
}

/// Trains a cascade on window-sized positive crops, mining negatives from
/// `neg_images`.
pub fn train_cascade(
    pos_windows: &[GrayImage],
    neg_images: &[GrayImage],
    params: &BoostParams,
) -> Result<CascadeTraining> {
    let first = pos_windows
        .first()
        .ok_or(Error::EmptyInput("no positive windows"))?;
    let (w, h) = (first.width(), first.height());
    let positives: Vec<IntegralTensors> = pos_windows
        .par_iter()
        .map(|p| {
            if p.width() != w || p.height() != h {
                return Err(Error::InvalidArgument(format!(
                    "positive windows differ in size: {w}x{h} and {}x{}",
                    p.width(),
                    p.height()
                )));
            }
            IntegralTensors::from_image(p)
        })
        .collect::<Result<_>>()?;
    let learner = params.create_learner(&LearnerRegistry::builtin())?;
    let miner = ImageMiner::new(neg_images, params.mining_attempts)?;
    train_cascade_with(&positives, miner, (w, h), params, learner.as_ref())
}

/// Stage-by-stage cascade training. Each stage is trained on the positives
/// the current cascade still accepts and on freshly mined negatives.
pub fn train_cascade_with<M: NegativeMiner>(
    positives: &[M::Source],
    mut miner: M,
    window: (usize, usize),
    params: &BoostParams,
    learner: &dyn TangentLearner,
) -> Result<CascadeTraining> {
    params.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyInput("no positive windows"));
    }
    let mut model = CascadeModel::empty(window.0, window.1, params.fingerprint())?;
    let mut reports = Vec::new();
    let mut warning = None;
    for stage_index in 0..params.max_stages {
        let accepted: Vec<bool> = positives
            .par_iter()
            .map(|p| classify_window(&model, p).map(|d| d.accepted))
            .collect::<Result<_>>()?;
        let entry: Vec<&M::Source> = positives
            .iter()
            .zip(&accepted)
            .filter(|(_, a)| **a)
            .map(|(p, _)| p)
            .collect();
        let quota = params.negatives_per_stage.unwrap_or(2 * entry.len());
        let negatives = miner.mine(
            &model,
            quota,
            derive_seed(params.seed, SeedStream::Mining, &[stage_index as u64]),
        )?;
        if negatives.is_empty() && stage_index > 0 {
            log::info!("no negatives survive {stage_index} stages; stopping");
            break;
        }
        if negatives.len() < quota {
            let err = Error::InsufficientNegatives {
                got: negatives.len(),
                needed: quota,
            };
            if model.stages.is_empty() {
                return Err(err);
            }
            log::warn!("{err}; keeping {} trained stages", model.stages.len());
            warning = Some(err);
            break;
        }
        let train: Vec<TrainWindow<M::Source>> = entry
            .iter()
            .map(|&p| TrainWindow {
                source: p,
                label: Label::Positive,
            })
            .chain(negatives.iter().map(|n| TrainWindow {
                source: n,
                label: Label::Negative,
            }))
            .collect();
        let (stage, report) = logitboost_stage_with(&train, window, params, learner, stage_index)?;
        log::info!(
            "stage {stage_index}: {} units, detection {:.4}, false positives {:.4}",
            stage.units.len(),
            report.detection_rate,
            report.false_positive_rate
        );
        model.stages.push(stage);
        reports.push(report);
    }
    Ok(CascadeTraining {
        model,
        reports,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::WeakUnit;
    use crate::ktangent::{KTangentModel, Projection, WeakRegressor};
    use crate::spd::SpdMatrix;

    fn constant_stage(bias: f64, threshold: f64) -> BoostStage {
        let model = KTangentModel::new(
            Projection::Ambient,
            vec![SpdMatrix::identity(8)],
            vec![1],
            vec![WeakRegressor::new(vec![0.0; 36], bias).unwrap()],
        )
        .unwrap();
        BoostStage {
            units: vec![WeakUnit {
                region: Region {
                    x0: 0,
                    y0: 0,
                    w: 4,
                    h: 4,
                },
                model,
            }],
            threshold,
        }
    }

    fn image(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 17) as f64).unwrap()
    }

    #[test]
    fn empty_cascade_accepts() {
        let m = CascadeModel::empty(16, 16, BoostParams::default().fingerprint()).unwrap();
        let d = classify_window(&m, &IntegralTensors::from_image(&image(16, 16)).unwrap()).unwrap();
        assert!(d.accepted);
        assert_eq!(d.score, 0.0);
        assert_eq!(d.units_evaluated, 0);
    }

    #[test]
    fn short_circuit() {
        let mut m = CascadeModel::empty(16, 16, BoostParams::default().fingerprint()).unwrap();
        m.stages.push(constant_stage(1.0, 0.0));
        m.stages.push(constant_stage(-1.0, 0.0));
        m.stages.push(constant_stage(1.0, 0.0));
        let ints = IntegralTensors::from_image(&image(16, 16)).unwrap();
        let d = classify_window(&m, &ints).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.stages_passed, 1);
        assert_eq!(d.units_evaluated, 2);
        assert_eq!(d.score, -0.5);
        assert!(d.ranking_score() < STAGE_SCORE_OFFSET);
    }

    #[test]
    fn window_too_small() {
        let m = CascadeModel::empty(16, 20, BoostParams::default().fingerprint()).unwrap();
        let ints = IntegralTensors::from_image(&image(16, 16)).unwrap();
        assert!(matches!(
            classify_window(&m, &ints),
            Err(Error::WindowTooSmall { .. })
        ));
        assert!(CascadeModel::empty(8, 32, BoostParams::default().fingerprint()).is_err());
    }

    #[test]
    fn scan_geometry() {
        let mut m = CascadeModel::empty(16, 16, BoostParams::default().fingerprint()).unwrap();
        m.stages.push(constant_stage(1.0, 0.0));
        assert!(matches!(
            scan_image(&m, &image(15, 40), 1),
            Err(Error::ImageTooSmall { .. })
        ));
        let dets = scan_image(&m, &image(40, 40), 40).unwrap();
        assert!(dets.iter().all(|d| d.region.x0 == 0));
        assert_eq!(dets.len(), 1);
        let dets = scan_image(&m, &image(20, 18), 1).unwrap();
        assert_eq!(dets.len(), 5 * 3);
    }

    #[test]
    fn schema_version_checked() {
        let mut m = CascadeModel::empty(16, 16, BoostParams::default().fingerprint()).unwrap();
        m.stages.push(constant_stage(0.3, 0.1));
        let text = m.to_json().unwrap();
        assert_eq!(CascadeModel::from_json(&text).unwrap(), m);
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            CascadeModel::from_json(&bumped),
            Err(Error::SchemaVersion(9))
        ));
    }

    #[test]
    fn insufficient_negatives_on_first_stage() {
        let pos = vec![image(16, 16); 4];
        let neg = vec![image(10, 10)];
        let params = BoostParams {
            max_stages: 1,
            max_rounds: 1,
            candidate_regions: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_cascade(&pos, &neg, &params),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
