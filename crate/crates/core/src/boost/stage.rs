use rayon::prelude::*;

use super::{sample_candidate_regions, BoostParams, BoostStage, WeakUnit};
use crate::descriptor::{DescriptorSource, Region};
use crate::ktangent::{KTangentModel, Label, LabeledSample, LearnerRegistry, TangentLearner};
use crate::seed::{derive_seed, SeedStream};
use crate::{Error, Result};

/// Weak-unit outputs are clamped to `[-OUTPUT_CLAMP, OUTPUT_CLAMP]` before
/// being halved and added to the score.
pub const OUTPUT_CLAMP: f64 = 2.0;
/// Lower bound on the LogitBoost sample weights.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// A training window for one stage.
#[derive(Clone, Copy, Debug)]
pub struct TrainWindow<'a, S> {
    pub source: &'a S,
    pub label: Label,
}

/// Probability, weight and working response `(p, w, z)` of a sample with
/// accumulated score `f`.
pub fn working_response(f: f64, label: Label) -> (f64, f64, f64) {
    let p = (1.0 / (1.0 + (-2.0 * f).exp())).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let w = (p * (1.0 - p)).max(WEIGHT_FLOOR);
    let y = if label.is_positive() { 1.0 } else { 0.0 };
    (p, w, (y - p) / w)
}

fn unit_increment(output: f64) -> f64 {
    0.5 * output.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP)
}

/// Accumulated score of `stage` on one window.
pub fn stage_score<S: DescriptorSource + ?Sized>(
    stage: &BoostStage,
    source: &S,
    eps: f64,
) -> Result<f64> {
    let mut f = 0.0;
    for unit in &stage.units {
        f += unit_increment(unit.model.predict(&source.descriptor(&unit.region, eps)?)?);
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub selected: usize,
    /// Weighted squared error of every candidate; infinite when the
    /// candidate could not be trained.
    pub candidate_errors: Vec<f64>,
    pub training_error: f64,
    pub threshold: f64,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub p_range: (f64, f64),
    pub weight_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub positives: usize,
    pub negatives: usize,
    /// Fraction of windows on the wrong side of `F = 0` before the first round.
    pub initial_error: f64,
    pub final_error: f64,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub rounds: Vec<RoundReport>,
}

fn training_error(f: &[f64], labels: &[Label]) -> f64 {
    let wrong = f
        .iter()
        .zip(labels)
        .filter(|(&f, l)| (f >= 0.0) != l.is_positive())
        .count();
    wrong as f64 / f.len() as f64
}

/// Largest threshold that keeps at least `rate` of the positive scores.
fn detection_threshold(f: &[f64], labels: &[Label], rate: f64) -> f64 {
    let mut pos: Vec<f64> = f
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_positive())
        .map(|(&f, _)| f)
        .collect();
    pos.sort_by(f64::total_cmp);
    let allowed = ((1.0 - rate) * pos.len() as f64 + 1e-9).floor() as usize;
    pos[allowed.min(pos.len() - 1)]
}

fn rates(f: &[f64], labels: &[Label], threshold: f64) -> (f64, f64) {
    let (mut tp, mut np, mut fp, mut nn) = (0usize, 0usize, 0usize, 0usize);
    for (&f, l) in f.iter().zip(labels) {
        let pass = f >= threshold;
        if l.is_positive() {
            np += 1;
            tp += pass as usize;
        } else {
            nn += 1;
            fp += pass as usize;
        }
    }
    (tp as f64 / np as f64, fp as f64 / nn as f64)
}

struct Candidate {
    model: KTangentModel,
    outputs: Vec<f64>,
    error: f64,
}

fn fit_candidate<S: DescriptorSource>(
    train: &[TrainWindow<S>],
    region: &Region,
    weights: &[f64],
    responses: &[f64],
    learner: &dyn TangentLearner,
    eps: f64,
    seed: u64,
) -> Result<Candidate> {
    let samples: Vec<LabeledSample> = train
        .iter()
        .zip(weights)
        .map(|(t, &w)| LabeledSample::new(t.source.descriptor(region, eps)?, t.label, w))
        .collect::<Result<_>>()?;
    let model = learner.fit(&samples, responses, seed)?;
    let outputs: Vec<f64> = samples
        .iter()
        .map(|s| model.predict(&s.point))
        .collect::<Result<_>>()?;
    let error = outputs
        .iter()
        .zip(responses)
        .zip(weights)
        .map(|((o, z), w)| w * (o - z) * (o - z))
        .sum();
    Ok(Candidate {
        model,
        outputs,
        error,
    })
}

/// Trains one stage with the learner named in `params.mapping` from the
/// built-in registry.
pub fn logitboost_stage<S: DescriptorSource>(
    train: &[TrainWindow<S>],
    window: (usize, usize),
    params: &BoostParams,
    stage_index: usize,
) -> Result<(BoostStage, StageReport)> {
    let learner = params.create_learner(&LearnerRegistry::builtin())?;
    logitboost_stage_with(train, window, params, learner.as_ref(), stage_index)
}

/// Trains one LogitBoost stage on windows of size `window`. Each round fits
/// one weak unit per candidate region and keeps the one with the smallest
/// weighted squared error (lowest index on ties).
pub fn logitboost_stage_with<S: DescriptorSource>(
    train: &[TrainWindow<S>],
    window: (usize, usize),
    params: &BoostParams,
    learner: &dyn TangentLearner,
    stage_index: usize,
) -> Result<(BoostStage, StageReport)> {
    params.validate()?;
    let labels: Vec<Label> = train.iter().map(|t| t.label).collect();
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::OneClassOnly);
    }
    let mut f = vec![0.0; train.len()];
    let initial_error = training_error(&f, &labels);
    let mut units = Vec::new();
    let mut rounds = Vec::new();
    let mut threshold = 0.0;

    for round in 0..params.max_rounds {
        let mut weights = Vec::with_capacity(f.len());
        let mut responses = Vec::with_capacity(f.len());
        let mut p_range = (f64::INFINITY, f64::NEG_INFINITY);
        let mut weight_range = p_range;
        for (&fi, &l) in f.iter().zip(&labels) {
            let (p, w, z) = working_response(fi, l);
            p_range = (p_range.0.min(p), p_range.1.max(p));
            weight_range = (weight_range.0.min(w), weight_range.1.max(w));
            weights.push(w);
            responses.push(z);
        }

        let path = [stage_index as u64, round as u64];
        let regions = sample_candidate_regions(
            window.0,
            window.1,
            params.candidate_regions,
            derive_seed(params.seed, SeedStream::Regions, &path),
        )?;
        let candidates: Vec<Result<Candidate>> = regions
            .par_iter()
            .enumerate()
            .map(|(c, region)| {
                let seed = derive_seed(
                    params.seed,
                    SeedStream::Clustering,
                    &[path[0], path[1], c as u64],
                );
                fit_candidate(
                    train, region, &weights, &responses, learner, params.eps, seed,
                )
            })
            .collect();

        let mut best: Option<usize> = None;
        let mut first_err = None;
        let mut candidate_errors = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            match c {
                Ok(c) if c.error.is_finite() => {
                    candidate_errors.push(c.error);
                    if best.is_none_or(|b| c.error < candidate_errors[b]) {
                        best = Some(i);
                    }
                }
                Ok(_) => candidate_errors.push(f64::INFINITY),
                Err(e) => {
                    log::debug!("candidate {} in round {round} failed: {e}", regions[i]);
                    candidate_errors.push(f64::INFINITY);
                    first_err.get_or_insert(i);
                }
            }
        }
        let Some(selected) = best else {
            let mut candidates = candidates;
            return match first_err {
                Some(i) => Err(candidates.swap_remove(i).err().unwrap()),
                None => Err(Error::NonConvergence("weak unit fit")),
            };
        };
        let chosen = candidates.into_iter().nth(selected).unwrap().unwrap();
        for (fi, &o) in f.iter_mut().zip(&chosen.outputs) {
            *fi += unit_increment(o);
        }
        units.push(WeakUnit {
            region: regions[selected],
            model: chosen.model,
        });

        threshold = detection_threshold(&f, &labels, params.target_detection_rate);
        let (detection_rate, false_positive_rate) = rates(&f, &labels, threshold);
        rounds.push(RoundReport {
            selected,
            candidate_errors,
            training_error: training_error(&f, &labels),
            threshold,
            detection_rate,
            false_positive_rate,
            p_range,
            weight_range,
        });
        log::debug!(
            "stage {stage_index} round {round}: region {} error {:.4} fpr {:.4}",
            regions[selected],
            training_error(&f, &labels),
            false_positive_rate
        );
        if false_positive_rate <= params.max_false_positive_rate {
            break;
        }
    }

    let last = rounds.last().expect("at least one round");
    let report = StageReport {
        positives: n_pos,
        negatives: labels.len() - n_pos,
        initial_error,
        final_error: last.training_error,
        detection_rate: last.detection_rate,
        false_positive_rate: last.false_positive_rate,
        rounds,
    };
    Ok((BoostStage { units, threshold }, report))
}
