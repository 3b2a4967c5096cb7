use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::det::{area_under_det, compute_det, DetCurve};
use super::manifest::DatasetManifest;
use crate::boost::{
    classify_window, train_cascade_with, BoostParams, CascadeModel, CascadeTraining, ImageMiner,
    PoolMiner,
};
use crate::descriptor::{DescriptorSource, GrayImage, IntegralTensors, Region};
use crate::ktangent::{LearnerRegistry, TangentLearner};
use crate::seed::{derive_seed, SeedStream};
use crate::{Error, Result};

/// Held-out negative windows sampled per held-out positive.
pub const TEST_NEGATIVES_PER_POSITIVE: usize = 4;

/// The four tangent-mapping modes compared by [`mapping_comparison`]:
/// output name, learner name and number of tangent spaces.
pub const MAPPING_MODES: [(&str, &str, usize); 4] = [
    ("raw", "raw", 1),
    ("identity", "identity", 1),
    ("karcher", "karcher", 1),
    ("ktangent", "ktangent", 3),
];

/// Cascade scores of every window: higher means more person-like.
pub fn cascade_scores<S: DescriptorSource + Sync>(
    model: &CascadeModel,
    windows: &[S],
) -> Result<Vec<f64>> {
    windows
        .par_iter()
        .map(|w| classify_window(model, w).map(|d| d.ranking_score()))
        .collect()
}

pub fn evaluate_cascade<S: DescriptorSource + Sync>(
    model: &CascadeModel,
    pos: &[S],
    neg: &[S],
) -> Result<DetCurve> {
    compute_det(&cascade_scores(model, pos)?, &cascade_scores(model, neg)?)
}

/// A training and held-out evaluation split.
pub trait ExperimentData {
    fn train(&self, params: &BoostParams, learner: &dyn TangentLearner) -> Result<CascadeTraining>;
    fn evaluate(&self, model: &CascadeModel) -> Result<DetCurve>;
}

/// Fixed pools of training and test windows; each stage draws its negatives
/// from the training pool.
pub struct PoolData<S> {
    pub window: (usize, usize),
    pub train_pos: Vec<S>,
    pub train_neg: Vec<S>,
    pub test_pos: Vec<S>,
    pub test_neg: Vec<S>,
}

impl<S: DescriptorSource + Clone + Send + Sync> ExperimentData for PoolData<S> {
    fn train(&self, params: &BoostParams, learner: &dyn TangentLearner) -> Result<CascadeTraining> {
        let miner = PoolMiner::new(self.train_neg.clone());
        train_cascade_with(&self.train_pos, miner, self.window, params, learner)
    }

    fn evaluate(&self, model: &CascadeModel) -> Result<DetCurve> {
        evaluate_cascade(model, &self.test_pos, &self.test_neg)
    }
}

/// Image-backed split: training negatives are mined from images, test
/// negatives are a fixed sample of windows from held-out images.
pub struct ImageData {
    pub window: (usize, usize),
    pub train_pos: Vec<IntegralTensors>,
    pub train_neg_images: Vec<GrayImage>,
    pub test_pos: Vec<IntegralTensors>,
    pub test_neg: Vec<IntegralTensors>,
}

impl ExperimentData for ImageData {
    fn train(&self, params: &BoostParams, learner: &dyn TangentLearner) -> Result<CascadeTraining> {
        let miner = ImageMiner::new(&self.train_neg_images, params.mining_attempts)?;
        train_cascade_with(&self.train_pos, miner, self.window, params, learner)
    }

    fn evaluate(&self, model: &CascadeModel) -> Result<DetCurve> {
        evaluate_cascade(model, &self.test_pos, &self.test_neg)
    }
}

/// Indices `i % 4 == 3` go to the held-out side; at least one item lands on
/// each side when there are two or more.
fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % 4 != 3);
    if test.is_empty() && n >= 2 {
        test.push(train.pop().unwrap());
    }
    (train, test)
}

/// Uniform window-sized crops from `images`.
pub fn sample_windows(
    images: &[GrayImage],
    window: (usize, usize),
    count: usize,
    seed: u64,
) -> Result<Vec<IntegralTensors>> {
    let usable: Vec<&GrayImage> = images
        .iter()
        .filter(|i| i.width() >= window.0 && i.height() >= window.1)
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput(
            "no negative image is as large as the window",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, Region)> = (0..count)
        .map(|_| {
            let i = rng.gen_range(0..usable.len());
            let x0 = rng.gen_range(0..=usable[i].width() - window.0);
            let y0 = rng.gen_range(0..=usable[i].height() - window.1);
            (
                i,
                Region {
                    x0,
                    y0,
                    w: window.0,
                    h: window.1,
                },
            )
        })
        .collect();
    picks
        .par_iter()
        .map(|(i, r)| IntegralTensors::from_image(&usable[*i].crop(r)?))
        .collect()
}

/// Splits a manifest into training and held-out data. Every fourth positive
/// and every fourth negative image are held out; with a single negative
/// image, that image serves both sides.
pub fn prepare_image_data(manifest: &DatasetManifest, seed: u64) -> Result<ImageData> {
    let window = (manifest.window_w, manifest.window_h);
    let positives = manifest.load_positive_windows()?;
    if positives.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two positives to hold one out".into(),
        ));
    }
    let negatives = manifest.load_negative_images()?;
    if negatives.is_empty() {
        return Err(Error::EmptyInput("no negative images"));
    }
    let (train_idx, test_idx) = split_indices(positives.len());
    let ints = |idx: &[usize]| -> Result<Vec<IntegralTensors>> {
        idx.par_iter()
            .map(|&i| IntegralTensors::from_image(&positives[i]))
            .collect()
    };
    let (train_neg_images, test_neg_images) = if negatives.len() >= 2 {
        let (a, b) = split_indices(negatives.len());
        (
            a.iter().map(|&i| negatives[i].clone()).collect::<Vec<_>>(),
            b.iter().map(|&i| negatives[i].clone()).collect::<Vec<_>>(),
        )
    } else {
        (negatives.clone(), negatives)
    };
    let test_pos = ints(&test_idx)?;
    let test_neg = sample_windows(
        &test_neg_images,
        window,
        TEST_NEGATIVES_PER_POSITIVE * test_pos.len(),
        derive_seed(seed, SeedStream::Evaluation, &[0]),
    )?;
    Ok(ImageData {
        window,
        train_pos: ints(&train_idx)?,
        train_neg_images,
        test_pos,
        test_neg,
    })
}

/// Outcome of one training and evaluation run.
#[derive(Debug)]
pub struct ExperimentRun {
    pub name: String,
    pub training: CascadeTraining,
    pub curve: DetCurve,
    pub aud: f64,
}

pub fn run_experiment<D: ExperimentData>(
    data: &D,
    name: &str,
    params: &BoostParams,
    registry: &LearnerRegistry,
) -> Result<ExperimentRun> {
    let learner = params.create_learner(registry)?;
    let training = data.train(params, learner.as_ref())?;
    let curve = data.evaluate(&training.model)?;
    let aud = area_under_det(&curve);
    log::info!(
        "{name}: {} stages, area under DET {aud:.4}",
        training.model.stages.len()
    );
    Ok(ExperimentRun {
        name: name.to_owned(),
        training,
        curve,
        aud,
    })
}

/// One k-tangent run per entry of `k_values`, all with the same seeds.
pub fn k_sweep<D: ExperimentData>(
    data: &D,
    k_values: &[usize],
    params: &BoostParams,
) -> Result<Vec<ExperimentRun>> {
    if k_values.is_empty() {
        return Err(Error::EmptyInput("no k values"));
    }
    let registry = LearnerRegistry::builtin();
    k_values
        .iter()
        .map(|&k| {
            let mut p = params.clone();
            p.mapping = "ktangent".into();
            p.learner.k = k;
            run_experiment(data, &format!("k{k}"), &p, &registry)
        })
        .collect()
}

/// One run per entry of [`MAPPING_MODES`], all with the same seeds.
pub fn mapping_comparison<D: ExperimentData>(
    data: &D,
    params: &BoostParams,
) -> Result<Vec<ExperimentRun>> {
    let registry = LearnerRegistry::builtin();
    MAPPING_MODES
        .iter()
        .map(|&(name, learner, k)| {
            let mut p = params.clone();
            p.mapping = learner.into();
            p.learner.k = k;
            run_experiment(data, name, &p, &registry)
        })
        .collect()
}

fn write_curves(runs: &[ExperimentRun], out_dir: &Path) -> Result<()> {
    for r in runs {
        r.curve
            .write_csv(&out_dir.join(format!("det_{}.csv", r.name)))?;
    }
    Ok(())
}

/// Trains one cascade per K on the manifest's training split and writes
/// `det_k{K}.csv` for each into `out_dir`.
pub fn run_experiment_k_sweep(
    manifest: &DatasetManifest,
    k_values: &[usize],
    params: &BoostParams,
    out_dir: &Path,
) -> Result<Vec<ExperimentRun>> {
    let data = prepare_image_data(manifest, params.seed)?;
    let runs = k_sweep(&data, k_values, params)?;
    write_curves(&runs, out_dir)?;
    Ok(runs)
}

/// Trains the four mapping modes on the manifest's training split and
/// writes `det_{mode}.csv` for each into `out_dir`.
pub fn run_experiment_mappings(
    manifest: &DatasetManifest,
    params: &BoostParams,
    out_dir: &Path,
) -> Result<Vec<ExperimentRun>> {
    let data = prepare_image_data(manifest, params.seed)?;
    let runs = mapping_comparison(&data, params)?;
    write_curves(&runs, out_dir)?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_policy() {
        assert_eq!(split_indices(8), (vec![0, 1, 2, 4, 5, 6], vec![3, 7]));
        assert_eq!(split_indices(2), (vec![0], vec![1]));
        assert_eq!(split_indices(1), (vec![0], vec![]));
    }

    #[test]
    fn sampled_windows_deterministic() {
        let img = GrayImage::from_fn(40, 50, |x, y| ((x * 3 + y * 5) % 11) as f64).unwrap();
        let a = sample_windows(std::slice::from_ref(&img), (18, 36), 5, 1).unwrap();
        let b = sample_windows(std::slice::from_ref(&img), (18, 36), 5, 1).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.first_order(18, 36, 7), y.first_order(18, 36, 7));
        }
        assert!(sample_windows(
            &[GrayImage::from_fn(10, 10, |_, _| 0.0).unwrap()],
            (18, 36),
            1,
            0
        )
        .is_err());
    }
}
