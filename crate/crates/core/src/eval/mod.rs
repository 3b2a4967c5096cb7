//! Datasets, DET evaluation and the experiment drivers.

mod config;
mod det;
mod experiment;
mod manifest;
pub mod synth;

pub use config::{RunConfig, CONFIG_KEYS};
pub use det::{
    area_under_det, compute_det, det_point, parse_scores, DetCurve, DetPoint, AUD_FPR_RANGE,
    DET_CSV_HEADER,
};
pub use experiment::{
    cascade_scores, evaluate_cascade, k_sweep, mapping_comparison, prepare_image_data,
    run_experiment, run_experiment_k_sweep, run_experiment_mappings, sample_windows,
    ExperimentData, ExperimentRun, ImageData, PoolData, MAPPING_MODES, TEST_NEGATIVES_PER_POSITIVE,
};
pub use manifest::{load_manifest, DatasetManifest, PositiveEntry};
