use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{geodesic_kmeans, geodesic_kmeans_from, Clustering, KMeansOptions};
use crate::spd::{check_dims, tangent_len, vectorize, SpdMatrix, TangentPole, TangentVector};
use crate::{Error, Result};

/// Scale of the default ridge penalty relative to the mean squared feature norm.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-4;

const SINGULAR_PIVOT: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            -1 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::InvalidArgument(format!(
                "label must be -1 or +1, got {other}"
            ))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub point: SpdMatrix,
    pub label: Label,
    /// Boosting weight.
    pub weight: f64,
}

impl LabeledSample {
    pub fn new(point: SpdMatrix, label: Label, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample weight must be finite and >= 0, got {weight}"
            )));
        }
        Ok(Self {
            point,
            label,
            weight,
        })
    }

    pub fn unit(point: SpdMatrix, label: Label) -> Self {
        Self {
            point,
            label,
            weight: 1.0,
        }
    }
}

/// Affine function `g(x) = w·x + b` on tangent coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakRegressor {
    weights: Vec<f64>,
    bias: f64,
}

impl WeakRegressor {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "regressor coefficients must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn dim_in(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn evaluate(&self, x: &TangentVector) -> Result<f64> {
        check_dims(self.weights.len(), x.len())?;
        Ok(self.eval_coords(x.coords()))
    }

    fn eval_coords(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Minimizes `Σ w_i (g(x_i) − t_i)² + ridge·‖weights‖²`; the bias is not penalized.
pub fn fit_weighted_ridge(
    xs: &[TangentVector],
    targets: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<WeakRegressor> {
    let first = xs
        .first()
        .ok_or(Error::EmptyInput("ridge regression without samples"))?;
    check_dims(xs.len(), targets.len())?;
    check_dims(xs.len(), weights.len())?;
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    let p = first.len();
    for x in xs {
        check_dims(p, x.len())?;
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "regression weights must be >= 0 with a positive sum".into(),
        ));
    }

    let mut x_mean = DVector::<f64>::zeros(p);
    let mut t_mean = 0.0;
    for ((x, &t), &w) in xs.iter().zip(targets).zip(weights) {
        x_mean.axpy(w, &DVector::from_column_slice(x.coords()), 1.0);
        t_mean += w * t;
    }
    x_mean /= total;
    t_mean /= total;

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut centered = DVector::<f64>::zeros(p);
    for ((x, &t), &w) in xs.iter().zip(targets).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (c, (v, m)) in centered
            .iter_mut()
            .zip(x.coords().iter().zip(x_mean.iter()))
        {
            *c = v - m;
        }
        gram.syger(w, &centered, &centered, 1.0);
        rhs.axpy(w * (t - t_mean), &centered, 1.0);
    }
    gram.fill_upper_triangle_with_lower_triangle();
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let scale = gram.diagonal().max();
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    // a vanishing pivot means the design is rank-deficient
    if chol
        .l_dirty()
        .diagonal()
        .iter()
        .any(|&l| !(l * l > SINGULAR_PIVOT * scale))
    {
        return Err(Error::SingularSystem);
    }
    let beta = chol.solve(&rhs);
    let bias = t_mean - beta.dot(&x_mean);
    WeakRegressor::new(beta.as_slice().to_vec(), bias).map_err(|_| Error::SingularSystem)
}

/// Default ridge: `DEFAULT_RIDGE_SCALE` times the mean squared norm of the inputs.
pub fn default_ridge(xs: &[TangentVector]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    DEFAULT_RIDGE_SCALE * xs.iter().map(|x| x.norm().powi(2)).sum::<f64>() / xs.len() as f64
}

/// How samples are turned into regressor inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `vectorize(log_map(pole, Z))`
    Tangent,
    /// `vectorize(Z)`, no manifold mapping; poles are ignored.
    Ambient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelRepr {
    projection: Projection,
    poles: Vec<SpdMatrix>,
    counts: Vec<usize>,
    regressors: Vec<WeakRegressor>,
}

/// K tangent poles with their cluster sizes and per-pole regressors. The
/// output is the cluster-size-weighted mixture of the regressors, each applied
/// in its own tangent space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct KTangentModel {
    repr: ModelRepr,
    charts: Vec<TangentPole>,
}

impl PartialEq for KTangentModel {
    fn eq(&self, other: &Self) -> bool {
        self.repr == other.repr
    }
}

impl From<KTangentModel> for ModelRepr {
    fn from(m: KTangentModel) -> Self {
        m.repr
    }
}

impl TryFrom<ModelRepr> for KTangentModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        KTangentModel::new(r.projection, r.poles, r.counts, r.regressors)
    }
}

impl KTangentModel {
    pub fn new(
        projection: Projection,
        poles: Vec<SpdMatrix>,
        counts: Vec<usize>,
        regressors: Vec<WeakRegressor>,
    ) -> Result<Self> {
        let first = poles
            .first()
            .ok_or(Error::EmptyInput("model without poles"))?;
        let dim = first.dim();
        check_dims(poles.len(), counts.len())?;
        check_dims(poles.len(), regressors.len())?;
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("cluster counts must be >= 1".into()));
        }
        for p in &poles {
            check_dims(dim, p.dim())?;
        }
        for g in &regressors {
            check_dims(tangent_len(dim), g.dim_in())?;
        }
        let charts = match projection {
            Projection::Tangent => poles
                .iter()
                .map(|p| TangentPole::new(p.clone()))
                .collect::<Result<_>>()?,
            Projection::Ambient => Vec::new(),
        };
        Ok(Self {
            repr: ModelRepr {
                projection,
                poles,
                counts,
                regressors,
            },
            charts,
        })
    }

    pub fn k(&self) -> usize {
        self.repr.poles.len()
    }

    pub fn dim(&self) -> usize {
        self.repr.poles[0].dim()
    }

    pub fn projection(&self) -> Projection {
        self.repr.projection
    }

    pub fn poles(&self) -> &[SpdMatrix] {
        &self.repr.poles
    }

    pub fn counts(&self) -> &[usize] {
        &self.repr.counts
    }

    pub fn regressors(&self) -> &[WeakRegressor] {
        &self.repr.regressors
    }

    /// n_k / Σ n_l
    pub fn mixture_weights(&self) -> Vec<f64> {
        let total: usize = self.repr.counts.iter().sum();
        self.repr
            .counts
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect()
    }

    /// Regressor input for pole `k`.
    pub fn features(&self, k: usize, z: &SpdMatrix) -> Result<TangentVector> {
        check_dims(self.dim(), z.dim())?;
        match self.repr.projection {
            Projection::Tangent => Ok(vectorize(&self.charts[k].log_map(z)?)),
            Projection::Ambient => Ok(vectorize(&z.to_sym())),
        }
    }

    /// Each regressor's output in its own tangent space.
    pub fn component_outputs(&self, z: &SpdMatrix) -> Result<Vec<f64>> {
        check_dims(self.dim(), z.dim())?;
        match self.repr.projection {
            Projection::Tangent => (0..self.k())
                .map(|k| Ok(self.repr.regressors[k].eval_coords(self.features(k, z)?.coords())))
                .collect(),
            Projection::Ambient => {
                let x = vectorize(&z.to_sym());
                Ok(self
                    .repr
                    .regressors
                    .iter()
                    .map(|g| g.eval_coords(x.coords()))
                    .collect())
            }
        }
    }

    /// Σ_k (n_k / Σ_l n_l) · g_k(vectorize(log_map(μ_k, z)))
    pub fn predict(&self, z: &SpdMatrix) -> Result<f64> {
        let outputs = self.component_outputs(z)?;
        let total: usize = self.repr.counts.iter().sum();
        let weighted: f64 = outputs
            .iter()
            .zip(&self.repr.counts)
            .map(|(g, &n)| n as f64 * g)
            .sum();
        Ok(weighted / total as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TrainSettings {
    /// `None` selects [`default_ridge`] per tangent space.
    pub ridge: Option<f64>,
    pub kmeans: KMeansOptions,
}

fn positives(samples: &[LabeledSample]) -> Vec<SpdMatrix> {
    samples
        .iter()
        .filter(|s| s.label.is_positive())
        .map(|s| s.point.clone())
        .collect()
}

fn check_training_input(samples: &[LabeledSample], responses: &[f64], k: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples"));
    }
    check_dims(samples.len(), responses.len())?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n_pos = samples.iter().filter(|s| s.label.is_positive()).count();
    if n_pos < k {
        return Err(Error::TooFewPositives {
            needed: k,
            got: n_pos,
        });
    }
    Ok(())
}

/// Clusters the positive samples into `k` poles, maps every sample (both
/// classes) into each pole's tangent space and fits one weighted ridge
/// regressor per pole against `responses`.
pub fn train_ktangent(
    samples: &[LabeledSample],
    k: usize,
    responses: &[f64],
    seed: u64,
    settings: &TrainSettings,
) -> Result<KTangentModel> {
    check_training_input(samples, responses, k)?;
    let clustering = geodesic_kmeans(&positives(samples), k, seed, &settings.kmeans)?;
    fit_on_clustering(samples, responses, clustering, settings)
}

/// As [`train_ktangent`], with the clustering started from `initial_centers`.
pub fn train_ktangent_from_centers(
    samples: &[LabeledSample],
    responses: &[f64],
    initial_centers: Vec<SpdMatrix>,
    settings: &TrainSettings,
) -> Result<KTangentModel> {
    check_training_input(samples, responses, initial_centers.len())?;
    let clustering = geodesic_kmeans_from(&positives(samples), initial_centers, &settings.kmeans)?;
    fit_on_clustering(samples, responses, clustering, settings)
}

fn fit_on_clustering(
    samples: &[LabeledSample],
    responses: &[f64],
    clustering: Clustering,
    settings: &TrainSettings,
) -> Result<KTangentModel> {
    fit_on_poles(
        samples,
        responses,
        Projection::Tangent,
        clustering.centers,
        clustering.counts,
        settings.ridge,
    )
}

/// Fits one regressor per given pole. With [`Projection::Ambient`] the poles
/// only fix the model dimension.
pub fn fit_on_poles(
    samples: &[LabeledSample],
    responses: &[f64],
    projection: Projection,
    poles: Vec<SpdMatrix>,
    counts: Vec<usize>,
    ridge: Option<f64>,
) -> Result<KTangentModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples"));
    }
    check_dims(samples.len(), responses.len())?;
    let placeholder: Vec<WeakRegressor> = poles
        .iter()
        .map(|p| WeakRegressor {
            weights: vec![0.0; tangent_len(p.dim())],
            bias: 0.0,
        })
        .collect();
    let mut model = KTangentModel::new(projection, poles, counts, placeholder)?;
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let regressors: Vec<WeakRegressor> = (0..model.k())
        .into_par_iter()
        .map(|k| {
            let xs: Vec<TangentVector> = samples
                .iter()
                .map(|s| model.features(k, &s.point))
                .collect::<Result<_>>()?;
            let ridge = ridge.unwrap_or_else(|| default_ridge(&xs));
            fit_weighted_ridge(&xs, responses, &weights, ridge)
        })
        .collect::<Result<_>>()?;
    model.repr.regressors = regressors;
    Ok(model)
}
