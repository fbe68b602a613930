use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use super::iforest::{iforest_fit, iforest_score, IsoForest};
use super::kde::Kde;
use super::ocsvm::{ocsvm_fit, ocsvm_score, OcSvmModel};
use super::pca::{pca_fit, pca_transform};
use crate::data::DatasetSplit;
use crate::eval::roc_auc;
use crate::svdd::quantile;
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    OcSvm,
    Kde,
    IForest,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 3] = [BaselineMethod::OcSvm, BaselineMethod::Kde, BaselineMethod::IForest];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::OcSvm => "ocsvm",
            BaselineMethod::Kde => "kde",
            BaselineMethod::IForest => "iforest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineParams {
    OcSvm { gamma: f64, nu: f64 },
    Kde { bandwidth: f64 },
    IForest { n_trees: usize, subsample: usize },
}

impl BaselineParams {
    pub fn label(&self) -> String {
        match self {
            BaselineParams::OcSvm { gamma, nu } => format!("gamma={gamma} nu={nu}"),
            BaselineParams::Kde { bandwidth } => format!("h={bandwidth:.4}"),
            BaselineParams::IForest { n_trees, subsample } => format!("trees={n_trees} psi={subsample}"),
        }
    }
}

/// `gamma in {2^-10, ..., 2^-1}` crossed with `nu in {0.01, 0.05, 0.1}`.
pub fn ocsvm_grid() -> Vec<BaselineParams> {
    (1..=10)
        .rev()
        .flat_map(|e| [0.01, 0.05, 0.1].map(|nu| BaselineParams::OcSvm { gamma: 2f64.powi(-e), nu }))
        .collect()
}

/// Bandwidths `2^0.5, 2^1, ..., 2^5`.
pub fn kde_grid() -> Vec<BaselineParams> {
    (1..=10).map(|k| BaselineParams::Kde { bandwidth: 2f64.powf(0.5 * k as f64) }).collect()
}

pub fn param_grid(method: BaselineMethod) -> Vec<BaselineParams> {
    match method {
        BaselineMethod::OcSvm => ocsvm_grid(),
        BaselineMethod::Kde => kde_grid(),
        BaselineMethod::IForest => vec![BaselineParams::IForest { n_trees: 100, subsample: 256 }],
    }
}

#[derive(Debug, Clone)]
pub enum FittedBaseline {
    OcSvm(OcSvmModel),
    Kde(Kde),
    IForest(IsoForest),
}

impl FittedBaseline {
    /// Larger means more anomalous for every method.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            FittedBaseline::OcSvm(m) => ocsvm_score(m, x),
            FittedBaseline::Kde(k) => k.score(x),
            FittedBaseline::IForest(f) => iforest_score(f, x),
        }
    }

    /// Scores above this value are classified anomalous: the decision boundary
    /// for OC-SVM, 0.5 for Isolation Forest, and for KDE the 95th percentile of
    /// leave-one-out training scores.
    pub fn threshold(&self) -> f64 {
        match self {
            FittedBaseline::OcSvm(_) => 0.0,
            FittedBaseline::IForest(_) => 0.5,
            FittedBaseline::Kde(k) => quantile(&k.leave_one_out_scores(), KDE_TRAIN_QUANTILE).unwrap_or(f64::INFINITY),
        }
    }
}

/// Fraction of training points the KDE decision threshold accepts.
pub const KDE_TRAIN_QUANTILE: f64 = 0.95;

pub fn fit_baseline(params: &BaselineParams, train: &[Vec<f64>], rng: &mut Rng) -> Result<FittedBaseline> {
    Ok(match *params {
        BaselineParams::OcSvm { gamma, nu } => FittedBaseline::OcSvm(ocsvm_fit(train, gamma, nu)?),
        BaselineParams::Kde { bandwidth } => FittedBaseline::Kde(Kde::new(train.to_vec(), bandwidth)?),
        BaselineParams::IForest { n_trees, subsample } => {
            FittedBaseline::IForest(iforest_fit(train, n_trees, subsample, rng)?)
        }
    })
}

/// How the reported grid point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best test ROC AUC over the grid (optimistic).
    TestAuc,
    /// Best AUC on a held-out 20% of the training data against uniform
    /// bounding-box outliers; the test set is touched only once.
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub params: BaselineParams,
    pub test_auc: Option<f64>,
    pub selection_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub points: Vec<GridPoint>,
    pub best_index: usize,
    pub best_params: BaselineParams,
    pub test_auc: f64,
    pub test_scores: Vec<f64>,
    /// Decision threshold of the selected model (see [`FittedBaseline::threshold`]).
    pub threshold: f64,
}

fn validation_split(train: &[Vec<f64>], rng: &mut Rng) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<u8>)> {
    if train.len() < 5 {
        return Err(Error::Data("train-only selection needs at least 5 training samples".into()));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(rng);
    let n_val = (train.len() / 5).max(1);
    let fit: Vec<Vec<f64>> = idx[n_val..].iter().map(|&i| train[i].clone()).collect();
    let mut val: Vec<Vec<f64>> = idx[..n_val].iter().map(|&i| train[i].clone()).collect();
    let d = train[0].len();
    let lo: Vec<f64> = (0..d).map(|j| fit.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|j| fit.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    for _ in 0..n_val {
        val.push((0..d).map(|j| if hi[j] > lo[j] { rng.random_range(lo[j]..=hi[j]) } else { lo[j] }).collect());
    }
    let mut labels = vec![0u8; n_val];
    labels.extend(std::iter::repeat_n(1u8, n_val));
    Ok((fit, val, labels))
}

/// Fits every grid point and reports the selected one.
pub fn grid_search_baseline(
    grid: &[BaselineParams],
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    test_labels: &[u8],
    selection: Selection,
    rng: &mut Rng,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty parameter grid".into()));
    }
    let master = rng.next_u64();
    let score_all = |m: &FittedBaseline, xs: &[Vec<f64>]| xs.iter().map(|x| m.score(x)).collect::<Vec<f64>>();
    let mut points: Vec<GridPoint> = Vec::with_capacity(grid.len());
    let mut best: Option<usize> = None;
    let split = match selection {
        Selection::TrainOnly => Some(validation_split(train, &mut rng_from_seed(derive_seed(master, u64::MAX)))?),
        Selection::TestAuc => None,
    };
    for (i, params) in grid.iter().enumerate() {
        let mut r = rng_from_seed(derive_seed(master, i as u64));
        let point = match &split {
            None => {
                let model = fit_baseline(params, train, &mut r)?;
                let scores = score_all(&model, test);
                let auc = roc_auc(&scores, test_labels)?;
                if best.is_none_or(|b| auc > points[b].selection_auc) {
                    best = Some(i);
                }
                GridPoint { params: *params, test_auc: Some(auc), selection_auc: auc }
            }
            Some((fit, val, val_labels)) => {
                let model = fit_baseline(params, fit, &mut r)?;
                let auc = roc_auc(&score_all(&model, val), val_labels)?;
                if best.is_none_or(|b| auc > points[b].selection_auc) {
                    best = Some(i);
                }
                GridPoint { params: *params, test_auc: None, selection_auc: auc }
            }
        };
        points.push(point);
    }
    let best_index = best.expect("grid is non-empty");
    let mut r = rng_from_seed(derive_seed(master, best_index as u64));
    let model = fit_baseline(&grid[best_index], train, &mut r)?;
    let test_scores = score_all(&model, test);
    let test_auc = roc_auc(&test_scores, test_labels)?;
    Ok(GridResult { best_params: grid[best_index], points, best_index, test_auc, test_scores, threshold: model.threshold() })
}

/// Concatenates all views of every sample into one feature row.
pub fn flatten_split(split: &DatasetSplit) -> Vec<Vec<f64>> {
    split.samples().iter().map(|s| s.views().concat()).collect()
}

/// Flattened stacks, PCA to 95% variance, then the method's grid.
pub fn run_baseline(
    method: BaselineMethod,
    train: &DatasetSplit,
    test: &DatasetSplit,
    selection: Selection,
    rng: &mut Rng,
) -> Result<GridResult> {
    let x_train = flatten_split(train);
    let pca = pca_fit(&x_train, 0.95)?;
    let z_train = pca_transform(&pca, &x_train)?;
    let z_test = pca_transform(&pca, &flatten_split(test))?;
    grid_search_baseline(&param_grid(method), &z_train, &z_test, &test.labels(), selection, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(ocsvm_grid().len(), 30);
        assert_eq!(kde_grid().len(), 10);
        let BaselineParams::Kde { bandwidth } = kde_grid()[9] else { panic!() };
        assert!((bandwidth - 32.0).abs() < 1e-12);
        let BaselineParams::Kde { bandwidth } = kde_grid()[0] else { panic!() };
        assert!((bandwidth - 2f64.sqrt()).abs() < 1e-12);
    }

    fn blobs(rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<u8>) {
        let train: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let mut test: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        test.extend((0..20).map(|_| vec![rng.random_range(3.0..5.0), rng.random_range(-5.0..5.0)]));
        let labels = (0..40).map(|i| u8::from(i >= 20)).collect();
        (train, test, labels)
    }

    #[test]
    fn best_of_grid_dominates_every_point() {
        let mut rng = rng_from_seed(0);
        let (train, test, labels) = blobs(&mut rng);
        for method in BaselineMethod::ALL {
            let r = grid_search_baseline(&param_grid(method), &train, &test, &labels, Selection::TestAuc, &mut rng).unwrap();
            assert!(r.points.iter().all(|p| p.test_auc.unwrap() <= r.test_auc));
            assert!(r.test_auc > 0.9, "{method:?} {}", r.test_auc);
        }
    }

    #[test]
    fn train_only_selection_runs() {
        let mut rng = rng_from_seed(1);
        let (train, test, labels) = blobs(&mut rng);
        let r = grid_search_baseline(&kde_grid(), &train, &test, &labels, Selection::TrainOnly, &mut rng).unwrap();
        assert!(r.points.iter().all(|p| p.test_auc.is_none()));
        assert!(r.test_auc > 0.9);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut rng = rng_from_seed(1);
        let (train, test, labels) = blobs(&mut rng);
        assert!(grid_search_baseline(&[], &train, &test, &labels, Selection::TestAuc, &mut rng).is_err());
    }
}
