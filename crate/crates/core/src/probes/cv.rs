//! Hyperparameter selection by inner K-fold cross-validation.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::lasso::{alpha_max, fit_lasso_path, predict_linear, LinearModel};
use super::logistic::{fit_logistic, predict_logistic, LogisticModel};
use super::split::inner_folds;
use crate::error::{Error, Result};
use crate::metrics::roc_auc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Lasso,
}

/// How grid values are turned into penalty strengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Absolute,
    /// Multiples of the training data's `alpha_max`.
    RelativeToAlphaMax,
}

/// Candidate regularization strengths, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    values: Vec<f64>,
    pub scale: GridScale,
}

impl HyperGrid {
    pub fn new(values: Vec<f64>, scale: GridScale) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("hyperparameter grid is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("grid values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid values must be strictly increasing".into()));
        }
        Ok(HyperGrid { values, scale })
    }

    /// `count` log-spaced points from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize, scale: GridScale) -> Result<Self> {
        if count == 1 {
            return HyperGrid::new(vec![lo], scale);
        }
        let (a, b) = (lo.log10(), hi.log10());
        let step = (b - a) / (count - 1) as f64;
        let values = (0..count)
            .map(|i| if i + 1 == count { hi } else { 10f64.powf(a + step * i as f64) })
            .collect();
        HyperGrid::new(values, scale)
    }

    /// L2 strengths 1e-4 ... 1e2, 7 points.
    pub fn logistic_default() -> Self {
        HyperGrid::log_spaced(1e-4, 1e2, 7, GridScale::Absolute).expect("valid default grid")
    }

    /// 1e-4 ... 1 times alpha_max, 10 points.
    pub fn lasso_default() -> Self {
        HyperGrid::log_spaced(1e-4, 1.0, 10, GridScale::RelativeToAlphaMax).expect("valid default grid")
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logistic => Self::logistic_default(),
            ModelKind::Lasso => Self::lasso_default(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn resolve(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        match self.scale {
            GridScale::Absolute => Ok(self.values.clone()),
            GridScale::RelativeToAlphaMax => {
                let amax = alpha_max(x, y)?;
                Ok(self.values.iter().map(|v| v * amax).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Logistic(LogisticModel),
    Lasso(LinearModel),
}

impl FittedModel {
    /// Probabilities for logistic models, real predictions for lasso.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self {
            FittedModel::Logistic(m) => predict_logistic(m, x),
            FittedModel::Lasso(m) => predict_linear(m, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    /// Penalty strength chosen, in absolute units.
    pub selected: f64,
    pub selected_index: usize,
    /// Absolute strengths evaluated.
    pub candidates: Vec<f64>,
    /// Mean inner validation score per candidate; `None` if no fold could be scored.
    pub scores: Vec<Option<f64>>,
    pub model: FittedModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub inner_folds: usize,
    pub seed: u64,
    /// Stratify logistic folds by class.
    pub stratified: bool,
}

/// Index of the best mean score. Ties go to the weakest penalty for
/// logistic models and to the strongest for lasso.
pub fn select_best(scores: &[Option<f64>], kind: ModelKind) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(s) = *s else { continue };
        best = match best {
            None => Some((i, s)),
            Some((_, b)) if s > b => Some((i, s)),
            Some((_, b)) if s == b && kind == ModelKind::Lasso => Some((i, s)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i)
}

/// Validation score of one candidate on one fold: ROC-AUC for logistic,
/// negative mean squared error for lasso.
fn fold_scores(
    kind: ModelKind,
    candidates: &[f64],
    xt: ArrayView2<'_, f64>,
    yt: ArrayView1<'_, f64>,
    xv: ArrayView2<'_, f64>,
    yv: ArrayView1<'_, f64>,
) -> Vec<Option<f64>> {
    match kind {
        ModelKind::Logistic => candidates
            .iter()
            .map(|&l2| {
                let m = fit_logistic(xt, yt, l2).ok()?;
                let p = predict_logistic(&m, xv).ok()?;
                roc_auc(p.as_slice()?, yv.to_vec().as_slice()).ok()
            })
            .collect(),
        ModelKind::Lasso => {
            // Decreasing order for warm starts, then mapped back.
            let descending: Vec<f64> = candidates.iter().rev().copied().collect();
            let Ok(path) = fit_lasso_path(xt, yt, &descending) else {
                return vec![None; candidates.len()];
            };
            let mut out: Vec<Option<f64>> = path
                .iter()
                .map(|m| {
                    let p = predict_linear(m, xv).ok()?;
                    let mse = p.iter().zip(yv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / yv.len() as f64;
                    Some(-mse)
                })
                .collect();
            out.reverse();
            out
        }
    }
}

fn refit(kind: ModelKind, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, strength: f64) -> Result<FittedModel> {
    Ok(match kind {
        ModelKind::Logistic => FittedModel::Logistic(fit_logistic(x, y, strength)?),
        ModelKind::Lasso => FittedModel::Lasso(super::lasso::fit_lasso(x, y, strength)?),
    })
}

/// Picks the penalty by inner CV on `(x, y)` and refits it on all of `(x, y)`.
pub fn nested_cv_select(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    kind: ModelKind,
    grid: &HyperGrid,
    options: &CvOptions,
) -> Result<CvResult> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    let candidates = grid.resolve(x, y)?;
    let strat_labels = (options.stratified && kind == ModelKind::Logistic).then(|| y.to_vec());
    let folds = inner_folds(n, options.inner_folds, options.seed, strat_labels.as_deref())?;

    let mut sums = vec![0.0; candidates.len()];
    let mut counts = vec![0usize; candidates.len()];
    for fold in &folds {
        let xt = x.select(Axis(0), &fold.train);
        let yt = y.select(Axis(0), &fold.train);
        let xv = x.select(Axis(0), &fold.test);
        let yv = y.select(Axis(0), &fold.test);
        let scores = fold_scores(kind, &candidates, xt.view(), yt.view(), xv.view(), yv.view());
        for (c, s) in scores.into_iter().enumerate() {
            if let Some(s) = s {
                sums[c] += s;
                counts[c] += 1;
            }
        }
    }
    let scores: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let selected_index = select_best(&scores, kind)
        .ok_or_else(|| Error::Selection("no candidate could be scored on any inner fold".into()))?;
    let selected = candidates[selected_index];
    let model = refit(kind, x, y, selected)?;
    Ok(CvResult {
        selected,
        selected_index,
        candidates,
        scores,
        model,
    })
}
