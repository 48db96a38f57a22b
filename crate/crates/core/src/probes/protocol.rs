//! Repeated train/test evaluation of per-descriptor linear probes.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{nested_cv_select, CvOptions, HyperGrid, ModelKind};
use super::split::{derive_seed, make_splits, SplitPlan};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::metrics;
use crate::preproc::{apply_pca, apply_standardizer, column_moments, fit_pca_with, fit_standardizer, PcaModel};

const INNER_STREAM: u64 = 0x494e_4e45_5200_0002;

/// Which rows the PCA basis is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaFit {
    TrainSplit,
    /// All rows at once; for sensitivity checks only, as test rows leak into the basis.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Target PCA dimension; inputs with at most this many columns skip PCA.
    pub pca_k: Option<usize>,
    pub zscore: bool,
    pub pca_fit: PcaFit,
    pub strict_pca: bool,
    /// Standardize each regression target on the training rows and map
    /// predictions back to the original scale.
    pub zscore_targets: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            pca_k: Some(20),
            zscore: true,
            pca_fit: PcaFit::TrainSplit,
            strict_pca: false,
            zscore_targets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ModelKind,
    pub grid: HyperGrid,
    pub preprocessing: Preprocessing,
    pub stratified: bool,
    /// Worker threads; `None` uses the global pool. Output does not depend on it.
    pub jobs: Option<usize>,
}

impl ProbeConfig {
    pub fn new(kind: ModelKind) -> Self {
        ProbeConfig {
            kind,
            grid: HyperGrid::default_for(kind),
            preprocessing: Preprocessing::default(),
            stratified: false,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum DescriptorOutcome {
    Fitted {
        selected: f64,
        /// Test-row predictions, in the order of the repetition's test indices.
        y_pred: Vec<f64>,
    },
    Skipped {
        reason: String,
    },
}

impl DescriptorOutcome {
    pub fn predictions(&self) -> Option<&[f64]> {
        match self {
            DescriptorOutcome::Fitted { y_pred, .. } => Some(y_pred),
            DescriptorOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Feature count after PCA, when PCA ran.
    pub pca_components: Option<usize>,
    pub outcomes: Vec<DescriptorOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionScore {
    pub cc: f64,
    pub nrmse: f64,
}

/// Raw test predictions of every repetition and descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub kind: ModelKind,
    pub descriptors: Vec<String>,
    pub row_ids: Vec<String>,
    pub y: Array2<f64>,
    pub repetitions: Vec<RepetitionResult>,
}

impl ProbeRun {
    pub fn y_true(&self, repetition: usize, descriptor: usize) -> Vec<f64> {
        self.repetitions[repetition]
            .test
            .iter()
            .map(|&i| self.y[[i, descriptor]])
            .collect()
    }

    pub fn skipped(&self) -> usize {
        self.repetitions
            .iter()
            .flat_map(|r| &r.outcomes)
            .filter(|o| o.predictions().is_none())
            .count()
    }

    /// Test-set Pearson correlation and NRMSE for each `[repetition][descriptor]`.
    ///
    /// A constant prediction against a varying truth scores a correlation of 0.
    /// `None` marks skipped fits and test sets whose truth is constant.
    pub fn regression_scores(&self) -> Vec<Vec<Option<RegressionScore>>> {
        self.repetitions
            .iter()
            .enumerate()
            .map(|(r, rep)| {
                rep.outcomes
                    .iter()
                    .enumerate()
                    .map(|(d, outcome)| {
                        let pred = outcome.predictions()?;
                        let truth = self.y_true(r, d);
                        let nrmse = metrics::nrmse(&truth, pred).ok()?;
                        let constant_pred = pred.iter().all(|&p| p == pred[0]);
                        let cc = if constant_pred {
                            0.0
                        } else {
                            metrics::pearson(&truth, pred).ok()?.r
                        };
                        Some(RegressionScore { cc, nrmse })
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV `repetition,descriptor,row_id,y_true,y_pred`; skipped descriptors have no rows.
    pub fn write_predictions_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["repetition", "descriptor", "row_id", "y_true", "y_pred"])?;
        for rep in &self.repetitions {
            for (d, outcome) in rep.outcomes.iter().enumerate() {
                let Some(pred) = outcome.predictions() else { continue };
                for (&i, p) in rep.test.iter().zip(pred) {
                    w.write_record([
                        rep.repetition.to_string(),
                        self.descriptors[d].clone(),
                        self.row_ids[i].clone(),
                        self.y[[i, d]].to_string(),
                        p.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }
}

/// Runs the split protocol on a labels or ratings bundle.
pub fn run_probe_protocol(bundle: &DatasetBundle, plan: &SplitPlan, config: &ProbeConfig) -> Result<ProbeRun> {
    let y = bundle.targets.matrix().ok_or_else(|| {
        Error::InvalidArgument("probe protocol needs a labels or ratings bundle".into())
    })?;
    run_probe_matrix(
        bundle.x.view(),
        y.view(),
        &bundle.row_ids,
        bundle.targets.descriptors(),
        plan,
        config,
    )
}

/// Protocol on raw matrices: `x` is `n x D`, `y` is `n x d`.
pub fn run_probe_matrix(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    row_ids: &[String],
    descriptors: &[String],
    plan: &SplitPlan,
    config: &ProbeConfig,
) -> Result<ProbeRun> {
    let n = x.nrows();
    if y.nrows() != n || row_ids.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.nrows(),
        });
    }
    if y.ncols() != descriptors.len() {
        return Err(Error::Dimension {
            expected: descriptors.len(),
            found: y.ncols(),
        });
    }
    let plan = plan.with_n(n);
    let splits = make_splits(&plan)?;
    let prep = &config.preprocessing;
    let pca_k = prep.pca_k.filter(|&k| {
        let run = x.ncols() > k;
        if !run {
            log::info!("skipping PCA: input has {} columns, target {k}", x.ncols());
        }
        run
    });
    let global_pca = match (pca_k, prep.pca_fit) {
        (Some(k), PcaFit::Global) => Some(fit_pca_with(x, k, prep.strict_pca)?),
        _ => None,
    };

    let run_all = || -> Result<Vec<RepetitionResult>> {
        splits
            .par_iter()
            .enumerate()
            .map(|(r, split)| {
                let xtr = x.select(Axis(0), &split.train);
                let xte = x.select(Axis(0), &split.test);
                let (xtr, xte, pca_components) =
                    preprocess(xtr, xte, pca_k, global_pca.as_ref(), prep)?;
                // One inner-fold seed per repetition, shared by every descriptor, so a
                // descriptor's result does not depend on its column position.
                let seed = derive_seed(plan.base_seed, &[INNER_STREAM, r as u64]);
                let outcomes = (0..descriptors.len())
                    .into_par_iter()
                    .map(|d| {
                        let ytr = y.column(d).select(Axis(0), &split.train);
                        fit_descriptor(xtr.view(), ytr.view(), xte.view(), config, plan.inner_folds, seed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(RepetitionResult {
                    repetition: r,
                    train: split.train.clone(),
                    test: split.test.clone(),
                    pca_components,
                    outcomes,
                })
            })
            .collect()
    };
    let repetitions = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    let skipped: usize = repetitions
        .iter()
        .flat_map(|r| &r.outcomes)
        .filter(|o| o.predictions().is_none())
        .count();
    if skipped > 0 {
        log::warn!("{skipped} (repetition, descriptor) fits skipped for degenerate targets");
    }
    Ok(ProbeRun {
        kind: config.kind,
        descriptors: descriptors.to_vec(),
        row_ids: row_ids.to_vec(),
        y: y.to_owned(),
        repetitions,
    })
}

fn preprocess(
    xtr: Array2<f64>,
    xte: Array2<f64>,
    pca_k: Option<usize>,
    global: Option<&PcaModel>,
    prep: &Preprocessing,
) -> Result<(Array2<f64>, Array2<f64>, Option<usize>)> {
    let (mut xtr, mut xte, mut comps) = (xtr, xte, None);
    if let Some(k) = pca_k {
        let local;
        let model = match global {
            Some(m) => m,
            None => {
                local = fit_pca_with(xtr.view(), k.min(xtr.nrows()), prep.strict_pca)?;
                &local
            }
        };
        xtr = apply_pca(model, xtr.view())?;
        xte = apply_pca(model, xte.view())?;
        comps = Some(model.k());
    }
    if prep.zscore {
        let s = fit_standardizer(xtr.view())?;
        xtr = apply_standardizer(&s, xtr.view())?;
        xte = apply_standardizer(&s, xte.view())?;
    }
    Ok((xtr, xte, comps))
}

fn fit_descriptor(
    xtr: ArrayView2<'_, f64>,
    ytr: ArrayView1<'_, f64>,
    xte: ArrayView2<'_, f64>,
    config: &ProbeConfig,
    inner_folds: usize,
    seed: u64,
) -> Result<DescriptorOutcome> {
    let skip = |reason: String| Ok(DescriptorOutcome::Skipped { reason });
    match config.kind {
        ModelKind::Logistic => {
            let pos = ytr.iter().filter(|&&v| v == 1.0).count();
            if pos == 0 || pos == ytr.len() {
                return skip(format!("single-class training target ({pos} positives)"));
            }
        }
        ModelKind::Lasso => {
            if ytr.iter().all(|&v| v == ytr[0]) {
                return skip("constant training target".into());
            }
        }
    }
    let (target, mean, std) = if config.preprocessing.zscore_targets && config.kind == ModelKind::Lasso {
        let (mean, std, degenerate) = column_moments(ytr);
        if degenerate {
            return skip("constant training target".into());
        }
        (ytr.mapv(|v| (v - mean) / std), mean, std)
    } else {
        (ytr.to_owned(), 0.0, 1.0)
    };
    let options = CvOptions {
        inner_folds,
        seed,
        stratified: config.stratified,
    };
    let cv = match nested_cv_select(xtr, target.view(), config.kind, &config.grid, &options) {
        Ok(cv) => cv,
        Err(Error::Selection(reason)) | Err(Error::DegenerateTarget(reason)) => return skip(reason),
        Err(e) => return Err(e),
    };
    let y_pred = cv.model.predict(xte)?.iter().map(|&p| p * std + mean).collect();
    Ok(DescriptorOutcome::Fitted {
        selected: cv.selected,
        y_pred,
    })
}
