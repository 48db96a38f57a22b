//! Evaluation metrics: micro-averaged ROC-AUC, NRMSE, Pearson correlation
//! and per-descriptor noise ceilings.

use ndarray::ArrayView2;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::data::PerSubjectRatings;
use crate::error::{Error, Result};
use crate::preproc::shifted_mean;

/// ROC curve over every distinct score threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// Decreasing; the first entry is `+inf` for the `(0, 0)` point.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// Linear interpolation of TPR at `fpr`, taking the upper envelope on vertical segments.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let idx = self.fpr.partition_point(|&f| f <= fpr);
        if idx == 0 {
            return self.tpr[0];
        }
        if idx == self.fpr.len() {
            return *self.tpr.last().expect("non-empty curve");
        }
        let (x0, x1) = (self.fpr[idx - 1], self.fpr[idx]);
        let (y0, y1) = (self.tpr[idx - 1], self.tpr[idx]);
        y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
    }
}

struct Step {
    threshold: f64,
    positives: u64,
    negatives: u64,
}

/// Groups cells by distinct score, highest first.
fn threshold_steps(scores: &[f64], labels: &[f64]) -> Result<(Vec<Step>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not comparable")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps: Vec<Step> = Vec::new();
    for i in order {
        let positive = labels[i] == 1.0;
        match steps.last_mut() {
            Some(step) if step.threshold == scores[i] => {
                if positive {
                    step.positives += 1
                } else {
                    step.negatives += 1
                }
            }
            _ => steps.push(Step {
                threshold: scores[i],
                positives: positive as u64,
                negatives: !positive as u64,
            }),
        }
    }
    let p: u64 = steps.iter().map(|s| s.positives).sum();
    let n: u64 = steps.iter().map(|s| s.negatives).sum();
    if p == 0 || n == 0 {
        return Err(Error::Undefined(format!(
            "ROC-AUC needs both classes; got {p} positive and {n} negative cells"
        )));
    }
    Ok((steps, p, n))
}

/// Trapezoidal area from integer counts; ties earn half credit.
fn area(steps: &[Step], p: u64, n: u64) -> f64 {
    let mut tp = 0u128;
    let mut twice_area = 0u128;
    for s in steps {
        twice_area += s.negatives as u128 * (2 * tp + s.positives as u128);
        tp += s.positives as u128;
    }
    twice_area as f64 / (2.0 * p as f64 * n as f64)
}

/// AUC of a flat pool of `(score, label)` cells.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (steps, p, n) = threshold_steps(scores, labels)?;
    Ok(area(&steps, p, n))
}

/// Micro-averaged ROC-AUC: every (sample, descriptor) cell enters one pool.
pub fn roc_auc_micro(scores: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> Result<f64> {
    if scores.dim() != labels.dim() {
        return Err(Error::InvalidArgument(format!(
            "score shape {:?} differs from label shape {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    let s: Vec<f64> = scores.iter().copied().collect();
    let l: Vec<f64> = labels.iter().copied().collect();
    roc_auc(&s, &l)
}

pub fn roc_curve(scores: &[f64], labels: &[f64]) -> Result<RocCurve> {
    let (steps, p, n) = threshold_steps(scores, labels)?;
    let auc = area(&steps, p, n);
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0u64, 0u64);
    for s in &steps {
        tp += s.positives;
        fp += s.negatives;
        thresholds.push(s.threshold);
        tpr.push(tp as f64 / p as f64);
        fpr.push(fp as f64 / n as f64);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// RMSE divided by the range of `y_true`.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension {
            expected: y_true.len(),
            found: y_pred.len(),
        });
    }
    let max = y_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y_true.iter().copied().fold(f64::INFINITY, f64::min);
    if y_true.is_empty() || max <= min {
        return Err(Error::Undefined("NRMSE of a constant target has no range".into()));
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt() / (max - min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pearson {
    pub r: f64,
    /// Two-sided p-value with `n - 2` degrees of freedom.
    pub p: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Undefined(format!("correlation needs at least 3 points, got {n}")));
    }
    let mx = shifted_mean(x);
    let my = shifted_mean(y);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Pearson {
        r,
        p: pearson_p_value(r, n),
    })
}

/// Two-sided t-test p-value for a correlation `r` over `n` points.
///
/// `t^2 = r^2 (n-2) / (1-r^2)` gives `p = I_{1-r^2}((n-2)/2, 1/2)`.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let x = 1.0 - r * r;
    if x <= 0.0 {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, x.min(1.0))
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Mean, population standard deviation and count of a set of repetition values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Summary {
            mean,
            std,
            n: values.len(),
        }
    }

    /// Standard error of the mean, `std / sqrt(n)`.
    pub fn sem(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseCeiling {
    pub descriptors: Vec<String>,
    /// Mean subject-to-group correlation; `None` when fewer than two subjects qualify.
    pub per_descriptor: Vec<Option<f64>>,
    /// Indexed `[subject][descriptor]`.
    pub per_subject: Vec<Vec<Option<f64>>>,
    /// Subjects left out per descriptor (constant ratings or under 3 rated odorants).
    pub excluded: Vec<usize>,
    pub overall_mean: f64,
    pub overall_std: f64,
    pub leave_one_out: bool,
}

/// Correlation of each subject with the across-subject mean, averaged per descriptor.
///
/// The mean includes the subject itself unless `leave_one_out` is set.
pub fn noise_ceiling(data: &PerSubjectRatings, leave_one_out: bool) -> Result<NoiseCeiling> {
    let s = data.subjects.len();
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "noise ceiling needs at least 2 subjects, got {s}"
        )));
    }
    let n = data.odorants.len();
    let d = data.descriptors.len();
    let mut per_subject = vec![vec![None; d]; s];
    let mut per_descriptor = Vec::with_capacity(d);
    let mut excluded = vec![0; d];

    for j in 0..d {
        let group_mean = |skip: Option<usize>, o: usize| -> Option<f64> {
            let vals: Vec<f64> = (0..s)
                .filter(|&q| Some(q) != skip)
                .filter_map(|q| data.get(q, o, j))
                .collect();
            (!vals.is_empty()).then(|| shifted_mean(&vals))
        };
        let shared: Vec<Option<f64>> = (0..n).map(|o| group_mean(None, o)).collect();
        let mut rs = Vec::new();
        #[allow(clippy::needless_range_loop)]
        for subject in 0..s {
            let mut own = Vec::new();
            let mut mean = Vec::new();
            for o in 0..n {
                let Some(v) = data.get(subject, o, j) else { continue };
                let m = if leave_one_out {
                    group_mean(Some(subject), o)
                } else {
                    shared[o]
                };
                if let Some(m) = m {
                    own.push(v);
                    mean.push(m);
                }
            }
            if own.is_empty() {
                continue;
            }
            match pearson(&own, &mean) {
                Ok(p) => {
                    per_subject[subject][j] = Some(p.r);
                    rs.push(p.r);
                }
                Err(_) => excluded[j] += 1,
            }
        }
        if excluded[j] > 0 {
            log::info!(
                "noise ceiling: {} subjects excluded for {:?}",
                excluded[j],
                data.descriptors[j]
            );
        }
        per_descriptor.push((rs.len() >= 2).then(|| rs.iter().sum::<f64>() / rs.len() as f64));
    }
    let defined: Vec<f64> = per_descriptor.iter().flatten().copied().collect();
    let (overall_mean, overall_std) = mean_std(&defined);
    Ok(NoiseCeiling {
        descriptors: data.descriptors.clone(),
        per_descriptor,
        per_subject,
        excluded,
        overall_mean,
        overall_std,
        leave_one_out,
    })
}
