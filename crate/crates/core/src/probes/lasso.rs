//! Lasso regression by cyclic coordinate descent.
//!
//! Objective: `(1/2n) |y - Xw - b|^2 + alpha |w|_1`, intercept unpenalized.
//! The intercept is profiled out by centering `X` and `y`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::preproc::shifted_mean;

/// Stop when no coefficient moves by more than this in one sweep.
pub const COEFFICIENT_TOLERANCE: f64 = 1e-8;
/// Subgradient optimality slack required on top of the step criterion.
const KKT_TOLERANCE: f64 = 1e-9;
const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub l1_strength: f64,
}

pub fn predict_linear(model: &LinearModel, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.weights.len() {
        return Err(Error::Dimension {
            expected: model.weights.len(),
            found: x.ncols(),
        });
    }
    Ok(x.dot(&model.weights) + model.bias)
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Centered design shared by every fit on the same data.
struct Centered {
    x: Array2<f64>,
    y: Array1<f64>,
    x_mean: Array1<f64>,
    y_mean: f64,
    /// `|x_j|^2 / n` of the centered columns.
    col_scale: Array1<f64>,
}

impl Centered {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Self> {
        let (n, _) = x.dim();
        if y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: y.len(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidArgument("lasso needs at least 2 samples".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite lasso input".into()));
        }
        let x_mean: Array1<f64> = x.axis_iter(Axis(1)).map(|c| shifted_mean(c.iter())).collect();
        let y_mean = shifted_mean(y.iter());
        let xc = &x - &x_mean;
        let yc = y.mapv(|v| v - y_mean);
        let col_scale: Array1<f64> = xc.axis_iter(Axis(1)).map(|c| c.dot(&c) / n as f64).collect();
        if col_scale.iter().any(|&s| (s - 1.0).abs() > 1e-6) {
            log::debug!("lasso: design columns are not standardized");
        }
        Ok(Centered {
            x: xc,
            y: yc,
            x_mean,
            y_mean,
            col_scale,
        })
    }

    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn alpha_max(&self) -> f64 {
        let n = self.n();
        self.x
            .axis_iter(Axis(1))
            .map(|c| c.dot(&self.y).abs() / n)
            .fold(0.0, f64::max)
    }

    /// Coordinate descent from `w`, returning the converged coefficients.
    fn solve(&self, alpha: f64, mut w: Array1<f64>) -> Result<Array1<f64>> {
        let n = self.n();
        let k = self.x.ncols();
        let mut resid = &self.y - &self.x.dot(&w);
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0f64;
            for j in 0..k {
                let scale = self.col_scale[j];
                let col = self.x.column(j);
                let old = w[j];
                let new = if scale > 0.0 {
                    let rho = col.dot(&resid) / n + scale * old;
                    soft_threshold(rho, alpha) / scale
                } else {
                    0.0
                };
                if new != old {
                    resid.scaled_add(old - new, &col);
                    w[j] = new;
                    max_step = max_step.max((new - old).abs());
                }
            }
            if max_step < COEFFICIENT_TOLERANCE && self.kkt_violation(alpha, &w, &resid) < KKT_TOLERANCE {
                return Ok(w);
            }
        }
        Err(Error::Convergence(format!(
            "lasso did not converge in {MAX_SWEEPS} sweeps (alpha = {alpha})"
        )))
    }

    fn kkt_violation(&self, alpha: f64, w: &Array1<f64>, resid: &Array1<f64>) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for (j, col) in self.x.axis_iter(Axis(1)).enumerate() {
            if self.col_scale[j] == 0.0 {
                continue;
            }
            let g = col.dot(resid) / n;
            let v = if w[j] != 0.0 {
                (g - alpha * w[j].signum()).abs()
            } else {
                (g.abs() - alpha).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn model(&self, w: Array1<f64>, alpha: f64) -> LinearModel {
        let bias = self.y_mean - self.x_mean.dot(&w);
        LinearModel {
            weights: w,
            bias,
            l1_strength: alpha,
        }
    }
}

/// Smallest `alpha` at which the lasso solution is all zeros:
/// `max_j |x_j^T (y - mean(y))| / n` over centered columns.
pub fn alpha_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(Centered::new(x, y)?.alpha_max())
}

pub fn fit_lasso(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, alpha: f64) -> Result<LinearModel> {
    check_alpha(alpha)?;
    let c = Centered::new(x, y)?;
    let w = c.solve(alpha, Array1::zeros(x.ncols()))?;
    Ok(c.model(w, alpha))
}

/// Fits every `alpha` in order, warm-starting each fit from the previous
/// solution. Pass alphas in decreasing order for the usual path behavior.
pub fn fit_lasso_path(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, alphas: &[f64]) -> Result<Vec<LinearModel>> {
    let c = Centered::new(x, y)?;
    let mut w = Array1::zeros(x.ncols());
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        check_alpha(alpha)?;
        w = c.solve(alpha, w)?;
        out.push(c.model(w.clone(), alpha));
    }
    Ok(out)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("l1 strength must be >= 0, got {alpha}")));
    }
    Ok(())
}
