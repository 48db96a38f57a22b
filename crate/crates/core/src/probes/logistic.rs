//! L2-regularized binary logistic regression.
//!
//! Minimizes `mean(softplus(z) - y z) + l2/2 |w|^2` with `z = Xw + b`; the
//! bias is not penalized. The optimizer is limited-memory BFGS with an
//! Armijo backtracking line search, so every accepted step lowers the
//! objective.

use std::collections::VecDeque;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 20_000;
const HISTORY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub l2_strength: f64,
}

impl LogisticModel {
    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Dimension {
                expected: self.weights.len(),
                found: x.ncols(),
            });
        }
        Ok(x.dot(&self.weights) + self.bias)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict_logistic(model: &LogisticModel, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    Ok(model.decision_function(x)?.mapv(sigmoid))
}

/// Regularized mean negative log-likelihood and its gradient; the last
/// gradient entry is the bias.
pub fn logistic_objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    l2_strength: f64,
    params: ArrayView1<'_, f64>,
) -> (f64, Array1<f64>) {
    let (n, k) = x.dim();
    let w = params.slice(ndarray::s![..k]);
    let b = params[k];
    let z = x.dot(&w) + b;
    let mut loss = 0.0;
    let mut resid = Array1::zeros(n);
    for i in 0..n {
        loss += softplus(z[i]) - y[i] * z[i];
        resid[i] = sigmoid(z[i]) - y[i];
    }
    let nf = n as f64;
    loss = loss / nf + 0.5 * l2_strength * w.dot(&w);
    let mut grad = Array1::zeros(k + 1);
    grad.slice_mut(ndarray::s![..k])
        .assign(&(x.t().dot(&resid) / nf + &w * l2_strength));
    grad[k] = resid.sum() / nf;
    (loss, grad)
}

/// Fit outcome with the objective value after every accepted iteration.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    pub objective_trace: Vec<f64>,
    pub gradient_norm: f64,
}

pub fn fit_logistic(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2_strength: f64) -> Result<LogisticModel> {
    fit_logistic_traced(x, y, l2_strength).map(|f| f.model)
}

pub fn fit_logistic_traced(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    l2_strength: f64,
) -> Result<LogisticFit> {
    let (n, k) = x.dim();
    if !(l2_strength > 0.0 && l2_strength.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "l2 strength must be positive, got {l2_strength}"
        )));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("logistic regression needs at least 2 samples".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("logistic targets must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateTarget(format!(
            "{positives} of {n} training targets are positive"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }

    let eval = |p: &Array1<f64>| logistic_objective(x, y, l2_strength, p.view());
    let mut params = Array1::<f64>::zeros(k + 1);
    let (mut f, mut g) = eval(&params);
    let mut trace = vec![f];
    let mut history: VecDeque<(Array1<f64>, Array1<f64>, f64)> = VecDeque::with_capacity(HISTORY);

    for _ in 0..MAX_ITERATIONS {
        let gnorm = g.dot(&g).sqrt();
        if gnorm <= GRADIENT_TOLERANCE {
            return Ok(finish(params, k, l2_strength, trace, gnorm));
        }
        let mut dir = two_loop(&g, &history);
        let mut slope = g.dot(&dir);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = -&g;
            slope = -g.dot(&g);
        }
        let mut step = 1.0;
        let (mut next, mut f_next, mut g_next);
        loop {
            next = &params + &(&dir * step);
            (f_next, g_next) = eval(&next);
            if f_next <= f + 1e-4 * step * slope {
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }
        if f_next.is_nan() || f_next > f {
            // No decrease is representable any more; the gradient is at round-off level.
            let gnorm = g.dot(&g).sqrt();
            if gnorm <= 1e3 * GRADIENT_TOLERANCE {
                log::debug!("logistic fit stalled at gradient norm {gnorm:.3e}");
                return Ok(finish(params, k, l2_strength, trace, gnorm));
            }
            return Err(Error::Convergence(format!(
                "line search failed with gradient norm {gnorm:.3e}"
            )));
        }
        let s = &next - &params;
        let yv = &g_next - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.dot(&s).sqrt() * yv.dot(&yv).sqrt() {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        params = next;
        f = f_next;
        g = g_next;
        trace.push(f);
    }
    Err(Error::Convergence(format!(
        "no convergence after {MAX_ITERATIONS} iterations (gradient norm {:.3e})",
        g.dot(&g).sqrt()
    )))
}

fn finish(params: Array1<f64>, k: usize, l2_strength: f64, trace: Vec<f64>, gnorm: f64) -> LogisticFit {
    LogisticFit {
        model: LogisticModel {
            weights: params.slice(ndarray::s![..k]).to_owned(),
            bias: params[k],
            l2_strength,
        },
        objective_trace: trace,
        gradient_norm: gnorm,
    }
}

/// L-BFGS two-loop recursion: approximate `-H^{-1} g`.
fn two_loop(g: &Array1<f64>, history: &VecDeque<(Array1<f64>, Array1<f64>, f64)>) -> Array1<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.scaled_add(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.scaled_add(a - b, s);
    }
    -q
}
