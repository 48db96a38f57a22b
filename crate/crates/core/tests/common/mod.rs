//! Independent reference implementations and fixture generators shared by
//! the integration tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

// --- metrics -------------------------------------------------------------

/// Pair-concordance AUC: P(score_pos > score_neg) + 0.5 P(tie), over all pairs.
pub fn brute_force_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1.0).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0.0).map(|(s, _)| *s).collect();
    let mut wins = 0u64;
    let mut ties = 0u64;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / (pos.len() as f64 * neg.len() as f64)
}

/// Covariance over the product of standard deviations, two-pass.
pub fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn direct_nrmse(t: &[f64], p: &[f64]) -> f64 {
    let mse = t.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.len() as f64;
    let max = t.iter().cloned().fold(f64::MIN, f64::max);
    let min = t.iter().cloned().fold(f64::MAX, f64::min);
    mse.sqrt() / (max - min)
}

// --- linear algebra --------------------------------------------------------

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut m = a.clone();
    let mut r = b.clone();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs())).unwrap();
        if piv != col {
            for k in 0..n {
                m.swap([col, k], [piv, k]);
            }
            r.swap(col, piv);
        }
        for i in col + 1..n {
            let f = m[[i, col]] / m[[col, col]];
            if f != 0.0 {
                for k in col..n {
                    m[[i, k]] -= f * m[[col, k]];
                }
                r[i] -= f * r[col];
            }
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[[i, k]] * x[k]).sum();
        x[i] = (r[i] - s) / m[[i, i]];
    }
    x
}

/// Ordinary least squares with intercept via the normal equations of the
/// centered design. Returns `(weights, bias)`.
pub fn least_squares(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> (Array1<f64>, f64) {
    let xm = x.mean_axis(Axis(0)).unwrap();
    let ym = y.mean().unwrap();
    let xc = &x - &xm;
    let yc = &y - ym;
    let w = solve(&xc.t().dot(&xc), &xc.t().dot(&yc));
    let b = ym - xm.dot(&w);
    (w, b)
}

/// Largest violation of the lasso optimality conditions for
/// `(1/2n)|y - Xw - b|^2 + alpha |w|_1`, including the intercept condition.
pub fn lasso_kkt_violation(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, w: &Array1<f64>, b: f64, alpha: f64) -> f64 {
    let n = x.nrows() as f64;
    let resid = &y - &x.dot(w) - b;
    let grad = x.t().dot(&resid) / n;
    let mut worst = (resid.sum() / n).abs();
    for (j, g) in grad.iter().enumerate() {
        let v = if w[j] != 0.0 {
            (g - alpha * w[j].signum()).abs()
        } else {
            (g.abs() - alpha).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Damped Newton's method on `mean(log(1+e^z) - y z) + l2/2 |w|^2`.
/// Returns `(weights, bias)`.
pub fn newton_logistic(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64) -> (Array1<f64>, f64) {
    let (n, k) = x.dim();
    let mut xa = Array2::ones((n, k + 1));
    xa.slice_mut(ndarray::s![.., ..k]).assign(&x);
    let objective = |theta: &Array1<f64>| -> f64 {
        let z = xa.dot(theta);
        let nll: f64 = z
            .iter()
            .zip(y)
            .map(|(&z, &t)| (if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }) - t * z)
            .sum::<f64>()
            / n as f64;
        nll + 0.5 * l2 * theta.slice(ndarray::s![..k]).dot(&theta.slice(ndarray::s![..k]))
    };
    let mut theta = Array1::zeros(k + 1);
    for _ in 0..200 {
        let p = xa.dot(&theta).mapv(sigmoid);
        let mut grad = xa.t().dot(&(&p - &y)) / n as f64;
        for j in 0..k {
            grad[j] += l2 * theta[j];
        }
        let wts = &p * &(1.0 - &p);
        let mut hess = Array2::zeros((k + 1, k + 1));
        for i in 0..n {
            let row = xa.row(i);
            for a in 0..=k {
                for b in 0..=k {
                    hess[[a, b]] += wts[i] * row[a] * row[b] / n as f64;
                }
            }
        }
        for j in 0..k {
            hess[[j, j]] += l2;
        }
        let step = solve(&hess, &grad);
        let f0 = objective(&theta);
        let mut t = 1.0;
        let mut next = &theta - &(&step * t);
        while objective(&next) > f0 - 1e-4 * t * grad.dot(&step) && t > 1e-12 {
            t *= 0.5;
            next = &theta - &(&step * t);
        }
        let moved = (&next - &theta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        theta = next;
        if moved < 1e-13 {
            break;
        }
    }
    (theta.slice(ndarray::s![..k]).to_owned(), theta[k])
}

/// One-sided Jacobi SVD of `a` (n x d, n >= d). Returns singular values in
/// decreasing order and the matching right singular vectors as rows.
pub fn jacobi_svd(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = a.ncols();
    let mut u = a.clone();
    let mut v = Array2::<f64>::eye(d);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = u.column(p).dot(&u.column(p));
                let beta = u.column(q).dot(&u.column(q));
                let gamma = u.column(p).dot(&u.column(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut u, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[[i, p]], m[[i, q]]);
                        m[[i, p]] = c * x - s * y;
                        m[[i, q]] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..d).map(|j| u.column(j).dot(&u.column(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s = order.iter().map(|&j| norms[j]).collect();
    let mut vt = Array2::zeros((d, d));
    for (r, &j) in order.iter().enumerate() {
        vt.row_mut(r).assign(&v.column(j));
    }
    (s, vt)
}

// --- fixtures --------------------------------------------------------------

/// Scores with injected ties and random binary labels containing both classes.
pub fn auc_fixture(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut scores: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    // Round a random subset onto a coarse grid so that ties occur.
    for s in scores.iter_mut() {
        if rng.random_bool(0.4) {
            *s = (*s * 4.0).round() / 4.0;
        }
    }
    let mut labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.35) { 1.0 } else { 0.0 }).collect();
    labels[0] = 1.0;
    labels[n - 1] = 0.0;
    (scores, labels)
}
