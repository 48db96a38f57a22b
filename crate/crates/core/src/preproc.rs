//! PCA, z-scoring and cosine similarity.
//!
//! Both fitted models are meant to be fit on a training split and then
//! applied unchanged to held-out rows.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean computed as offsets from the first element. Exact for constant input.
pub(crate) fn shifted_mean<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut iter = values.into_iter();
    let Some(&first) = iter.next() else {
        return f64::NAN;
    };
    let (mut sum, mut n) = (0.0, 1usize);
    for &v in iter {
        sum += v - first;
        n += 1;
    }
    first + sum / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k x D`, orthonormal rows sorted by explained variance.
    pub components: Array2<f64>,
    /// Sample variance (`1/(n-1)`) of the fit data along each component.
    pub explained_variance: Array1<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps scores back into the input space.
    pub fn reconstruct(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        z.dot(&self.components) + &self.mean
    }
}

/// Top-`k` principal directions of `x`, truncating with a warning when the
/// centered data has fewer than `k` nonzero singular values.
pub fn fit_pca(x: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel> {
    fit_pca_with(x, k, false)
}

/// As [`fit_pca`]; with `strict` a rank below `k` is an error.
pub fn fit_pca_with(x: ArrayView2<'_, f64>, k: usize, strict: bool) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "PCA target dimension {k} outside 1..={}",
            n.min(d)
        )));
    }
    let mean: Array1<f64> = x.axis_iter(Axis(1)).map(|c| shifted_mean(c.iter())).collect();
    let centered = &x - &mean;
    let m = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let singular = svd.singular_values;

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));
    let s_max = singular[order[0]];
    let tol = s_max * (n.max(d) as f64) * f64::EPSILON;
    let rank = order.iter().take_while(|&&i| singular[i] > tol).count();
    if rank == 0 {
        return Err(Error::Undefined("PCA input has zero variance".into()));
    }
    let k_eff = if rank < k {
        if strict {
            return Err(Error::InvalidArgument(format!(
                "data has rank {rank}, fewer than the {k} requested components"
            )));
        }
        log::warn!("PCA: data has rank {rank}; keeping {rank} of {k} requested components");
        rank
    } else {
        k
    };

    let mut components = Array2::zeros((k_eff, d));
    let mut explained_variance = Array1::zeros(k_eff);
    for (c, &i) in order.iter().take(k_eff).enumerate() {
        let mut row: Array1<f64> = (0..d).map(|j| v_t[(i, j)]).collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, v)| if v.abs() > best.1 { (j, v.abs()) } else { best })
            .0;
        if row[pivot] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
        components.row_mut(c).assign(&row);
        explained_variance[c] = singular[i] * singular[i] / (n - 1) as f64;
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Projects centered rows onto the fitted components.
pub fn apply_pca(model: &PcaModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    Ok((&x - &model.mean).dot(&model.components.t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Array1<f64>,
    /// Population standard deviations.
    pub stds: Array1<f64>,
    /// Columns with (numerically) zero spread; they map to 0.
    pub zero_std: Vec<bool>,
}

impl Standardizer {
    pub fn has_degenerate(&self) -> bool {
        self.zero_std.iter().any(|&z| z)
    }

    pub fn invert_column(&self, j: usize, z: f64) -> f64 {
        z * self.stds[j] + self.means[j]
    }
}

pub fn fit_standardizer(x: ArrayView2<'_, f64>) -> Result<Standardizer> {
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardizer needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    let mut means = Array1::zeros(x.ncols());
    let mut stds = Array1::zeros(x.ncols());
    let mut zero_std = vec![false; x.ncols()];
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let (mean, std, degenerate) = column_moments(col);
        means[j] = mean;
        stds[j] = std;
        zero_std[j] = degenerate;
    }
    Ok(Standardizer {
        means,
        stds,
        zero_std,
    })
}

pub(crate) fn column_moments(col: ArrayView1<'_, f64>) -> (f64, f64, bool) {
    let mean = shifted_mean(col.iter());
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
    let std = var.sqrt();
    let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (mean, std, std <= 1e-12 * scale || std == 0.0)
}

pub fn apply_standardizer(s: &Standardizer, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != s.means.len() {
        return Err(Error::Dimension {
            expected: s.means.len(),
            found: x.ncols(),
        });
    }
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        if s.zero_std[j] {
            col.fill(0.0);
        } else {
            let (m, sd) = (s.means[j], s.stds[j]);
            col.mapv_inplace(|v| (v - m) / sd);
        }
    }
    Ok(out)
}

pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("cosine similarity of a zero vector".into()));
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn line_data_has_one_direction() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [-3.0, -3.0]];
        let pca = fit_pca(x.view(), 1).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(pca.components[[0, 0]], h, epsilon = 1e-12);
        assert_abs_diff_eq!(pca.components[[0, 1]], h, epsilon = 1e-12);
        // Rank 1: asking for 2 truncates, strict mode refuses.
        assert_eq!(fit_pca(x.view(), 2).unwrap().k(), 1);
        assert!(fit_pca_with(x.view(), 2, true).is_err());
    }

    #[test]
    fn full_basis_reconstructs() {
        let x = random(12, 5, 3);
        let pca = fit_pca(x.view(), 5).unwrap();
        let z = apply_pca(&pca, x.view()).unwrap();
        let back = pca.reconstruct(z.view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_is_centered_with_matching_variance() {
        let x = random(30, 6, 11);
        let pca = fit_pca(x.view(), 4).unwrap();
        let z = apply_pca(&pca, x.view()).unwrap();
        for (c, col) in z.axis_iter(Axis(1)).enumerate() {
            let mean = col.sum() / 30.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 29.0;
            assert_abs_diff_eq!(var, pca.explained_variance[c], epsilon = 1e-8);
        }
        let at_mean = apply_pca(&pca, pca.mean.view().insert_axis(Axis(0))).unwrap();
        assert!(at_mean.iter().all(|v| v.abs() < 1e-12));
        for w in pca.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn sign_convention() {
        let x = random(20, 7, 5);
        let pca = fit_pca(x.view(), 5).unwrap();
        for row in pca.components.rows() {
            let max = row.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn pca_errors() {
        let x = random(4, 3, 1);
        assert!(fit_pca(x.view(), 0).is_err());
        assert!(fit_pca(x.view(), 4).is_err());
        assert!(fit_pca(x.slice(ndarray::s![..1, ..]), 1).is_err());
        let pca = fit_pca(x.view(), 2).unwrap();
        assert!(matches!(apply_pca(&pca, random(2, 4, 1).view()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn standardizer_basics() {
        let x = array![[0.0, 5.0], [2.0, 5.0]];
        let s = fit_standardizer(x.view()).unwrap();
        assert_eq!(s.means, array![1.0, 5.0]);
        assert_eq!(s.stds[0], 1.0);
        assert_eq!(s.stds[1], 0.0);
        assert_eq!(s.zero_std, vec![false, true]);
        let z = apply_standardizer(&s, x.view()).unwrap();
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
        // Constant but inexact-mean column is still flagged.
        let c = array![[0.1], [0.1], [0.1]];
        assert!(fit_standardizer(c.view()).unwrap().zero_std[0]);
    }

    #[test]
    fn standardized_fit_data() {
        let x = random(40, 4, 9) * 7.0 + 3.0;
        let s = fit_standardizer(x.view()).unwrap();
        let z = apply_standardizer(&s, x.view()).unwrap();
        for col in z.axis_iter(Axis(1)) {
            let mean = col.sum() / 40.0;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0).sqrt();
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(std, 1.0, epsilon = 1e-10);
        }
        // Re-fitting on standardized data is (numerically) the identity.
        let s2 = fit_standardizer(z.view()).unwrap();
        let zz = apply_standardizer(&s2, z.view()).unwrap();
        for (a, b) in zz.iter().zip(z.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        // Applying the original standardizer twice is not.
        let twice = apply_standardizer(&s, z.view()).unwrap();
        let diff = twice.iter().zip(z.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 0.1);
    }

    #[test]
    fn cosine_values() {
        let v = array![0.3, -2.0, 5.0];
        assert_abs_diff_eq!(cosine_similarity(v.view(), v.view()).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(array![1.0, 1.0].view(), array![1.0, 0.0].view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-8
        );
        assert!(matches!(
            cosine_similarity(array![0.0, 0.0].view(), array![1.0, 0.0].view()),
            Err(Error::Undefined(_))
        ));
        assert!(cosine_similarity(array![1.0].view(), array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x = random(10, 3, 2);
        let pca = fit_pca(x.view(), 2).unwrap();
        let back: PcaModel = serde_json::from_str(&serde_json::to_string(&pca).unwrap()).unwrap();
        assert_eq!(back, pca);
        let s = fit_standardizer(x.view()).unwrap();
        let back: Standardizer = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
