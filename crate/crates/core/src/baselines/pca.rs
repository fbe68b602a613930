use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Principal axes kept for a target fraction of variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn to_matrix(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA input must be a non-empty matrix with equal-length rows".into()));
    }
    Ok(DMatrix::from_fn(x.len(), d, |i, j| x[i][j]))
}

/// Fits on the rows of `x`, keeping the fewest leading components whose
/// cumulative explained variance reaches `min_variance`.
///
/// For `n < d` the eigenproblem is solved on the `n x n` Gram matrix.
pub fn pca_fit(x: &[Vec<f64>], min_variance: f64) -> Result<PcaModel> {
    if x.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    if !(min_variance > 0.0 && min_variance <= 1.0) {
        return Err(Error::InvalidArgument(format!("min_variance {min_variance} outside (0, 1]")));
    }
    let mut m = to_matrix(x)?;
    let (n, d) = m.shape();
    let mean: Vec<f64> = (0..d).map(|j| m.column(j).mean()).collect();
    for j in 0..d {
        m.column_mut(j).add_scalar_mut(-mean[j]);
    }

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n < d {
        let gram = &m * m.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= 0.0 {
                continue;
            }
            let v = m.transpose() * eig.eigenvectors.column(k);
            let norm = v.norm();
            pairs.push((lambda, v.iter().map(|a| a / norm).collect()));
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        pairs.into_iter().unzip()
    } else {
        let cov = m.transpose() * &m;
        let eig = SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        idx.into_iter()
            .map(|k| (eig.eigenvalues[k].max(0.0), eig.eigenvectors.column(k).iter().copied().collect()))
            .unzip()
    };

    let total: f64 = values.iter().sum();
    let scale = values.first().copied().unwrap_or(0.0);
    if !(total > 0.0) || scale <= 1e-12 * n as f64 {
        return Err(Error::Data("PCA input has no variance (all rows identical)".into()));
    }
    let tol = scale * 1e-12;
    let mut components = Vec::new();
    let mut ratios = Vec::new();
    let mut cumulative = 0.0;
    for (lambda, v) in values.into_iter().zip(vectors) {
        if lambda <= tol || cumulative >= min_variance - 1e-12 {
            break;
        }
        cumulative += lambda / total;
        ratios.push(lambda / total);
        components.push(v);
    }
    Ok(PcaModel { mean, components, explained_variance_ratio: ratios })
}

/// `(x - mean) * components^T`.
pub fn pca_transform(model: &PcaModel, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = model.mean.len();
    x.iter()
        .map(|row| {
            if row.len() != d {
                return Err(Error::Shape(format!("PCA fitted on {d} features, row has {}", row.len())));
            }
            Ok(model
                .components
                .iter()
                .map(|c| c.iter().zip(row).zip(&model.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
                .collect())
        })
        .collect()
}

/// Maps reduced coordinates back to the input space.
pub fn pca_inverse(model: &PcaModel, z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|row| {
            let mut out = model.mean.clone();
            for (coef, comp) in row.iter().zip(&model.components) {
                out.iter_mut().zip(comp).for_each(|(o, c)| *o += coef * c);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn line_in_three_dimensions() {
        let x: Vec<Vec<f64>> = (0..20).map(|t| vec![t as f64, 2.0 * t as f64, -(t as f64)]).collect();
        let m = pca_fit(&x, 0.95).unwrap();
        assert_eq!(m.n_components(), 1);
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_needs_both_axes() {
        let mut rng = rng_from_seed(2);
        let x: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        assert_eq!(pca_fit(&x, 0.95).unwrap().n_components(), 2);
    }

    #[test]
    fn full_rank_round_trip_and_orthonormality() {
        let mut rng = rng_from_seed(3);
        for (n, d) in [(50, 10), (8, 30)] {
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let m = pca_fit(&x, 1.0).unwrap();
            assert_eq!(m.n_components(), d.min(n - 1));
            for (i, a) in m.components.iter().enumerate() {
                for (j, b) in m.components.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(a, b) - want).abs() < 1e-8);
                }
            }
            let back = pca_inverse(&m, &pca_transform(&m, &x).unwrap());
            for (r, s) in back.iter().zip(&x) {
                for (a, b) in r.iter().zip(s) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_data_is_rejected() {
        assert!(pca_fit(&vec![vec![1.0, 2.0]; 5], 0.95).is_err());
        assert!(pca_fit(&[vec![1.0, 2.0]], 0.95).is_err());
    }
}
