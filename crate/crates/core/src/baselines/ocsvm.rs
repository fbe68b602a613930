use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dual solution of the one-class SVM with an RBF kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcSvmModel {
    /// Dual coefficient of every training point.
    pub alphas: Vec<f64>,
    /// Training points with a non-zero coefficient, paired with it.
    pub support_vectors: Vec<(f64, Vec<f64>)>,
    pub gamma: f64,
    pub nu: f64,
    pub rho: f64,
    pub iterations: usize,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

const KKT_TOL: f64 = 1e-4;

/// Solves `min 1/2 a^T K a` subject to `0 <= a_i <= 1/(nu n)` and `sum a = 1`
/// with maximal-violating-pair SMO.
pub fn ocsvm_fit(x: &[Vec<f64>], gamma: f64, nu: f64) -> Result<OcSvmModel> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} must be positive")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu {nu} outside (0, 1]")));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("OC-SVM needs training data".into()));
    }
    let c = 1.0 / (nu * n as f64);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }

    let mut alpha = vec![0.0; n];
    let mut remaining: f64 = 1.0;
    for a in alpha.iter_mut() {
        let take = remaining.min(c);
        *a = take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }
    let mut grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j] * alpha[j]).sum()).collect();

    let max_iter = (100 * n).max(1_000_000);
    let mut iterations = 0;
    let (mut up, mut low);
    loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < c && grad[t] < gmin {
                gmin = grad[t];
                i = t;
            }
            if alpha[t] > 0.0 && grad[t] > gmax {
                gmax = grad[t];
                j = t;
            }
        }
        up = gmin;
        low = gmax;
        if i == usize::MAX || j == usize::MAX || gmax - gmin < KKT_TOL {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations, residual: gmax - gmin });
        }
        iterations += 1;
        let curvature = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let mut delta = (grad[j] - grad[i]) / curvature;
        delta = delta.min(c - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        if alpha[j] < 1e-15 {
            alpha[j] = 0.0;
        }
        for t in 0..n {
            grad[t] += delta * (k[t * n + i] - k[t * n + j]);
        }
    }

    let free: Vec<f64> = (0..n).filter(|&t| alpha[t] > 1e-12 && alpha[t] < c - 1e-12).map(|t| grad[t]).collect();
    let rho = if free.is_empty() {
        if up.is_finite() && low.is_finite() { (up + low) / 2.0 } else { grad.iter().sum::<f64>() / n as f64 }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let support_vectors = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| (alpha[t], x[t].clone())).collect();
    Ok(OcSvmModel { alphas: alpha, support_vectors, gamma, nu, rho, iterations })
}

/// `rho - sum_i a_i k(x_i, x)`; positive means outside the learned region.
pub fn ocsvm_score(model: &OcSvmModel, x: &[f64]) -> f64 {
    let s: f64 = model.support_vectors.iter().map(|(a, sv)| a * rbf(sv, x, model.gamma)).sum();
    model.rho - s
}
