use crate::{Error, Result};

/// Gaussian product-kernel density estimate with a shared bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub train: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn new(train: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("KDE needs at least one training point".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
        }
        let d = train[0].len();
        if train.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("training rows differ in length".into()));
        }
        Ok(Self { train, bandwidth })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let h = self.bandwidth;
        let d = x.len() as f64;
        let exps: Vec<f64> = self
            .train
            .iter()
            .map(|t| -t.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * h * h))
            .collect();
        let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
        lse - (self.train.len() as f64).ln() - d * (h * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    /// Negative log-density; larger means more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        -self.log_density(x)
    }

    /// Score of every training point under the estimate built from the others.
    pub fn leave_one_out_scores(&self) -> Vec<f64> {
        if self.train.len() < 2 {
            return vec![f64::INFINITY; self.train.len()];
        }
        (0..self.train.len())
            .map(|i| {
                let mut rest = self.train.clone();
                let x = rest.swap_remove(i);
                Kde { train: rest, bandwidth: self.bandwidth }.score(&x)
            })
            .collect()
    }
}

/// Negative log-density of `x` under a KDE on `train` with bandwidth `h`.
pub fn kde_score(train: &[Vec<f64>], h: f64, x: &[f64]) -> Result<f64> {
    Ok(Kde::new(train.to_vec(), h)?.score(x))
}
