//! Central finite-difference verification of recorded gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose `+h` or `-h` probe crossed a kink.
    pub skipped: usize,
}

/// Denominator floor for the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

fn eval<F>(inputs: &[Tensor], build: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
    let loss = build(&mut g, &vars)?;
    Ok((g.item(loss), g.branch_pattern()))
}

/// Compares the gradient of the scalar built by `build` against central
/// differences with step `h`, for every element of every input.
///
/// A coordinate is skipped when either probe lands on a different side of a
/// leaky-ReLU or hinge kink than the unperturbed point.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
    }
    let mut g = Graph::new();
    let leaves: Vec<Tensor> = inputs.iter().cloned().map(Tensor::with_grad).collect();
    let vars: Vec<Var> = leaves.iter().map(|t| g.input(t)).collect();
    let loss = build(&mut g, &vars)?;
    let base_pattern = g.branch_pattern();
    let grads = g.backward(loss)?;

    let mut out = GradCheck { max_rel_err: 0.0, checked: 0, skipped: 0 };
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaves with requires_grad always get a gradient").to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = probe[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let (fp, pp) = eval(&probe, &build)?;
            probe[i].data_mut()[j] = x0 - h;
            let (fm, pm) = eval(&probe, &build)?;
            probe[i].data_mut()[j] = x0;
            if pp != base_pattern || pm != base_pattern {
                out.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            out.max_rel_err = out.max_rel_err.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check_gradients(&[x], 1e-4, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn kink_is_skipped() {
        let x = Tensor::new([2], vec![1e-6, 1.0]).unwrap();
        let r = check_gradients(&[x], 1e-4, |g, v| {
            let a = g.leaky_relu(v[0], 0.1)?;
            g.sum(a)
        })
        .unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
    }
}
