use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam optimiser state with bias correction and L2 weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update over every parameter, then clears their gradients.
    ///
    /// `weight_decay * w` is added to the gradient before the moment update,
    /// which is the derivative of `weight_decay / 2 * |w|^2`.
    pub fn step<'a, I>(&mut self, params: I, weight_decay: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor)>,
    {
        let params: Vec<(&str, &mut Tensor)> = params.into_iter().collect();
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Gradient(format!("parameter `{name}` has no gradient")));
        }
        if self.moments.is_empty() {
            self.moments =
                params.iter().map(|(_, t)| (vec![0.0; t.len()], vec![0.0; t.len()])).collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Gradient(format!(
                "optimizer tracks {} parameters, {} supplied",
                self.moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((name, tensor), (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            if m.len() != tensor.len() {
                return Err(Error::Gradient(format!("parameter `{name}` changed size")));
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i] + weight_decay * data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}
