//! Adam with bias correction and the stepped learning-rate schedule.

use crate::branching::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `lr0` through epoch `t0`, then halved every 10 epochs. Epochs are 1-based.
pub fn lr_at(epoch: usize, lr0: f64, t0: usize) -> f64 {
    if epoch <= t0 {
        lr0
    } else {
        lr0 * 0.5f64.powi(((epoch - t0) / 10) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates.
    pub step: u64,
    /// First and second moments, aligned with the model's parameters;
    /// `None` for non-trainable buffers.
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(params: &[Parameter], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &Parameter| p.trainable.then(|| Tensor::zeros(p.value.shape().to_vec()));
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    /// One update. Any non-finite gradient aborts the step before anything
    /// changes and names every affected parameter.
    pub fn update(&mut self, params: &mut [Parameter], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Model(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        let bad: Vec<String> = params
            .iter()
            .zip(grads)
            .filter(|(_, g)| g.as_ref().is_some_and(|g| !g.is_finite()))
            .map(|(p, _)| p.name.clone())
            .collect();
        if !bad.is_empty() {
            return Err(Error::AffectedParams(bad));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (Some(g), Some(m), Some(v)) = (g, self.m[i].as_mut(), self.v[i].as_mut()) else {
                continue;
            };
            let pd = p.value.data_mut();
            for (((w, &g), m), v) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
