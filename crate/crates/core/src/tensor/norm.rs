//! Batch normalization over every axis except the last (channel) axis.

use super::{Function, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    /// Weight of the old running value in `running = m·running + (1−m)·batch`.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            epsilon: 1e-5,
            momentum: 0.99,
        }
    }
}

/// Which statistics normalize the input.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    /// Per-channel batch statistics (biased variance).
    Train,
    /// Supplied running statistics.
    Infer {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

/// Per-channel statistics of one training-mode call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64], momentum: f64) {
        for (r, b) in running_mean.iter_mut().zip(&self.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in running_var.iter_mut().zip(&self.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
    }
}

struct BatchNorm {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl Function for BatchNorm {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let c = inputs[0].last_dim();
        let gamma = inputs[1].data();
        let gy = grad.data();
        let m = (gy.len() / c) as f64;

        let mut g_gamma = vec![0.0; c];
        let mut g_beta = vec![0.0; c];
        for (i, (&g, &xh)) in gy.iter().zip(&self.x_hat).enumerate() {
            g_gamma[i % c] += g * xh;
            g_beta[i % c] += g;
        }

        let gx = needs[0].then(|| {
            let data = if self.train {
                // sums of dx_hat and dx_hat·x_hat per channel are gamma·g_beta and gamma·g_gamma
                gy.iter()
                    .zip(&self.x_hat)
                    .enumerate()
                    .map(|(i, (&g, &xh))| {
                        let ch = i % c;
                        gamma[ch] * self.inv_std[ch] / m
                            * (m * g - g_beta[ch] - xh * g_gamma[ch])
                    })
                    .collect()
            } else {
                gy.iter()
                    .enumerate()
                    .map(|(i, &g)| g * gamma[i % c] * self.inv_std[i % c])
                    .collect()
            };
            Tensor::new(inputs[0].shape().to_vec(), data).unwrap()
        });

        vec![
            gx,
            Some(Tensor::new(vec![c], g_gamma).unwrap()),
            Some(Tensor::new(vec![c], g_beta).unwrap()),
        ]
    }
}

impl Tape {
    /// Normalize each channel, then apply `gamma·x̂ + beta`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// fold them into its running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        cfg: BatchNormConfig,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.rank() < 2 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batchnorm: input {:?}, gamma {:?}, beta {:?}",
                xv.shape(),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let data = xv.data();
        let m = (data.len() / c) as f64;

        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                for (i, v) in data.iter().enumerate() {
                    mean[i % c] += v;
                }
                mean.iter_mut().for_each(|v| *v /= m);
                let mut var = vec![0.0; c];
                for (i, v) in data.iter().enumerate() {
                    let d = v - mean[i % c];
                    var[i % c] += d * d;
                }
                var.iter_mut().for_each(|v| *v /= m);
                (mean, var, true)
            }
            BatchNormMode::Infer {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::shape(format!(
                        "batchnorm: running stats of length {} for {c} channels",
                        running_mean.len()
                    )));
                }
                (running_mean.to_vec(), running_var.to_vec(), false)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.epsilon).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let x_hat: Vec<f64> = data
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % c]) * inv_std[i % c])
            .collect();
        let out: Vec<f64> = x_hat
            .iter()
            .enumerate()
            .map(|(i, xh)| g[i % c] * xh + b[i % c])
            .collect();

        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let flops = value.numel() as u64 * if train { 8 } else { 4 };
        let stats = train.then(|| BatchStats { mean, var });
        let var_out = self.push_op(
            value,
            &[x, gamma, beta],
            Box::new(BatchNorm {
                x_hat,
                inv_std,
                train,
            }),
            flops,
        );
        Ok((var_out, stats))
    }
}
