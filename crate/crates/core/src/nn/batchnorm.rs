//! Per-channel batch normalization over NCHW tensors.
//!
//! Training mode normalizes with the current minibatch's statistics (biased
//! variance) and exposes them so the owner can fold them into the running
//! averages; inference mode normalizes with the stored running averages.

use ndarray::{Array1, Array4, Axis};

use super::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// What the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub x_hat: Array4<f64>,
    pub inv_std: Array1<f64>,
    pub mode: Mode,
    /// Batch statistics observed in training mode, for running updates.
    pub batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x`; does not mutate the running averages (the trainer
    /// applies them via [`BatchNorm::fold_running`] so that forward passes
    /// stay side-effect free).
    pub(crate) fn forward(&self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, BnCache) {
        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                let mean = channel_mean(x);
                let var = channel_var(x, &mean);
                (mean.clone(), var.clone(), Some((mean, var)))
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), None),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

        let mut x_hat = x.clone();
        for (c, mut plane) in x_hat.axis_iter_mut(Axis(1)).enumerate() {
            let (m, is) = (mean[c], inv_std[c]);
            plane.mapv_inplace(|v| (v - m) * is);
        }
        let mut y = x_hat.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma[c], self.beta[c]);
            plane.mapv_inplace(|v| g * v + b);
        }
        (
            y,
            BnCache {
                x_hat,
                inv_std,
                mode,
                batch_stats,
            },
        )
    }

    /// Folds observed batch statistics into the running averages.
    pub(crate) fn fold_running(&mut self, cache: &BnCache) {
        if let Some((mean, var)) = &cache.batch_stats {
            self.running_mean
                .zip_mut_with(mean, |r, &m| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m);
            self.running_var
                .zip_mut_with(var, |r, &v| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v);
        }
    }

    /// Gradient through the normalization. Returns `(dx, dgamma, dbeta)`.
    pub(crate) fn backward(
        &self,
        cache: &BnCache,
        grad_out: &Array4<f64>,
    ) -> (Array4<f64>, Array1<f64>, Array1<f64>) {
        let channels = self.channels();
        let per_channel = (grad_out.len() / channels) as f64;

        let mut dgamma = Array1::zeros(channels);
        let mut dbeta = Array1::zeros(channels);
        for c in 0..channels {
            let dy = grad_out.index_axis(Axis(1), c);
            let xh = cache.x_hat.index_axis(Axis(1), c);
            dbeta[c] = dy.sum();
            dgamma[c] = (&dy * &xh).sum();
        }

        let mut dx = grad_out.clone();
        match cache.mode {
            Mode::Train => {
                for (c, mut plane) in dx.axis_iter_mut(Axis(1)).enumerate() {
                    let scale = self.gamma[c] * cache.inv_std[c] / per_channel;
                    let (db, dg) = (dbeta[c], dgamma[c]);
                    let xh = cache.x_hat.index_axis(Axis(1), c);
                    ndarray::Zip::from(&mut plane).and(&xh).for_each(|d, &x_hat| {
                        *d = scale * (per_channel * *d - db - x_hat * dg);
                    });
                }
            }
            Mode::Eval => {
                for (c, mut plane) in dx.axis_iter_mut(Axis(1)).enumerate() {
                    let scale = self.gamma[c] * cache.inv_std[c];
                    plane.mapv_inplace(|v| v * scale);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

fn channel_mean(x: &Array4<f64>) -> Array1<f64> {
    let channels = x.dim().1;
    let per_channel = (x.len() / channels) as f64;
    Array1::from_iter(
        x.axis_iter(Axis(1))
            .map(|plane| plane.sum() / per_channel),
    )
}

fn channel_var(x: &Array4<f64>, mean: &Array1<f64>) -> Array1<f64> {
    let channels = x.dim().1;
    let per_channel = (x.len() / channels) as f64;
    Array1::from_iter(x.axis_iter(Axis(1)).enumerate().map(|(c, plane)| {
        let m = mean[c];
        plane.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / per_channel
    }))
}
