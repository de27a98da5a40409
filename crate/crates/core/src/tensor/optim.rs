use serde::{Deserialize, Serialize};

use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// SGD hyperparameters with a single step decay of the learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    /// Learning rate of the feature extractor (conv blocks).
    pub lr_extractor: f64,
    /// Learning rate of the classifier head.
    pub lr_head: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    /// Fraction of the epoch budget after which the decay applies.
    pub decay_fraction: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr_extractor: 0.05,
            lr_head: 0.05,
            weight_decay: 5e-4,
            decay_factor: 0.1,
            decay_fraction: 0.8,
        }
    }
}

/// `ceil(fraction * total)` with a small slack so that e.g. `0.7 * 10`
/// is not pushed to 8 by rounding.
pub fn stage_epoch(fraction: f64, total_epochs: usize) -> usize {
    (fraction * total_epochs as f64 - 1e-9).ceil().max(0.0) as usize
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_extractor >= 0.0 && self.lr_head >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1]".into()));
        }
        if !(self.decay_fraction > 0.0 && self.decay_fraction <= 1.0) {
            return Err(Error::Config("decay_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn decay_epoch(&self, total_epochs: usize) -> usize {
        stage_epoch(self.decay_fraction, total_epochs)
    }

    /// Learning rate in effect at 0-based `epoch`.
    pub fn effective_lr(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        if epoch >= self.decay_epoch(total_epochs) {
            base * self.decay_factor
        } else {
            base
        }
    }
}

/// `p <- p - lr * (g + weight_decay * p)` for every parameter.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "sgd_step: {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    let (lr, wd) = (lit::<T>(lr), lit::<T>(weight_decay));
    for (p, g) in params.iter_mut().zip(grads) {
        p.expect_shape("sgd_step", g.shape())?;
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + wd * *pv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut ps = vec![Tensor::scalar(p)];
        sgd_step(&mut ps, &[Tensor::scalar(g)], lr, wd).unwrap();
        ps[0].data()[0]
    }

    #[test]
    fn plain_step() {
        assert!((step(1.0, 1.0, 0.1, 0.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only() {
        assert!((step(1.0, 0.0, 1.0, 5e-4) - 0.9995).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_noop() {
        assert_eq!(step(0.7, 3.0, 0.0, 5e-4), 0.7);
    }

    #[test]
    fn decays_after_eighty_percent() {
        let cfg = SgdConfig {
            lr_extractor: 1e-3,
            ..SgdConfig::default()
        };
        assert_eq!(cfg.decay_epoch(10), 8);
        for e in 0..8 {
            assert_eq!(cfg.effective_lr(1e-3, e, 10), 1e-3);
        }
        for e in 8..10 {
            assert!((cfg.effective_lr(1e-3, e, 10) - 1e-4).abs() < 1e-18);
        }
    }

    #[test]
    fn stage_epoch_boundaries() {
        assert_eq!(stage_epoch(0.7, 10), 7);
        assert_eq!(stage_epoch(0.7, 40), 28);
        assert_eq!(stage_epoch(0.8, 40), 32);
        assert_eq!(stage_epoch(0.7, 3), 3);
        assert_eq!(stage_epoch(1.0, 5), 5);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut ps = vec![Tensor::<f32>::zeros([1, 2, 1, 1])];
        assert!(sgd_step(&mut ps, &[Tensor::zeros([1, 1, 1, 1])], 0.1, 0.0).is_err());
    }
}
