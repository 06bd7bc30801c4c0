//! TD targets and the loss operators that train the value decomposition.
//!
//! All TD losses share the form `mean(w * (q_jt - y)^2)` where both `y` and the
//! per-sample weight `w` are constants with respect to the parameters. They
//! differ only in how `w` is chosen:
//!
//! * plain MSE: `w = 1`;
//! * optimistic weighting: `w = 1` when `q_jt < y`, otherwise `alpha`;
//! * correntropy weighting: `w = exp(-max(0, q_jt - y)^2 / (2 sigma^2))`, so
//!   underestimates keep full weight while large overestimates (targets far
//!   below the current estimate, such as miscoordination penalties) are
//!   suppressed smoothly instead of pulling the estimate down linearly.

use crate::error::{Error, Result};

/// Gaussian kernel bandwidth; always strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct KernelBandwidth(f64);

impl KernelBandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && !sigma.is_nan() {
            Ok(KernelBandwidth(sigma))
        } else {
            Err(Error::config("sigma", format!("must be > 0, got {sigma}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `y = r + gamma * (1 - t) * q_next`.
pub fn td_target(reward: f64, gamma: f64, terminal: bool, q_next_target: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * q_next_target
    }
}

pub fn mcvd_weight(q_jt: f64, y: f64, sigma: KernelBandwidth) -> f64 {
    let e = (q_jt - y).max(0.0);
    let s = sigma.get();
    (-e * e / (2.0 * s * s)).exp()
}

pub fn ow_weight(q_jt: f64, y: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if q_jt < y { 1.0 } else { alpha })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("alpha", format!("must lie in (0, 1], got {alpha}")))
    }
}

/// Which weighting the TD loss uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TdWeighting {
    Mse,
    Optimistic { alpha: f64 },
    Correntropy { sigma: KernelBandwidth },
}

impl TdWeighting {
    pub fn weight(&self, q_jt: f64, y: f64) -> Result<f64> {
        match *self {
            TdWeighting::Mse => Ok(1.0),
            TdWeighting::Optimistic { alpha } => ow_weight(q_jt, y, alpha),
            TdWeighting::Correntropy { sigma } => Ok(mcvd_weight(q_jt, y, sigma)),
        }
    }
}

/// A batch loss and its gradient with respect to each prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `mean(w * (pred - y)^2)` with `w` and `y` held constant.
pub fn weighted_squared_loss(pred: &[f64], y: &[f64], weights: &[f64]) -> Result<LossValue> {
    if pred.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    if pred.len() != y.len() || pred.len() != weights.len() {
        return Err(Error::Usage("prediction, target and weight lengths differ".into()));
    }
    let m = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((&q, &t), &w)| {
            let e = q - t;
            loss += w * e * e;
            2.0 * w * e / m
        })
        .collect();
    Ok(LossValue {
        loss: loss / m,
        grad,
        weights: weights.to_vec(),
    })
}

pub fn td_loss(q_jt: &[f64], y: &[f64], weighting: TdWeighting) -> Result<LossValue> {
    let weights = q_jt
        .iter()
        .zip(y)
        .map(|(&q, &t)| weighting.weight(q, t))
        .collect::<Result<Vec<_>>>()?;
    weighted_squared_loss(q_jt, y, &weights)
}

pub fn mcvd_td_loss(q_jt: &[f64], y: &[f64], sigma: KernelBandwidth) -> Result<LossValue> {
    td_loss(q_jt, y, TdWeighting::Correntropy { sigma })
}

pub fn weighted_td_loss(q_jt: &[f64], y: &[f64], alpha: f64) -> Result<LossValue> {
    td_loss(q_jt, y, TdWeighting::Optimistic { alpha })
}

pub fn mse_td_loss(q_jt: &[f64], y: &[f64]) -> Result<LossValue> {
    td_loss(q_jt, y, TdWeighting::Mse)
}

/// Regression loss of the joint action-value approximation onto `y`.
pub fn joint_approx_loss(q_hat: &[f64], y: &[f64]) -> Result<LossValue> {
    mse_td_loss(q_hat, y)
}

/// Sample correntropy estimate `(2 sigma^2 / M) * sum exp(-e^2 / (2 sigma^2))`.
pub fn mcc_sample_correntropy(errors: &[f64], sigma: KernelBandwidth) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Usage("correntropy of an empty error vector".into()));
    }
    let s2 = sigma.get() * sigma.get();
    let sum: f64 = errors.iter().map(|e| (-e * e / (2.0 * s2)).exp()).sum();
    Ok(2.0 * s2 * sum / errors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sigma(s: f64) -> KernelBandwidth {
        KernelBandwidth::new(s).unwrap()
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(KernelBandwidth::new(0.0).is_err());
        assert!(KernelBandwidth::new(-1.0).is_err());
        assert!(KernelBandwidth::new(f64::NAN).is_err());
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(8.0, 0.99, true, 123.0), 8.0);
        assert_relative_eq!(td_target(0.0, 0.9, false, 10.0), 9.0);
        assert_eq!(td_target(2.5, 0.0, false, 40.0), 2.5);
    }

    #[test]
    fn mcvd_weight_cases() {
        assert_eq!(mcvd_weight(7.0, 7.0, sigma(1.0)), 1.0);
        assert_eq!(mcvd_weight(3.0, 7.0, sigma(1.0)), 1.0);
        assert_relative_eq!(mcvd_weight(9.0, 7.0, sigma(1.0)), (-2.0f64).exp());
        assert_relative_eq!(mcvd_weight(9.0, 7.0, sigma(1.0)), 0.1353352832366127);
        assert!(1.0 - mcvd_weight(9.0, 7.0, sigma(1e6)) < 1e-11);
    }

    #[test]
    fn mcvd_loss_cases() {
        let l = mcvd_td_loss(&[7.0], &[7.0], sigma(1.0)).unwrap();
        assert_eq!((l.loss, l.grad[0]), (0.0, 0.0));
        let l = mcvd_td_loss(&[5.0], &[7.0], sigma(1.0)).unwrap();
        assert_eq!((l.loss, l.grad[0]), (4.0, -4.0));
        let l = mcvd_td_loss(&[9.0], &[7.0], sigma(1.0)).unwrap();
        let w = (-2.0f64).exp();
        assert_relative_eq!(l.loss, 4.0 * w);
        assert_relative_eq!(l.loss, 0.5413411329464508);
        // derivative of the unclipped correntropy term, 2 * exp(-e^2/2s^2) * e
        assert_relative_eq!(l.grad[0], 2.0 * w * 2.0);
        assert!(mcvd_td_loss(&[], &[], sigma(1.0)).is_err());
    }

    #[test]
    fn ow_weight_cases() {
        assert_eq!(ow_weight(5.0, 6.0, 0.1).unwrap(), 1.0);
        assert_eq!(ow_weight(6.0, 5.0, 0.1).unwrap(), 0.1);
        assert_eq!(ow_weight(5.0, 5.0, 0.5).unwrap(), 0.5);
        assert!(ow_weight(1.0, 0.0, 0.0).is_err());
        assert!(ow_weight(1.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn weighted_loss_cases() {
        let q = [9.0, -1.0, 3.0];
        let y = [7.0, 2.0, 3.5];
        assert_eq!(weighted_td_loss(&q, &y, 1.0).unwrap(), mse_td_loss(&q, &y).unwrap());
        let l = weighted_td_loss(&[9.0], &[7.0], 0.5).unwrap();
        assert_relative_eq!(l.loss, 2.0);
        assert_relative_eq!(l.grad[0].abs(), 2.0);
        let l = weighted_td_loss(&[9.0], &[7.0], 0.001).unwrap();
        assert_relative_eq!(l.grad[0].abs(), 0.004);
        assert!(weighted_td_loss(&[], &[], 0.5).is_err());
    }

    #[test]
    fn joint_loss_cases() {
        assert_eq!(joint_approx_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().loss, 0.0);
        assert_eq!(joint_approx_loss(&[1.0, 3.0], &[2.0, 2.0]).unwrap().loss, 1.0);
        assert!(joint_approx_loss(&[], &[]).is_err());
    }

    #[test]
    fn correntropy_cases() {
        assert_relative_eq!(mcc_sample_correntropy(&[0.0, 0.0], sigma(1.0)).unwrap(), 2.0);
        assert_relative_eq!(
            mcc_sample_correntropy(&[2f64.sqrt()], sigma(1.0)).unwrap(),
            2.0 * (-1.0f64).exp()
        );
        assert!(mcc_sample_correntropy(&[], sigma(1.0)).is_err());
    }
}
