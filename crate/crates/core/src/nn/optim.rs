//! SGD with momentum and L2 decay on dense weights.

use super::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Coefficient of `l2 * |w|^2` added to the loss for parameters with `decay`.
    pub l2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and nonnegative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::invalid(format!("l2 coefficient {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

/// `v = momentum * v - lr * (g + 2 * l2 * w)`, then `w += v`.
pub fn sgd_step<T: Scalar>(param: &mut Param<T>, cfg: &OptimizerConfig) -> Result<()> {
    cfg.validate()?;
    let lr = T::lit(cfg.learning_rate);
    let mu = T::lit(cfg.momentum);
    let decay = if param.decay { T::lit(2.0 * cfg.l2) } else { T::zero() };
    let w = param.value.data_mut();
    let g = param.grad.data();
    let v = param.velocity.data_mut();
    for i in 0..w.len() {
        v[i] = mu * v[i] - lr * (g[i] + decay * w[i]);
        w[i] += v[i];
    }
    if !param.value.data().iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(w: f64) -> Param<f64> {
        Param::new(Tensor::from_vec(&[1], vec![w]).unwrap(), false)
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = scalar_param(1.5);
        p.grad = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        sgd_step(&mut p, &cfg).unwrap();
        assert_eq!(p.value.data(), &[1.5]);
    }

    #[test]
    fn quadratic_single_step() {
        // loss w^2, gradient 2w
        let mut p = scalar_param(1.0);
        p.grad = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            l2: 0.0,
        };
        sgd_step(&mut p, &cfg).unwrap();
        assert!((p.value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn convex_quadratic_decreases_after_burn_in() {
        // loss 3 (w - 2)^2, momentum on
        let cfg = OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 0.0,
        };
        let mut p = scalar_param(-4.0);
        let loss = |w: f64| 3.0 * (w - 2.0).powi(2);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let w = p.value.data()[0];
            p.grad = Tensor::from_vec(&[1], vec![6.0 * (w - 2.0)]).unwrap();
            sgd_step(&mut p, &cfg).unwrap();
            losses.push(loss(p.value.data()[0]));
        }
        assert!(losses.last().unwrap() < &1e-3);
        // heavy-ball oscillation dies out; compare block maxima past burn-in
        let block = |i: usize| losses[i * 20..(i + 1) * 20].iter().cloned().fold(0.0, f64::max);
        for i in 2..9 {
            assert!(block(i + 1) < block(i), "block {i}");
        }
    }

    #[test]
    fn l2_applies_only_to_decayed_params() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            l2: 0.5,
        };
        let mut plain = scalar_param(2.0);
        sgd_step(&mut plain, &cfg).unwrap();
        assert_eq!(plain.value.data(), &[2.0]);
        let mut decayed = scalar_param(2.0);
        decayed.decay = true;
        sgd_step(&mut decayed, &cfg).unwrap();
        assert!((decayed.value.data()[0] - (2.0 - 0.1 * 2.0 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn negative_learning_rate_is_rejected() {
        let mut p = scalar_param(1.0);
        let cfg = OptimizerConfig {
            learning_rate: -0.1,
            ..Default::default()
        };
        assert!(sgd_step(&mut p, &cfg).is_err());
    }
}
