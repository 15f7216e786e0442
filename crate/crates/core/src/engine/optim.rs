use super::{Network, Scalar};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// SGD with cosine-annealed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub total_steps: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.1,
            lr_min: 0.0,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
            total_steps: 1,
        }
    }
}

impl SgdConfig {
    pub fn with_total_steps(mut self, total_steps: usize) -> Self {
        self.total_steps = total_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        Ok(())
    }
}

pub fn cosine_lr(step: usize, cfg: &SgdConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Domain(format!(
            "step {step} beyond schedule of {} steps",
            cfg.total_steps
        )));
    }
    let progress = step as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Nesterov/heavy-ball update with L2 decay folded into the gradient:
/// `g' = g + wd * w; v = mu * v + g'; w -= lr * (g' + mu * v)` (or `lr * v`
/// without Nesterov). Frozen groups are not touched.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, step: usize, cfg: &SgdConfig) -> Result<()> {
    let lr = T::from_f64_lossy(cosine_lr(step, cfg)?);
    let mu = T::from_f64_lossy(cfg.momentum);
    let wd = T::from_f64_lossy(cfg.weight_decay);
    for group in net.params_mut().iter_mut().filter(|g| !g.frozen) {
        let Some(grad) = group.tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        let buf = &mut group.momentum_buffer;
        for ((w, v), g) in group.tensor.values_mut().iter_mut().zip(buf.iter_mut()).zip(grad) {
            let g = g + wd * *w;
            *v = mu * *v + g;
            let update = if cfg.nesterov { g + mu * *v } else { *v };
            *w -= lr * update;
            if !w.is_finite() {
                return Err(Error::Numeric {
                    location: "sgd update".into(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize) -> SgdConfig {
        SgdConfig::default().with_total_steps(total)
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let c = cfg(100);
        assert!((cosine_lr(0, &c).unwrap() - 0.1).abs() < 1e-15);
        assert!(cosine_lr(100, &c).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, &c).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(cosine_lr(101, &c), Err(Error::Domain(_))));
    }

    #[test]
    fn cosine_is_non_increasing() {
        let c = cfg(37);
        let lrs: Vec<f64> = (0..=37).map(|s| cosine_lr(s, &c).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(SgdConfig { lr_min: 0.2, ..cfg(1) }.validate().is_err());
        assert!(SgdConfig { momentum: 1.0, ..cfg(1) }.validate().is_err());
        assert!(cfg(0).validate().is_err());
        assert!(cfg(5).validate().is_ok());
    }
}
