//! Adam and the cyclic learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape("gradient tensor length".into()));
            }
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// How the epoch-wise reductions of the cyclic schedule combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// One 10% reduction held after the first epoch, then a further factor 10
    /// for the last three epochs.
    #[default]
    Held,
    /// 10% per epoch after the first, then a factor 10 for the last three.
    Compounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicLr {
    pub base_min: f64,
    pub base_max: f64,
    pub total_epochs: usize,
    #[serde(default)]
    pub reduction: Reduction,
}

impl Default for CyclicLr {
    fn default() -> Self {
        Self {
            base_min: 2e-4,
            base_max: 2e-3,
            total_epochs: 10,
            reduction: Reduction::Held,
        }
    }
}

/// Learning-rate bounds for a 1-based `epoch`.
pub fn cyclic_lr(epoch: usize, total: usize, base: (f64, f64), reduction: Reduction) -> Result<(f64, f64)> {
    if epoch == 0 || epoch > total {
        return Err(Error::invalid(format!("epoch {epoch} outside 1..={total}")));
    }
    let tail_start = total.saturating_sub(3) + 1;
    let factor = if epoch == 1 {
        1.0
    } else {
        match reduction {
            Reduction::Held if epoch >= tail_start => 0.9 * 0.1,
            Reduction::Held => 0.9,
            Reduction::Compounding if epoch >= tail_start => 0.9f64.powi(tail_start.max(2) as i32 - 2) * 0.1,
            Reduction::Compounding => 0.9f64.powi(epoch as i32 - 1),
        }
    };
    Ok((base.0 * factor, base.1 * factor))
}

impl CyclicLr {
    /// Triangular sweep min → max → min over the batches of one epoch.
    pub fn lr(&self, epoch: usize, batch: usize, n_batches: usize) -> Result<f64> {
        let (lo, hi) = cyclic_lr(epoch, self.total_epochs, (self.base_min, self.base_max), self.reduction)?;
        if n_batches <= 1 {
            return Ok(lo);
        }
        let s = batch as f64 / (n_batches - 1) as f64;
        Ok(lo + (hi - lo) * (1.0 - (2.0 * s - 1.0).abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cyclic(CyclicLr),
}

impl LrSchedule {
    pub fn lr(&self, base: f64, epoch: usize, batch: usize, n_batches: usize) -> Result<f64> {
        match self {
            LrSchedule::Constant => Ok(base),
            LrSchedule::Cyclic(c) => c.lr(epoch, batch, n_batches),
        }
    }
}
