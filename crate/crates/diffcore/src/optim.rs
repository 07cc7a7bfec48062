use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Hyperparameters of [`AdamW`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Global L2 gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
            clip_norm: Some(1.0),
        }
    }
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adam with decoupled weight decay, linear warmup and global-norm clipping.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m1: BTreeMap<String, Vec<f32>>,
    m2: BTreeMap<String, Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m1: BTreeMap::new(),
            m2: BTreeMap::new(),
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate used for the update with index `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 {
            self.config.lr
        } else {
            self.config.lr * ((step + 1) as f64 / w as f64).min(1.0)
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor<f32>>,
    ) -> Result<StepStats> {
        let mut sq = 0.0f64;
        for (name, _) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| DiffError::Contract(format!("no gradient for `{name}`")))?;
            for &v in g.data() {
                if !v.is_finite() {
                    return Err(DiffError::NonFiniteGrad(name.clone()));
                }
                sq += f64::from(v) * f64::from(v);
            }
        }
        let grad_norm = sq.sqrt();
        let clip_scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let lr = self.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, w) in params.iter_mut() {
            let g = grads[name.as_str()].data();
            if g.len() != w.numel() {
                return Err(DiffError::Dimension(format!(
                    "gradient for `{name}` has {} values, parameter has {}",
                    g.len(),
                    w.numel()
                )));
            }
            let m1 = self.m1.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let m2 = self.m2.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((wv, &gv), a), b) in w.data_mut().iter_mut().zip(g).zip(m1.iter_mut()).zip(m2.iter_mut()) {
                let gd = f64::from(gv) * clip_scale;
                let ma = c.beta1 * f64::from(*a) + (1.0 - c.beta1) * gd;
                let mb = c.beta2 * f64::from(*b) + (1.0 - c.beta2) * gd * gd;
                *a = ma as f32;
                *b = mb as f32;
                let mut x = f64::from(*wv);
                x -= lr * c.weight_decay * x;
                x -= lr * (ma / bc1) / ((mb / bc2).sqrt() + c.eps);
                *wv = x as f32;
            }
        }
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            lr,
            grad_norm,
            clipped: clip_scale < 1.0,
        })
    }

    /// Moments as `name.m1` / `name.m2` entries plus the step counter under
    /// `optim.step`.
    pub fn state_entries(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for (suffix, map) in [("m1", &self.m1), ("m2", &self.m2)] {
            for (name, m) in map {
                out.push((
                    format!("{name}.{suffix}"),
                    Tensor::new(&[m.len()], m.clone()).expect("non-empty moment"),
                ));
            }
        }
        out.push(("optim.step".into(), Tensor::scalar(self.step as f32)));
        out
    }

    /// Rebuilds optimizer state from [`AdamW::state_entries`] output.
    pub fn restore(config: AdamWConfig, entries: &[(String, Tensor<f32>)]) -> Result<Self> {
        let mut opt = Self::new(config);
        for (name, t) in entries {
            if name == "optim.step" {
                opt.step = t.item() as u64;
            } else if let Some(base) = name.strip_suffix(".m1") {
                opt.m1.insert(base.to_string(), t.data().to_vec());
            } else if let Some(base) = name.strip_suffix(".m2") {
                opt.m2.insert(base.to_string(), t.data().to_vec());
            }
        }
        Ok(opt)
    }
}
