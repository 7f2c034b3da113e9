use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;
use crate::unet::ModelGraph;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter at step `t ≥ 1`.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Moments for every model parameter, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, model: &ModelGraph) -> Self {
        let zeros: Vec<Vec<f64>> = model.parameters().values().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. If any gradient is non-finite, nothing changes
    /// and the error names the first offending parameter.
    pub fn step(&mut self, model: &mut ModelGraph, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "expected {} gradients, got {}",
                self.m.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in model.parameters().iter().zip(grads) {
            if g.len() != p.numel() {
                return Err(dim_err!("gradient for {name} has {} values, parameter {}", g.len(), p.numel()));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at index {i} of parameter {name}",
                    g[i]
                )));
            }
        }
        self.step += 1;
        for (((_, p), g), (m, v)) in model
            .parameters_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = Arc::make_mut(p);
            adam_update(p.data_mut(), g, m, v, self.step, &self.config);
        }
        Ok(())
    }

    /// `opt.step` plus `opt.m.<name>` / `opt.v.<name>` for each parameter.
    pub fn to_named_tensors(&self, model: &ModelGraph) -> Vec<(String, Tensor)> {
        let mut out = vec![("opt.step".to_owned(), Tensor::full([1], self.step as f64))];
        for ((name, p), (m, v)) in model.parameters().iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("opt.m.{name}"), Tensor::new(p.shape().to_vec(), m.clone()).expect("shape")));
            out.push((format!("opt.v.{name}"), Tensor::new(p.shape().to_vec(), v.clone()).expect("shape")));
        }
        out
    }

    pub fn from_named_tensors(config: AdamConfig, model: &ModelGraph, tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |key: &str, numel: usize| -> Result<Vec<f64>> {
            let t = tensors
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Configuration(format!("checkpoint has no optimizer tensor {key}")))?;
            if t.numel() != numel {
                return Err(dim_err!("optimizer tensor {key} has {} values, expected {numel}", t.numel()));
            }
            Ok(t.data().to_vec())
        };
        let step = find("opt.step", 1)?[0];
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(Error::Configuration(format!("invalid opt.step {step}")));
        }
        let mut adam = Adam::new(config, model);
        adam.step = step as u64;
        for (i, (name, p)) in model.parameters().iter().enumerate() {
            adam.m[i] = find(&format!("opt.m.{name}"), p.numel())?;
            adam.v[i] = find(&format!("opt.v.{name}"), p.numel())?;
        }
        Ok(adam)
    }
}
