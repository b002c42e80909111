//! Decoupled-weight-decay adaptive-moment optimizer with linear learning-rate
//! decay, plus the exponential-moving-average shadow of the visual encoder
//! (and projection heads) that supplies contrastive keys.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Gradients;
use crate::tensor::Var;

/// AdamW with linear decay from `lr` to 0 over `total_steps`.
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: usize,
    step: usize,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, total_steps: usize) -> Result<Self> {
        if lr <= 0.0 || weight_decay < 0.0 || total_steps == 0 {
            return Err(Error::Config("lr must be > 0, weight_decay >= 0, steps >= 1".into()));
        }
        Ok(Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Learning rate for the upcoming step.
    pub fn current_lr(&self) -> f64 {
        self.lr * (1.0 - self.step as f64 / self.total_steps as f64).max(0.0)
    }

    /// One update over every parameter. Parameters without a gradient this
    /// step still receive weight decay, keeping runs with and without the
    /// unsupervised branch structurally identical.
    pub fn apply(
        &mut self,
        params: &mut ParamStore,
        param_vars: &BTreeMap<String, Var>,
        grads: &Gradients,
    ) -> Result<()> {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = param_vars.get(name).and_then(|&v| grads.get(v));
            let m = self.m.entry(name.clone()).or_insert_with(|| ArrayD::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| ArrayD::zeros(p.shape()));
            for (i, w) in p.iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g.as_slice().unwrap()[i]);
                if !gi.is_finite() {
                    return Err(Error::State(format!("non-finite gradient in {name}")));
                }
                let mi = &mut m.as_slice_mut().unwrap()[i];
                let vi = &mut v.as_slice_mut().unwrap()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// Prefixes of the parameter tensors the momentum encoder shadows.
pub const MOMENTUM_PREFIXES: [&str; 2] = ["vis.", "proj."];

/// EMA shadow of the momentum-encoded subset of the parameters.
#[derive(Debug, Clone)]
pub struct MomentumEncoderState {
    pub shadow: ParamStore,
    pub mu: f64,
}

impl MomentumEncoderState {
    /// Initializes the shadow as an exact copy of the online parameters.
    pub fn new(online: &ParamStore, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Config(format!("momentum {mu} outside [0, 1]")));
        }
        let mut shadow = ParamStore::new();
        for (name, p) in online.iter() {
            if MOMENTUM_PREFIXES.iter().any(|pre| name.starts_with(pre)) {
                shadow.insert(name, p.clone());
            }
        }
        Ok(Self { shadow, mu })
    }

    /// `shadow = mu * shadow + (1 - mu) * online`.
    pub fn update(&mut self, online: &ParamStore) -> Result<()> {
        for (name, s) in self.shadow.iter_mut() {
            if !online.contains(name) {
                return Err(Error::State(format!("online parameters lost tensor {name}")));
            }
            let o = online.get(name);
            if o.shape() != s.shape() {
                return Err(Error::State(format!("shape drift in momentum tensor {name}")));
            }
            for (sv, &ov) in s.iter_mut().zip(o.iter()) {
                *sv = self.mu * *sv + (1.0 - self.mu) * ov;
            }
        }
        Ok(())
    }

    /// A full parameter set for momentum-encoder forwards: shadow tensors
    /// where they exist, online tensors elsewhere.
    pub fn forward_params(&self, online: &ParamStore) -> ParamStore {
        let mut out = online.clone();
        for (name, s) in self.shadow.iter() {
            out.insert(name, s.clone());
        }
        out
    }
}
