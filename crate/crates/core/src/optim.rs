//! Adam with an inverse-square-root warmup schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            peak_lr: 3e-3,
            warmup_steps: 200,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("optim.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            p.push(format!("optim.eps must be > 0, got {}", self.eps));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            p.push(format!("optim.peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.clip_norm >= 0.0) {
            p.push(format!("optim.clip_norm must be >= 0, got {}", self.clip_norm));
        }
        p
    }

    /// Learning rate for 1-based `step`: linear warmup to `peak_lr`, then
    /// decay proportional to `1/sqrt(step)`.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.peak_lr * (s / w).min((w / s).sqrt())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Per-parameter moment estimates. Bias correction uses each parameter's
/// own update count, so groups that are updated in alternation (or only on
/// some batches) are corrected consistently.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update to exactly the parameters named in `grads`; all
    /// others stay bit-identical.
    pub fn step(&mut self, cfg: &OptimConfig, params: &mut ModelParams, grads: &[(String, Vec<f64>)], lr: f64) -> Result<()> {
        let norm = grads.iter().flat_map(|(_, g)| g).map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::invalid("adam", "non-finite gradient"));
        }
        let clip = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if g.len() != p.len() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - cfg.beta1.powf(st.t as f64);
            let c2 = 1.0 - cfg.beta2.powf(st.t as f64);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] * clip;
                st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gi;
                st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Number of updates parameter `name` has received.
    pub fn updates(&self, name: &str) -> u64 {
        self.moments.get(name).map_or(0, |m| m.t)
    }
}
