//! AdamW with decoupled weight decay and a warmup + cosine schedule.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in '{param}' at element {index} (value {value})")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },
    #[error("moment buffers were built for {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
}

impl Default for OptimConfig {
    /// Task-training settings: lr 3e-5, weight decay 1e-5, dropout 0.3,
    /// batch 32. The epoch count is not published; 20 is used.
    fn default() -> Self {
        OptimConfig {
            lr_peak: 3e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            dropout: 0.3,
            epochs: 20,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), String> {
        // lr = 0 is allowed: it turns training into an evaluation no-op
        if !(self.lr_peak >= 0.0) {
            return Err(format!("lr must be >= 0, got {}", self.lr_peak));
        }
        if !(self.eps > 0.0) {
            return Err(format!("eps must be positive, got {}", self.eps));
        }
        if self.weight_decay < 0.0 {
            return Err(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err("batch_size and epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleState {
    pub step: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl ScheduleState {
    /// Warmup spans exactly the first epoch's optimizer steps.
    pub fn for_epochs(steps_per_epoch: usize, epochs: usize) -> Self {
        let total = steps_per_epoch * epochs;
        ScheduleState {
            step: 0,
            warmup_steps: steps_per_epoch.min(total),
            total_steps: total,
        }
    }
}

/// Linear ramp `0 → lr_peak` over the warmup, then half-cosine decay to 0
/// at `total_steps`.
pub fn lr_at(state: &ScheduleState, lr_peak: f64) -> f64 {
    let step = state.step.min(state.total_steps);
    if step < state.warmup_steps {
        return lr_peak * step as f64 / state.warmup_steps as f64;
    }
    let span = state.total_steps - state.warmup_steps;
    if span == 0 {
        return lr_peak;
    }
    let progress = (step - state.warmup_steps) as f64 / span as f64;
    lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// AdamW state: one pair of moment buffers per parameter, in the order the
/// parameters are passed to [`AdamW::step`].
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &OptimConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// are left untouched. Any NaN/∞ gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64) -> Result<(), OptimError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(OptimError::ParamCount {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|(_, p)| p.grad()).collect();
        for ((name, _), g) in params.iter().zip(&grads) {
            if let Some(g) = g {
                if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return Err(OptimError::NonFiniteGradient {
                        param: name.clone(),
                        index,
                        value,
                    });
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
            p.update_data(|data| {
                for j in 0..data.len() {
                    // decoupled decay, applied apart from the adaptive step
                    data[j] -= lr * wd * data[j];
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[(String, Tensor)], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|(_, p)| p.grad())
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let scale = max_norm / total;
        for (_, p) in params {
            if let Some(mut g) = p.grad() {
                g.iter_mut().for_each(|v| *v *= scale);
                p.zero_grad();
                // re-seed the buffer through a trivial accumulation
                set_grad(p, g);
            }
        }
    }
    total
}

fn set_grad(p: &Tensor, g: Vec<f64>) {
    // a constant-weighted sum has gradient exactly `g`
    let weights = Tensor::new(g, p.shape()).expect("gradient matches parameter shape");
    p.mul(&weights)
        .expect("same shape")
        .sum()
        .backward()
        .expect("scalar");
}
