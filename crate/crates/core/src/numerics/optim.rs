//! Adam with bias correction, learning-rate schedules, and an
//! exponential moving average of parameters for evaluation-time use.

use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> AdamState {
        AdamState {
            config,
            m: params
                .iter()
                .map(|p| Tensor::new(p.shape.clone(), vec![0.0; p.numel()]))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::new(p.shape.clone(), vec![0.0; p.numel()]))
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `lr_multiplier` scales the configured learning rate
    /// (1.0 for a constant schedule). Parameters without a gradient this
    /// step are skipped entirely.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>], lr_multiplier: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let lr = c.lr * lr_multiplier;
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            debug_assert_eq!(param.shape, grad.shape);
            for i in 0..param.data.len() {
                let g = grad.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * g;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m.data[i] / bias1;
                let v_hat = v.data[i] / bias2;
                param.data[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

/// Learning-rate schedule as a multiplier on the base rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Inverse square root with linear warmup, normalized so that the
    /// multiplier is exactly 1 at `step == warmup`.
    Rsqrt {
        warmup: u64,
    },
}

impl LrSchedule {
    pub fn multiplier(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Rsqrt { warmup } => {
                let step = step.max(1) as f64;
                let warmup = warmup.max(1) as f64;
                let base = (step.powf(-0.5)).min(step * warmup.powf(-1.5));
                base * warmup.sqrt()
            }
        }
    }
}

/// Exponential moving average of parameters: with rate `decay`,
/// `avg <- (1 - decay) * avg + decay * param` per update. Evaluation and
/// checkpointing read the average; training keeps the raw parameters.
#[derive(Debug, Clone)]
pub struct ParamAverager {
    pub decay: f64,
    pub average: Vec<Tensor>,
}

impl ParamAverager {
    pub fn new(params: &[Tensor], decay: f64) -> ParamAverager {
        assert!(decay > 0.0 && decay <= 1.0, "decay must be in (0, 1]");
        ParamAverager {
            decay,
            average: params.to_vec(),
        }
    }

    pub fn update(&mut self, params: &[Tensor]) {
        for (avg, p) in self.average.iter_mut().zip(params) {
            for (a, x) in avg.data.iter_mut().zip(&p.data) {
                *a = (1.0 - self.decay) * *a + self.decay * x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_adam_step_closed_form() {
        // From zero state with gradient 1: m_hat = 1, v_hat = 1, so the
        // update is exactly -lr / (1 + eps).
        let config = AdamConfig {
            lr: 5e-4,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params, config);
        let grads = vec![Some(Tensor::scalar(1.0))];
        state.step(&mut params, &grads, 1.0);
        let expected = -config.lr / (1.0 + config.eps);
        assert!(
            (params[0].item() - expected).abs() < 1e-18,
            "{} vs {}",
            params[0].item(),
            expected
        );
    }

    #[test]
    fn missing_gradient_skips_parameter() {
        let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        let grads = vec![Some(Tensor::scalar(1.0)), None];
        state.step(&mut params, &grads, 1.0);
        assert_ne!(params[0].item(), 1.0);
        assert_eq!(params[1].item(), 2.0);
    }

    #[test]
    fn rsqrt_multiplier_is_one_at_warmup() {
        let schedule = LrSchedule::Rsqrt { warmup: 4000 };
        assert!((schedule.multiplier(4000) - 1.0).abs() < 1e-12);
        // Linear region below warmup, decaying region above.
        assert!(schedule.multiplier(2000) < 1.0);
        assert!(schedule.multiplier(16000) < 1.0);
        let quarter = schedule.multiplier(1000);
        assert!((quarter - 0.25).abs() < 1e-12);
        let x4 = schedule.multiplier(16000);
        assert!((x4 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ema_decay_one_equals_current_params() {
        let params = vec![Tensor::scalar(5.0)];
        let mut averager = ParamAverager::new(&[Tensor::scalar(0.0)], 1.0);
        averager.update(&params);
        assert_eq!(averager.average[0].item(), 5.0);
    }

    #[test]
    fn ema_moves_toward_params() {
        let params = vec![Tensor::scalar(10.0)];
        let mut averager = ParamAverager::new(&[Tensor::scalar(0.0)], 0.1);
        averager.update(&params);
        assert!((averager.average[0].item() - 1.0).abs() < 1e-12);
        averager.update(&params);
        assert!((averager.average[0].item() - 1.9).abs() < 1e-12);
    }
}
