use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Linear warmup from 0 to `peak` over the first `warmup_steps`, then
/// linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as usize,
            total_steps,
        }
    }

    /// Learning rate for the 0-based `step`.
    pub fn rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let remaining = self.total_steps.saturating_sub(self.warmup_steps);
        if remaining == 0 {
            return self.peak;
        }
        let done = (step - self.warmup_steps) as f64 / remaining as f64;
        self.peak * (1.0 - done).max(0.0)
    }
}

/// Adam with bias correction and optional decoupled weight decay, which is
/// not applied to biases or layer-norm parameters.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: ModelParams<T>,
    second: ModelParams<T>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &ModelParams<T>, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            first: ModelParams::zeros(like.config()),
            second: ModelParams::zeros(like.config()),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64) {
        self.steps += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.steps);
        let c2 = T::one() - b2.powi(self.steps);
        let (lr, eps, wd) = (T::lit(lr), T::lit(self.eps), T::lit(self.weight_decay));
        let one = T::one();
        let tensors = params
            .named_tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((_, kind, p), g), m), v) in tensors {
            let decay = kind == crate::model::TensorKind::Weight && wd > T::zero();
            let data = p.as_mut_slice().iter_mut().zip(g.as_slice());
            for ((x, &g), (m, v)) in data.zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice())) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                if decay {
                    *x -= lr * wd * *x;
                }
                *x -= lr * update;
            }
        }
    }
}

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .map(|m| m.sum_squares())
        .fold(T::zero(), |a, b| a + b)
        .sqrt()
        .to_f64()
        .unwrap_or(f64::NAN);
    if norm > max_norm {
        grads.scale(T::lit(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.rate(0) - 0.1).abs() < 1e-12);
        assert!((s.rate(9) - 1.0).abs() < 1e-12);
        assert!((s.rate(10) - 1.0).abs() < 1e-12);
        assert!((s.rate(55) - 0.5).abs() < 1e-12);
        assert!(s.rate(99) > 0.0 && s.rate(100) == 0.0);
        let flat = LinearSchedule::new(2.0, 0.0, 0);
        assert_eq!(flat.rate(0), 2.0);
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let cfg = ModelConfig {
            vocab_size: 8,
            hidden_size: 4,
            num_layers: 1,
            num_heads: 1,
            intermediate_size: 4,
            max_position: 4,
            ..ModelConfig::default()
        };
        let mut p = init_params::<f64>(&cfg, 1);
        let before = p.clone();
        let mut g = ModelParams::zeros(&cfg);
        g.token_embeddings.set(0, 0, 3.0);
        g.token_embeddings.set(1, 1, -0.5);
        let mut adam = Adam::new(&p, 0.0);
        adam.step(&mut p, &g, 0.01);
        let moved = |r, c| p.token_embeddings.get(r, c) - before.token_embeddings.get(r, c);
        assert!((moved(0, 0) + 0.01).abs() < 1e-8);
        assert!((moved(1, 1) - 0.01).abs() < 1e-8);
        assert_eq!(moved(2, 2), 0.0);
    }

    #[test]
    fn clipping() {
        let cfg = ModelConfig {
            vocab_size: 8,
            hidden_size: 4,
            num_layers: 1,
            num_heads: 1,
            intermediate_size: 4,
            max_position: 4,
            ..ModelConfig::default()
        };
        let mut g = ModelParams::<f64>::zeros(&cfg);
        g.output_bias.set(0, 0, 3.0);
        g.output_bias.set(0, 1, 4.0);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.output_bias.get(0, 1) - 0.8).abs() < 1e-12);
    }
}
