//! First-order optimizers and linear hyperparameter schedules.
//!
//! Two update rules cover every training phase in this crate:
//!
//! - **SGD** with classical momentum and coupled L2 weight decay
//!   (`g <- g + wd * theta` before the momentum buffer), used for
//!   pretraining and retraining.
//! - **Adaptive moments with decoupled weight decay**: exponential first
//!   and second moment estimates with bias correction,
//!   `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`, and the decay
//!   term `theta <- theta - lr * wd * theta` applied independently of the
//!   gradient. Used for the unlearning and fine-tuning phases.
//!
//! Learning rates follow a [`LinearSchedule`] evaluated at the optimizer's
//! own step count, so a state is a self-contained deterministic machine:
//! identical configs fed identical gradient sequences produce bit-identical
//! parameter trajectories.

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use serde::{Deserialize, Serialize};

/// Linear interpolation factor from `start_factor` to `end_factor` over
/// `total_steps`, clamped at the end value afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start_factor: f64,
    pub end_factor: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(start_factor: f64, end_factor: f64, total_steps: usize) -> Self {
        LinearSchedule {
            start_factor,
            end_factor,
            total_steps,
        }
    }

    /// Factor at `step`. `step = 0` gives `start_factor`; any
    /// `step >= total_steps` gives `end_factor`; `total_steps = 0` means
    /// the schedule sits at `end_factor` from the beginning.
    pub fn factor(&self, step: usize) -> f64 {
        if self.total_steps == 0 || step >= self.total_steps {
            return self.end_factor;
        }
        let t = step as f64 / self.total_steps as f64;
        self.start_factor + (self.end_factor - self.start_factor) * t
    }
}

/// Which update rule an [`OptimizerState`] applies.
#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Sgd {
        momentum: f64,
    },
    Adaptive {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

/// A self-contained optimizer: rule, schedule position and moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    rule: Rule,
    base_lr: f64,
    weight_decay: f64,
    lr_schedule: Option<LinearSchedule>,
    step_count: usize,
    /// Momentum buffer (SGD) or first-moment estimate (adaptive).
    m: Vec<f64>,
    /// Second-moment estimate; empty for SGD.
    v: Vec<f64>,
}

impl OptimizerState {
    /// SGD with optional momentum and coupled L2 decay.
    pub fn sgd(
        n_params: usize,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        lr_schedule: Option<LinearSchedule>,
    ) -> Self {
        OptimizerState {
            rule: Rule::Sgd { momentum },
            base_lr: lr,
            weight_decay,
            lr_schedule,
            step_count: 0,
            m: vec![0.0; n_params],
            v: Vec::new(),
        }
    }

    /// Adaptive-moment rule with decoupled weight decay.
    pub fn adaptive(
        n_params: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        lr_schedule: Option<LinearSchedule>,
    ) -> Self {
        OptimizerState {
            rule: Rule::Adaptive { beta1, beta2, eps },
            base_lr: lr,
            weight_decay,
            lr_schedule,
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Steps applied so far.
    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Learning rate the *next* step will use.
    pub fn effective_lr(&self) -> f64 {
        match &self.lr_schedule {
            Some(s) => self.base_lr * s.factor(self.step_count),
            None => self.base_lr,
        }
    }

    /// Apply one update in place. Errors on a gradient of the wrong length
    /// or with any non-finite coordinate (reported by index).
    pub fn apply_step(&mut self, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
        self.apply_step_inner(params, grad, true)
    }

    /// Like [`apply_step`](Self::apply_step) but with the weight-decay term
    /// suppressed for this step. The unlearning engine uses this when
    /// configured not to decay parameters while the ascent gate is open.
    pub fn apply_step_skipping_decay(
        &mut self,
        params: &mut ModelParams,
        grad: &[f64],
    ) -> Result<()> {
        self.apply_step_inner(params, grad, false)
    }

    fn apply_step_inner(
        &mut self,
        params: &mut ModelParams,
        grad: &[f64],
        decay_enabled: bool,
    ) -> Result<()> {
        if grad.len() != params.n_params() {
            return Err(Error::ShapeMismatch {
                op: "apply_step",
                expected: format!("{} gradient coordinates", params.n_params()),
                got: format!("{}", grad.len()),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let lr = self.effective_lr();
        let wd = if decay_enabled { self.weight_decay } else { 0.0 };
        let theta = params.values_mut();
        match self.rule {
            Rule::Sgd { momentum } => {
                for i in 0..theta.len() {
                    let mut g = grad[i] + wd * theta[i];
                    if momentum != 0.0 {
                        self.m[i] = momentum * self.m[i] + g;
                        g = self.m[i];
                    }
                    theta[i] -= lr * g;
                }
            }
            Rule::Adaptive { beta1, beta2, eps } => {
                let t = (self.step_count + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..theta.len() {
                    // Decoupled decay: shrink independently of the gradient.
                    if wd != 0.0 {
                        theta[i] -= lr * wd * theta[i];
                    }
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelParams;
    use proptest::prelude::*;

    fn flat_model(values: Vec<f64>) -> ModelParams {
        // A 1-layer model whose parameter count we can pick freely:
        // (in_dim=1, out=k) has k weights + k biases = 2k values.
        assert!(values.len() % 2 == 0);
        let k = values.len() / 2;
        ModelParams::from_parts(vec![(1, k)], values).unwrap()
    }

    #[test]
    fn schedule_interpolates_and_clamps() {
        let s = LinearSchedule::new(1.0, 0.1, 4);
        assert_eq!(s.factor(0), 1.0);
        // 1 + (0.1 - 1) * 3/4 = 0.325
        assert!((s.factor(3) - 0.325).abs() < 1e-15);
        assert_eq!(s.factor(4), 0.1);
        assert_eq!(s.factor(400), 0.1);
        // Degenerate schedule sits at the end value immediately.
        let z = LinearSchedule::new(1.0, 0.5, 0);
        assert_eq!(z.factor(0), 0.5);
    }

    #[test]
    fn plain_sgd_is_exact_descent() {
        let mut model = flat_model(vec![1.0, -2.0, 0.5, 3.0]);
        let mut opt = OptimizerState::sgd(4, 0.1, 0.0, 0.0, None);
        let grad = [10.0, -20.0, 5.0, 0.0];
        opt.apply_step(&mut model, &grad).unwrap();
        // params -= 0.1 * g, exactly.
        assert_eq!(model.values(), &[1.0 - 1.0, -2.0 + 2.0, 0.5 - 0.5, 3.0]);
    }

    #[test]
    fn sgd_momentum_matches_hand_computation() {
        let mut model = flat_model(vec![0.0, 0.0]);
        let mut opt = OptimizerState::sgd(2, 0.5, 0.9, 0.0, None);
        opt.apply_step(&mut model, &[1.0, 2.0]).unwrap();
        // buf = g -> theta = -0.5 * [1, 2]
        assert_eq!(model.values(), &[-0.5, -1.0]);
        opt.apply_step(&mut model, &[1.0, 2.0]).unwrap();
        // buf = 0.9 * g + g = 1.9 g -> theta -= 0.5 * 1.9 g
        assert!((model.values()[0] - (-0.5 - 0.95)).abs() < 1e-15);
        assert!((model.values()[1] - (-1.0 - 1.9)).abs() < 1e-15);
    }

    #[test]
    fn sgd_coupled_decay_enters_the_gradient() {
        let mut model = flat_model(vec![2.0, -4.0]);
        let mut opt = OptimizerState::sgd(2, 0.1, 0.0, 0.5, None);
        opt.apply_step(&mut model, &[0.0, 0.0]).unwrap();
        // g = wd * theta -> theta -= lr * wd * theta = theta * (1 - 0.05)
        assert!((model.values()[0] - 1.9).abs() < 1e-15);
        assert!((model.values()[1] + 3.8).abs() < 1e-15);
    }

    #[test]
    fn adaptive_with_zero_grad_reduces_to_pure_shrinkage() {
        let mut model = flat_model(vec![1.0, -1.0]);
        let mut opt = OptimizerState::adaptive(2, 0.001, 0.9, 0.999, 1e-8, 0.01, None);
        opt.apply_step(&mut model, &[0.0, 0.0]).unwrap();
        // Zero gradient leaves the moment update at zero, so the only
        // movement is theta * (1 - lr * wd) = theta * (1 - 1e-5).
        let shrink = 1.0 - 0.001 * 0.01;
        assert!((model.values()[0] - shrink).abs() < 1e-15);
        assert!((model.values()[1] + shrink).abs() < 1e-15);
        for _ in 0..9 {
            opt.apply_step(&mut model, &[0.0, 0.0]).unwrap();
        }
        assert!((model.values()[0] - shrink.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_step_magnitude_approaches_lr_under_constant_gradient() {
        // With a constant gradient g the bias-corrected moments satisfy
        // m_hat = g and v_hat = g^2 at every step, so each step moves each
        // coordinate by lr * g / (|g| + eps) — within eps of lr itself.
        let lr = 0.01;
        let mut model = flat_model(vec![0.0, 0.0]);
        let mut opt = OptimizerState::adaptive(2, lr, 0.9, 0.999, 1e-8, 0.0, None);
        let grad = [1.0, -3.0];
        let mut prev = model.values().to_vec();
        for step in 0..50 {
            opt.apply_step(&mut model, &grad).unwrap();
            let d0 = model.values()[0] - prev[0];
            let d1 = model.values()[1] - prev[1];
            assert!(
                (d0.abs() - lr).abs() < 1e-8 * lr + 1e-10,
                "step {step}: |delta| {} far from lr",
                d0.abs()
            );
            assert!((d1.abs() - lr).abs() < 1e-8 * lr + 1e-7);
            assert!(d0 < 0.0 && d1 > 0.0, "moves against the gradient");
            prev = model.values().to_vec();
        }
    }

    #[test]
    fn scheduled_lr_is_used_per_step() {
        let sched = LinearSchedule::new(1.0, 0.1, 4);
        let mut model = flat_model(vec![0.0, 0.0]);
        let mut opt = OptimizerState::sgd(2, 1.0, 0.0, 0.0, Some(sched));
        assert_eq!(opt.effective_lr(), 1.0);
        opt.apply_step(&mut model, &[1.0, 0.0]).unwrap();
        assert_eq!(model.values()[0], -1.0);
        // Next step uses factor(1) = 0.775.
        assert!((opt.effective_lr() - 0.775).abs() < 1e-15);
        opt.apply_step(&mut model, &[1.0, 0.0]).unwrap();
        assert!((model.values()[0] - (-1.0 - 0.775)).abs() < 1e-15);
    }

    #[test]
    fn skipping_decay_suppresses_only_the_decay_term() {
        let mut with_decay = flat_model(vec![1.0, 1.0]);
        let mut without = with_decay.clone();
        let mut opt_a = OptimizerState::adaptive(2, 0.01, 0.9, 0.999, 1e-8, 0.1, None);
        let mut opt_b = opt_a.clone();
        opt_a.apply_step(&mut with_decay, &[0.0, 0.0]).unwrap();
        opt_b
            .apply_step_skipping_decay(&mut without, &[0.0, 0.0])
            .unwrap();
        assert!(with_decay.values()[0] < 1.0);
        assert_eq!(without.values(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_its_index() {
        let mut model = flat_model(vec![0.0, 0.0, 0.0, 0.0]);
        let mut opt = OptimizerState::sgd(4, 0.1, 0.0, 0.0, None);
        let before = model.values().to_vec();
        let err = opt
            .apply_step(&mut model, &[0.0, 1.0, f64::NAN, 2.0])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 2 }));
        // The step is rejected atomically.
        assert_eq!(model.values(), before.as_slice());
        assert_eq!(opt.step_count(), 0);
        let err = opt
            .apply_step(&mut model, &[f64::INFINITY, 0.0, 0.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 0 }));
    }

    #[test]
    fn wrong_gradient_length_is_rejected() {
        let mut model = flat_model(vec![0.0, 0.0]);
        let mut opt = OptimizerState::sgd(2, 0.1, 0.0, 0.0, None);
        assert!(matches!(
            opt.apply_step(&mut model, &[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn identical_configs_and_gradients_give_bit_identical_trajectories() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let grads: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let sched = Some(LinearSchedule::new(1.0, 0.1, 20));
        let mut model_a = flat_model(vec![0.3; 6]);
        let mut model_b = flat_model(vec![0.3; 6]);
        let mut opt_a = OptimizerState::adaptive(6, 0.005, 0.9, 0.999, 1e-8, 0.01, sched);
        let mut opt_b = OptimizerState::adaptive(6, 0.005, 0.9, 0.999, 1e-8, 0.01, sched);
        for g in &grads {
            opt_a.apply_step(&mut model_a, g).unwrap();
            opt_b.apply_step(&mut model_b, g).unwrap();
        }
        for (a, b) in model_a.values().iter().zip(model_b.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_schedule_factor_stays_between_endpoints(
            start in 0.0f64..2.0,
            end in 0.0f64..2.0,
            total in 0usize..50,
            step in 0usize..100,
        ) {
            let s = LinearSchedule::new(start, end, total);
            let f = s.factor(step);
            let lo = start.min(end) - 1e-12;
            let hi = start.max(end) + 1e-12;
            prop_assert!(f >= lo && f <= hi);
        }

        #[test]
        fn prop_schedule_is_monotone_between_endpoints(
            total in 1usize..50,
            a in 0usize..100,
            b in 0usize..100,
        ) {
            let s = LinearSchedule::new(1.0, 0.0, total);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.factor(lo) >= s.factor(hi));
        }
    }
}
