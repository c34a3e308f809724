//! The adaptive gradient-ascent unlearning engine.
//!
//! Given a model, a forget/retain split and a cached mean validation loss
//! `L_v`, each paired step combines the mean forget-batch loss `L_f` and
//! mean retain-batch loss `L_r` into
//!
//! ```text
//! L = alpha * relu(L_v - L_f)^2 + (1 - alpha) * L_r
//! ```
//!
//! whose gradient with respect to the parameters, treating `L_v` as a
//! constant, is
//!
//! ```text
//! grad = -2 * alpha * (L_v - L_f) * grad(L_f) + (1 - alpha) * grad(L_r)   if L_f <= L_v
//!        (1 - alpha) * grad(L_r)                                          otherwise
//! ```
//!
//! The squared-ReLU term pushes the forget loss *up* — but only while it
//! sits below the validation loss, so the ascent self-limits at the loss
//! level of data the model never saw. `L_v` is a detached scalar refreshed
//! every `refresh_period` forget epochs, never a differentiated quantity.
//!
//! `alpha` trades ascent against retain-set repair and decays linearly
//! over the run (per forget epoch by default, per optimizer step as an
//! option). The default initial value scales with the forget fraction
//! `f` as `min(1, (5/3) * f)`.
//!
//! The step budget is denominated in optimizer steps and sized as a fixed
//! number of retain-set epochs, so the engine performs exactly as many
//! model updates as the fine-tuning baseline it is compared against.

use crate::data::{DatasetBundle, PairedIterator, Split};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::optim::{LinearSchedule, OptimizerState};
use serde::{Deserialize, Serialize};

/// Initial ascent weight for a given forget fraction: `min(1, (5/3) * f)`.
pub fn default_alpha(forget_fraction: f64) -> f64 {
    (5.0 / 3.0 * forget_fraction).min(1.0)
}

/// Optimizer-step budget equivalent to `equivalent_epochs` passes over a
/// retain set of `n_retain` samples at the given batch size.
pub fn step_budget_for(n_retain: usize, batch_size: usize, equivalent_epochs: usize) -> usize {
    equivalent_epochs * n_retain.div_ceil(batch_size)
}

/// Everything the engine needs besides the data and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    /// Initial ascent weight; `None` derives it from the forget fraction.
    pub alpha0: Option<f64>,
    /// Refresh the cached validation loss every this many forget epochs.
    pub refresh_period: usize,
    /// Step budget in retain-epoch equivalents.
    pub equivalent_epochs: usize,
    /// Batch size for both sides of each paired step.
    pub batch_size: usize,
    /// Linear decay of alpha over the run, as (start, end) factors.
    pub alpha_decay: (f64, f64),
    /// Decay alpha per optimizer step instead of per forget epoch.
    pub alpha_decay_per_step: bool,
    /// Apply the optimizer's weight decay on steps where the ascent gate
    /// is open. Off means such steps skip the decay term.
    pub weight_decay_during_ascent: bool,
    pub lr: f64,
    /// Linear decay of the learning rate over the step budget.
    pub lr_decay: (f64, f64),
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Abort when any per-step loss exceeds this or turns non-finite.
    pub divergence_threshold: f64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            alpha0: None,
            refresh_period: 1,
            equivalent_epochs: 6,
            batch_size: 25,
            alpha_decay: (1.0, 0.0),
            alpha_decay_per_step: false,
            weight_decay_during_ascent: true,
            lr: 1e-2,
            lr_decay: (1.0, 0.1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            divergence_threshold: 1e6,
        }
    }
}

/// The per-step loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `relu(L_v - L_f)^2`.
    pub forget_term: f64,
    /// `L_r` unchanged.
    pub retain_term: f64,
    /// `alpha * forget_term + (1 - alpha) * retain_term`.
    pub combined: f64,
    /// Whether the ascent gate is open (`L_f <= L_v`).
    pub gate_active: bool,
}

/// Combine cached validation loss, forget loss and retain loss.
pub fn combined_loss(alpha: f64, l_val: f64, l_forget: f64, l_retain: f64) -> LossBreakdown {
    let gap = l_val - l_forget;
    let forget_term = if gap > 0.0 { gap * gap } else { 0.0 };
    LossBreakdown {
        forget_term,
        retain_term: l_retain,
        combined: alpha * forget_term + (1.0 - alpha) * l_retain,
        gate_active: l_forget <= l_val,
    }
}

/// Gradient of [`combined_loss`] with respect to the parameters, treating
/// `l_val` as a constant.
///
/// When the ascent term vanishes — gate closed, or a coefficient of exactly
/// zero (`alpha = 0`, or `l_forget = l_val`) — the result is exactly
/// `(1 - alpha) * grad_retain`, coordinate for coordinate, with no forget
/// contribution mixed in.
pub fn combined_gradient(
    alpha: f64,
    l_val: f64,
    l_forget: f64,
    grad_forget: &[f64],
    grad_retain: &[f64],
) -> Result<Vec<f64>> {
    if grad_forget.len() != grad_retain.len() {
        return Err(Error::ShapeMismatch {
            op: "combined_gradient",
            expected: format!("{} coordinates", grad_forget.len()),
            got: format!("{}", grad_retain.len()),
        });
    }
    let retain_scale = 1.0 - alpha;
    let forget_coeff = if l_forget <= l_val {
        -2.0 * alpha * (l_val - l_forget)
    } else {
        0.0
    };
    if forget_coeff == 0.0 {
        return Ok(grad_retain.iter().map(|g| retain_scale * g).collect());
    }
    Ok(grad_forget
        .iter()
        .zip(grad_retain)
        .map(|(gf, gr)| forget_coeff * gf + retain_scale * gr)
        .collect())
}

/// One forget epoch in the run trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Ascent weight in effect at the first step of this epoch.
    pub alpha: f64,
    /// Cached validation loss in effect during this epoch.
    pub validation_loss: f64,
    pub mean_forget_loss: f64,
    pub mean_retain_loss: f64,
    /// Fraction of this epoch's steps with the ascent gate open.
    pub gate_active_fraction: f64,
    pub steps: usize,
}

/// Outcome of an unlearning run. A diverged run is not an `Err`: it
/// carries its partial trace and a failure marker instead.
#[derive(Debug, Clone)]
pub struct UnlearnRun {
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    /// `Some(reason)` when the run aborted on divergence.
    pub failure: Option<String>,
    pub steps_taken: usize,
    /// The resolved initial ascent weight actually used.
    pub alpha0: f64,
    pub warnings: Vec<String>,
    /// Sorted original train indices served to the engine (both sides).
    pub accessed_indices: Vec<usize>,
}

/// Resolve the initial ascent weight for a split: an explicit value is
/// validated, an absent one defaults to [`default_alpha`] of the realised
/// forget fraction, clamped to 1 with a warning for large fractions.
pub fn resolve_alpha0(
    configured: Option<f64>,
    split: &Split,
    n_train: usize,
) -> Result<(f64, Option<String>)> {
    if let Some(a) = configured {
        if !(0.0..=1.0).contains(&a) || !a.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha0",
                reason: format!("must be in [0, 1], got {a}"),
            });
        }
        return Ok((a, None));
    }
    let fraction = split.forget_indices().len() as f64 / n_train as f64;
    let raw = 5.0 / 3.0 * fraction;
    if raw > 1.0 {
        Ok((
            1.0,
            Some(format!(
                "default alpha {raw:.4} for forget fraction {fraction:.4} clamped to 1.0"
            )),
        ))
    } else {
        Ok((raw, None))
    }
}

/// Run the adaptive ascent procedure against `model`.
///
/// Deterministic in `(model, bundle, split, cfg, seed)`: reruns produce
/// bit-identical parameters and traces.
pub fn run_nabla_tau(
    model: &ModelParams,
    bundle: &DatasetBundle,
    split: &Split,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<UnlearnRun> {
    validate_config(cfg)?;
    let (alpha0, clamp_warning) = resolve_alpha0(cfg.alpha0, split, bundle.train().len())?;
    let mut warnings = Vec::new();
    if let Some(w) = clamp_warning {
        warnings.push(w);
    }

    let budget = step_budget_for(
        split.retain_indices().len(),
        cfg.batch_size,
        cfg.equivalent_epochs,
    );
    if budget == 0 {
        return Ok(UnlearnRun {
            params: model.clone(),
            trace: Vec::new(),
            failure: None,
            steps_taken: 0,
            alpha0,
            warnings,
            accessed_indices: Vec::new(),
        });
    }

    let mut iterator = PairedIterator::new(bundle, split, cfg.batch_size, seed)?;
    let steps_per_epoch = iterator.steps_per_epoch();
    let total_epochs = budget.div_ceil(steps_per_epoch);
    let alpha_schedule = LinearSchedule::new(
        cfg.alpha_decay.0,
        cfg.alpha_decay.1,
        if cfg.alpha_decay_per_step {
            budget
        } else {
            total_epochs
        },
    );
    let lr_schedule = LinearSchedule::new(cfg.lr_decay.0, cfg.lr_decay.1, budget);
    let mut opt = OptimizerState::adaptive(
        model.n_params(),
        cfg.lr,
        cfg.beta1,
        cfg.beta2,
        cfg.eps,
        cfg.weight_decay,
        Some(lr_schedule),
    );

    let mut params = model.clone();
    let mut trace = Vec::with_capacity(total_epochs);
    let mut failure = None;
    let mut steps_taken = 0usize;
    let mut cached_validation_loss = f64::NAN;

    'epochs: for epoch in 0..total_epochs {
        if epoch % cfg.refresh_period == 0 {
            cached_validation_loss = bundle.validation_mean_loss(&params)?;
        }
        let mut forget_loss_sum = 0.0;
        let mut retain_loss_sum = 0.0;
        let mut gate_open_steps = 0usize;
        let mut epoch_steps = 0usize;
        let mut first_step_alpha = f64::NAN;

        for step in iterator.forget_epoch()? {
            if steps_taken == budget {
                break;
            }
            let alpha = alpha0
                * alpha_schedule.factor(if cfg.alpha_decay_per_step {
                    steps_taken
                } else {
                    epoch
                });
            if epoch_steps == 0 {
                first_step_alpha = alpha;
            }
            let (l_forget, grad_forget) = params.grad_mean_loss(&step.forget_batch)?;
            let (l_retain, grad_retain) = params.grad_mean_loss(&step.retain_batch)?;
            let breakdown = combined_loss(alpha, cached_validation_loss, l_forget, l_retain);
            if !breakdown.combined.is_finite()
                || breakdown.combined.abs() > cfg.divergence_threshold
            {
                failure = Some(format!(
                    "diverged at step {steps_taken}: combined loss {}",
                    breakdown.combined
                ));
            } else {
                let grad = combined_gradient(
                    alpha,
                    cached_validation_loss,
                    l_forget,
                    &grad_forget,
                    &grad_retain,
                )?;
                let applied = if breakdown.gate_active && !cfg.weight_decay_during_ascent {
                    opt.apply_step_skipping_decay(&mut params, &grad)
                } else {
                    opt.apply_step(&mut params, &grad)
                };
                match applied {
                    Ok(()) => {}
                    Err(Error::NonFiniteGradient { index }) => {
                        failure = Some(format!(
                            "diverged at step {steps_taken}: non-finite gradient at coordinate {index}"
                        ));
                    }
                    Err(other) => return Err(other),
                }
            }
            if failure.is_some() {
                // Record what this epoch saw before aborting.
                forget_loss_sum += l_forget;
                retain_loss_sum += l_retain;
                if breakdown.gate_active {
                    gate_open_steps += 1;
                }
                epoch_steps += 1;
                break;
            }
            forget_loss_sum += l_forget;
            retain_loss_sum += l_retain;
            if breakdown.gate_active {
                gate_open_steps += 1;
            }
            epoch_steps += 1;
            steps_taken += 1;
        }

        if epoch_steps > 0 {
            trace.push(EpochRecord {
                epoch,
                alpha: first_step_alpha,
                validation_loss: cached_validation_loss,
                mean_forget_loss: forget_loss_sum / epoch_steps as f64,
                mean_retain_loss: retain_loss_sum / epoch_steps as f64,
                gate_active_fraction: gate_open_steps as f64 / epoch_steps as f64,
                steps: epoch_steps,
            });
        }
        if failure.is_some() || steps_taken == budget {
            break 'epochs;
        }
    }

    Ok(UnlearnRun {
        params,
        trace,
        failure,
        steps_taken,
        alpha0,
        warnings,
        accessed_indices: iterator.accessed_indices(),
    })
}

fn validate_config(cfg: &UnlearnConfig) -> Result<()> {
    if cfg.refresh_period == 0 {
        return Err(Error::InvalidParameter {
            name: "refresh_period",
            reason: "must be at least 1".into(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_size",
            reason: "must be at least 1".into(),
        });
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::InvalidParameter {
            name: "lr",
            reason: format!("must be positive, got {}", cfg.lr),
        });
    }
    if !(cfg.divergence_threshold.is_finite() && cfg.divergence_threshold > 0.0) {
        return Err(Error::InvalidParameter {
            name: "divergence_threshold",
            reason: "must be positive and finite".into(),
        });
    }
    Ok(())
}
