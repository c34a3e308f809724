//! Reference methods the unlearning procedure is measured against.
//!
//! - [`pretrain`]: plain supervised training on the full train set — the
//!   "original" model whose forget-set influence everything else removes.
//! - [`retrain`]: the gold standard — a fresh model trained from scratch
//!   on the retain set only. Its batch stream records every train index it
//!   serves so callers can audit that no forget sample was ever read.
//! - [`finetune`]: continue training the original on retain data only,
//!   under the same optimizer, step budget and batch stream as the
//!   unlearning engine. With the engine's ascent weight at zero the two
//!   produce bit-identical parameters.
//! - [`label_swap`]: reassign every forget label to a uniformly chosen
//!   different class, then fine-tune on the union of retain and relabelled
//!   forget data under the same step budget.
//!
//! From-scratch phases use SGD with momentum and coupled weight decay;
//! budgeted tuning phases reuse the engine's adaptive optimizer settings.

use crate::data::{DatasetBundle, LabeledSet, PairedIterator, ShuffledBatches, Split};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::ModelParams;
use crate::optim::{LinearSchedule, OptimizerState};
use crate::unlearn::{step_budget_for, UnlearnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Settings for from-scratch supervised training (pretraining, retraining).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear learning-rate decay over all steps, as (start, end) factors.
    pub lr_decay: (f64, f64),
    pub divergence_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 60,
            batch_size: 25,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: (1.0, 0.001),
            divergence_threshold: 1e6,
        }
    }
}

/// Result of a training phase.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    /// `Some(reason)` when the phase aborted on divergence.
    pub failure: Option<String>,
    pub steps_taken: usize,
    /// Mean train loss over the final epoch's batches.
    pub final_loss: f64,
    /// Mean train loss per completed pass over the data.
    pub epoch_losses: Vec<f64>,
    /// Sorted original indices the batch stream served.
    pub accessed_indices: Vec<usize>,
}

/// Train `init` on the rows of `set` at `indices` for `cfg.epochs` epochs
/// of SGD. Deterministic in `seed`.
pub fn fit_supervised(
    init: &ModelParams,
    set: &LabeledSet,
    indices: Vec<usize>,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitOutcome> {
    if cfg.epochs == 0 {
        return Ok(FitOutcome {
            params: init.clone(),
            failure: None,
            steps_taken: 0,
            final_loss: f64::NAN,
            epoch_losses: Vec::new(),
            accessed_indices: Vec::new(),
        });
    }
    let mut stream = ShuffledBatches::new(set, indices, cfg.batch_size, seed)?;
    let total_steps = cfg.epochs * stream.steps_per_epoch();
    let lr_schedule = LinearSchedule::new(cfg.lr_decay.0, cfg.lr_decay.1, total_steps);
    let mut opt = OptimizerState::sgd(
        init.n_params(),
        cfg.lr,
        cfg.momentum,
        cfg.weight_decay,
        Some(lr_schedule),
    );
    let mut params = init.clone();
    let mut failure = None;
    let mut steps_taken = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    'epochs: for _epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, _indices) in stream.epoch()? {
            let (loss, grad) = params.grad_mean_loss(&batch)?;
            if !loss.is_finite() || loss.abs() > cfg.divergence_threshold {
                failure = Some(format!("diverged at step {steps_taken}: loss {loss}"));
                break 'epochs;
            }
            match opt.apply_step(&mut params, &grad) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { index }) => {
                    failure = Some(format!(
                        "diverged at step {steps_taken}: non-finite gradient at coordinate {index}"
                    ));
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
            loss_sum += loss;
            batches += 1;
            steps_taken += 1;
        }
        if batches > 0 {
            epoch_losses.push(loss_sum / batches as f64);
        }
    }

    Ok(FitOutcome {
        params,
        failure,
        steps_taken,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        accessed_indices: stream.accessed_indices(),
    })
}

/// Train the original model: a fresh Xavier init fit on the whole train
/// set.
pub fn pretrain(
    bundle: &DatasetBundle,
    hidden: &[usize],
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let init = ModelParams::init(bundle.in_dim(), hidden, bundle.classes(), mix_seed(seed, 11))?;
    let all: Vec<usize> = (0..bundle.train().len()).collect();
    fit_supervised(&init, bundle.train(), all, cfg, mix_seed(seed, 13))
}

/// The gold standard: a fresh model trained on the retain set only. The
/// returned access log provably contains no forget index — the stream is
/// built over the retain indices alone, and the caller can re-check
/// `accessed_indices` against the split.
pub fn retrain(
    bundle: &DatasetBundle,
    split: &Split,
    hidden: &[usize],
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let init = ModelParams::init(bundle.in_dim(), hidden, bundle.classes(), mix_seed(seed, 12))?;
    let outcome = fit_supervised(
        &init,
        bundle.train(),
        split.retain_indices().to_vec(),
        cfg,
        mix_seed(seed, 14),
    )?;
    debug_assert!(
        split
            .forget_indices()
            .iter()
            .all(|i| outcome.accessed_indices.binary_search(i).is_err()),
        "retrain stream served a forget index"
    );
    Ok(outcome)
}

/// Continue training `model` on retain batches only, for the same step
/// budget the unlearning engine gets, consuming retain data through the
/// same paired batch stream (the forget half of each pair is drawn and
/// discarded). Sharing the stream makes this run exactly comparable to an
/// engine run: with the ascent weight at zero the two coincide bit for
/// bit.
pub fn finetune(
    model: &ModelParams,
    bundle: &DatasetBundle,
    split: &Split,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let budget = step_budget_for(
        split.retain_indices().len(),
        cfg.batch_size,
        cfg.equivalent_epochs,
    );
    if budget == 0 {
        return Ok(FitOutcome {
            params: model.clone(),
            failure: None,
            steps_taken: 0,
            final_loss: f64::NAN,
            epoch_losses: Vec::new(),
            accessed_indices: Vec::new(),
        });
    }
    let mut iterator = PairedIterator::new(bundle, split, cfg.batch_size, seed)?;
    let steps_per_epoch = iterator.steps_per_epoch();
    let total_epochs = budget.div_ceil(steps_per_epoch);
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
    let mut failure = None;
    let mut steps_taken = 0usize;
    let mut epoch_losses = Vec::with_capacity(total_epochs);

    'epochs: for _epoch in 0..total_epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for step in iterator.forget_epoch()? {
            if steps_taken == budget {
                break;
            }
            let (loss, grad) = params.grad_mean_loss(&step.retain_batch)?;
            if !loss.is_finite() || loss.abs() > cfg.divergence_threshold {
                failure = Some(format!("diverged at step {steps_taken}: loss {loss}"));
                break 'epochs;
            }
            match opt.apply_step(&mut params, &grad) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { index }) => {
                    failure = Some(format!(
                        "diverged at step {steps_taken}: non-finite gradient at coordinate {index}"
                    ));
                    break 'epochs;
                }
                Err(other) => return Err(other),
            }
            loss_sum += loss;
            batches += 1;
            steps_taken += 1;
        }
        if batches > 0 {
            epoch_losses.push(loss_sum / batches as f64);
        }
        if steps_taken == budget {
            break;
        }
    }

    Ok(FitOutcome {
        params,
        failure,
        steps_taken,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        accessed_indices: iterator.accessed_indices(),
    })
}

/// Reassign every forget label to a uniformly chosen *different* class,
/// then fine-tune `model` on the union of retain and relabelled forget
/// rows under the engine's optimizer and step budget.
pub fn label_swap(
    model: &ModelParams,
    bundle: &DatasetBundle,
    split: &Split,
    cfg: &UnlearnConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let classes = bundle.classes();
    let train = bundle.train();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 15));
    let mut swapped_labels = train.labels().to_vec();
    for &i in split.forget_indices() {
        let offset = rng.gen_range(1..classes);
        swapped_labels[i] = (swapped_labels[i] + offset) % classes;
    }
    let mut features = Vec::with_capacity(train.len() * train.in_dim());
    for i in 0..train.len() {
        features.extend_from_slice(train.row(i));
    }
    let swapped = LabeledSet::new(features, swapped_labels, train.in_dim())?;

    let budget = step_budget_for(
        split.retain_indices().len(),
        cfg.batch_size,
        cfg.equivalent_epochs,
    );
    if budget == 0 {
        return Ok(FitOutcome {
            params: model.clone(),
            failure: None,
            steps_taken: 0,
            final_loss: f64::NAN,
            epoch_losses: Vec::new(),
            accessed_indices: Vec::new(),
        });
    }
    let all: Vec<usize> = (0..swapped.len()).collect();
    let mut stream = ShuffledBatches::new(&swapped, all, cfg.batch_size, mix_seed(seed, 16))?;
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
    let mut failure = None;
    let mut steps_taken = 0usize;
    let mut epoch_losses = Vec::new();

    'outer: while steps_taken < budget {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, _indices) in stream.epoch()? {
            if steps_taken == budget {
                break;
            }
            let (loss, grad) = params.grad_mean_loss(&batch)?;
            if !loss.is_finite() || loss.abs() > cfg.divergence_threshold {
                failure = Some(format!("diverged at step {steps_taken}: loss {loss}"));
                break 'outer;
            }
            match opt.apply_step(&mut params, &grad) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { index }) => {
                    failure = Some(format!(
                        "diverged at step {steps_taken}: non-finite gradient at coordinate {index}"
                    ));
                    break 'outer;
                }
                Err(other) => return Err(other),
            }
            loss_sum += loss;
            batches += 1;
            steps_taken += 1;
        }
        if batches > 0 {
            epoch_losses.push(loss_sum / batches as f64);
        }
    }

    Ok(FitOutcome {
        params,
        failure,
        steps_taken,
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        accessed_indices: stream.accessed_indices(),
    })
}
