//! Membership inference evaluation.
//!
//! A one-dimensional logistic attacker is trained to separate per-sample
//! statistics of forget-set rows (members) from test-set rows
//! (non-members). The statistic is either the per-sample loss or the
//! output entropy. Attacker accuracy near 50% means the model leaks no
//! membership signal; the reported `gap` is the distance from 50.
//!
//! Reference protocol (all knobs in [`AttackConfig`]):
//! - both sides are truncated to the smaller side's size by a seeded
//!   subsample, so attack classes are exactly balanced;
//! - one shared index permutation assigns folds to *both* sides, so each
//!   cross-validation fold stays balanced and swapping the two sides
//!   mirrors the fit exactly;
//! - each training fold standardizes the feature to zero mean and unit
//!   variance before fitting;
//! - the logistic fit runs full-batch gradient descent with an adaptive
//!   step size until the loss decrease drops below `tolerance`, with an
//!   L2 penalty on the weight;
//! - the whole procedure runs `repeats` times over fresh subsamples and
//!   fold assignments, and accuracies are averaged, which damps the
//!   fold-assignment noise of small feature sets.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{mean, Batch, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which per-sample statistic the attacker sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Loss,
    Entropy,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureKind::Loss => write!(f, "loss"),
            FeatureKind::Entropy => write!(f, "entropy"),
        }
    }
}

/// Per-sample statistics for the two membership classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackFeatures {
    pub kind: FeatureKind,
    pub forget_values: Vec<f64>,
    pub test_values: Vec<f64>,
}

impl AttackFeatures {
    /// Values must be finite and non-negative (losses and entropies are).
    pub fn new(kind: FeatureKind, forget_values: Vec<f64>, test_values: Vec<f64>) -> Result<Self> {
        for (side, values) in [("forget", &forget_values), ("test", &test_values)] {
            if values.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "features",
                    reason: format!("{side} side is empty"),
                });
            }
            if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidParameter {
                    name: "features",
                    reason: format!("{side} side holds invalid value {bad}"),
                });
            }
        }
        Ok(AttackFeatures {
            kind,
            forget_values,
            test_values,
        })
    }
}

/// Attacker training knobs. The defaults are the reference protocol used
/// by every reported number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub folds: usize,
    pub l2: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub repeats: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            folds: 5,
            l2: 1e-4,
            tolerance: 1e-8,
            max_iters: 10_000,
            repeats: 15,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter {
                name: "folds",
                reason: format!("need at least 2, got {}", self.folds),
            });
        }
        if self.repeats == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "repeats/max_iters",
                reason: "must be positive".into(),
            });
        }
        if !(self.tolerance > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tolerance/l2",
                reason: format!("tolerance {} and l2 {} out of range", self.tolerance, self.l2),
            });
        }
        Ok(())
    }
}

/// Result of one attacker run on a single feature kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: FeatureKind,
    /// Held-out accuracy in percent, averaged over folds and repeats.
    pub accuracy: f64,
    /// `|accuracy − 50|`.
    pub gap: f64,
    /// One entry per fold per repeat.
    pub fold_accuracies: Vec<f64>,
    /// True when all features were identical and the attack was skipped.
    pub degenerate: bool,
    /// Per-side sample count after balancing.
    pub n_per_class: usize,
}

/// Both attacks on one model: loss features and entropy features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub mia_l: f64,
    pub mia_e: f64,
    pub gap_l: f64,
    pub gap_e: f64,
    pub loss_fold_accuracies: Vec<f64>,
    pub entropy_fold_accuracies: Vec<f64>,
    pub degenerate_loss: bool,
    pub degenerate_entropy: bool,
    pub n_per_class: usize,
}

/// Compute the attacker's view of `model`: one statistic per sample on
/// each side. Forget rows keep the labels the model was trained on.
pub fn extract_features(
    model: &ModelParams,
    forget: &Batch,
    test: &Batch,
    kind: FeatureKind,
) -> Result<AttackFeatures> {
    let take = |batch: &Batch| -> Result<Vec<f64>> {
        let out = model.forward(batch)?;
        Ok(match kind {
            FeatureKind::Loss => out.per_sample_loss.clone(),
            FeatureKind::Entropy => out.per_sample_entropy.clone(),
        })
    };
    AttackFeatures::new(kind, take(forget)?, take(test)?)
}

/// Train the cross-validated logistic attacker and report its held-out
/// accuracy. Deterministic in `(features, cfg, seed)`.
pub fn train_attacker(
    features: &AttackFeatures,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    // Re-validate so feature vectors built by hand get the same checks.
    let checked = AttackFeatures::new(
        features.kind,
        features.forget_values.clone(),
        features.test_values.clone(),
    )?;
    let m = checked.forget_values.len().min(checked.test_values.len());
    if m < 10 {
        return Err(Error::InvalidParameter {
            name: "features",
            reason: format!("need at least 10 samples per side after balancing, got {m}"),
        });
    }
    if cfg.folds > m {
        return Err(Error::InvalidParameter {
            name: "folds",
            reason: format!("{} folds but only {m} samples per side", cfg.folds),
        });
    }

    // No variation at all: the attacker has nothing to fit.
    let first = checked.forget_values[0];
    let constant = checked
        .forget_values
        .iter()
        .chain(&checked.test_values)
        .all(|v| *v == first);
    if constant {
        return Ok(AttackOutcome {
            kind: checked.kind,
            accuracy: 50.0,
            gap: 0.0,
            fold_accuracies: Vec::new(),
            degenerate: true,
            n_per_class: m,
        });
    }

    let mut fold_accuracies = Vec::with_capacity(cfg.folds * cfg.repeats);
    for repeat in 0..cfg.repeats {
        let rep_seed = mix_seed(seed, 23 + repeat as u64);
        let members = balanced_side(&checked.forget_values, m, mix_seed(rep_seed, 1));
        let nonmembers = balanced_side(&checked.test_values, m, mix_seed(rep_seed, 2));
        let assignment = fold_assignment(m, cfg.folds, mix_seed(rep_seed, 3));
        for fold in 0..cfg.folds {
            fold_accuracies.push(run_fold(&members, &nonmembers, &assignment, fold, cfg));
        }
    }
    let accuracy = 100.0 * mean(&fold_accuracies);
    Ok(AttackOutcome {
        kind: checked.kind,
        accuracy,
        gap: (accuracy - 50.0).abs(),
        fold_accuracies,
        degenerate: false,
        n_per_class: m,
    })
}

/// Run both feature kinds against one model.
pub fn attack_model(
    model: &ModelParams,
    forget: &Batch,
    test: &Batch,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport> {
    let loss = train_attacker(
        &extract_features(model, forget, test, FeatureKind::Loss)?,
        cfg,
        mix_seed(seed, 27),
    )?;
    let entropy = train_attacker(
        &extract_features(model, forget, test, FeatureKind::Entropy)?,
        cfg,
        mix_seed(seed, 28),
    )?;
    Ok(AttackReport {
        mia_l: loss.accuracy,
        mia_e: entropy.accuracy,
        gap_l: loss.gap,
        gap_e: entropy.gap,
        loss_fold_accuracies: loss.fold_accuracies,
        entropy_fold_accuracies: entropy.fold_accuracies,
        degenerate_loss: loss.degenerate,
        degenerate_entropy: entropy.degenerate,
        n_per_class: loss.n_per_class,
    })
}

/// Seeded subsample of one side down to `m` values. A side already at
/// size `m` is passed through untouched (and consumes no randomness), so
/// equal-sized sides are handled symmetrically.
fn balanced_side(values: &[f64], m: usize, seed: u64) -> Vec<f64> {
    if values.len() == m {
        return values.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..values.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(m);
    indices.sort_unstable();
    indices.iter().map(|&i| values[i]).collect()
}

/// One fold id per index position, shared by both sides. Every fold gets
/// `m / folds` or `m / folds + 1` positions, and because the assignment
/// applies to members and non-members alike each fold is exactly
/// balanced.
fn fold_assignment(m: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; m];
    for (i, &slot) in order.iter().enumerate() {
        assignment[slot] = i % folds;
    }
    assignment
}

/// Fit on every index outside `fold`, score on the held-out indices.
fn run_fold(
    members: &[f64],
    nonmembers: &[f64],
    assignment: &[usize],
    fold: usize,
    cfg: &AttackConfig,
) -> f64 {
    let m = members.len();
    let train_idx: Vec<usize> = (0..m).filter(|i| assignment[*i] != fold).collect();
    let held_idx: Vec<usize> = (0..m).filter(|i| assignment[*i] == fold).collect();

    // Standardize with training statistics only, accumulating each side
    // separately so the result is invariant to which side is which.
    let n_train = (2 * train_idx.len()) as f64;
    let side_sum = |side: &[f64]| train_idx.iter().map(|&i| side[i]).sum::<f64>();
    let mu = (side_sum(members) + side_sum(nonmembers)) / n_train;
    let side_sq = |side: &[f64]| {
        train_idx
            .iter()
            .map(|&i| (side[i] - mu) * (side[i] - mu))
            .sum::<f64>()
    };
    let sigma = ((side_sq(members) + side_sq(nonmembers)) / n_train)
        .sqrt()
        .max(1e-12);

    let std_members: Vec<f64> = train_idx.iter().map(|&i| (members[i] - mu) / sigma).collect();
    let std_nonmembers: Vec<f64> = train_idx
        .iter()
        .map(|&i| (nonmembers[i] - mu) / sigma)
        .collect();
    let (w, b) = fit_logistic(&std_members, &std_nonmembers, cfg);

    let mut correct = 0usize;
    for &i in &held_idx {
        let zm = w * ((members[i] - mu) / sigma) + b;
        if zm >= 0.0 {
            correct += 1;
        }
        let zn = w * ((nonmembers[i] - mu) / sigma) + b;
        if zn < 0.0 {
            correct += 1;
        }
    }
    correct as f64 / (2 * held_idx.len()) as f64
}

/// Full-batch gradient descent on the regularized logistic loss for a
/// one-dimensional feature, members labelled +1 and non-members −1. The
/// step size grows on accepted steps and halves on rejected ones; the fit
/// stops once an accepted step improves the loss by less than
/// `tolerance`.
fn fit_logistic(members: &[f64], nonmembers: &[f64], cfg: &AttackConfig) -> (f64, f64) {
    let n = (members.len() + nonmembers.len()) as f64;
    // softplus(-s*z) summed per side; sides added afterwards.
    let loss_of = |w: f64, b: f64| -> f64 {
        let side = |xs: &[f64], s: f64| {
            xs.iter()
                .map(|&x| {
                    let u = -s * (w * x + b);
                    if u > 0.0 {
                        u + (-u).exp().ln_1p()
                    } else {
                        u.exp().ln_1p()
                    }
                })
                .sum::<f64>()
        };
        (side(members, 1.0) + side(nonmembers, -1.0)) / n + 0.5 * cfg.l2 * w * w
    };
    let grad_of = |w: f64, b: f64| -> (f64, f64) {
        // d/dz softplus(-s*z) = -s * sigmoid(-s*z)
        let side = |xs: &[f64], s: f64| {
            let mut gw = 0.0;
            let mut gb = 0.0;
            for &x in xs {
                let u = -s * (w * x + b);
                let g = -s / (1.0 + (-u).exp());
                gw += g * x;
                gb += g;
            }
            (gw, gb)
        };
        let (mw, mb) = side(members, 1.0);
        let (nw, nb) = side(nonmembers, -1.0);
        ((mw + nw) / n + cfg.l2 * w, (mb + nb) / n)
    };

    let (mut w, mut b) = (0.0f64, 0.0f64);
    let mut lr = 1.0f64;
    let mut loss = loss_of(w, b);
    for _ in 0..cfg.max_iters {
        let (gw, gb) = grad_of(w, b);
        let (tw, tb) = (w - lr * gw, b - lr * gb);
        let trial = loss_of(tw, tb);
        if trial < loss {
            let improvement = loss - trial;
            w = tw;
            b = tb;
            loss = trial;
            lr *= 1.1;
            if improvement < cfg.tolerance {
                break;
            }
        } else {
            lr *= 0.5;
            if lr < 1e-15 {
                break;
            }
        }
    }
    (w, b)
}
