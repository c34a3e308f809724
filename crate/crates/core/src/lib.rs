//! Desk-scale machine unlearning laboratory.
//!
//! The crate trains small classifiers on synthetic Gaussian-cluster tasks,
//! then removes the influence of a designated forget set with an adaptive
//! gradient-ascent procedure and measures how close the result comes to
//! the gold standard of retraining from scratch — in accuracy and against
//! loss- and entropy-based membership inference attacks.
//!
//! Module map:
//! - [`nn`]: logistic-regression / MLP forward, loss, entropy, gradients
//! - [`optim`]: SGD and decoupled-decay adaptive steps, linear schedules
//! - [`data`]: synthetic task generation, forget/retain splits, iterators
//! - [`unlearn`]: the adaptive ascent engine and its gated combined loss
//! - [`baselines`]: retrain / fine-tune / label-swap reference methods
//! - [`attack`]: membership inference via a one-feature logistic attacker
//! - [`report`]: accuracy, evaluation rows, the robustness sweep
//! - [`config`]: experiment configuration and its canonical hash
//! - [`cache`]: integrity-checked model cache on disk
//! - [`cli`]: the `gradtau` command-line front end

pub mod attack;
pub mod baselines;
pub mod cache;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod report;
pub mod unlearn;

pub use error::{Error, Result};

/// Mix a base seed with a stream tag into an independent sub-seed.
///
/// SplitMix64 finalizer over `base + tag * golden-ratio`; cheap, stateless
/// and identical on every platform, so every consumer of randomness can
/// carve its own stream out of one experiment seed.
pub(crate) fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
