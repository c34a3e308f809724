//! Synthetic classification tasks, forget/retain splits and batch streams.
//!
//! A task is a [`DatasetBundle`]: a train set whose labels may carry
//! injected label noise (the knob that makes small models memorise
//! individual samples), plus noise-free validation and test sets drawn
//! from the same Gaussian class clusters. The validation set is held out
//! hard: this module never hands out its samples, only its mean loss under
//! a given model.
//!
//! Splits designate a forget set either as a seeded random subset of train
//! or as every sample carrying one label. The [`PairedIterator`] drives
//! the unlearning loop: it walks the forget set in epochs while consuming
//! the retain set as one continuous shuffled stream that only reshuffles
//! on exhaustion — possibly in the middle of a forget epoch — and always
//! pairs a forget batch with an equally sized retain batch.
//!
//! Batch streams record which train rows they served (by original train
//! index), so a caller can audit after the fact that, say, a retrained
//! model never observed a forget sample.

use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{Batch, ModelParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::BufReader;
use std::path::Path;

/// A labelled sample collection with row-major features.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    features: Vec<f64>,
    labels: Vec<usize>,
    in_dim: usize,
}

impl LabeledSet {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, in_dim: usize) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "in_dim",
                reason: "must be positive".into(),
            });
        }
        if features.len() != labels.len() * in_dim {
            return Err(Error::ShapeMismatch {
                op: "LabeledSet::new",
                expected: format!("{} features", labels.len() * in_dim),
                got: format!("{}", features.len()),
            });
        }
        Ok(LabeledSet {
            features,
            labels,
            in_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.in_dim..(i + 1) * self.in_dim]
    }

    /// Materialise the rows at `indices` as a batch, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut feats = Vec::with_capacity(indices.len() * self.in_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidParameter {
                    name: "indices",
                    reason: format!("index {i} out of range for {} samples", self.len()),
                });
            }
            feats.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(feats, labels, self.in_dim)
    }

    /// The whole set as one batch.
    pub fn full_batch(&self) -> Result<Batch> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// Indices of every sample carrying `label`.
    pub fn indices_with_label(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

/// Geometry and noise parameters of a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub in_dim: usize,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub test_per_class: usize,
    /// Isotropic standard deviation of each cluster. Class means sit on
    /// the unit sphere, so values around 0.3-0.6 give overlapping classes
    /// and values well under 0.1 give cleanly separated ones.
    pub cluster_spread: f64,
    /// Fraction of train labels reassigned to a different class, chosen
    /// uniformly. Exactly `round(fraction * n_train)` labels are changed.
    pub label_noise_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 5,
            in_dim: 20,
            train_per_class: 200,
            validation_per_class: 50,
            test_per_class: 200,
            cluster_spread: 0.65,
            label_noise_fraction: 0.15,
        }
    }
}

/// A complete task: noisy train set, clean held-out validation and test.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    train: LabeledSet,
    validation: LabeledSet,
    test: LabeledSet,
    classes: usize,
    /// Pre-noise train labels (the cluster each sample was drawn from).
    clean_train_labels: Vec<usize>,
    /// Sorted train indices whose stored label differs from the clean one.
    noisy_indices: Vec<usize>,
}

impl DatasetBundle {
    /// Assemble a bundle from explicit parts (CSV loading, bindings).
    /// With no record of which labels were noise-corrupted, the stored
    /// train labels double as the clean ones.
    pub fn from_parts(train: LabeledSet, validation: LabeledSet, test: LabeledSet) -> Result<Self> {
        if train.is_empty() || validation.is_empty() || test.is_empty() {
            return Err(Error::InvalidParameter {
                name: "bundle",
                reason: "train, validation and test must all be non-empty".into(),
            });
        }
        if train.in_dim() != validation.in_dim() || train.in_dim() != test.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "DatasetBundle::from_parts",
                expected: format!("in_dim {}", train.in_dim()),
                got: format!(
                    "validation {}, test {}",
                    validation.in_dim(),
                    test.in_dim()
                ),
            });
        }
        let max_label = train
            .labels()
            .iter()
            .chain(validation.labels())
            .chain(test.labels())
            .max()
            .copied()
            .unwrap_or(0);
        let clean = train.labels().to_vec();
        Ok(DatasetBundle {
            classes: max_label + 1,
            clean_train_labels: clean,
            noisy_indices: Vec::new(),
            train,
            validation,
            test,
        })
    }

    pub fn train(&self) -> &LabeledSet {
        &self.train
    }

    pub fn test(&self) -> &LabeledSet {
        &self.test
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn in_dim(&self) -> usize {
        self.train.in_dim()
    }

    pub fn validation_len(&self) -> usize {
        self.validation.len()
    }

    /// Mean cross-entropy loss of `model` on the held-out validation set —
    /// the only view of validation this bundle exposes.
    pub fn validation_mean_loss(&self, model: &ModelParams) -> Result<f64> {
        let batch = self.validation.full_batch()?;
        Ok(model.forward(&batch)?.mean_loss())
    }

    /// Pre-noise train labels.
    pub fn clean_train_labels(&self) -> &[usize] {
        &self.clean_train_labels
    }

    /// Sorted train indices whose label was reassigned by noise injection.
    pub fn noisy_indices(&self) -> &[usize] {
        &self.noisy_indices
    }
}

/// Draw `n` samples around `mean` with isotropic spread.
fn draw_cluster(
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    spread: f64,
    n: usize,
    features: &mut Vec<f64>,
) {
    for _ in 0..n {
        for &m in mean {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + spread * z);
        }
    }
}

/// Generate a synthetic Gaussian-cluster task.
///
/// Class means are unit vectors drawn once per seed; train, validation and
/// test are sampled independently around them. Train rows are shuffled and
/// exactly `round(label_noise_fraction * n_train)` train labels are
/// reassigned to a uniformly chosen *different* class. Validation and test
/// stay noise-free. Deterministic in `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<DatasetBundle> {
    if spec.classes < 2 {
        return Err(Error::InvalidParameter {
            name: "classes",
            reason: format!("need at least 2, got {}", spec.classes),
        });
    }
    if spec.in_dim == 0 {
        return Err(Error::InvalidParameter {
            name: "in_dim",
            reason: "must be positive".into(),
        });
    }
    if spec.train_per_class == 0 || spec.validation_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::InvalidParameter {
            name: "per_class_counts",
            reason: "train, validation and test samples per class must be positive".into(),
        });
    }
    if !(spec.cluster_spread > 0.0) || !spec.cluster_spread.is_finite() {
        return Err(Error::InvalidParameter {
            name: "cluster_spread",
            reason: format!("must be positive and finite, got {}", spec.cluster_spread),
        });
    }
    if !(0.0..1.0).contains(&spec.label_noise_fraction) {
        return Err(Error::InvalidParameter {
            name: "label_noise_fraction",
            reason: format!("must be in [0, 1), got {}", spec.label_noise_fraction),
        });
    }

    // Class means: independent directions on the unit sphere.
    let mut rng_means = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        loop {
            let v: Vec<f64> = (0..spec.in_dim)
                .map(|_| rng_means.sample(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                means.push(v.iter().map(|x| x / norm).collect());
                break;
            }
        }
    }

    let draw_set = |stream: u64, per_class: usize| -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, stream));
        let mut features = Vec::with_capacity(per_class * spec.classes * spec.in_dim);
        let mut labels = Vec::with_capacity(per_class * spec.classes);
        for (c, mean) in means.iter().enumerate() {
            draw_cluster(&mut rng, mean, spec.cluster_spread, per_class, &mut features);
            labels.extend(std::iter::repeat(c).take(per_class));
        }
        (features, labels)
    };

    let (train_feats, train_labels) = draw_set(2, spec.train_per_class);
    let (val_feats, val_labels) = draw_set(3, spec.validation_per_class);
    let (test_feats, test_labels) = draw_set(4, spec.test_per_class);

    // Shuffle train rows so class identity is not encoded in row order.
    let n_train = train_labels.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut rng_order = ChaCha8Rng::seed_from_u64(mix_seed(seed, 6));
    order.shuffle(&mut rng_order);
    let mut shuffled_feats = Vec::with_capacity(train_feats.len());
    let mut clean_labels = Vec::with_capacity(n_train);
    for &i in &order {
        shuffled_feats.extend_from_slice(&train_feats[i * spec.in_dim..(i + 1) * spec.in_dim]);
        clean_labels.push(train_labels[i]);
    }

    // Inject label noise: exactly round(fraction * n) labels move to a
    // uniformly chosen different class.
    let mut stored_labels = clean_labels.clone();
    let n_noisy = (spec.label_noise_fraction * n_train as f64).round() as usize;
    let mut rng_noise = ChaCha8Rng::seed_from_u64(mix_seed(seed, 5));
    let mut pool: Vec<usize> = (0..n_train).collect();
    pool.shuffle(&mut rng_noise);
    let mut noisy_indices: Vec<usize> = pool[..n_noisy].to_vec();
    noisy_indices.sort_unstable();
    for &i in &noisy_indices {
        let offset = rng_noise.gen_range(1..spec.classes);
        stored_labels[i] = (clean_labels[i] + offset) % spec.classes;
    }

    Ok(DatasetBundle {
        train: LabeledSet::new(shuffled_feats, stored_labels, spec.in_dim)?,
        validation: LabeledSet::new(val_feats, val_labels, spec.in_dim)?,
        test: LabeledSet::new(test_feats, test_labels, spec.in_dim)?,
        classes: spec.classes,
        clean_train_labels: clean_labels,
        noisy_indices,
    })
}

/// How the forget set is designated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    /// A seeded random subset of `round(fraction * n_train)` train rows.
    RandomSubset { fraction: f64 },
    /// Every train row whose stored label equals `class`.
    ClassRemoval { class: usize },
}

impl SplitSpec {
    /// Value for the `fraction_or_class` report column.
    pub fn fraction_or_class(&self) -> String {
        match self {
            SplitSpec::RandomSubset { fraction } => format!("{fraction}"),
            SplitSpec::ClassRemoval { class } => format!("{class}"),
        }
    }
}

/// A disjoint partition of the train indices into forget and retain.
#[derive(Debug, Clone)]
pub struct Split {
    pub spec: SplitSpec,
    forget: Vec<usize>,
    retain: Vec<usize>,
}

impl Split {
    pub fn forget_indices(&self) -> &[usize] {
        &self.forget
    }

    pub fn retain_indices(&self) -> &[usize] {
        &self.retain
    }
}

/// Partition the bundle's train set per `spec`. Deterministic in `seed`
/// (the seed only matters for random subsets). Both sides of the partition
/// must end up non-empty.
pub fn make_split(bundle: &DatasetBundle, spec: &SplitSpec, seed: u64) -> Result<Split> {
    let n = bundle.train().len();
    let (forget, retain) = match *spec {
        SplitSpec::RandomSubset { fraction } => {
            if !(0.0..1.0).contains(&fraction) || !fraction.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "fraction",
                    reason: format!("must be in (0, 1), got {fraction}"),
                });
            }
            let n_forget = (fraction * n as f64).round() as usize;
            if n_forget == 0 || n_forget >= n {
                return Err(Error::InvalidParameter {
                    name: "fraction",
                    reason: format!(
                        "fraction {fraction} of {n} train samples leaves an empty side"
                    ),
                });
            }
            let mut pool: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 7));
            pool.shuffle(&mut rng);
            let mut forget: Vec<usize> = pool[..n_forget].to_vec();
            forget.sort_unstable();
            let forget_set: BTreeSet<usize> = forget.iter().copied().collect();
            let retain: Vec<usize> = (0..n).filter(|i| !forget_set.contains(i)).collect();
            (forget, retain)
        }
        SplitSpec::ClassRemoval { class } => {
            if class >= bundle.classes() {
                return Err(Error::InvalidParameter {
                    name: "class",
                    reason: format!("class {class} out of range for {} classes", bundle.classes()),
                });
            }
            let forget = bundle.train().indices_with_label(class);
            if forget.is_empty() || forget.len() == n {
                return Err(Error::InvalidParameter {
                    name: "class",
                    reason: format!("removing class {class} leaves an empty side"),
                });
            }
            let forget_set: BTreeSet<usize> = forget.iter().copied().collect();
            let retain: Vec<usize> = (0..n).filter(|i| !forget_set.contains(i)).collect();
            (forget, retain)
        }
    };
    Ok(Split {
        spec: *spec,
        forget,
        retain,
    })
}

/// One unlearning step's worth of data: a forget batch paired with an
/// equally sized retain batch, plus the original train indices of both.
#[derive(Debug)]
pub struct PairedStep {
    pub forget_batch: Batch,
    pub retain_batch: Batch,
    pub forget_indices: Vec<usize>,
    pub retain_indices: Vec<usize>,
}

/// Paired forget/retain batch stream.
///
/// The forget side is reshuffled at every forget epoch; the retain side is
/// one continuous stream with a persistent cursor that reshuffles only
/// when exhausted, which may happen in the middle of a forget epoch or
/// even a batch. Each step's retain batch has exactly the size of its
/// forget batch, so a trailing partial forget batch draws an equally small
/// retain batch.
pub struct PairedIterator<'a> {
    set: &'a LabeledSet,
    forget: Vec<usize>,
    batch_size: usize,
    rng_forget: ChaCha8Rng,
    rng_retain: ChaCha8Rng,
    retain_order: Vec<usize>,
    retain_cursor: usize,
    accessed: BTreeSet<usize>,
    retain_consumption: Vec<usize>,
}

impl<'a> PairedIterator<'a> {
    pub fn new(
        bundle: &'a DatasetBundle,
        split: &Split,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let min_side = split.forget_indices().len().min(split.retain_indices().len());
        if batch_size == 0 || batch_size > min_side {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: format!(
                    "must be in 1..={min_side} (smaller split side), got {batch_size}"
                ),
            });
        }
        let mut rng_retain = ChaCha8Rng::seed_from_u64(mix_seed(seed, 9));
        let mut retain_order = split.retain_indices().to_vec();
        retain_order.shuffle(&mut rng_retain);
        Ok(PairedIterator {
            set: bundle.train(),
            forget: split.forget_indices().to_vec(),
            batch_size,
            rng_forget: ChaCha8Rng::seed_from_u64(mix_seed(seed, 8)),
            rng_retain,
            retain_order,
            retain_cursor: 0,
            accessed: BTreeSet::new(),
            retain_consumption: Vec::new(),
        })
    }

    /// Optimizer steps per forget epoch: `ceil(|forget| / batch_size)`.
    pub fn steps_per_epoch(&self) -> usize {
        self.forget.len().div_ceil(self.batch_size)
    }

    /// Draw the next `k` retain indices off the continuous stream.
    fn draw_retain(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.retain_cursor == self.retain_order.len() {
                self.retain_order.shuffle(&mut self.rng_retain);
                self.retain_cursor = 0;
            }
            out.push(self.retain_order[self.retain_cursor]);
            self.retain_cursor += 1;
        }
        out
    }

    /// Produce one forget epoch: a fresh shuffle of the forget set chunked
    /// into batches, each paired with an equal draw from the retain stream.
    pub fn forget_epoch(&mut self) -> Result<Vec<PairedStep>> {
        let mut forget_order = self.forget.clone();
        forget_order.shuffle(&mut self.rng_forget);
        let mut steps = Vec::with_capacity(self.steps_per_epoch());
        for chunk in forget_order.chunks(self.batch_size) {
            let retain_indices = self.draw_retain(chunk.len());
            let forget_batch = self.set.batch(chunk)?;
            let retain_batch = self.set.batch(&retain_indices)?;
            self.accessed.extend(chunk.iter().copied());
            self.accessed.extend(retain_indices.iter().copied());
            self.retain_consumption.extend(retain_indices.iter().copied());
            steps.push(PairedStep {
                forget_batch,
                retain_batch,
                forget_indices: chunk.to_vec(),
                retain_indices,
            });
        }
        Ok(steps)
    }

    /// Sorted original train indices served so far (both sides).
    pub fn accessed_indices(&self) -> Vec<usize> {
        self.accessed.iter().copied().collect()
    }

    /// Retain indices in consumption order, for coverage auditing.
    pub fn retain_consumption(&self) -> &[usize] {
        &self.retain_consumption
    }
}

/// Epoch-shuffled batch stream over a fixed set of train indices, used by
/// plain supervised training. Reshuffles every epoch. Records every index
/// it serves.
pub struct ShuffledBatches<'a> {
    set: &'a LabeledSet,
    indices: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
    accessed: BTreeSet<usize>,
}

impl<'a> ShuffledBatches<'a> {
    pub fn new(
        set: &'a LabeledSet,
        indices: Vec<usize>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter {
                name: "indices",
                reason: "empty index set".into(),
            });
        }
        if batch_size == 0 || batch_size > indices.len() {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: format!("must be in 1..={}, got {batch_size}", indices.len()),
            });
        }
        Ok(ShuffledBatches {
            set,
            indices,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 10)),
            accessed: BTreeSet::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }

    /// One epoch of batches under a fresh shuffle.
    pub fn epoch(&mut self) -> Result<Vec<(Batch, Vec<usize>)>> {
        self.indices.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(self.steps_per_epoch());
        for chunk in self.indices.chunks(self.batch_size) {
            self.accessed.extend(chunk.iter().copied());
            out.push((self.set.batch(chunk)?, chunk.to_vec()));
        }
        Ok(out)
    }

    /// Sorted original indices served so far.
    pub fn accessed_indices(&self) -> Vec<usize> {
        self.accessed.iter().copied().collect()
    }
}

/// Load a labelled set from a CSV file: one header row, then feature
/// columns followed by one trailing non-negative integer label column.
pub fn load_csv(path: &Path) -> Result<LabeledSet> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header_len = reader
        .headers()
        .map_err(|e| Error::DataFormat {
            line: 1,
            reason: format!("unreadable header: {e}"),
        })?
        .len();
    if header_len < 2 {
        return Err(Error::DataFormat {
            line: 1,
            reason: format!("need at least one feature column and a label column, got {header_len} columns"),
        });
    }
    let in_dim = header_len - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::DataFormat {
            line,
            reason: format!("{e}"),
        })?;
        if record.len() != header_len {
            return Err(Error::DataFormat {
                line,
                reason: format!("expected {header_len} columns, got {}", record.len()),
            });
        }
        for field in record.iter().take(in_dim) {
            let v: f64 = field.parse().map_err(|_| Error::DataFormat {
                line,
                reason: format!("feature column holds non-numeric value `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::DataFormat {
                    line,
                    reason: format!("non-finite feature value `{field}`"),
                });
            }
            features.push(v);
        }
        let label_field = record.get(in_dim).unwrap();
        let label: usize = label_field.parse().map_err(|_| Error::DataFormat {
            line,
            reason: format!("label column holds `{label_field}`, expected a non-negative integer"),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::DataFormat {
            line: 2,
            reason: "no data rows".into(),
        });
    }
    LabeledSet::new(features, labels, in_dim)
}

/// Load a full bundle from three CSV files with identical column layout.
pub fn load_csv_bundle(train: &Path, validation: &Path, test: &Path) -> Result<DatasetBundle> {
    DatasetBundle::from_parts(load_csv(train)?, load_csv(validation)?, load_csv(test)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            in_dim: 6,
            train_per_class: 40,
            validation_per_class: 10,
            test_per_class: 20,
            cluster_spread: 0.3,
            label_noise_fraction: 0.15,
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic(&spec, 5).unwrap();
        let b = generate_synthetic(&spec, 5).unwrap();
        let c = generate_synthetic(&spec, 6).unwrap();
        assert_eq!(a.train().labels(), b.train().labels());
        assert_eq!(a.train().row(7), b.train().row(7));
        assert_eq!(a.noisy_indices(), b.noisy_indices());
        assert_ne!(a.train().row(7), c.train().row(7));
    }

    #[test]
    fn sizes_and_label_ranges_are_correct() {
        let spec = small_spec();
        let bundle = generate_synthetic(&spec, 1).unwrap();
        assert_eq!(bundle.train().len(), 120);
        assert_eq!(bundle.validation_len(), 30);
        assert_eq!(bundle.test().len(), 60);
        assert_eq!(bundle.classes(), 3);
        assert!(bundle.train().labels().iter().all(|&y| y < 3));
        assert!(bundle.test().labels().iter().all(|&y| y < 3));
        // Clean labels are balanced per class.
        for c in 0..3 {
            let count = bundle
                .clean_train_labels()
                .iter()
                .filter(|&&y| y == c)
                .count();
            assert_eq!(count, 40);
        }
    }

    #[test]
    fn label_noise_count_is_exact_and_always_changes_the_label() {
        let spec = small_spec();
        let bundle = generate_synthetic(&spec, 2).unwrap();
        let expected = (0.15f64 * 120.0).round() as usize;
        let differing: Vec<usize> = (0..120)
            .filter(|&i| bundle.train().labels()[i] != bundle.clean_train_labels()[i])
            .collect();
        assert_eq!(differing.len(), expected);
        assert_eq!(differing, bundle.noisy_indices());

        let clean = generate_synthetic(
            &SyntheticSpec {
                label_noise_fraction: 0.0,
                ..small_spec()
            },
            2,
        )
        .unwrap();
        assert_eq!(clean.train().labels(), clean.clean_train_labels());
        assert!(clean.noisy_indices().is_empty());
    }

    #[test]
    fn tight_clusters_put_test_points_nearest_their_own_centroid() {
        let spec = SyntheticSpec {
            cluster_spread: 0.05,
            label_noise_fraction: 0.0,
            ..small_spec()
        };
        let bundle = generate_synthetic(&spec, 3).unwrap();
        // Empirical class centroids from the train set.
        let d = spec.in_dim;
        let mut centroids = vec![vec![0.0; d]; spec.classes];
        let mut counts = vec![0usize; spec.classes];
        for i in 0..bundle.train().len() {
            let y = bundle.clean_train_labels()[i];
            counts[y] += 1;
            for (acc, v) in centroids[y].iter_mut().zip(bundle.train().row(i)) {
                *acc += v;
            }
        }
        for (c, count) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= *count as f64;
            }
        }
        let mut correct = 0;
        for i in 0..bundle.test().len() {
            let x = bundle.test().row(i);
            let nearest = (0..spec.classes)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if nearest == bundle.test().labels()[i] {
                correct += 1;
            }
        }
        assert!(
            correct as f64 >= 0.99 * bundle.test().len() as f64,
            "only {correct}/{} test points nearest their own centroid",
            bundle.test().len()
        );
    }

    #[test]
    fn generation_rejects_bad_parameters() {
        let base = small_spec();
        assert!(generate_synthetic(&SyntheticSpec { classes: 1, ..base.clone() }, 0).is_err());
        assert!(generate_synthetic(&SyntheticSpec { cluster_spread: 0.0, ..base.clone() }, 0).is_err());
        assert!(generate_synthetic(&SyntheticSpec { cluster_spread: -1.0, ..base.clone() }, 0).is_err());
        assert!(generate_synthetic(&SyntheticSpec { label_noise_fraction: 1.0, ..base.clone() }, 0).is_err());
        assert!(generate_synthetic(&SyntheticSpec { train_per_class: 0, ..base }, 0).is_err());
    }

    #[test]
    fn random_subset_split_partitions_the_train_set() {
        let bundle = generate_synthetic(&small_spec(), 4).unwrap();
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.15 }, 11).unwrap();
        assert_eq!(split.forget_indices().len(), 18); // round(0.15 * 120)
        assert_eq!(split.retain_indices().len(), 102);
        let mut all: Vec<usize> = split
            .forget_indices()
            .iter()
            .chain(split.retain_indices())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
        // Deterministic in the seed.
        let again = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.15 }, 11).unwrap();
        assert_eq!(split.forget_indices(), again.forget_indices());
        let other = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.15 }, 12).unwrap();
        assert_ne!(split.forget_indices(), other.forget_indices());
    }

    #[test]
    fn class_removal_split_takes_exactly_one_label() {
        let bundle = generate_synthetic(&small_spec(), 4).unwrap();
        let split = make_split(&bundle, &SplitSpec::ClassRemoval { class: 1 }, 0).unwrap();
        for &i in split.forget_indices() {
            assert_eq!(bundle.train().labels()[i], 1);
        }
        for &i in split.retain_indices() {
            assert_ne!(bundle.train().labels()[i], 1);
        }
        assert_eq!(
            split.forget_indices().len() + split.retain_indices().len(),
            bundle.train().len()
        );
    }

    #[test]
    fn splits_reject_degenerate_requests() {
        let bundle = generate_synthetic(&small_spec(), 4).unwrap();
        assert!(make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.0 }, 0).is_err());
        assert!(make_split(&bundle, &SplitSpec::RandomSubset { fraction: 1.0 }, 0).is_err());
        assert!(make_split(&bundle, &SplitSpec::RandomSubset { fraction: -0.5 }, 0).is_err());
        // Rounds to zero forget samples.
        assert!(make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.001 }, 0).is_err());
        assert!(make_split(&bundle, &SplitSpec::ClassRemoval { class: 3 }, 0).is_err());
    }

    #[test]
    fn paired_iterator_pairs_equal_sizes_with_partial_tail() {
        let spec = SyntheticSpec {
            classes: 2,
            train_per_class: 60, // 120 train
            ..small_spec()
        };
        let bundle = generate_synthetic(&spec, 9).unwrap();
        // 30 forget / 90 retain, batch 25 -> steps of size 25 and 5.
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.25 }, 1).unwrap();
        let mut it = PairedIterator::new(&bundle, &split, 25, 2).unwrap();
        assert_eq!(it.steps_per_epoch(), 2);
        let steps = it.forget_epoch().unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].forget_batch.len(), 25);
        assert_eq!(steps[0].retain_batch.len(), 25);
        assert_eq!(steps[1].forget_batch.len(), 5);
        assert_eq!(steps[1].retain_batch.len(), 5);
        // Forget epoch covers the whole forget set exactly once.
        let mut seen: Vec<usize> = steps
            .iter()
            .flat_map(|s| s.forget_indices.iter().copied())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, split.forget_indices());
    }

    #[test]
    fn retain_stream_covers_every_index_once_per_pass() {
        // 120 train, 30 forget, 90 retain, batch 15: 2 steps/epoch consume
        // 30 retain per epoch; a full retain pass spans 3 forget epochs.
        let spec = SyntheticSpec {
            classes: 2,
            train_per_class: 60,
            ..small_spec()
        };
        let bundle = generate_synthetic(&spec, 10).unwrap();
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.25 }, 3).unwrap();
        let mut it = PairedIterator::new(&bundle, &split, 15, 4).unwrap();
        for _ in 0..6 {
            it.forget_epoch().unwrap();
        }
        let consumption = it.retain_consumption();
        assert_eq!(consumption.len(), 180); // two full passes
        let mut expected = split.retain_indices().to_vec();
        expected.sort_unstable();
        for pass in consumption.chunks(90) {
            let mut sorted = pass.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, expected, "a retain pass repeated or skipped an index");
        }
    }

    #[test]
    fn retain_stream_survives_mid_batch_exhaustion() {
        // 13 retain with batch 5 forces a reshuffle inside a batch draw.
        let spec = SyntheticSpec {
            classes: 2,
            in_dim: 3,
            train_per_class: 9, // 18 train
            validation_per_class: 2,
            test_per_class: 2,
            cluster_spread: 0.3,
            label_noise_fraction: 0.0,
        };
        let bundle = generate_synthetic(&spec, 11).unwrap();
        // 5 forget / 13 retain.
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.278 }, 5).unwrap();
        assert_eq!(split.forget_indices().len(), 5);
        let mut it = PairedIterator::new(&bundle, &split, 5, 6).unwrap();
        for _ in 0..13 {
            let steps = it.forget_epoch().unwrap();
            for s in &steps {
                assert_eq!(s.forget_batch.len(), s.retain_batch.len());
            }
        }
        // 13 epochs * 5 = 65 = 5 full passes of 13.
        let consumption = it.retain_consumption();
        assert_eq!(consumption.len(), 65);
        let mut expected = split.retain_indices().to_vec();
        expected.sort_unstable();
        for pass in consumption.chunks(13) {
            let mut sorted = pass.to_vec();
            sorted.sort_unstable();
            assert_eq!(sorted, expected);
        }
    }

    #[test]
    fn paired_iterator_is_seed_deterministic() {
        let bundle = generate_synthetic(&small_spec(), 12).unwrap();
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.2 }, 1).unwrap();
        let mut a = PairedIterator::new(&bundle, &split, 8, 77).unwrap();
        let mut b = PairedIterator::new(&bundle, &split, 8, 77).unwrap();
        for _ in 0..4 {
            let sa = a.forget_epoch().unwrap();
            let sb = b.forget_epoch().unwrap();
            for (x, y) in sa.iter().zip(&sb) {
                assert_eq!(x.forget_indices, y.forget_indices);
                assert_eq!(x.retain_indices, y.retain_indices);
            }
        }
    }

    #[test]
    fn paired_iterator_rejects_oversized_batches() {
        let bundle = generate_synthetic(&small_spec(), 13).unwrap();
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.1 }, 1).unwrap();
        assert_eq!(split.forget_indices().len(), 12);
        assert!(PairedIterator::new(&bundle, &split, 13, 0).is_err());
        assert!(PairedIterator::new(&bundle, &split, 0, 0).is_err());
        assert!(PairedIterator::new(&bundle, &split, 12, 0).is_ok());
    }

    #[test]
    fn shuffled_batches_cover_their_index_set_each_epoch() {
        let bundle = generate_synthetic(&small_spec(), 14).unwrap();
        let indices: Vec<usize> = (0..50).collect();
        let mut stream = ShuffledBatches::new(bundle.train(), indices.clone(), 8, 5).unwrap();
        assert_eq!(stream.steps_per_epoch(), 7);
        for _ in 0..3 {
            let batches = stream.epoch().unwrap();
            let mut seen: Vec<usize> = batches.iter().flat_map(|(_, idx)| idx.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, indices);
        }
        assert_eq!(stream.accessed_indices(), indices);
    }

    #[test]
    fn access_log_reflects_only_served_indices() {
        let bundle = generate_synthetic(&small_spec(), 15).unwrap();
        let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.2 }, 2).unwrap();
        let mut stream =
            ShuffledBatches::new(bundle.train(), split.retain_indices().to_vec(), 16, 3).unwrap();
        stream.epoch().unwrap();
        let accessed = stream.accessed_indices();
        assert_eq!(accessed, split.retain_indices());
        // No forget index was ever served.
        for i in split.forget_indices() {
            assert!(!accessed.contains(i));
        }
    }

    #[test]
    fn validation_exposes_only_its_mean_loss() {
        let bundle = generate_synthetic(&small_spec(), 16).unwrap();
        let model = crate::nn::ModelParams::init(6, &[8], 3, 0).unwrap();
        let loss = bundle.validation_mean_loss(&model).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(bundle.validation_len(), 30);
    }

    #[test]
    fn csv_roundtrip_and_error_reporting() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        let mut f = std::fs::File::create(&good).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "0.5,-1.25,0").unwrap();
        writeln!(f, "1.0,2.0,1").unwrap();
        writeln!(f, "-3.5,0.25,2").unwrap();
        drop(f);
        let set = load_csv(&good).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.in_dim(), 2);
        assert_eq!(set.row(0), &[0.5, -1.25]);
        assert_eq!(set.labels(), &[0, 1, 2]);

        let ragged = dir.path().join("ragged.csv");
        let mut f = std::fs::File::create(&ragged).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "0.5,1.0,0").unwrap();
        writeln!(f, "0.5,1.0").unwrap();
        drop(f);
        let err = load_csv(&ragged).unwrap_err();
        match err {
            Error::DataFormat { line, .. } => assert_eq!(line, 3),
            other => panic!("expected DataFormat, got {other:?}"),
        }

        let bad_label = dir.path().join("bad_label.csv");
        let mut f = std::fs::File::create(&bad_label).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "0.5,1.0,1.5").unwrap();
        drop(f);
        assert!(matches!(
            load_csv(&bad_label),
            Err(Error::DataFormat { line: 2, .. })
        ));

        let not_numeric = dir.path().join("nan.csv");
        let mut f = std::fs::File::create(&not_numeric).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "abc,1.0,0").unwrap();
        drop(f);
        assert!(load_csv(&not_numeric).is_err());

        assert!(load_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn csv_bundle_requires_consistent_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let narrow = dir.path().join("narrow.csv");
        let mut f = std::fs::File::create(&narrow).unwrap();
        writeln!(f, "x0,label").unwrap();
        writeln!(f, "0.5,0").unwrap();
        writeln!(f, "0.7,1").unwrap();
        drop(f);
        let wide = dir.path().join("wide.csv");
        let mut f = std::fs::File::create(&wide).unwrap();
        writeln!(f, "x0,x1,label").unwrap();
        writeln!(f, "0.5,1.0,0").unwrap();
        drop(f);
        assert!(load_csv_bundle(&narrow, &narrow, &narrow).is_ok());
        assert!(load_csv_bundle(&narrow, &narrow, &wide).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_random_split_always_partitions(
            seed in 0u64..500,
            fraction in 0.02f64..0.9,
        ) {
            let bundle = generate_synthetic(&small_spec(), seed).unwrap();
            let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction }, seed).unwrap();
            prop_assert!(!split.forget_indices().is_empty());
            prop_assert!(!split.retain_indices().is_empty());
            let mut all: Vec<usize> = split
                .forget_indices()
                .iter()
                .chain(split.retain_indices())
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..bundle.train().len()).collect::<Vec<_>>());
            let expected = (fraction * 120.0).round() as usize;
            prop_assert_eq!(split.forget_indices().len(), expected);
        }

        #[test]
        fn prop_paired_batches_always_match_sizes(
            seed in 0u64..200,
            batch in 1usize..18,
        ) {
            let bundle = generate_synthetic(&small_spec(), seed).unwrap();
            let split = make_split(&bundle, &SplitSpec::RandomSubset { fraction: 0.15 }, seed).unwrap();
            let mut it = PairedIterator::new(&bundle, &split, batch, seed).unwrap();
            for _ in 0..3 {
                for step in it.forget_epoch().unwrap() {
                    prop_assert_eq!(step.forget_batch.len(), step.retain_batch.len());
                }
            }
        }
    }
}
