//! Multinomial classifiers over a flat parameter vector.
//!
//! Models are either plain multinomial logistic regression or small ReLU
//! MLPs (one or two hidden layers). All parameters live in a single flat
//! `Vec<f64>` so the optimizer and the unlearning engine can treat a model
//! as one vector: per layer the row-major weight matrix (rows = output
//! units) is laid out first, then the bias vector.
//!
//! Numerics are deliberately boring and deterministic: log-softmax with
//! max-subtraction, losses in nats computed from log-probabilities (never
//! from re-exponentiated probabilities), and fixed summation order in the
//! backward pass so identical inputs give bit-identical gradients.

use crate::error::{Error, Result};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A mini-batch: `n` feature rows of width `in_dim` plus one integer label
/// per row.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    in_dim: usize,
}

impl Batch {
    /// Build a batch from a row-major feature buffer and labels.
    ///
    /// Rejects ragged buffers, empty batches, and non-finite features.
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, in_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: "empty batch".into(),
            });
        }
        if inputs.len() != labels.len() * in_dim {
            return Err(Error::ShapeMismatch {
                op: "Batch::new",
                expected: format!("{} * {} = {} features", labels.len(), in_dim, labels.len() * in_dim),
                got: format!("{} features", inputs.len()),
            });
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "batch",
                reason: format!("non-finite feature at flat index {i}"),
            });
        }
        Ok(Batch {
            n: labels.len(),
            inputs,
            labels,
            in_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Feature row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }
}

/// Everything a forward pass produces, per sample.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Row-major `n x classes` softmax probabilities.
    pub probs: Vec<f64>,
    /// Cross-entropy loss in nats for each sample.
    pub per_sample_loss: Vec<f64>,
    /// Predictive entropy in nats for each sample.
    pub per_sample_entropy: Vec<f64>,
    /// Number of classes (row width of `probs`).
    pub classes: usize,
}

impl ForwardResult {
    /// Mean of the per-sample losses.
    pub fn mean_loss(&self) -> f64 {
        mean(&self.per_sample_loss)
    }

    /// Probability row for sample `i`.
    pub fn probs_row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }
}

/// Classifier parameters: layer shapes plus one flat value vector.
///
/// `shapes[l] = (fan_in, fan_out)`; consecutive layers must chain
/// (`fan_out` of layer `l` equals `fan_in` of layer `l+1`). Hidden layers
/// use ReLU; the final layer feeds softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shapes: Vec<(usize, usize)>,
    values: Vec<f64>,
}

/// Number of values a layer stack needs.
fn param_count(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|&(i, o)| i * o + o).sum()
}

impl ModelParams {
    /// Xavier-uniform initialisation: weights drawn from
    /// `U(-limit, limit)` with `limit = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero. Deterministic in `seed`.
    pub fn init(in_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "in_dim",
                reason: "must be positive".into(),
            });
        }
        if classes < 2 {
            return Err(Error::InvalidParameter {
                name: "classes",
                reason: format!("need at least 2 classes, got {classes}"),
            });
        }
        if hidden.len() > 2 {
            return Err(Error::InvalidParameter {
                name: "hidden",
                reason: format!("at most 2 hidden layers supported, got {}", hidden.len()),
            });
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParameter {
                name: "hidden",
                reason: "hidden widths must be positive".into(),
            });
        }
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let shapes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[0], w[1])).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(param_count(&shapes));
        for &(fan_in, fan_out) in &shapes {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit);
            for _ in 0..fan_in * fan_out {
                values.push(dist.sample(&mut rng));
            }
            values.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(ModelParams { shapes, values })
    }

    /// Rebuild a model from stored shapes and values (cache loads, Python).
    pub fn from_parts(shapes: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidParameter {
                name: "shapes",
                reason: "need at least one layer".into(),
            });
        }
        for w in shapes.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::ShapeMismatch {
                    op: "ModelParams::from_parts",
                    expected: format!("layer fan_in {}", w[0].1),
                    got: format!("{}", w[1].0),
                });
            }
        }
        let expected = param_count(&shapes);
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "ModelParams::from_parts",
                expected: format!("{expected} values"),
                got: format!("{}", values.len()),
            });
        }
        Ok(ModelParams { shapes, values })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn in_dim(&self) -> usize {
        self.shapes[0].0
    }

    pub fn classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1].1
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat offset of layer `l`'s weight block; biases follow the weights.
    fn layer_offset(&self, l: usize) -> usize {
        self.shapes[..l].iter().map(|&(i, o)| i * o + o).sum()
    }

    fn weights(&self, l: usize) -> &[f64] {
        let (fan_in, fan_out) = self.shapes[l];
        let off = self.layer_offset(l);
        &self.values[off..off + fan_in * fan_out]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let (fan_in, fan_out) = self.shapes[l];
        let off = self.layer_offset(l) + fan_in * fan_out;
        &self.values[off..off + fan_out]
    }

    /// Affine layer output `W x + b` for one input vector.
    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (fan_in, fan_out) = self.shapes[l];
        debug_assert_eq!(x.len(), fan_in);
        let w = self.weights(l);
        let b = self.biases(l);
        out.clear();
        for u in 0..fan_out {
            let row = &w[u * fan_in..(u + 1) * fan_in];
            let mut acc = b[u];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Forward pass over a batch: probabilities, per-sample cross-entropy
    /// loss and per-sample predictive entropy, all in nats.
    pub fn forward(&self, batch: &Batch) -> Result<ForwardResult> {
        self.check_batch(batch)?;
        let classes = self.classes();
        let n = batch.len();
        let mut probs = Vec::with_capacity(n * classes);
        let mut per_sample_loss = Vec::with_capacity(n);
        let mut per_sample_entropy = Vec::with_capacity(n);

        let mut cur = Vec::new();
        let mut next = Vec::new();
        for i in 0..n {
            cur.clear();
            cur.extend_from_slice(batch.row(i));
            for l in 0..self.shapes.len() {
                self.affine(l, &cur, &mut next);
                if l + 1 < self.shapes.len() {
                    for v in next.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                std::mem::swap(&mut cur, &mut next);
            }
            // `cur` now holds the logits.
            let (row_probs, row_logp) = log_softmax(&cur);
            per_sample_loss.push(-row_logp[batch.labels[i]]);
            let mut h = 0.0;
            for (p, lp) in row_probs.iter().zip(&row_logp) {
                h -= p * lp;
            }
            per_sample_entropy.push(h);
            probs.extend_from_slice(&row_probs);
        }
        Ok(ForwardResult {
            probs,
            per_sample_loss,
            per_sample_entropy,
            classes,
        })
    }

    /// Mean cross-entropy loss over the batch together with its analytic
    /// gradient with respect to the flat parameter vector.
    ///
    /// Summation order is fixed (samples in batch order, layers back to
    /// front), so identical inputs produce bit-identical gradients.
    pub fn grad_mean_loss(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let n_layers = self.shapes.len();
        let n = batch.len();
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![0.0; self.values.len()];
        let mut loss_sum = 0.0;

        // Per-sample forward with stored post-activation values, then
        // backprop. Batch sizes here are tens of samples, so the simple
        // sample-at-a-time loop is plenty and keeps the order deterministic.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        for i in 0..n {
            activations.clear();
            activations.push(batch.row(i).to_vec());
            for l in 0..n_layers {
                let mut out = Vec::new();
                self.affine(l, &activations[l], &mut out);
                if l + 1 < n_layers {
                    for v in out.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                activations.push(out);
            }
            let logits = &activations[n_layers];
            let (row_probs, row_logp) = log_softmax(logits);
            loss_sum += -row_logp[batch.labels[i]];

            // delta = d(mean loss)/d(logits) for this sample.
            let mut delta: Vec<f64> = row_probs.iter().map(|p| p * inv_n).collect();
            delta[batch.labels[i]] -= inv_n;

            for l in (0..n_layers).rev() {
                let (fan_in, fan_out) = self.shapes[l];
                let off = self.layer_offset(l);
                let input = &activations[l];
                let w = self.weights(l);
                // Weight and bias gradients.
                for u in 0..fan_out {
                    let d = delta[u];
                    let grow = &mut grad[off + u * fan_in..off + (u + 1) * fan_in];
                    for (g, x) in grow.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    grad[off + fan_in * fan_out + u] += d;
                }
                if l > 0 {
                    // Propagate through the ReLU of the previous layer:
                    // its derivative is 1 exactly where the stored
                    // activation is positive.
                    let mut prev = vec![0.0; fan_in];
                    for u in 0..fan_out {
                        let d = delta[u];
                        let row = &w[u * fan_in..(u + 1) * fan_in];
                        for (p, wv) in prev.iter_mut().zip(row) {
                            *p += d * wv;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok((loss_sum * inv_n, grad))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.in_dim() != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                expected: format!("in_dim {}", self.in_dim()),
                got: format!("{}", batch.in_dim()),
            });
        }
        let classes = self.classes();
        for &y in batch.labels() {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
        }
        Ok(())
    }
}

/// Stable softmax via max-subtraction. Returns `(probs, log_probs)`.
fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &l in logits {
        sum += (l - m).exp();
    }
    let lse = m + sum.ln();
    let logp: Vec<f64> = logits.iter().map(|&l| l - lse).collect();
    let probs: Vec<f64> = logp.iter().map(|&lp| lp.exp()).collect();
    (probs, logp)
}

/// Shannon entropy in nats of an explicit probability vector.
///
/// The vector must be non-negative and sum to one within `1e-6`;
/// zero entries contribute zero (`0 * ln 0 = 0`).
pub fn entropy_of(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    let mut sum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a value in [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "entries sum to {sum}, expected 1 within 1e-6"
        )));
    }
    let mut h = 0.0;
    for &p in dist {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Arithmetic mean; zero for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!(
            (a - b).abs() <= tol,
            "{what}: {a} vs {b} (diff {})",
            (a - b).abs()
        );
    }

    /// Deterministic pseudo-random batch for a given model geometry.
    fn random_batch(in_dim: usize, classes: usize, n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..n * in_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        Batch::new(inputs, labels, in_dim).unwrap()
    }

    // ---- reference oracle: straight-line forward for a fixed 2-3-2 MLP ----
    //
    // Hand-rolled scalar arithmetic, no shared code with the implementation
    // above. Weights are written out explicitly.
    #[test]
    fn forward_matches_straight_line_reference() {
        // Layer 1: 2 -> 3 (ReLU), layer 2: 3 -> 2 (softmax).
        let w1: [[f64; 2]; 3] = [[0.5, -0.3], [0.8, 0.1], [-0.6, 0.9]];
        let b1: [f64; 3] = [0.1, -0.2, 0.05];
        let w2: [[f64; 3]; 2] = [[1.1, -0.7, 0.4], [-0.5, 0.6, 0.2]];
        let b2: [f64; 2] = [0.0, 0.3];
        let x: [f64; 2] = [0.7, -1.2];
        let y = 1usize;

        // Straight-line reference.
        let h0 = (w1[0][0] * x[0] + w1[0][1] * x[1] + b1[0]).max(0.0);
        let h1 = (w1[1][0] * x[0] + w1[1][1] * x[1] + b1[1]).max(0.0);
        let h2 = (w1[2][0] * x[0] + w1[2][1] * x[1] + b1[2]).max(0.0);
        let z0 = w2[0][0] * h0 + w2[0][1] * h1 + w2[0][2] * h2 + b2[0];
        let z1 = w2[1][0] * h0 + w2[1][1] * h1 + w2[1][2] * h2 + b2[1];
        let m = z0.max(z1);
        let e0 = (z0 - m).exp();
        let e1 = (z1 - m).exp();
        let p0 = e0 / (e0 + e1);
        let p1 = e1 / (e0 + e1);
        let ref_loss = -(p1.ln());
        let ref_entropy = -(p0 * p0.ln() + p1 * p1.ln());

        // Same numbers through the implementation.
        let mut values = Vec::new();
        for row in &w1 {
            values.extend_from_slice(row);
        }
        values.extend_from_slice(&b1);
        for row in &w2 {
            values.extend_from_slice(row);
        }
        values.extend_from_slice(&b2);
        let model = ModelParams::from_parts(vec![(2, 3), (3, 2)], values).unwrap();
        let batch = Batch::new(x.to_vec(), vec![y], 2).unwrap();
        let out = model.forward(&batch).unwrap();

        assert_close(out.probs[0], p0, 1e-10, "p0");
        assert_close(out.probs[1], p1, 1e-10, "p1");
        assert_close(out.per_sample_loss[0], ref_loss, 1e-10, "loss");
        assert_close(out.per_sample_entropy[0], ref_entropy, 1e-10, "entropy");
    }

    #[test]
    fn loss_is_negative_log_prob_of_true_class() {
        let model = ModelParams::init(4, &[6], 3, 7).unwrap();
        let batch = random_batch(4, 3, 12, 8);
        let out = model.forward(&batch).unwrap();
        for i in 0..batch.len() {
            let p_true = out.probs_row(i)[batch.labels()[i]];
            assert_close(
                out.per_sample_loss[i],
                -p_true.ln(),
                1e-12,
                "loss vs -ln p_true",
            );
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let model = ModelParams::init(5, &[8, 4], 4, 3).unwrap();
        let batch = random_batch(5, 4, 20, 4);
        let out = model.forward(&batch).unwrap();
        for i in 0..batch.len() {
            let s: f64 = out.probs_row(i).iter().sum();
            assert_close(s, 1.0, 1e-10, "row sum");
            assert!(out.probs_row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        // Adding a constant to every final-layer bias shifts all logits by
        // that constant and must leave the probabilities unchanged.
        let model = ModelParams::init(3, &[5], 4, 11).unwrap();
        let batch = random_batch(3, 4, 9, 12);
        let base = model.forward(&batch).unwrap();

        let mut shifted = model.clone();
        let n = shifted.n_params();
        let classes = shifted.classes();
        for v in shifted.values_mut()[n - classes..].iter_mut() {
            *v += 37.5;
        }
        let out = shifted.forward(&batch).unwrap();
        for (a, b) in base.probs.iter().zip(&out.probs) {
            assert_close(*a, *b, 1e-10, "shifted probs");
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut model = ModelParams::init(2, &[], 3, 1).unwrap();
        for v in model.values_mut() {
            *v = 400.0;
        }
        let batch = Batch::new(vec![1.0, 1.0], vec![0], 2).unwrap();
        let out = model.forward(&batch).unwrap();
        assert!(out.probs.iter().all(|p| p.is_finite()));
        assert!(out.per_sample_loss[0].is_finite());
        assert!(out.per_sample_entropy[0].is_finite());
    }

    // ---- gradient oracle: central finite differences ----

    fn finite_difference_grad(model: &ModelParams, batch: &Batch, h: f64) -> Vec<f64> {
        let mut fd = Vec::with_capacity(model.n_params());
        for k in 0..model.n_params() {
            let mut plus = model.clone();
            plus.values_mut()[k] += h;
            let mut minus = model.clone();
            minus.values_mut()[k] -= h;
            let lp = plus.forward(batch).unwrap().mean_loss();
            let lm = minus.forward(batch).unwrap().mean_loss();
            fd.push((lp - lm) / (2.0 * h));
        }
        fd
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences_across_shapes() {
        let shapes: [(usize, Vec<usize>, usize); 4] = [
            (3, vec![], 2),
            (4, vec![6], 3),
            (5, vec![8, 4], 4),
            (2, vec![3], 5),
        ];
        for (case, (in_dim, hidden, classes)) in shapes.iter().enumerate() {
            for seed in 0..4u64 {
                let model =
                    ModelParams::init(*in_dim, hidden, *classes, 100 + seed).unwrap();
                let batch = random_batch(*in_dim, *classes, 7, 200 + seed);
                let (_, analytic) = model.grad_mean_loss(&batch).unwrap();
                let numeric = finite_difference_grad(&model, &batch, 1e-5);
                let err = max_rel_err(&analytic, &numeric);
                assert!(
                    err < 1e-4,
                    "case {case} seed {seed}: max relative error {err}"
                );
            }
        }
    }

    #[test]
    fn gradient_loss_matches_forward_loss() {
        let model = ModelParams::init(4, &[5], 3, 21).unwrap();
        let batch = random_batch(4, 3, 10, 22);
        let (loss, _) = model.grad_mean_loss(&batch).unwrap();
        assert_close(loss, model.forward(&batch).unwrap().mean_loss(), 1e-12, "loss");
    }

    #[test]
    fn gradient_is_bit_deterministic() {
        let model = ModelParams::init(6, &[9], 4, 5).unwrap();
        let batch = random_batch(6, 4, 15, 6);
        let (l1, g1) = model.grad_mean_loss(&batch).unwrap();
        let (l2, g2) = model.grad_mean_loss(&batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn duplicating_a_batch_leaves_the_mean_gradient_unchanged() {
        let model = ModelParams::init(3, &[4], 3, 31).unwrap();
        let batch = random_batch(3, 3, 6, 32);
        let mut doubled_inputs = Vec::new();
        let mut doubled_labels = Vec::new();
        for i in 0..batch.len() {
            doubled_inputs.extend_from_slice(batch.row(i));
            doubled_labels.push(batch.labels()[i]);
        }
        for i in 0..batch.len() {
            doubled_inputs.extend_from_slice(batch.row(i));
            doubled_labels.push(batch.labels()[i]);
        }
        let doubled = Batch::new(doubled_inputs, doubled_labels, 3).unwrap();
        let (l1, g1) = model.grad_mean_loss(&batch).unwrap();
        let (l2, g2) = model.grad_mean_loss(&doubled).unwrap();
        assert_close(l1, l2, 1e-12, "mean loss under duplication");
        for (a, b) in g1.iter().zip(&g2) {
            assert_close(*a, *b, 1e-12, "gradient under duplication");
        }
    }

    // ---- initialisation ----

    #[test]
    fn init_is_xavier_bounded_with_zero_biases() {
        let model = ModelParams::init(20, &[32], 5, 0).unwrap();
        assert_eq!(model.n_params(), 20 * 32 + 32 + 32 * 5 + 5);
        let limit1 = (6.0 / 52.0f64).sqrt();
        let limit2 = (6.0 / 37.0f64).sqrt();
        for &w in model.weights(0) {
            assert!(w.abs() < limit1, "layer 0 weight {w} outside ±{limit1}");
        }
        for &w in model.weights(1) {
            assert!(w.abs() < limit2, "layer 1 weight {w} outside ±{limit2}");
        }
        assert!(model.biases(0).iter().all(|&b| b == 0.0));
        assert!(model.biases(1).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelParams::init(7, &[5], 3, 42).unwrap();
        let b = ModelParams::init(7, &[5], 3, 42).unwrap();
        let c = ModelParams::init(7, &[5], 3, 43).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    // ---- entropy ----

    #[test]
    fn entropy_of_uniform_is_ln_c() {
        let h = entropy_of(&[0.25; 4]).unwrap();
        assert_close(h, 4.0f64.ln(), 1e-12, "uniform entropy");
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        let h = entropy_of(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn entropy_of_skewed_distribution() {
        // -(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1) = 0.80181855...
        let h = entropy_of(&[0.7, 0.2, 0.1]).unwrap();
        assert_close(h, 0.8018185525433373, 1e-12, "skewed entropy");
        assert_close(h, 0.8018, 1e-4, "skewed entropy, 4 decimals");
    }

    #[test]
    fn entropy_rejects_non_distributions() {
        assert!(entropy_of(&[0.5, 0.6]).is_err());
        assert!(entropy_of(&[-0.1, 1.1]).is_err());
        assert!(entropy_of(&[]).is_err());
    }

    // ---- error paths ----

    #[test]
    fn forward_rejects_wrong_width_and_bad_labels() {
        let model = ModelParams::init(4, &[], 3, 9).unwrap();
        let wrong_width = Batch::new(vec![0.0; 6], vec![0, 1], 3).unwrap();
        assert!(matches!(
            model.forward(&wrong_width),
            Err(Error::ShapeMismatch { .. })
        ));
        let bad_label = Batch::new(vec![0.0; 8], vec![0, 3], 4).unwrap();
        assert!(matches!(
            model.forward(&bad_label),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn batch_rejects_ragged_and_non_finite_inputs() {
        assert!(Batch::new(vec![1.0; 5], vec![0, 1], 2).is_err());
        assert!(Batch::new(vec![1.0, f64::NAN], vec![0], 2).is_err());
        assert!(Batch::new(vec![], vec![], 2).is_err());
    }

    // ---- property tests ----

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_probability_rows_normalise(seed in 0u64..1000, n in 1usize..12) {
            let model = ModelParams::init(4, &[6], 3, seed).unwrap();
            let batch = random_batch(4, 3, n, seed.wrapping_add(991));
            let out = model.forward(&batch).unwrap();
            for i in 0..n {
                let s: f64 = out.probs_row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-10);
            }
        }

        #[test]
        fn prop_entropy_within_bounds(seed in 0u64..1000, n in 1usize..12) {
            let model = ModelParams::init(4, &[6], 5, seed).unwrap();
            let batch = random_batch(4, 5, n, seed.wrapping_add(17));
            let out = model.forward(&batch).unwrap();
            let cap = 5.0f64.ln() + 1e-10;
            for &h in &out.per_sample_entropy {
                prop_assert!(h >= 0.0 && h <= cap, "entropy {} outside [0, ln 5]", h);
            }
        }

        #[test]
        fn prop_explicit_entropy_within_bounds(raw in proptest::collection::vec(1e-9f64..1.0, 2..8)) {
            let total: f64 = raw.iter().sum();
            let dist: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let h = entropy_of(&dist).unwrap();
            prop_assert!(h >= -1e-12);
            prop_assert!(h <= (dist.len() as f64).ln() + 1e-10);
        }
    }
}
