//! Metrics, per-run reporting and the robustness sweep.
//!
//! One experiment run produces a [`MetricsRow`]: the method, its split
//! and ascent weight, and the headline numbers — retain / forget / test
//! accuracy, the forget-vs-test accuracy gap, and both membership attack
//! gaps. Rows serialize to a fixed CSV schema (for plotting) and to JSON
//! (complete, including forget accuracy and measured wall time). The CSV
//! wall-time column is a fixed `0.000` placeholder so reruns of the same
//! config produce byte-identical files; real timings live in the JSON.
//!
//! [`run_sweep`] drives the full forget-fraction × ascent-weight grid:
//! originals are trained once per seed (cached on disk by pretraining
//! digest), cells run on a bounded worker pool, and rows are appended to
//! the CSV in grid order as soon as they are ready — an interrupted
//! sweep leaves a valid ordered prefix behind.

use crate::attack::{attack_model, AttackConfig, AttackReport};
use crate::baselines::{finetune, label_swap, pretrain, retrain, FitOutcome};
use crate::cache::{load_model, model_path, save_model};
use crate::config::{hex_digest, ExperimentConfig};
use crate::data::{generate_synthetic, make_split, DatasetBundle, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::{mean, Batch, ModelParams};
use crate::unlearn::{run_nabla_tau, EpochRecord, UnlearnConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// The unlearning methods the laboratory compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    Retrain,
    Finetune,
    LabelSwap,
    NablaTau,
}

pub const VALID_METHODS: &str = "original, retrain, finetune, label_swap, nabla_tau";

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Original => "original",
            Method::Retrain => "retrain",
            Method::Finetune => "finetune",
            Method::LabelSwap => "label_swap",
            Method::NablaTau => "nabla_tau",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Method::Original),
            "retrain" => Ok(Method::Retrain),
            "finetune" => Ok(Method::Finetune),
            "label_swap" => Ok(Method::LabelSwap),
            "nabla_tau" => Ok(Method::NablaTau),
            other => Err(Error::UnknownMethod {
                given: other.to_string(),
                valid: VALID_METHODS,
            }),
        }
    }
}

/// Classification accuracy in percent. The predicted class is the argmax
/// of the output distribution, ties broken toward the lowest class index.
pub fn accuracy(model: &ModelParams, batch: &Batch) -> Result<f64> {
    let out = model.forward(batch)?;
    let mut correct = 0usize;
    for (i, &label) in batch.labels().iter().enumerate() {
        let probs = out.probs_row(i);
        let mut best = 0usize;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / batch.len() as f64)
}

/// Headline metrics of one model under one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy on the retain rows (stored train labels).
    pub a_dr: f64,
    /// Accuracy on the forget rows (stored train labels).
    pub a_df: f64,
    /// Test accuracy; under class removal the forgotten class is
    /// excluded from the test side.
    pub a_dt: f64,
    /// `|a_df − a_dt|`.
    pub acc_gap: f64,
    pub attack: AttackReport,
}

/// Evaluate a model: accuracies plus both membership attacks.
///
/// Random-subset splits attack forget rows against the whole test set.
/// Class-removal splits restrict the attack's test side to held-out
/// samples of the forgotten class, so the attacker compares seen vs
/// unseen samples of the same class.
pub fn evaluate(
    model: &ModelParams,
    bundle: &DatasetBundle,
    split: &Split,
    attack_cfg: &AttackConfig,
    seed: u64,
) -> Result<Evaluation> {
    let train = bundle.train();
    let retain_batch = train.batch(split.retain_indices())?;
    let forget_batch = train.batch(split.forget_indices())?;
    let a_dr = accuracy(model, &retain_batch)?;
    let a_df = accuracy(model, &forget_batch)?;

    let (test_batch, attack_test_batch) = match split.spec {
        SplitSpec::RandomSubset { .. } => {
            let full = bundle.test().full_batch()?;
            (full.clone(), full)
        }
        SplitSpec::ClassRemoval { class } => {
            let kept: Vec<usize> = (0..bundle.test().len())
                .filter(|&i| bundle.test().labels()[i] != class)
                .collect();
            let forgotten = bundle.test().indices_with_label(class);
            if kept.is_empty() || forgotten.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "split",
                    reason: format!("test set has no usable rows for class-removal of {class}"),
                });
            }
            (bundle.test().batch(&kept)?, bundle.test().batch(&forgotten)?)
        }
    };
    let a_dt = accuracy(model, &test_batch)?;
    let attack = attack_model(
        model,
        &forget_batch,
        &attack_test_batch,
        attack_cfg,
        mix_seed(seed, 33),
    )?;

    Ok(Evaluation {
        a_dr,
        a_df,
        a_dt,
        acc_gap: (a_df - a_dt).abs(),
        attack,
    })
}

/// One experiment run's record: everything the comparison tables need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub fraction_or_class: String,
    pub alpha0: Option<f64>,
    pub seed: u64,
    pub a_dr: f64,
    pub a_df: f64,
    pub a_dt: f64,
    pub acc_gap: f64,
    pub gap_l: f64,
    pub gap_e: f64,
    /// Measured seconds; serialized to CSV as a fixed placeholder.
    pub wall_time_s: f64,
}

impl MetricsRow {
    pub fn new(
        method: Method,
        split_spec: &SplitSpec,
        alpha0: Option<f64>,
        seed: u64,
        eval: &Evaluation,
        wall_time_s: f64,
    ) -> Self {
        MetricsRow {
            method,
            fraction_or_class: split_spec.fraction_or_class(),
            alpha0,
            seed,
            a_dr: eval.a_dr,
            a_df: eval.a_df,
            a_dt: eval.a_dt,
            acc_gap: eval.acc_gap,
            gap_l: eval.attack.gap_l,
            gap_e: eval.attack.gap_e,
            wall_time_s,
        }
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "method",
    "fraction_or_class",
    "alpha0",
    "seed",
    "a_dr",
    "acc_gap",
    "a_dt",
    "gap_l",
    "gap_e",
    "wall_time_s",
];

/// The row's CSV record in the fixed column order.
pub fn csv_record(row: &MetricsRow) -> [String; 10] {
    [
        row.method.to_string(),
        row.fraction_or_class.clone(),
        row.alpha0.map(|a| format!("{a}")).unwrap_or_default(),
        row.seed.to_string(),
        format!("{:.4}", row.a_dr),
        format!("{:.4}", row.acc_gap),
        format!("{:.4}", row.a_dt),
        format!("{:.4}", row.gap_l),
        format!("{:.4}", row.gap_e),
        "0.000".to_string(),
    ]
}

/// Write rows to a CSV file with the fixed schema.
pub fn write_rows_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.write_record(csv_record(row))?;
    }
    writer.flush()?;
    Ok(())
}

/// Result of running one method end to end (before evaluation).
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub params: ModelParams,
    pub failure: Option<String>,
    pub steps_taken: usize,
    pub wall_time_s: f64,
    /// Engine epochs for `nabla_tau`; empty for other methods.
    pub trace: Vec<EpochRecord>,
    /// Per-pass mean losses for phase-trained methods; empty for
    /// `original` and `nabla_tau`.
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
    /// The resolved ascent weight (`nabla_tau` only).
    pub alpha0: Option<f64>,
}

/// Run one method against a pretrained original.
pub fn run_method(
    method: Method,
    original: &ModelParams,
    bundle: &DatasetBundle,
    split: &Split,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<MethodRun> {
    let start = Instant::now();
    let from_fit = |method: Method, fit: FitOutcome, start: Instant| MethodRun {
        method,
        params: fit.params,
        failure: fit.failure,
        steps_taken: fit.steps_taken,
        wall_time_s: start.elapsed().as_secs_f64(),
        trace: Vec::new(),
        epoch_losses: fit.epoch_losses,
        warnings: Vec::new(),
        alpha0: None,
    };
    match method {
        Method::Original => Ok(MethodRun {
            method,
            params: original.clone(),
            failure: None,
            steps_taken: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
            trace: Vec::new(),
            epoch_losses: Vec::new(),
            warnings: Vec::new(),
            alpha0: None,
        }),
        Method::Retrain => {
            let fit = retrain(bundle, split, &cfg.model.hidden, &cfg.pretrain, seed)?;
            Ok(from_fit(method, fit, start))
        }
        Method::Finetune => {
            let fit = finetune(original, bundle, split, &cfg.unlearn, seed)?;
            Ok(from_fit(method, fit, start))
        }
        Method::LabelSwap => {
            let fit = label_swap(original, bundle, split, &cfg.unlearn, seed)?;
            Ok(from_fit(method, fit, start))
        }
        Method::NablaTau => {
            let run = run_nabla_tau(original, bundle, split, &cfg.unlearn, seed)?;
            Ok(MethodRun {
                method,
                params: run.params,
                failure: run.failure,
                steps_taken: run.steps_taken,
                wall_time_s: start.elapsed().as_secs_f64(),
                trace: run.trace,
                epoch_losses: Vec::new(),
                warnings: run.warnings,
                alpha0: Some(run.alpha0),
            })
        }
    }
}

/// Generate the seed's dataset and load its cached original model,
/// training and caching one if absent (or when `force` is set). A
/// present-but-corrupt cache entry is an error, never a silent retrain.
pub fn prepare_original(
    cfg: &ExperimentConfig,
    seed: u64,
    force: bool,
) -> Result<(DatasetBundle, ModelParams, bool)> {
    let bundle = generate_synthetic(&cfg.dataset, seed)?;
    let digest = cfg.pretrain_digest();
    let path = model_path(&cfg.cache_dir, &digest, seed);
    if !force {
        match load_model(&path, &digest) {
            Ok(model) => return Ok((bundle, model, true)),
            Err(Error::CacheMiss { .. }) => {}
            Err(other) => return Err(other),
        }
    }
    let fit = pretrain(&bundle, &cfg.model.hidden, &cfg.pretrain, seed)?;
    if let Some(reason) = fit.failure {
        return Err(Error::Runtime(format!(
            "pretraining failed for seed {seed}: {reason}"
        )));
    }
    save_model(&path, &digest, &fit.params)?;
    Ok((bundle, fit.params, false))
}

/// Mean/std summary of one sweep cell over its successful seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub fraction: f64,
    pub alpha0: f64,
    pub n_seeds: usize,
    pub mean_gap_l: f64,
    pub std_gap_l: f64,
    pub mean_acc_gap: f64,
    pub std_acc_gap: f64,
    pub mean_a_dt: f64,
    pub std_a_dt: f64,
}

/// The aggregated sweep: one summary per (fraction, alpha) cell, in grid
/// order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub fractions: Vec<f64>,
    pub alphas: Vec<f64>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<MetricsRow>,
    pub grid: SweepGrid,
    /// One entry per failed cell-run: "fraction=… alpha=… seed=…: reason".
    pub failures: Vec<String>,
}

/// Sample standard deviation (n−1 denominator); 0 for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j share one value; all get the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side has no variation or fewer than two points.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "mismatched series");
    if xs.len() < 2 {
        return 0.0;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

struct CellJob {
    fraction: f64,
    alpha: f64,
    seed: u64,
    bundle: Arc<DatasetBundle>,
    original: Arc<ModelParams>,
}

fn run_cell(job: &CellJob, cfg: &ExperimentConfig) -> std::result::Result<MetricsRow, String> {
    let describe = |e: &dyn std::fmt::Display| {
        format!(
            "fraction={} alpha={} seed={}: {e}",
            job.fraction, job.alpha, job.seed
        )
    };
    let start = Instant::now();
    let spec = SplitSpec::RandomSubset {
        fraction: job.fraction,
    };
    let split = make_split(&job.bundle, &spec, job.seed).map_err(|e| describe(&e))?;
    let ucfg = UnlearnConfig {
        alpha0: Some(job.alpha),
        ..cfg.unlearn.clone()
    };
    let run = run_nabla_tau(&job.original, &job.bundle, &split, &ucfg, job.seed)
        .map_err(|e| describe(&e))?;
    if let Some(reason) = &run.failure {
        return Err(describe(&reason));
    }
    let eval = evaluate(&run.params, &job.bundle, &split, &cfg.attack, job.seed)
        .map_err(|e| describe(&e))?;
    Ok(MetricsRow::new(
        Method::NablaTau,
        &spec,
        Some(job.alpha),
        job.seed,
        &eval,
        start.elapsed().as_secs_f64(),
    ))
}

/// Paths of the three files a sweep writes under `output_dir`.
pub fn sweep_paths(cfg: &ExperimentConfig) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    (
        cfg.output_dir.join("sweep_rows.csv"),
        cfg.output_dir.join("sweep_summary.csv"),
        cfg.output_dir.join("sweep_report.json"),
    )
}

/// Run the robustness grid: every (fraction, alpha, seed) cell of the
/// config's sweep section, on `jobs` worker threads. Rows land in
/// `sweep_rows.csv` in grid order (streamed as cells finish), summaries
/// in `sweep_summary.csv`, and the full report — including measured wall
/// times and any failures — in `sweep_report.json`.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize, progress: bool) -> Result<SweepOutcome> {
    if jobs == 0 {
        return Err(Error::InvalidParameter {
            name: "jobs",
            reason: "need at least one worker".into(),
        });
    }
    cfg.validate()?;

    let mut originals: Vec<(u64, Arc<DatasetBundle>, Arc<ModelParams>)> = Vec::new();
    for &seed in &cfg.seeds {
        let (bundle, model, cached) = prepare_original(cfg, seed, false)?;
        if progress {
            let source = if cached { "cached" } else { "trained" };
            println!("original model for seed {seed}: {source}");
        }
        originals.push((seed, Arc::new(bundle), Arc::new(model)));
    }

    let mut cell_jobs = Vec::new();
    for &fraction in &cfg.sweep.fractions {
        for &alpha in &cfg.sweep.alphas {
            for (seed, bundle, original) in &originals {
                cell_jobs.push(CellJob {
                    fraction,
                    alpha,
                    seed: *seed,
                    bundle: Arc::clone(bundle),
                    original: Arc::clone(original),
                });
            }
        }
    }
    let total = cell_jobs.len();

    let (rows_path, summary_path, json_path) = sweep_paths(cfg);
    std::fs::create_dir_all(&cfg.output_dir)?;

    // Workers push completed cells through a channel; the writer thread
    // reorders them back into grid order and appends rows to the CSV as
    // soon as the next-in-order cell is done.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Runtime(format!("worker pool: {e}")))?;
    let (tx, rx) = std::sync::mpsc::channel::<(usize, std::result::Result<MetricsRow, String>)>();

    let writer = {
        let rows_path = rows_path.clone();
        std::thread::spawn(move || -> Result<Vec<std::result::Result<MetricsRow, String>>> {
            let mut csv_writer = csv::Writer::from_path(&rows_path)?;
            csv_writer.write_record(CSV_HEADER)?;
            csv_writer.flush()?;
            let mut buffered = std::collections::BTreeMap::new();
            let mut ordered = Vec::with_capacity(total);
            let mut next = 0usize;
            while let Ok((index, result)) = rx.recv() {
                buffered.insert(index, result);
                while let Some(result) = buffered.remove(&next) {
                    if let Ok(row) = &result {
                        csv_writer.write_record(csv_record(row))?;
                        csv_writer.flush()?;
                    }
                    ordered.push(result);
                    next += 1;
                }
            }
            Ok(ordered)
        })
    };

    pool.scope(|scope| {
        for (index, job) in cell_jobs.iter().enumerate() {
            let tx = tx.clone();
            scope.spawn(move |_| {
                let result = run_cell(job, cfg);
                if progress {
                    match &result {
                        Ok(row) => println!(
                            "cell fraction={} alpha={} seed={}: gap_l={:.2} acc_gap={:.2}",
                            job.fraction, job.alpha, job.seed, row.gap_l, row.acc_gap
                        ),
                        Err(reason) => println!("cell failed: {reason}"),
                    }
                }
                // The writer only hangs up on a write error; dropping the
                // result here just means the sweep is already failing.
                let _ = tx.send((index, result));
            });
        }
    });
    drop(tx);
    let ordered = writer
        .join()
        .map_err(|_| Error::Runtime("sweep writer thread panicked".into()))??;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in ordered {
        match result {
            Ok(row) => rows.push(row),
            Err(reason) => failures.push(reason),
        }
    }

    // Aggregate in grid order; `ordered` is grouped by cell with
    // `seeds.len()` runs each.
    let per_cell = cfg.seeds.len();
    let mut cells = Vec::new();
    for (fraction, alpha) in cell_indices(cfg) {
        let cell_rows: Vec<&MetricsRow> = rows
            .iter()
            .filter(|r| {
                r.fraction_or_class == format!("{fraction}") && r.alpha0 == Some(alpha)
            })
            .collect();
        let gl: Vec<f64> = cell_rows.iter().map(|r| r.gap_l).collect();
        let ag: Vec<f64> = cell_rows.iter().map(|r| r.acc_gap).collect();
        let at: Vec<f64> = cell_rows.iter().map(|r| r.a_dt).collect();
        cells.push(CellSummary {
            fraction,
            alpha0: alpha,
            n_seeds: cell_rows.len().min(per_cell),
            mean_gap_l: mean(&gl),
            std_gap_l: std_dev(&gl),
            mean_acc_gap: mean(&ag),
            std_acc_gap: std_dev(&ag),
            mean_a_dt: mean(&at),
            std_a_dt: std_dev(&at),
        });
    }
    let grid = SweepGrid {
        fractions: cfg.sweep.fractions.clone(),
        alphas: cfg.sweep.alphas.clone(),
        cells,
    };

    write_summary_csv(&summary_path, &grid)?;
    let report = serde_json::json!({
        "config_digest": hex_digest(&cfg.digest()),
        "rows": rows,
        "failures": failures,
        "grid": grid,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;

    Ok(SweepOutcome {
        rows,
        grid,
        failures,
    })
}

fn cell_indices(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &f in &cfg.sweep.fractions {
        for &a in &cfg.sweep.alphas {
            out.push((f, a));
        }
    }
    out
}

fn write_summary_csv(path: &Path, grid: &SweepGrid) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "fraction",
        "alpha0",
        "n_seeds",
        "mean_gap_l",
        "std_gap_l",
        "mean_acc_gap",
        "std_acc_gap",
        "mean_a_dt",
        "std_a_dt",
    ])?;
    for cell in &grid.cells {
        writer.write_record([
            format!("{}", cell.fraction),
            format!("{}", cell.alpha0),
            cell.n_seeds.to_string(),
            format!("{:.4}", cell.mean_gap_l),
            format!("{:.4}", cell.std_gap_l),
            format!("{:.4}", cell.mean_acc_gap),
            format!("{:.4}", cell.std_acc_gap),
            format!("{:.4}", cell.mean_a_dt),
            format!("{:.4}", cell.std_a_dt),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
