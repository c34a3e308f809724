//! Command-line front end: `pretrain`, `unlearn`, `evaluate`, `sweep`.
//!
//! Every run is driven by one TOML config file (defaults apply when the
//! flag is omitted) plus a handful of narrowing flags. Only two
//! environment variables override anything — `GRADTAU_OUTPUT_DIR` for the
//! output directory and `GRADTAU_JOBS` for the sweep worker count — so an
//! archived config file and command line fully describe an experiment.
//!
//! Exit codes: `0` success, `1` usage or config mistakes, `2` runtime
//! failures (divergence, missing or corrupt cache, I/O).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::cache::{load_model, model_path};
use crate::config::ExperimentConfig;
use crate::data::{generate_synthetic, make_split, DatasetBundle, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::report::{
    evaluate, prepare_original, run_method, run_sweep, sweep_paths, write_rows_csv, Method,
    MethodRun, MetricsRow,
};

#[derive(Debug, Parser)]
#[command(
    name = "gradtau",
    version,
    about = "Desk-scale unlearning laboratory: pretrain, unlearn, attack, sweep"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the original model for each seed and cache it.
    Pretrain(PretrainArgs),
    /// Run one unlearning method against the cached original model.
    Unlearn(UnlearnArgs),
    /// Evaluate the cached original model (accuracies + attacks).
    Evaluate(EvaluateArgs),
    /// Run the forget-fraction x alpha x seed robustness grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment config file (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run only this seed instead of every seed in the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Retrain and overwrite an existing cache entry.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct UnlearnArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Method to run: original, retrain, finetune, label_swap, nabla_tau.
    #[arg(long, value_name = "NAME")]
    method: String,
    /// Forget a random subset of this fraction of the train set.
    #[arg(long, value_name = "F")]
    fraction: Option<f64>,
    /// Forget every train sample of this class instead of a random subset.
    #[arg(long, value_name = "K")]
    class: Option<usize>,
    /// Initial ascent weight; defaults to the forget-fraction rule.
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Experiment config file (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for grid cells.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Retrain the cached original models before sweeping.
    #[arg(long)]
    force: bool,
    /// Print the cell plan without running anything.
    #[arg(long)]
    dry_run: bool,
}

/// Parse `args` and run the selected subcommand, returning the process
/// exit code. `--help`/`--version` exit 0; bad flags exit 1; runtime
/// failures exit 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Unlearn(args) => cmd_unlearn(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Load the config (or defaults) and apply the output-dir override.
fn load_config(config: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = std::env::var_os("GRADTAU_OUTPUT_DIR") {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    Ok(cfg)
}

fn selected_seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    }
}

/// Worker count: flag, then `GRADTAU_JOBS`, then 1.
fn resolve_jobs(flag: Option<usize>) -> Result<usize> {
    let jobs = match flag {
        Some(j) => j,
        None => match std::env::var("GRADTAU_JOBS") {
            Ok(raw) => raw.trim().parse::<usize>().map_err(|_| Error::InvalidParameter {
                name: "GRADTAU_JOBS",
                reason: format!("expected a positive integer, got `{raw}`"),
            })?,
            Err(std::env::VarError::NotPresent) => 1,
            Err(std::env::VarError::NotUnicode(_)) => {
                return Err(Error::InvalidParameter {
                    name: "GRADTAU_JOBS",
                    reason: "value is not valid unicode".into(),
                })
            }
        },
    };
    if jobs == 0 {
        return Err(Error::InvalidParameter {
            name: "jobs",
            reason: "need at least one worker".into(),
        });
    }
    Ok(jobs)
}

/// Regenerate the seed's dataset and load its cached original model.
/// Unlike [`prepare_original`] this never trains: a missing entry is a
/// `CacheMiss` error telling the user to run `pretrain`.
fn load_original_strict(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(DatasetBundle, ModelParams)> {
    let bundle = generate_synthetic(&cfg.dataset, seed)?;
    let digest = cfg.pretrain_digest();
    let path = model_path(&cfg.cache_dir, &digest, seed);
    let model = load_model(&path, &digest)?;
    Ok((bundle, model))
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let cfg = load_config(&args.common.config)?;
    let digest = cfg.pretrain_digest();
    for seed in selected_seeds(&cfg, args.common.seed) {
        let path = model_path(&cfg.cache_dir, &digest, seed);
        let (_, _, was_cached) = prepare_original(&cfg, seed, args.force)?;
        let verb = if was_cached { "cache hit" } else { "trained" };
        println!("pretrain seed={seed}: {verb} -> {}", path.display());
    }
    Ok(())
}

fn cmd_unlearn(args: UnlearnArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let mut cfg = load_config(&args.common.config)?;
    if args.fraction.is_some() && args.class.is_some() {
        return Err(Error::InvalidParameter {
            name: "split",
            reason: "--fraction and --class are mutually exclusive".into(),
        });
    }
    if let Some(fraction) = args.fraction {
        cfg.split = SplitSpec::RandomSubset { fraction };
    }
    if let Some(class) = args.class {
        cfg.split = SplitSpec::ClassRemoval { class };
    }
    if let Some(alpha) = args.alpha {
        if method == Method::NablaTau {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidParameter {
                    name: "alpha",
                    reason: format!("must lie in [0, 1], got {alpha}"),
                });
            }
            cfg.unlearn.alpha0 = Some(alpha);
        } else {
            eprintln!("warning: --alpha is ignored by method `{method}`");
        }
    }

    let mut rows = Vec::new();
    for seed in selected_seeds(&cfg, args.common.seed) {
        let (bundle, original) = load_original_strict(&cfg, seed)?;
        let split = make_split(&bundle, &cfg.split, seed)?;
        let run = run_method(method, &original, &bundle, &split, &cfg, seed)?;
        for warning in &run.warnings {
            eprintln!("warning: {warning}");
        }
        if let Some(reason) = &run.failure {
            return Err(Error::Runtime(format!(
                "method `{method}` failed on seed {seed}: {reason}"
            )));
        }
        let eval = evaluate(&run.params, &bundle, &split, &cfg.attack, seed)?;
        write_trace(&cfg, &run, seed)?;
        let row = MetricsRow::new(method, &cfg.split, run.alpha0, seed, &eval, run.wall_time_s);
        println!(
            "unlearn method={method} seed={seed}: a_dr={:.2} a_df={:.2} a_dt={:.2} gap_l={:.2} gap_e={:.2}",
            row.a_dr, row.a_df, row.a_dt, row.gap_l, row.gap_e
        );
        rows.push(row);
    }
    let csv_path = cfg.output_dir.join(format!("{method}_metrics.csv"));
    write_rows_csv(&csv_path, &rows)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// One JSON object per line: engine epochs for the adaptive method,
/// per-pass mean losses for the phase-trained baselines.
fn write_trace(cfg: &ExperimentConfig, run: &MethodRun, seed: u64) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg
        .output_dir
        .join(format!("{}_seed{}_trace.jsonl", run.method, seed));
    let mut out = String::new();
    for record in &run.trace {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    for (i, loss) in run.epoch_losses.iter().enumerate() {
        out.push_str(&serde_json::to_string(
            &serde_json::json!({ "epoch": i + 1, "loss": loss }),
        )?);
        out.push('\n');
    }
    std::fs::write(&path, out)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.common.config)?;
    let mut rows = Vec::new();
    for seed in selected_seeds(&cfg, args.common.seed) {
        let (bundle, original) = load_original_strict(&cfg, seed)?;
        let split = make_split(&bundle, &cfg.split, seed)?;
        let eval = evaluate(&original, &bundle, &split, &cfg.attack, seed)?;
        let row = MetricsRow::new(Method::Original, &cfg.split, None, seed, &eval, 0.0);
        println!(
            "evaluate seed={seed}: a_dr={:.2} a_df={:.2} a_dt={:.2} gap_l={:.2} gap_e={:.2}",
            row.a_dr, row.a_df, row.a_dt, row.gap_l, row.gap_e
        );
        rows.push(row);
    }
    let csv_path = cfg.output_dir.join("original_metrics.csv");
    write_rows_csv(&csv_path, &rows)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let jobs = resolve_jobs(args.jobs)?;
    let (rows_path, summary_path, json_path) = sweep_paths(&cfg);

    if args.dry_run {
        let mut total = 0;
        for &fraction in &cfg.sweep.fractions {
            for &alpha in &cfg.sweep.alphas {
                for &seed in &cfg.seeds {
                    println!("cell fraction={fraction} alpha={alpha} seed={seed}");
                    total += 1;
                }
            }
        }
        println!("{total} cells -> {}", rows_path.display());
        return Ok(());
    }

    if args.force {
        for &seed in &cfg.seeds {
            prepare_original(&cfg, seed, true)?;
        }
    }
    let outcome = run_sweep(&cfg, jobs, true)?;
    println!("rows    -> {}", rows_path.display());
    println!("summary -> {}", summary_path.display());
    println!("report  -> {}", json_path.display());
    if !outcome.failures.is_empty() {
        for failure in &outcome.failures {
            eprintln!("failed cell: {failure}");
        }
        let total = outcome.rows.len() + outcome.failures.len();
        return Err(Error::Runtime(format!(
            "{} of {total} sweep cells failed",
            outcome.failures.len()
        )));
    }
    println!("completed {} cells", outcome.rows.len());
    Ok(())
}
