//! Command implementations behind the `mdl-sae` binary: training runs,
//! sweeps, description-length measurement, and toy-model grids.
//!
//! Exit-code contract: 0 success, 1 configuration error, 2 data or I/O
//! error, 3 training failure. Diagnostics go to stderr only; stdout
//! carries nothing but requested records.

pub mod checkpoint;
pub mod config;
pub mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::codec::{self, CodecError};
use crate::ingest::{self, Dataset, IdxImages};
use crate::sae::{self, SaeError};
use crate::sweep::{self, SweepError};
use crate::toys::{self, ToyWorld};

use report::{DlRecord, DlStatus};

/// Environment variable that caps sweep parallelism.
pub const THREADS_ENV_VAR: &str = "MDL_SAE_THREADS";

/// CLI failure carrying the documented exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Exit 1: flag, config-file, or plan problems.
    Config(String),
    /// Exit 2: file I/O, data-format, or dimension problems.
    Data(String),
    /// Exit 3: training failed.
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Training(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Data(msg) => write!(f, "data error: {msg}"),
            Self::Training(msg) => write!(f, "training error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads an IDX image file into a normalized dataset.
pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let bytes = read_file(path)?;
    let images = IdxImages::parse(&bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(ingest::normalize(&images))
}

fn train_error(e: SaeError) -> CliError {
    match e {
        SaeError::InvalidConfig { .. } => CliError::Config(e.to_string()),
        SaeError::DimensionMismatch { .. } | SaeError::EmptyData => CliError::Data(e.to_string()),
        other => CliError::Training(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Trains one SAE and writes the checkpoint plus a
/// `<checkpoint>.report.csv` training record.
pub fn cmd_train(
    config_path: &Path,
    train_path: &Path,
    test_path: &Path,
    out_path: &Path,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let text = read_text(config_path)?;
    let mut run = config::parse_train_config(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(seed) = seed_override {
        run.sae.seed = seed;
    }
    run.sae.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let train_data = load_dataset(train_path)?;
    let test_data = load_dataset(test_path)?;
    if train_data.dim() != run.sae.input_dim {
        return Err(CliError::Data(format!(
            "config expects input_dim {} but {} has {} columns",
            run.sae.input_dim,
            train_path.display(),
            train_data.dim()
        )));
    }

    let (model, report) =
        sae::train(run.sae, &train_data.data, &test_data.data).map_err(train_error)?;
    write_file(out_path, &checkpoint::encode(&model))?;
    let report_path = sibling_report_path(out_path);
    write_file(&report_path, report::train_report_csv(&report).as_bytes())?;
    Ok(())
}

fn sibling_report_path(checkpoint_path: &Path) -> PathBuf {
    let mut name = checkpoint_path.file_name().unwrap_or_default().to_os_string();
    name.push(".report.csv");
    checkpoint_path.with_file_name(name)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn parallelism_cap() -> Option<usize> {
    std::env::var(THREADS_ENV_VAR)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
}

/// Runs a sweep plan and writes `pareto.csv`, `candidates.jsonl`, and
/// `selection.csv` into the output directory. A sweep with no
/// qualifying candidate still succeeds, recording the absent winner.
pub fn cmd_sweep(
    plan_path: &Path,
    train_path: &Path,
    test_path: &Path,
    out_dir: &Path,
    epsilon_override: Option<f64>,
    max_parallel_override: Option<usize>,
) -> Result<(), CliError> {
    let text = read_text(plan_path)?;
    let plan_config = config::parse_sweep_plan(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", plan_path.display())))?;
    let mut plan = plan_config.into_plan();
    if let Some(epsilon) = epsilon_override {
        plan.epsilon = epsilon;
    }
    if let Some(max_parallel) = max_parallel_override {
        plan.max_parallel = max_parallel;
    }
    if let Some(cap) = parallelism_cap() {
        plan.max_parallel = plan.max_parallel.min(cap);
    }
    plan.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let train_data = load_dataset(train_path)?;
    let test_data = load_dataset(test_path)?;

    let candidates = sweep::run_sweep(&plan, &train_data, &test_data).map_err(|e| match e {
        SweepError::DimensionMismatch { .. } => CliError::Data(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let selection = sweep::select_mdl(&candidates);
    let pareto = sweep::pareto_table(&candidates);

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("pareto.csv"), report::pareto_csv(&pareto).as_bytes())?;
    write_file(
        &out_dir.join("candidates.jsonl"),
        report::candidates_jsonl(&candidates).as_bytes(),
    )?;
    write_file(
        &out_dir.join("selection.csv"),
        report::selection_csv(&selection, &candidates).as_bytes(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dl
// ---------------------------------------------------------------------------

/// Output format for single records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Json,
}

/// Measures the description length of a checkpointed model on a dataset
/// at tolerance `epsilon` and prints one record to stdout. Tolerance
/// and precision infeasibility are reported as record statuses, not
/// process failures.
pub fn cmd_dl(
    checkpoint_path: &Path,
    data_path: &Path,
    epsilon: f64,
    out_path: Option<&Path>,
    format: RecordFormat,
) -> Result<(), CliError> {
    if !(epsilon > 0.0) {
        return Err(CliError::Config(format!("epsilon {epsilon} must be positive")));
    }
    let bytes = read_file(checkpoint_path)?;
    let model = checkpoint::decode(&bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint_path.display())))?;
    let dataset = load_dataset(data_path)?;
    if dataset.dim() != model.input_dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects input_dim {} but {} has {} columns",
            model.input_dim(),
            data_path.display(),
            dataset.dim()
        )));
    }

    let latents = model.encode(&dataset.data).map_err(|e| CliError::Data(e.to_string()))?;
    let x_hat = model.decode(&latents).map_err(|e| CliError::Data(e.to_string()))?;
    let unquantized_mse =
        sae::mse(&dataset.data, &x_hat).map_err(|e| CliError::Data(e.to_string()))?;

    let record = if !(unquantized_mse < epsilon) {
        DlRecord {
            status: DlStatus::ToleranceNotMet,
            epsilon,
            unquantized_mse,
            report: None,
            mse_at_max_bits: None,
        }
    } else {
        match codec::effective_precision_search(&model, &dataset.data, epsilon) {
            Ok(bits) => {
                let dl_report =
                    codec::build_dl_report(&latents, model.input_dim(), bits, unquantized_mse)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                DlRecord {
                    status: DlStatus::Ok,
                    epsilon,
                    unquantized_mse,
                    report: Some(dl_report),
                    mse_at_max_bits: None,
                }
            }
            Err(CodecError::NoFeasiblePrecision { mse_at_max }) => DlRecord {
                status: DlStatus::NoFeasiblePrecision,
                epsilon,
                unquantized_mse,
                report: None,
                mse_at_max_bits: Some(mse_at_max),
            },
            Err(e) => return Err(CliError::Data(e.to_string())),
        }
    };

    let text = match format {
        RecordFormat::Csv => report::dl_record_csv(&record),
        RecordFormat::Json => report::dl_record_json(&record),
    };
    print!("{text}");
    if let Some(path) = out_path {
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// toy
// ---------------------------------------------------------------------------

/// Interior grid `1/(steps+1), ..., steps/(steps+1)`.
fn interior_grid(steps: usize) -> Vec<f64> {
    (1..=steps).map(|i| i as f64 / (steps + 1) as f64).collect()
}

/// Inclusive grid over `[0, 1]` with `steps` points.
fn closed_grid(steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect()
}

/// Emits the feature-splitting phase grid: for each (p, rho) cell, the
/// sparsity and description length of both schemes.
pub fn cmd_toy_split(
    p: Option<f64>,
    p_steps: usize,
    rho_steps: usize,
    out_path: &Path,
) -> Result<(), CliError> {
    let p_grid = match p {
        Some(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Config(format!("p = {p} outside [0, 1]")));
            }
            vec![p]
        }
        None => interior_grid(p_steps),
    };
    if p_grid.is_empty() || rho_steps == 0 {
        return Err(CliError::Config("empty grid: need p (or p-steps >= 1) and rho-steps >= 1".into()));
    }
    let mut rows = Vec::with_capacity(p_grid.len() * rho_steps);
    for &p in &p_grid {
        for &rho in &closed_grid(rho_steps) {
            let world = ToyWorld::split(p, p, rho)
                .map_err(|e| CliError::Config(e.to_string()))?;
            rows.push((p, rho, toys::split_analysis(&world)));
        }
    }
    write_file(out_path, report::split_grid_csv(&rows).as_bytes())
}

/// Emits the split-preference boundary rho*(p) found by bisection.
pub fn cmd_toy_split_boundary(
    p_steps: usize,
    tol: f64,
    out_path: &Path,
) -> Result<(), CliError> {
    if p_steps == 0 {
        return Err(CliError::Config("empty grid: p-steps must be >= 1".into()));
    }
    let grid = interior_grid(p_steps);
    let points =
        toys::split_phase_boundary(&grid, tol).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(out_path, report::boundary_csv(&points).as_bytes())
}

/// Emits the hierarchical-coding grid over (p_A, p_B|A).
pub fn cmd_toy_hier(grid_steps: usize, out_path: &Path) -> Result<(), CliError> {
    if grid_steps == 0 {
        return Err(CliError::Config("empty grid: grid-steps must be >= 1".into()));
    }
    let grid = interior_grid(grid_steps);
    let mut rows = Vec::with_capacity(grid.len() * grid.len());
    for &p_a in &grid {
        for &q in &grid {
            let world = ToyWorld::hierarchical(p_a, q)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let cmp = toys::hier_analysis(&world).map_err(|e| CliError::Config(e.to_string()))?;
            rows.push((p_a, q, cmp));
        }
    }
    write_file(out_path, report::hier_grid_csv(&rows).as_bytes())
}
