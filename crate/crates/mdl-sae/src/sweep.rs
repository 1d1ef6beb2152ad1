//! Hyperparameter sweeps under a loss tolerance and MDL model selection.
//!
//! Each candidate trains independently; those whose held-out MSE beats
//! the tolerance get an effective-precision search and a description
//! length measurement at the found bit width. Candidates are aggregated
//! by index, so results are identical whatever the parallelism degree.

use std::fmt;

use serde::Serialize;

use crate::codec::{self, CodecError, DlReport};
use crate::ingest::Dataset;
use crate::sae::{self, SaeConfig, SaeError, SaeModel, TrainReport};

/// Errors from sweep-plan validation.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepError {
    /// Tolerance must be positive.
    InvalidEpsilon { value: f64 },
    /// A sweep needs at least one candidate.
    NoCandidates,
    /// Parallelism degree must be at least 1.
    ZeroParallelism,
    /// A candidate's input width disagrees with the data.
    DimensionMismatch { candidate: usize, expected: usize, found: usize },
}

impl fmt::Display for SweepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidEpsilon { value } => write!(f, "epsilon {value} must be positive"),
            Self::NoCandidates => write!(f, "sweep plan has no candidates"),
            Self::ZeroParallelism => write!(f, "max_parallel must be at least 1"),
            Self::DimensionMismatch { candidate, expected, found } => {
                write!(
                    f,
                    "candidate {candidate} expects input_dim {expected} but data has {found} columns"
                )
            }
        }
    }
}

impl std::error::Error for SweepError {}

/// A sweep: a loss tolerance, the candidate configurations, and the
/// parallelism cap.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub epsilon: f64,
    pub candidates: Vec<SaeConfig>,
    pub max_parallel: usize,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), SweepError> {
        // Zero is allowed and vacuous: everything trains, nothing
        // qualifies, the winner comes back absent.
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(SweepError::InvalidEpsilon { value: self.epsilon });
        }
        if self.candidates.is_empty() {
            return Err(SweepError::NoCandidates);
        }
        if self.max_parallel == 0 {
            return Err(SweepError::ZeroParallelism);
        }
        Ok(())
    }
}

/// Outcome category for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    WithinTolerance,
    ExceededTolerance,
    Failed,
}

/// One trained (or failed) sweep entry. `dl_report` is present exactly
/// when the candidate landed within tolerance.
#[derive(Debug, Clone)]
pub struct SweepCandidate {
    pub config: SaeConfig,
    pub status: CandidateStatus,
    pub train_report: Option<TrainReport>,
    pub dl_report: Option<DlReport>,
    /// Trained parameters, kept for checkpointing and further analysis.
    pub model: Option<SaeModel>,
    /// Diagnostic for failed candidates.
    pub failure: Option<String>,
}

fn run_candidate(config: &SaeConfig, epsilon: f64, train: &Dataset, test: &Dataset) -> SweepCandidate {
    let config = config.clone();
    let trained: Result<(SaeModel, TrainReport), SaeError> =
        sae::train(config.clone(), &train.data, &test.data);
    let (model, report) = match trained {
        Ok(pair) => pair,
        Err(e) => {
            return SweepCandidate {
                config,
                status: CandidateStatus::Failed,
                train_report: None,
                dl_report: None,
                model: None,
                failure: Some(e.to_string()),
            }
        }
    };
    if !(report.final_test_mse < epsilon) {
        return SweepCandidate {
            config,
            status: CandidateStatus::ExceededTolerance,
            train_report: Some(report),
            dl_report: None,
            model: Some(model),
            failure: None,
        };
    }
    let measured: Result<DlReport, CodecError> = (|| {
        let bits = codec::effective_precision_search(&model, &test.data, epsilon)?;
        let latents = model.encode(&test.data)?;
        codec::build_dl_report(&latents, model.input_dim(), bits, report.final_test_mse)
    })();
    match measured {
        Ok(dl_report) => SweepCandidate {
            config,
            status: CandidateStatus::WithinTolerance,
            train_report: Some(report),
            dl_report: Some(dl_report),
            model: Some(model),
            failure: None,
        },
        Err(e) => SweepCandidate {
            config,
            status: CandidateStatus::Failed,
            train_report: Some(report),
            dl_report: None,
            model: Some(model),
            failure: Some(e.to_string()),
        },
    }
}

/// Trains every candidate (up to `max_parallel` at a time) and measures
/// description lengths for those within tolerance. Individual failures
/// are recorded per candidate and never abort the sweep; results are in
/// candidate order regardless of scheduling.
pub fn run_sweep(
    plan: &SweepPlan,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<Vec<SweepCandidate>, SweepError> {
    plan.validate()?;
    for (i, config) in plan.candidates.iter().enumerate() {
        if config.input_dim != train_data.dim() {
            return Err(SweepError::DimensionMismatch {
                candidate: i,
                expected: config.input_dim,
                found: train_data.dim(),
            });
        }
        if config.input_dim != test_data.dim() {
            return Err(SweepError::DimensionMismatch {
                candidate: i,
                expected: config.input_dim,
                found: test_data.dim(),
            });
        }
    }
    let workers = plan.max_parallel.min(plan.candidates.len()).max(1);
    if workers == 1 {
        return Ok(plan
            .candidates
            .iter()
            .map(|c| run_candidate(c, plan.epsilon, train_data, test_data))
            .collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool construction");
    let candidates = pool.install(|| {
        use rayon::prelude::*;
        plan.candidates
            .par_iter()
            .map(|c| run_candidate(c, plan.epsilon, train_data, test_data))
            .collect::<Vec<_>>()
    });
    Ok(candidates)
}

/// Result of MDL selection: indices into the candidate slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdlSelection {
    /// Index of the winning candidate, absent when nothing qualified.
    pub winner: Option<usize>,
    /// Within-tolerance candidates sorted by ascending description
    /// length (ties by mean L0, then dictionary size, then seed).
    pub ranking: Vec<usize>,
}

impl MdlSelection {
    pub fn winner_of<'a>(&self, candidates: &'a [SweepCandidate]) -> Option<&'a SweepCandidate> {
        self.winner.map(|i| &candidates[i])
    }
}

fn selection_key(c: &SweepCandidate) -> (f64, f64, usize, u64, usize) {
    let dl = c
        .dl_report
        .as_ref()
        .map(|r| r.entropy_dl_bits)
        .unwrap_or(f64::INFINITY);
    let l0 = c
        .dl_report
        .as_ref()
        .map(|r| r.mean_l0)
        .unwrap_or(f64::INFINITY);
    (dl, l0, c.config.dict_size, c.config.seed, c.config.k)
}

/// Picks the within-tolerance candidate with the smallest entropy DL.
/// Ties break toward lower mean L0, then smaller dictionary, then lower
/// seed, making the order total in practice — permuting the input never
/// changes the winner.
pub fn select_mdl(candidates: &[SweepCandidate]) -> MdlSelection {
    let mut ranking: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.status == CandidateStatus::WithinTolerance)
        .map(|(i, _)| i)
        .collect();
    ranking.sort_by(|&a, &b| {
        let ka = selection_key(&candidates[a]);
        let kb = selection_key(&candidates[b]);
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
            .then(ka.3.cmp(&kb.3))
            .then(ka.4.cmp(&kb.4))
    });
    MdlSelection {
        winner: ranking.first().copied(),
        ranking,
    }
}

/// One row of the DL-versus-sparsity table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub candidate: usize,
    pub k: usize,
    pub dict_size: usize,
    pub seed: u64,
    pub status: CandidateStatus,
    pub mean_l0: Option<f64>,
    pub alive_features: Option<usize>,
    pub entropy_dl_bits: Option<f64>,
    pub upper_bound_dl_bits: Option<f64>,
    pub test_mse: Option<f64>,
    pub quant_bits: Option<u32>,
}

/// Projects candidates into plot-ready rows sorted by ascending L0;
/// candidates without metrics (failures) sort last, by index.
pub fn pareto_table(candidates: &[SweepCandidate]) -> Vec<ParetoRow> {
    let mut rows: Vec<ParetoRow> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let dl = c.dl_report.as_ref();
            ParetoRow {
                candidate: i,
                k: c.config.k,
                dict_size: c.config.dict_size,
                seed: c.config.seed,
                status: c.status,
                mean_l0: dl
                    .map(|r| r.mean_l0)
                    .or_else(|| c.train_report.as_ref().map(|t| t.mean_l0)),
                alive_features: dl
                    .map(|r| r.alive_features)
                    .or_else(|| c.train_report.as_ref().map(|t| t.alive_features)),
                entropy_dl_bits: dl.map(|r| r.entropy_dl_bits),
                upper_bound_dl_bits: dl.map(|r| r.upper_bound_dl_bits),
                test_mse: dl
                    .map(|r| r.test_mse)
                    .or_else(|| c.train_report.as_ref().map(|t| t.final_test_mse)),
                quant_bits: dl.map(|r| r.quant_bits),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let la = a.mean_l0.unwrap_or(f64::INFINITY);
        let lb = b.mean_l0.unwrap_or(f64::INFINITY);
        la.total_cmp(&lb).then(a.candidate.cmp(&b.candidate))
    });
    rows
}
