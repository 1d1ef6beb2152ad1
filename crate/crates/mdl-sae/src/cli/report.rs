//! Report file construction: UTF-8 CSV with a header row, plus
//! line-delimited JSON for machine consumption.
//!
//! Values are numbers and bare enum names, so no CSV quoting is needed.
//! Floats print with Rust's shortest round-trip formatting and parse
//! back losslessly. Nothing time- or path-dependent goes into a report,
//! which keeps reruns byte-identical.

use serde::Serialize;

use crate::codec::DlReport;
use crate::sae::TrainReport;
use crate::sweep::{CandidateStatus, MdlSelection, ParetoRow, SweepCandidate};
use crate::toys::{BoundaryPoint, CodingComparison, Preferred};

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn status_name(status: CandidateStatus) -> &'static str {
    match status {
        CandidateStatus::WithinTolerance => "within_tolerance",
        CandidateStatus::ExceededTolerance => "exceeded_tolerance",
        CandidateStatus::Failed => "failed",
    }
}

fn preferred_name(p: Preferred) -> &'static str {
    match p {
        Preferred::Scheme1 => "scheme1",
        Preferred::Scheme2 => "scheme2",
        Preferred::Tie => "tie",
    }
}

// ---------------------------------------------------------------------------
// Training and DL records
// ---------------------------------------------------------------------------

pub fn train_report_csv(report: &TrainReport) -> String {
    csv(
        &["final_train_mse", "final_test_mse", "mean_l0", "alive_features", "epochs_run"],
        [vec![
            fmt_f64(report.final_train_mse),
            fmt_f64(report.final_test_mse),
            fmt_f64(report.mean_l0),
            report.alive_features.to_string(),
            report.epochs_run.to_string(),
        ]],
    )
}

/// Outcome of a description-length measurement run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DlStatus {
    Ok,
    /// Unquantized loss already above the tolerance.
    ToleranceNotMet,
    /// No bit width up to the maximum kept the loss inside tolerance.
    NoFeasiblePrecision,
}

/// Record printed by the `dl` command. Measurement fields are present
/// only when `status` is `ok`.
#[derive(Debug, Clone, Serialize)]
pub struct DlRecord {
    pub status: DlStatus,
    pub epsilon: f64,
    pub unquantized_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<DlReport>,
    /// Loss at the maximum searched width, for infeasible runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_at_max_bits: Option<f64>,
}

pub fn dl_record_csv(record: &DlRecord) -> String {
    let status = match record.status {
        DlStatus::Ok => "ok",
        DlStatus::ToleranceNotMet => "tolerance_not_met",
        DlStatus::NoFeasiblePrecision => "no_feasible_precision",
    };
    let r = record.report.as_ref();
    csv(
        &[
            "status",
            "epsilon",
            "unquantized_mse",
            "mean_l0",
            "dict_size",
            "alive_features",
            "entropy_dl_bits",
            "upper_bound_dl_bits",
            "quant_bits",
            "test_mse",
            "decoder_parameter_bits",
            "mse_at_max_bits",
        ],
        [vec![
            status.to_string(),
            fmt_f64(record.epsilon),
            fmt_f64(record.unquantized_mse),
            opt_f64(r.map(|r| r.mean_l0)),
            opt_usize(r.map(|r| r.dict_size)),
            opt_usize(r.map(|r| r.alive_features)),
            opt_f64(r.map(|r| r.entropy_dl_bits)),
            opt_f64(r.map(|r| r.upper_bound_dl_bits)),
            opt_usize(r.map(|r| r.quant_bits as usize)),
            opt_f64(r.map(|r| r.test_mse)),
            opt_f64(r.map(|r| r.decoder_parameter_bits)),
            opt_f64(record.mse_at_max_bits),
        ]],
    )
}

pub fn dl_record_json(record: &DlRecord) -> String {
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    line
}

// ---------------------------------------------------------------------------
// Sweep outputs
// ---------------------------------------------------------------------------

pub fn pareto_csv(rows: &[ParetoRow]) -> String {
    csv(
        &[
            "candidate",
            "k",
            "dict_size",
            "seed",
            "status",
            "mean_l0",
            "alive_features",
            "entropy_dl_bits",
            "upper_bound_dl_bits",
            "test_mse",
            "quant_bits",
        ],
        rows.iter().map(|r| {
            vec![
                r.candidate.to_string(),
                r.k.to_string(),
                r.dict_size.to_string(),
                r.seed.to_string(),
                status_name(r.status).to_string(),
                opt_f64(r.mean_l0),
                opt_usize(r.alive_features),
                opt_f64(r.entropy_dl_bits),
                opt_f64(r.upper_bound_dl_bits),
                opt_f64(r.test_mse),
                opt_usize(r.quant_bits.map(|b| b as usize)),
            ]
        }),
    )
}

/// Per-candidate record for the JSONL report.
#[derive(Debug, Clone, Serialize)]
struct CandidateRecord<'a> {
    candidate: usize,
    status: CandidateStatus,
    config: &'a crate::sae::SaeConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_report: Option<&'a TrainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dl_report: Option<&'a DlReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
}

pub fn candidates_jsonl(candidates: &[SweepCandidate]) -> String {
    let mut out = String::new();
    for (i, c) in candidates.iter().enumerate() {
        let record = CandidateRecord {
            candidate: i,
            status: c.status,
            config: &c.config,
            train_report: c.train_report.as_ref(),
            dl_report: c.dl_report.as_ref(),
            failure: c.failure.as_deref(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn selection_csv(selection: &MdlSelection, candidates: &[SweepCandidate]) -> String {
    let header = [
        "winner_present",
        "candidate",
        "k",
        "dict_size",
        "seed",
        "entropy_dl_bits",
        "mean_l0",
        "test_mse",
        "quant_bits",
    ];
    let row = match selection.winner {
        None => vec![
            "false".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ],
        Some(i) => {
            let c = &candidates[i];
            let r = c.dl_report.as_ref().expect("winner is within tolerance");
            vec![
                "true".to_string(),
                i.to_string(),
                c.config.k.to_string(),
                c.config.dict_size.to_string(),
                c.config.seed.to_string(),
                fmt_f64(r.entropy_dl_bits),
                fmt_f64(r.mean_l0),
                fmt_f64(r.test_mse),
                r.quant_bits.to_string(),
            ]
        }
    };
    csv(&header, [row])
}

// ---------------------------------------------------------------------------
// Toy-model grids
// ---------------------------------------------------------------------------

pub fn split_grid_csv(rows: &[(f64, f64, CodingComparison)]) -> String {
    csv(
        &["p", "rho", "l0_nosplit", "l0_split", "dl_nosplit", "dl_split", "preferred"],
        rows.iter().map(|(p, rho, cmp)| {
            vec![
                fmt_f64(*p),
                fmt_f64(*rho),
                fmt_f64(cmp.l0_scheme1),
                fmt_f64(cmp.l0_scheme2),
                fmt_f64(cmp.dl_scheme1),
                fmt_f64(cmp.dl_scheme2),
                preferred_name(cmp.preferred).to_string(),
            ]
        }),
    )
}

pub fn boundary_csv(points: &[BoundaryPoint]) -> String {
    csv(
        &["p", "rho_star", "boundary_absent"],
        points.iter().map(|b| {
            vec![
                fmt_f64(b.p),
                opt_f64(b.rho_star),
                (b.rho_star.is_none()).to_string(),
            ]
        }),
    )
}

pub fn hier_grid_csv(rows: &[(f64, f64, CodingComparison)]) -> String {
    csv(
        &[
            "p_a",
            "p_b_given_a",
            "l0_flat",
            "l0_hier",
            "l0_hier_expected_count",
            "dl_flat",
            "dl_hier",
            "preferred",
        ],
        rows.iter().map(|(p_a, q, cmp)| {
            vec![
                fmt_f64(*p_a),
                fmt_f64(*q),
                fmt_f64(cmp.l0_scheme1),
                fmt_f64(cmp.l0_scheme2),
                opt_f64(cmp.l0_scheme2_expected_count),
                fmt_f64(cmp.dl_scheme1),
                fmt_f64(cmp.dl_scheme2),
                preferred_name(cmp.preferred).to_string(),
            ]
        }),
    )
}
