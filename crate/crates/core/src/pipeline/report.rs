use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PatientOutcome, PipelineConfig};
use crate::error::{Error, Result};
use crate::instancer::{write_candidates_csv, write_gt_csv};
use crate::matcheval::{evaluate, froc_curve, mfroc, BudgetRecall, DetectionMetrics, PatientHits};
use crate::volgrid::CohortStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFailure {
    pub patient_id: String,
    pub error: String,
}

/// FROC readout of the unrescored candidates, for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageSummary {
    pub mfroc: f64,
    pub froc_budgets: Vec<BudgetRecall>,
}

/// Cohort-level result of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// Fully resolved configuration.
    pub config: PipelineConfig,
    pub scorer: String,
    pub pet_stats: CohortStats,
    /// Patients that completed.
    pub n_patients: usize,
    pub failures: Vec<PatientFailure>,
    pub scorer_fallbacks: usize,
    pub n_extracted: usize,
    pub n_false_positives: usize,
    pub mean_false_positives_per_patient: f64,
    /// Absent when no patient completed.
    pub metrics: Option<DetectionMetrics>,
    pub first_stage: Option<FirstStageSummary>,
}

impl PipelineReport {
    pub fn assemble(
        config: &PipelineConfig,
        scorer: &str,
        pet_stats: CohortStats,
        outcomes: &[PatientOutcome],
        failures: Vec<PatientFailure>,
    ) -> Result<Self> {
        let hits: Vec<PatientHits> = outcomes.iter().map(|o| o.hits.clone()).collect();
        let first: Vec<PatientHits> = outcomes.iter().map(|o| o.first_stage_hits.clone()).collect();
        let n_extracted = outcomes.iter().map(|o| o.candidates.len()).sum();
        let n_false_positives = outcomes
            .iter()
            .flat_map(|o| &o.candidates)
            .filter(|c| c.label == Some(false))
            .count();
        let (metrics, first_stage) = if outcomes.is_empty() {
            (None, None)
        } else {
            let curve = froc_curve(&first, &config.froc_budgets)?;
            (
                Some(evaluate(&hits, &config.eval_config())?),
                Some(FirstStageSummary {
                    mfroc: mfroc(&curve)?,
                    froc_budgets: curve.budgets,
                }),
            )
        };
        Ok(PipelineReport {
            config: config.clone(),
            scorer: scorer.to_string(),
            pet_stats,
            n_patients: outcomes.len(),
            failures,
            scorer_fallbacks: outcomes.iter().map(|o| o.fallbacks).sum(),
            n_extracted,
            n_false_positives,
            mean_false_positives_per_patient: if outcomes.is_empty() {
                0.0
            } else {
                n_false_positives as f64 / outcomes.len() as f64
            },
            metrics,
            first_stage,
        })
    }

    /// Recall at a FROC budget, if that budget was evaluated.
    pub fn recall_at_budget(&self, budget: f64) -> Option<f64> {
        self.metrics
            .as_ref()?
            .froc_budgets
            .iter()
            .find(|b| b.budget == budget)
            .map(|b| b.recall)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the cohort artifacts into `dir`.
pub fn write_outputs(dir: &Path, report: &PipelineReport, outcomes: &[PatientOutcome]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut buf = Vec::new();
    let rows: Vec<_> = outcomes.iter().flat_map(|o| o.candidate_records()).collect();
    write_candidates_csv(&mut buf, &rows)?;
    write_file(&dir.join("candidates.csv"), &buf)?;

    buf.clear();
    let rows: Vec<_> = outcomes.iter().flat_map(|o| o.gt_records()).collect();
    write_gt_csv(&mut buf, &rows)?;
    write_file(&dir.join("gt.csv"), &buf)?;

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_file(&dir.join("report.json"), json.as_bytes())?;

    if let Some(m) = &report.metrics {
        let pr: Vec<(f64, f64)> = m.pr.iter().map(|p| (p.recall, p.precision)).collect();
        let svg = super::curve_svg("Precision-recall", "recall", "precision", &pr, [0.0, 1.0]);
        write_file(&dir.join("pr.svg"), svg.as_bytes())?;
        let froc: Vec<(f64, f64)> = m.froc.iter().map(|p| (p.fp_per_patient, p.recall)).collect();
        let x_max = froc
            .iter()
            .map(|p| p.0)
            .chain(report.config.froc_budgets.iter().copied())
            .fold(1.0, f64::max);
        let svg = super::curve_svg("FROC", "false positives per patient", "recall", &froc, [0.0, x_max]);
        write_file(&dir.join("froc.svg"), svg.as_bytes())?;
    }
    Ok(())
}
