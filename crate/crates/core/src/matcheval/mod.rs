//! Hit matching and detection metrics: macro precision/recall, recall in a
//! precision band, FROC with mFROC, and best F1.

mod curves;
mod matching;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use curves::{
    best_f1, f1_score, froc_curve, mfroc, patient_precision_recall, pr_curve, recall_at_precision,
    select_operating_threshold, BestF1, BudgetRecall, FrocCurve, FrocPoint, PrCurve, PrPoint,
    RecallAtPrecision, DEFAULT_FROC_BUDGETS, DEFAULT_OPERATING_PRECISION, DEFAULT_PRECISION_BAND,
};
pub use matching::{match_instances, MatchCriterion, MatchResult, PatientCase, PatientHits};

/// Metric settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub froc_budgets: Vec<f64>,
    pub precision_band: [f64; 2],
    pub operating_precision: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            froc_budgets: DEFAULT_FROC_BUDGETS.to_vec(),
            precision_band: DEFAULT_PRECISION_BAND,
            operating_precision: DEFAULT_OPERATING_PRECISION,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.froc_budgets.is_empty() {
            return Err(Error::param("at least one FROC budget is required"));
        }
        if self.froc_budgets.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::param("FROC budgets must be non-negative"));
        }
        let [lo, hi] = self.precision_band;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::param(format!(
                "precision band must satisfy 0 <= lo <= hi <= 1, got {:?}",
                self.precision_band
            )));
        }
        if !(self.operating_precision > 0.0 && self.operating_precision <= 1.0) {
            return Err(Error::param("operating precision must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Every headline metric for one scored cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub pr: Vec<PrPoint>,
    pub froc: Vec<FrocPoint>,
    pub froc_budgets: Vec<BudgetRecall>,
    pub mfroc: f64,
    pub best_f1: BestF1,
    /// Recall at the point nearest the operating precision.
    pub recall_at_operating_precision: f64,
    pub operating_threshold: f64,
    pub band: RecallAtPrecision,
    pub n_patients: usize,
    pub n_gt: usize,
    pub n_candidates: usize,
}

/// Compute all metrics. A cohort with no candidates at all yields an empty
/// PR curve and zero F1.
pub fn evaluate(per_patient: &[PatientHits], config: &EvalConfig) -> Result<DetectionMetrics> {
    config.validate()?;
    let pr = pr_curve(per_patient)?;
    let froc = froc_curve(per_patient, &config.froc_budgets)?;
    let mf = mfroc(&froc)?;
    let n_candidates = per_patient.iter().map(|p| p.detections.len()).sum();
    let (best, op_recall, op_threshold, band) = if pr.points.is_empty() {
        let empty = froc.points[0];
        (
            BestF1 {
                threshold: f64::INFINITY,
                f1: f1_score(1.0, empty.recall),
                precision: 1.0,
                recall: empty.recall,
            },
            empty.recall,
            f64::INFINITY,
            RecallAtPrecision {
                recall_at_point: empty.recall,
                point_threshold: f64::INFINITY,
                point_precision: 1.0,
                mean_recall: None,
                points_in_band: 0,
            },
        )
    } else {
        let best = best_f1(per_patient)?;
        let op_threshold = select_operating_threshold(&pr, config.operating_precision)?;
        let op_recall = pr
            .points
            .iter()
            .find(|p| p.threshold == op_threshold)
            .map(|p| p.recall)
            .unwrap_or(0.0);
        let band = recall_at_precision(&pr, config.precision_band)?;
        (best, op_recall, op_threshold, band)
    };
    Ok(DetectionMetrics {
        pr: pr.points,
        froc: froc.points,
        froc_budgets: froc.budgets,
        mfroc: mf,
        best_f1: best,
        recall_at_operating_precision: op_recall,
        operating_threshold: op_threshold,
        band,
        n_patients: per_patient.len(),
        n_gt: per_patient.iter().map(|p| p.n_gt).sum(),
        n_candidates,
    })
}
