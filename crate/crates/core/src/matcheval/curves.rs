//! Threshold sweeps over instance scores.
//!
//! Every metric is macro-averaged: computed per patient, then averaged with
//! equal patient weight. Per patient, precision is 1 when nothing is kept and
//! recall is 1 when there is no ground truth.

use serde::{Deserialize, Serialize};

use super::matching::PatientHits;
use crate::error::{Error, Result};

pub const DEFAULT_FROC_BUDGETS: [f64; 4] = [2.0, 3.0, 4.0, 6.0];
pub const DEFAULT_PRECISION_BAND: [f64; 2] = [0.10, 0.20];
pub const DEFAULT_OPERATING_PRECISION: f64 = 0.15;

// Float ties on derived quantities (precision distance, F1) are resolved
// within this tolerance.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Macro precision/recall at every distinct score, ascending threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    /// `None` for the operating point that keeps no candidate.
    pub threshold: Option<f64>,
    pub fp_per_patient: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRecall {
    pub budget: f64,
    pub recall: f64,
    /// Lowest threshold achieving `recall` within the budget.
    pub threshold: Option<f64>,
}

/// FROC sweep (ascending FP rate) and its readout at the FP budgets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub budgets: Vec<BudgetRecall>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestF1 {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAtPrecision {
    /// Recall at the point whose precision is nearest the band midpoint.
    pub recall_at_point: f64,
    pub point_threshold: f64,
    pub point_precision: f64,
    /// Mean recall over sweep points with precision inside the band;
    /// `None` when no point falls inside.
    pub mean_recall: Option<f64>,
    pub points_in_band: usize,
}

impl RecallAtPrecision {
    /// Band mean, or the nearest-point recall when the band is empty.
    pub fn mean_or_nearest(&self) -> f64 {
        self.mean_recall.unwrap_or(self.recall_at_point)
    }

    pub fn used_fallback(&self) -> bool {
        self.mean_recall.is_none()
    }
}

/// Per-patient detections sorted by descending score with running TP counts.
struct SortedPatient {
    scores_desc: Vec<f64>,
    cum_tp: Vec<usize>,
    n_gt: usize,
}

impl SortedPatient {
    fn new(p: &PatientHits) -> Self {
        let mut d = p.detections.clone();
        d.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut cum_tp = Vec::with_capacity(d.len() + 1);
        cum_tp.push(0);
        let mut tp = 0;
        for &(_, hit) in &d {
            tp += usize::from(hit);
            cum_tp.push(tp);
        }
        SortedPatient {
            scores_desc: d.into_iter().map(|(s, _)| s).collect(),
            cum_tp,
            n_gt: p.n_gt,
        }
    }

    /// (kept, tp) at `score >= threshold`.
    fn counts(&self, threshold: f64) -> (usize, usize) {
        let kept = self.scores_desc.partition_point(|&s| s >= threshold);
        (kept, self.cum_tp[kept])
    }
}

/// Per-patient precision/recall from counts.
pub fn patient_precision_recall(kept: usize, tp: usize, n_gt: usize) -> (f64, f64) {
    let precision = if kept == 0 { 1.0 } else { tp as f64 / kept as f64 };
    let recall = if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 };
    (precision, recall)
}

struct Sweep {
    patients: Vec<SortedPatient>,
    thresholds: Vec<f64>,
}

#[derive(Clone, Copy)]
struct MacroPoint {
    precision: f64,
    recall: f64,
    fp_total: usize,
}

impl Sweep {
    fn new(per_patient: &[PatientHits]) -> Result<Self> {
        if per_patient.is_empty() {
            return Err(Error::EmptyInput("no patients to evaluate".into()));
        }
        let mut thresholds: Vec<f64> = Vec::new();
        for p in per_patient {
            for &(s, _) in &p.detections {
                if !s.is_finite() {
                    return Err(Error::param("candidate scores must be finite"));
                }
                thresholds.push(s);
            }
        }
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        Ok(Sweep {
            patients: per_patient.iter().map(SortedPatient::new).collect(),
            thresholds,
        })
    }

    fn at(&self, threshold: f64) -> MacroPoint {
        let mut psum = 0.0;
        let mut rsum = 0.0;
        let mut fp_total = 0;
        for p in &self.patients {
            let (kept, tp) = p.counts(threshold);
            let (pr, rc) = patient_precision_recall(kept, tp, p.n_gt);
            psum += pr;
            rsum += rc;
            fp_total += kept - tp;
        }
        let n = self.patients.len() as f64;
        MacroPoint {
            precision: psum / n,
            recall: rsum / n,
            fp_total,
        }
    }
}

/// Macro precision/recall at every distinct candidate score.
pub fn pr_curve(per_patient: &[PatientHits]) -> Result<PrCurve> {
    let sweep = Sweep::new(per_patient)?;
    let points = sweep
        .thresholds
        .iter()
        .map(|&t| {
            let m = sweep.at(t);
            PrPoint {
                threshold: t,
                precision: m.precision,
                recall: m.recall,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// FROC sweep and best recall within each mean-FP-per-patient budget.
///
/// The sweep includes the empty operating point (nothing kept), so every
/// non-negative budget has a value.
pub fn froc_curve(per_patient: &[PatientHits], budgets: &[f64]) -> Result<FrocCurve> {
    if let Some(b) = budgets.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(Error::param(format!("FP budget must be non-negative, got {b}")));
    }
    let sweep = Sweep::new(per_patient)?;
    let n = sweep.patients.len() as f64;

    let mut points = Vec::with_capacity(sweep.thresholds.len() + 1);
    let empty = sweep.at(f64::INFINITY);
    points.push((None, empty));
    for &t in sweep.thresholds.iter().rev() {
        points.push((Some(t), sweep.at(t)));
    }

    let budgets = budgets
        .iter()
        .map(|&b| {
            let mut best: Option<(f64, Option<f64>)> = None;
            for (t, m) in &points {
                if m.fp_total as f64 > b * n + 1e-9 {
                    continue;
                }
                // Points run from high to low threshold; `>=` keeps the lowest.
                if best.map_or(true, |(r, _)| m.recall >= r) {
                    best = Some((m.recall, *t));
                }
            }
            let (recall, threshold) = best.expect("empty operating point always qualifies");
            BudgetRecall {
                budget: b,
                recall,
                threshold,
            }
        })
        .collect();

    Ok(FrocCurve {
        points: points
            .into_iter()
            .map(|(t, m)| FrocPoint {
                threshold: t,
                fp_per_patient: m.fp_total as f64 / n,
                recall: m.recall,
            })
            .collect(),
        budgets,
    })
}

/// Mean recall over the budgets.
pub fn mfroc(curve: &FrocCurve) -> Result<f64> {
    if curve.budgets.is_empty() {
        return Err(Error::EmptyInput("FROC curve has no budget values".into()));
    }
    Ok(curve.budgets.iter().map(|b| b.recall).sum::<f64>() / curve.budgets.len() as f64)
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Threshold maximizing macro F1; ties go to the lower threshold.
pub fn best_f1(per_patient: &[PatientHits]) -> Result<BestF1> {
    let curve = pr_curve(per_patient)?;
    let mut best: Option<BestF1> = None;
    for p in &curve.points {
        let f1 = f1_score(p.precision, p.recall);
        if best.map_or(true, |b| f1 > b.f1 + TIE_EPS) {
            best = Some(BestF1 {
                threshold: p.threshold,
                f1,
                precision: p.precision,
                recall: p.recall,
            });
        }
    }
    best.ok_or_else(|| Error::EmptyInput("no candidates to sweep".into()))
}

fn nearest_point(curve: &PrCurve, target: f64) -> Option<&PrPoint> {
    let mut best: Option<&PrPoint> = None;
    for p in &curve.points {
        let better = match best {
            None => true,
            Some(b) => {
                let (d, db) = ((p.precision - target).abs(), (b.precision - target).abs());
                d < db - TIE_EPS || ((d - db).abs() <= TIE_EPS && p.recall > b.recall)
            }
        };
        if better {
            best = Some(p);
        }
    }
    best
}

/// Recall at the band midpoint and mean recall across the band.
pub fn recall_at_precision(curve: &PrCurve, band: [f64; 2]) -> Result<RecallAtPrecision> {
    let [lo, hi] = band;
    if !(lo <= hi) {
        return Err(Error::param(format!("precision band needs lo <= hi, got {band:?}")));
    }
    let mid = 0.5 * (lo + hi);
    let point = nearest_point(curve, mid)
        .ok_or_else(|| Error::EmptyInput("precision/recall curve is empty".into()))?;
    let in_band: Vec<f64> = curve
        .points
        .iter()
        .filter(|p| p.precision >= lo && p.precision <= hi)
        .map(|p| p.recall)
        .collect();
    let mean_recall = (!in_band.is_empty()).then(|| in_band.iter().sum::<f64>() / in_band.len() as f64);
    Ok(RecallAtPrecision {
        recall_at_point: point.recall,
        point_threshold: point.threshold,
        point_precision: point.precision,
        mean_recall,
        points_in_band: in_band.len(),
    })
}

/// Threshold whose precision is nearest `target_precision` (ties: higher recall).
pub fn select_operating_threshold(curve: &PrCurve, target_precision: f64) -> Result<f64> {
    if !(target_precision > 0.0 && target_precision <= 1.0) {
        return Err(Error::param(format!(
            "target precision must lie in (0, 1], got {target_precision}"
        )));
    }
    nearest_point(curve, target_precision)
        .map(|p| p.threshold)
        .ok_or_else(|| Error::EmptyInput("precision/recall curve is empty".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hits(d: &[(f64, bool)], n_gt: usize) -> PatientHits {
        PatientHits::new(d.to_vec(), n_gt).unwrap()
    }

    #[test]
    fn hand_enumerated_sweep() {
        let p = [hits(&[(0.9, true), (0.8, false), (0.7, true)], 2)];
        let c = pr_curve(&p).unwrap();
        assert_eq!(c.points.len(), 3);
        let at07 = c.points[0];
        assert_eq!(at07.threshold, 0.7);
        assert!((at07.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(at07.recall, 1.0);
        assert_eq!((c.points[1].precision, c.points[1].recall), (0.5, 0.5));
        assert_eq!((c.points[2].precision, c.points[2].recall), (1.0, 0.5));
    }

    #[test]
    fn perfect_detector() {
        let p = [hits(&[(0.9, true), (0.6, true)], 2), hits(&[(0.7, true)], 1)];
        let c = pr_curve(&p).unwrap();
        assert!(c.points.iter().any(|q| q.precision == 1.0 && q.recall == 1.0));
        let f = froc_curve(&p, &[0.0, 2.0]).unwrap();
        assert_eq!(f.budgets[0].recall, 1.0);
        assert_eq!(mfroc(&f).unwrap(), 1.0);
        let b = best_f1(&p).unwrap();
        assert_eq!(b.f1, 1.0);
        assert_eq!(b.threshold, 0.6);
    }

    #[test]
    fn mfroc_mean() {
        let curve = FrocCurve {
            points: vec![],
            budgets: [0.4, 0.5, 0.6, 0.7]
                .iter()
                .zip(DEFAULT_FROC_BUDGETS)
                .map(|(&r, b)| BudgetRecall {
                    budget: b,
                    recall: r,
                    threshold: None,
                })
                .collect(),
        };
        assert!((mfroc(&curve).unwrap() - 0.55).abs() < 1e-15);
        assert!(mfroc(&FrocCurve::default()).is_err());
    }

    #[test]
    fn band_readout() {
        let single = PrCurve {
            points: vec![PrPoint {
                threshold: 0.5,
                precision: 0.15,
                recall: 0.7,
            }],
        };
        let r = recall_at_precision(&single, [0.1, 0.2]).unwrap();
        assert_eq!((r.recall_at_point, r.mean_recall), (0.7, Some(0.7)));

        let two = PrCurve {
            points: vec![
                PrPoint {
                    threshold: 0.3,
                    precision: 0.12,
                    recall: 0.8,
                },
                PrPoint {
                    threshold: 0.6,
                    precision: 0.18,
                    recall: 0.6,
                },
            ],
        };
        let r = recall_at_precision(&two, [0.1, 0.2]).unwrap();
        assert!((r.mean_recall.unwrap() - 0.7).abs() < 1e-15);
        // Equidistant from 0.15: the higher-recall point wins.
        assert_eq!(r.recall_at_point, 0.8);
        assert_eq!(select_operating_threshold(&two, 0.15).unwrap(), 0.3);
        assert_eq!(select_operating_threshold(&two, 0.18).unwrap(), 0.6);

        let r = recall_at_precision(&two, [0.5, 0.9]).unwrap();
        assert!(r.used_fallback());
        assert_eq!(r.mean_or_nearest(), 0.6);
        assert!(select_operating_threshold(&PrCurve::default(), 0.15).is_err());
        assert!(select_operating_threshold(&two, 0.0).is_err());
    }

    #[test]
    fn zero_patients() {
        assert!(pr_curve(&[]).is_err());
        assert!(froc_curve(&[], &DEFAULT_FROC_BUDGETS).is_err());
        assert!(best_f1(&[]).is_err());
    }

    #[test]
    fn f1_of_equals() {
        assert_eq!(f1_score(0.5, 0.5), 0.5);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }
}
