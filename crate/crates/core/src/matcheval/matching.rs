use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instancer::{GroundTruthInstance, InstanceCandidate};
use crate::volgrid::Geometry;

/// When a candidate counts as a detection of a ground-truth node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchCriterion {
    /// Inclusive bounds on candidate radius / ground-truth radius.
    pub radius_factor: [f64; 2],
    /// Minimum shared voxels as a fraction of the smaller instance. At least
    /// one shared voxel is always required.
    pub min_overlap_fraction: f64,
}

impl Default for MatchCriterion {
    fn default() -> Self {
        MatchCriterion {
            radius_factor: [0.5, 1.5],
            min_overlap_fraction: 0.0,
        }
    }
}

impl MatchCriterion {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.radius_factor;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param(format!(
                "radius factor bounds must satisfy 0 < lo <= hi, got {:?}",
                self.radius_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.min_overlap_fraction) {
            return Err(Error::param("min_overlap_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn radius_compatible(&self, candidate_radius: f64, gt_radius: f64) -> bool {
        let ratio = candidate_radius / gt_radius;
        ratio >= self.radius_factor[0] && ratio <= self.radius_factor[1]
    }
}

/// One-to-one assignment between a patient's candidates and ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(candidate id, gt id)` in assignment order.
    pub pairs: Vec<(u32, u32)>,
    pub false_positives: Vec<u32>,
    pub false_negatives: Vec<u32>,
    /// Hit flag per input candidate, in input order.
    pub hits: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy one-to-one matching in descending candidate score.
///
/// A candidate may take an unused ground-truth node when their voxel sets
/// intersect (subject to the overlap fraction) and the radius ratio lies
/// within the criterion bounds. Among several eligible nodes the one with
/// the largest overlap wins, then the lowest id. Candidates with equal
/// scores are processed in input order.
pub fn match_instances(
    candidates: &[InstanceCandidate],
    gts: &[GroundTruthInstance],
    criterion: &MatchCriterion,
) -> Result<MatchResult> {
    criterion.validate()?;
    if let Some(c) = candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(Error::param(format!("candidate {} has a non-finite score", c.id)));
    }
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        for &v in &gt.voxel_indices {
            owner.insert(v, g);
        }
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score).then(a.cmp(&b)));

    let mut used = vec![false; gts.len()];
    let mut hits = vec![false; candidates.len()];
    let mut pairs = Vec::new();
    let mut overlap: HashMap<usize, usize> = HashMap::new();
    for &ci in &order {
        let cand = &candidates[ci];
        overlap.clear();
        for v in &cand.voxel_indices {
            if let Some(&g) = owner.get(v) {
                *overlap.entry(g).or_default() += 1;
            }
        }
        let mut best: Option<(usize, usize)> = None;
        for (&g, &shared) in &overlap {
            if used[g] {
                continue;
            }
            let gt = &gts[g];
            let smaller = cand.voxel_indices.len().min(gt.voxel_indices.len()).max(1);
            if (shared as f64) < criterion.min_overlap_fraction * smaller as f64 {
                continue;
            }
            if !criterion.radius_compatible(cand.radius_mm, gt.radius_mm) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, bs)) => shared > bs || (shared == bs && gt.id < gts[bg].id),
            };
            if better {
                best = Some((g, shared));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            hits[ci] = true;
            pairs.push((cand.id, gts[g].id));
        }
    }

    Ok(MatchResult {
        pairs,
        false_positives: candidates
            .iter()
            .zip(&hits)
            .filter(|(_, &h)| !h)
            .map(|(c, _)| c.id)
            .collect(),
        false_negatives: gts
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(g, _)| g.id)
            .collect(),
        hits,
    })
}

/// A patient's candidates and ground truth on a shared lattice.
#[derive(Debug, Clone)]
pub struct PatientCase {
    pub patient_id: String,
    pub geometry: Geometry,
    pub candidates: Vec<InstanceCandidate>,
    pub gts: Vec<GroundTruthInstance>,
}

impl PatientCase {
    pub fn new(
        patient_id: impl Into<String>,
        candidate_geometry: &Geometry,
        candidates: Vec<InstanceCandidate>,
        gt_geometry: &Geometry,
        gts: Vec<GroundTruthInstance>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        candidate_geometry.ensure_same(gt_geometry, &format!("patient {patient_id} candidates vs ground truth"))?;
        Ok(PatientCase {
            patient_id,
            geometry: *candidate_geometry,
            candidates,
            gts,
        })
    }

    pub fn match_with(&self, criterion: &MatchCriterion) -> Result<MatchResult> {
        match_instances(&self.candidates, &self.gts, criterion)
    }

    /// Match and reduce to the score/hit table the sweeps need.
    pub fn hits(&self, criterion: &MatchCriterion) -> Result<PatientHits> {
        let m = self.match_with(criterion)?;
        Ok(PatientHits::from_match(&self.candidates, &m, self.gts.len()))
    }
}

/// Scores with hit flags plus the ground-truth count for one patient.
///
/// Greedy matching visits candidates in descending score, so the matching
/// of every score-thresholded subset is a prefix of the full matching. A
/// single full match therefore fixes the hit flags for every threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientHits {
    pub detections: Vec<(f64, bool)>,
    pub n_gt: usize,
}

impl PatientHits {
    pub fn new(detections: Vec<(f64, bool)>, n_gt: usize) -> Result<Self> {
        if detections.iter().any(|(s, _)| !s.is_finite()) {
            return Err(Error::param("detection scores must be finite"));
        }
        let tp = detections.iter().filter(|(_, h)| *h).count();
        if tp > n_gt {
            return Err(Error::Invariant(format!(
                "{tp} hits exceed {n_gt} ground-truth instances"
            )));
        }
        Ok(PatientHits { detections, n_gt })
    }

    pub fn from_match(candidates: &[InstanceCandidate], m: &MatchResult, n_gt: usize) -> Self {
        PatientHits {
            detections: candidates.iter().zip(&m.hits).map(|(c, &h)| (c.score, h)).collect(),
            n_gt,
        }
    }

    /// Replace scores, keeping hit flags (second-stage rescoring).
    pub fn rescored(&self, scores: &[f64]) -> Result<Self> {
        if scores.len() != self.detections.len() {
            return Err(Error::Invariant("rescoring length mismatch".into()));
        }
        PatientHits::new(
            self.detections
                .iter()
                .zip(scores)
                .map(|(&(_, h), &s)| (s, h))
                .collect(),
            self.n_gt,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: u32, voxels: &[usize], radius: f64, score: f64) -> InstanceCandidate {
        InstanceCandidate {
            id,
            voxel_indices: voxels.to_vec(),
            centroid_mm: [0.0; 3],
            volume_mm3: voxels.len() as f64,
            radius_mm: radius,
            score,
            label: None,
        }
    }

    fn gt(id: u32, voxels: &[usize], radius: f64) -> GroundTruthInstance {
        GroundTruthInstance {
            id,
            voxel_indices: voxels.to_vec(),
            centroid_mm: [0.0; 3],
            volume_mm3: voxels.len() as f64,
            radius_mm: radius,
        }
    }

    #[test]
    fn radius_bounds_inclusive() {
        let g = [gt(1, &[1, 2, 3], 10.0)];
        let crit = MatchCriterion::default();
        let hit = |r: f64| {
            match_instances(&[cand(1, &[2], r, 0.5)], &g, &crit).unwrap().hits[0]
        };
        assert!(hit(5.0));
        assert!(hit(15.0));
        assert!(hit(10.0));
        assert!(!hit(16.0));
        assert!(!hit(4.999));
    }

    #[test]
    fn no_overlap_no_hit() {
        let g = [gt(1, &[1, 2, 3], 10.0)];
        let m = match_instances(&[cand(1, &[7, 8], 10.0, 0.9)], &g, &MatchCriterion::default())
            .unwrap();
        assert_eq!(m.false_positives, vec![1]);
        assert_eq!(m.false_negatives, vec![1]);
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn duplicate_becomes_fp() {
        let g = [gt(1, &[1, 2, 3, 4], 2.0)];
        let cs = [cand(1, &[1, 2], 2.0, 0.6), cand(2, &[3, 4], 2.0, 0.9)];
        let m = match_instances(&cs, &g, &MatchCriterion::default()).unwrap();
        assert_eq!(m.pairs, vec![(2, 1)]);
        assert_eq!(m.false_positives, vec![1]);
        assert_eq!(m.hits, vec![false, true]);
    }

    #[test]
    fn prefers_larger_overlap() {
        let g = [gt(1, &[1, 2], 2.0), gt(2, &[3, 4, 5], 2.0)];
        let cs = [cand(1, &[2, 3, 4], 2.0, 0.9)];
        let m = match_instances(&cs, &g, &MatchCriterion::default()).unwrap();
        assert_eq!(m.pairs, vec![(1, 2)]);
        assert_eq!(m.false_negatives, vec![1]);
    }

    #[test]
    fn overlap_fraction() {
        let g = [gt(1, &[1, 2, 3, 4], 2.0)];
        let cs = [cand(1, &[4, 5, 6, 7], 2.0, 0.9)];
        let strict = MatchCriterion {
            min_overlap_fraction: 0.5,
            ..Default::default()
        };
        assert!(!match_instances(&cs, &g, &strict).unwrap().hits[0]);
        assert!(match_instances(&cs, &g, &MatchCriterion::default()).unwrap().hits[0]);
    }

    #[test]
    fn geometry_mismatch() {
        let a = Geometry::with_spacing([2, 2, 2], [1.0; 3]).unwrap();
        let b = Geometry::with_spacing([2, 2, 3], [1.0; 3]).unwrap();
        assert!(PatientCase::new("p", &a, vec![], &b, vec![]).is_err());
    }
}
