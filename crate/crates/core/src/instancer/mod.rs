//! Detection by segmentation: threshold a probability volume, label its
//! connected components and measure each one as a detection candidate.

mod label;
mod records;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{bounding_box, BinaryMask, Geometry, VolumeKind, VoxelGrid};

pub use label::{connected_components, label_components, Connectivity};
pub use records::{
    candidates_from_label_map, label_map, read_candidates_csv, read_gt_csv, write_candidates_csv,
    write_gt_csv, CandidateRecord, GtRecord,
};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_MIN_VOXELS: usize = 8;

/// Radius (mm) of the sphere with the given volume.
pub fn equivalent_radius(volume_mm3: f64) -> f64 {
    (3.0 * volume_mm3 / (4.0 * std::f64::consts::PI)).cbrt()
}

/// Geometric measurements shared by candidates and ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub centroid_mm: [f64; 3],
    pub volume_mm3: f64,
    pub radius_mm: f64,
}

/// Centroid of voxel centres, voxel-count volume and equivalent-sphere radius.
pub fn measure(geometry: &Geometry, indices: &[usize]) -> Measurement {
    let mut acc = [0f64; 3];
    for &i in indices {
        let w = geometry.world(geometry.coords(i));
        for a in 0..3 {
            acc[a] += w[a];
        }
    }
    let n = indices.len().max(1) as f64;
    let volume_mm3 = indices.len() as f64 * geometry.voxel_volume();
    Measurement {
        centroid_mm: acc.map(|s| s / n),
        volume_mm3,
        radius_mm: equivalent_radius(volume_mm3),
    }
}

/// One connected detection.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCandidate {
    pub id: u32,
    /// Sorted linear voxel indices.
    pub voxel_indices: Vec<usize>,
    pub centroid_mm: [f64; 3],
    pub volume_mm3: f64,
    pub radius_mm: f64,
    /// Mean probability over the component.
    pub score: f64,
    /// True/false positive once matched against ground truth.
    pub label: Option<bool>,
}

impl InstanceCandidate {
    /// Inclusive voxel bounding box.
    pub fn bounding_box(&self, geometry: &Geometry) -> Option<([usize; 3], [usize; 3])> {
        bounding_box(geometry, self.voxel_indices.iter().copied())
    }
}

/// One annotated node.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub id: u32,
    pub voxel_indices: Vec<usize>,
    pub centroid_mm: [f64; 3],
    pub volume_mm3: f64,
    pub radius_mm: f64,
}

/// Candidate extraction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateParams {
    pub tau: f64,
    pub connectivity: Connectivity,
    pub min_voxels: usize,
}

impl Default for CandidateParams {
    fn default() -> Self {
        CandidateParams {
            tau: DEFAULT_TAU,
            connectivity: Connectivity::TwentySix,
            min_voxels: DEFAULT_MIN_VOXELS,
        }
    }
}

impl CandidateParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::param(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.min_voxels == 0 {
            return Err(Error::param("min_voxels must be at least 1"));
        }
        Ok(())
    }
}

/// Foreground where `p >= tau`.
pub fn binarize(p: &VoxelGrid, tau: f64) -> BinaryMask {
    let bits = p.values().iter().map(|&v| f64::from(v) >= tau).collect();
    BinaryMask::new(*p.geometry(), bits).expect("grid geometry is valid")
}

/// Threshold, label and measure. Voxels set in `exclude` (for instance the
/// tumor interior) never become foreground. Components smaller than
/// `min_voxels` are dropped; survivors get ids `1..` in scan order.
pub fn extract_candidates(
    p: &VoxelGrid,
    params: &CandidateParams,
    exclude: Option<&BinaryMask>,
) -> Result<Vec<InstanceCandidate>> {
    params.validate()?;
    let mut mask = binarize(p, params.tau);
    if let Some(ex) = exclude {
        p.geometry().ensure_same(ex.geometry(), "candidate exclusion mask")?;
        let bits = mask
            .bits()
            .iter()
            .zip(ex.bits())
            .map(|(&m, &e)| m && !e)
            .collect();
        mask = BinaryMask::new(*p.geometry(), bits)?;
    }
    let geom = p.geometry();
    let mut out = Vec::new();
    for indices in connected_components(&mask, params.connectivity) {
        if indices.len() < params.min_voxels {
            continue;
        }
        let m = measure(geom, &indices);
        let score = p.mean_at(&indices);
        out.push(InstanceCandidate {
            id: out.len() as u32 + 1,
            voxel_indices: indices,
            centroid_mm: m.centroid_mm,
            volume_mm3: m.volume_mm3,
            radius_mm: m.radius_mm,
            score,
            label: None,
        });
    }
    Ok(out)
}

/// Ground-truth instances from an annotation mask.
pub fn gt_instances(y_ln: &BinaryMask, connectivity: Connectivity) -> Vec<GroundTruthInstance> {
    let geom = y_ln.geometry();
    connected_components(y_ln, connectivity)
        .into_iter()
        .enumerate()
        .map(|(k, indices)| {
            let m = measure(geom, &indices);
            GroundTruthInstance {
                id: k as u32 + 1,
                voxel_indices: indices,
                centroid_mm: m.centroid_mm,
                volume_mm3: m.volume_mm3,
                radius_mm: m.radius_mm,
            }
        })
        .collect()
}

/// Probability grid check used by the CLI before extraction.
pub fn ensure_probability(p: &VoxelGrid) -> Result<()> {
    p.ensure_kind(VolumeKind::Probability)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(dims: [usize; 3], spacing: [f64; 3], f: impl FnMut([usize; 3]) -> f32) -> VoxelGrid {
        let g = Geometry::with_spacing(dims, spacing).unwrap();
        VoxelGrid::from_fn(g, VolumeKind::Probability, f).unwrap()
    }

    #[test]
    fn inclusive_threshold() {
        let p = prob([3, 1, 1], [1.0; 3], |[x, _, _]| [0.5, 0.49, 0.0][x]);
        assert_eq!(binarize(&p, 0.5).bits(), &[true, false, false]);
        assert_eq!(binarize(&p, 0.0).count(), 3);
    }

    #[test]
    fn four_voxel_measurement() {
        let p = prob([6, 4, 3], [1.0, 1.0, 2.5], |[x, y, z]| {
            if (1..3).contains(&x) && (1..3).contains(&y) && z == 1 {
                0.8
            } else {
                0.0
            }
        });
        let params = CandidateParams {
            min_voxels: 1,
            ..Default::default()
        };
        let c = extract_candidates(&p, &params, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].id, 1);
        assert!((c[0].volume_mm3 - 10.0).abs() < 1e-12);
        assert!((c[0].radius_mm - 1.3365).abs() < 5e-5, "{}", c[0].radius_mm);
        assert!((c[0].score - 0.8).abs() < 1e-6);
        assert_eq!(c[0].centroid_mm, [1.5, 1.5, 2.5]);

        let params = CandidateParams {
            min_voxels: 5,
            ..Default::default()
        };
        assert!(extract_candidates(&p, &params, None).unwrap().is_empty());
    }

    #[test]
    fn exclusion_removes_voxels() {
        let p = prob([4, 1, 1], [1.0; 3], |_| 0.9);
        let ex = BinaryMask::new(*p.geometry(), vec![false, true, false, false]).unwrap();
        let params = CandidateParams {
            min_voxels: 1,
            connectivity: Connectivity::Six,
            ..Default::default()
        };
        let c = extract_candidates(&p, &params, Some(&ex)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].voxel_indices, vec![2, 3]);
        assert_eq!(c[1].id, 2);
    }

    #[test]
    fn gt_from_mask() {
        let g = Geometry::with_spacing([10, 10, 10], [1.0; 3]).unwrap();
        let ball = |c: [f64; 3], r: f64| {
            move |v: [usize; 3]| {
                (0..3).map(|a| (v[a] as f64 - c[a]).powi(2)).sum::<f64>() <= r * r
            }
        };
        let a = ball([2.0, 2.0, 2.0], 1.5);
        let b = ball([7.0, 7.0, 7.0], 1.5);
        let m = BinaryMask::from_fn(g, |v| a(v) || b(v)).unwrap();
        let gts = gt_instances(&m, Connectivity::TwentySix);
        assert_eq!(gts.len(), 2);
        assert_eq!(gts[0].centroid_mm, [2.0, 2.0, 2.0]);
        assert!(gt_instances(&BinaryMask::empty(g).unwrap(), Connectivity::Six).is_empty());
    }

    #[test]
    fn rejects_bad_params() {
        let p = prob([2, 1, 1], [1.0; 3], |_| 0.0);
        let bad = CandidateParams {
            tau: 1.5,
            ..Default::default()
        };
        assert!(extract_candidates(&p, &bad, None).is_err());
    }
}
