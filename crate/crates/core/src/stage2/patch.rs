//! Local 3D patches and global axial slices around candidates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CandidatePatch, Slice2D};
use crate::error::{Error, Result};
use crate::instancer::InstanceCandidate;
use crate::volgrid::{sample_trilinear, Geometry, VoxelGrid};

/// Inclusive integer box in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl VoxelBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Result<Self> {
        let b = VoxelBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| self.lo[a] > self.hi[a]) {
            return Err(Error::param(format!(
                "degenerate box {:?}..{:?}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> [i64; 3] {
        std::array::from_fn(|a| self.hi[a] - self.lo[a] + 1)
    }
}

/// Patch geometry settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub size: [usize; 3],
    /// Minimum background margin kept around oversized candidates.
    pub margin: usize,
    pub ct_pad: f32,
    pub pet_pad: f32,
    pub global_size: [usize; 2],
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: [48, 48, 32],
            margin: 8,
            ct_pad: -200.0,
            pet_pad: 0.0,
            global_size: [120, 120],
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| self.size[a] <= 2 * self.margin) {
            return Err(Error::param(format!(
                "patch size {:?} leaves no room inside a {}-voxel margin",
                self.size, self.margin
            )));
        }
        if self.global_size.iter().any(|&s| s == 0) {
            return Err(Error::param("global slice size must be positive"));
        }
        Ok(())
    }
}

fn centroid_voxel(geometry: &Geometry, cand: &InstanceCandidate) -> Result<[usize; 3]> {
    geometry.nearest_voxel(cand.centroid_mm).ok_or_else(|| {
        Error::param(format!(
            "candidate {} centroid {:?} lies outside the volume",
            cand.id, cand.centroid_mm
        ))
    })
}

/// Per-axis sampling: patch index `j` reads source coordinate `start + j / scale`.
#[derive(Debug, Clone, Copy)]
struct AxisMap {
    start: f64,
    scale: f64,
}

/// Crop the local CT/PET patch around a candidate.
///
/// Small candidates get a direct crop centred on the rounded centroid. When
/// the candidate extent along an axis exceeds `size - 2 * margin`, that axis
/// is shrunk by the smallest factor that fits and the crop is centred on the
/// candidate bounding box so the margin holds on both sides. Samples outside
/// the volume take the pad values.
pub fn crop_patch(
    ct: &VoxelGrid,
    pet: &VoxelGrid,
    cand: &InstanceCandidate,
    config: &PatchConfig,
) -> Result<CandidatePatch> {
    config.validate()?;
    ct.geometry().ensure_same(pet.geometry(), "CT/PET patch source")?;
    let geom = ct.geometry();
    let centre = centroid_voxel(geom, cand)?;
    let (lo, hi) = cand
        .bounding_box(geom)
        .ok_or_else(|| Error::param(format!("candidate {} has no voxels", cand.id)))?;

    let size = config.size;
    let inner: [usize; 3] = std::array::from_fn(|a| size[a] - 2 * config.margin);
    let extent: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1);
    let resized = (0..3).any(|a| extent[a] > inner[a]);

    let maps: [AxisMap; 3] = std::array::from_fn(|a| {
        if !resized {
            AxisMap {
                start: centre[a] as f64 - (size[a] / 2) as f64,
                scale: 1.0,
            }
        } else if extent[a] > inner[a] {
            let scale = inner[a] as f64 / extent[a] as f64;
            let mid = 0.5 * (lo[a] + hi[a]) as f64;
            AxisMap {
                start: mid - 0.5 * (size[a] - 1) as f64 / scale,
                scale,
            }
        } else {
            AxisMap {
                start: lo[a] as f64 - ((size[a] - extent[a]) / 2) as f64,
                scale: 1.0,
            }
        }
    });

    let patch_geom = Geometry::new(
        size,
        std::array::from_fn(|a| geom.spacing[a] / maps[a].scale),
        std::array::from_fn(|a| geom.origin[a] + maps[a].start * geom.spacing[a]),
    )?;
    let source = |j: [usize; 3]| -> [f64; 3] {
        std::array::from_fn(|a| maps[a].start + j[a] as f64 / maps[a].scale)
    };
    let ct_patch = VoxelGrid::from_fn(patch_geom, ct.kind(), |j| {
        sample_trilinear(ct, source(j), Some(config.ct_pad))
    })?;
    let pet_patch = VoxelGrid::from_fn(patch_geom, pet.kind(), |j| {
        sample_trilinear(pet, source(j), Some(config.pet_pad))
    })?;

    // Candidate box in patch coordinates.
    let bbox = VoxelBox::new(
        std::array::from_fn(|a| {
            let p = (lo[a] as f64 - maps[a].start) * maps[a].scale;
            (p.floor() as i64).clamp(0, size[a] as i64 - 1)
        }),
        std::array::from_fn(|a| {
            let p = (hi[a] as f64 - maps[a].start) * maps[a].scale;
            (p.ceil() as i64).clamp(0, size[a] as i64 - 1)
        }),
    )?;

    Ok(CandidatePatch {
        candidate_id: cand.id,
        ct_patch,
        pet_patch,
        global_slice: crop_global_slice(ct, cand, config.global_size, config.ct_pad)?,
        bboxes: vec![bbox],
        label: cand.label,
        scale: maps.map(|m| m.scale),
        transforms: Vec::new(),
    })
}

/// Axial CT slice through the candidate centroid, cropped or padded to
/// `size` and centred on the centroid's in-plane voxel.
pub fn crop_global_slice(
    ct: &VoxelGrid,
    cand: &InstanceCandidate,
    size: [usize; 2],
    pad: f32,
) -> Result<Slice2D> {
    let geom = ct.geometry();
    let [cx, cy, cz] = centroid_voxel(geom, cand)?;
    let sx = cx as i64 - (size[0] / 2) as i64;
    let sy = cy as i64 - (size[1] / 2) as i64;
    let mut values = Vec::with_capacity(size[0] * size[1]);
    for j in 0..size[1] as i64 {
        for i in 0..size[0] as i64 {
            let v = [sx + i, sy + j, cz as i64];
            values.push(if geom.contains(v) {
                ct.get(v[0] as usize, v[1] as usize, cz)
            } else {
                pad
            });
        }
    }
    Ok(Slice2D {
        dims: size,
        values,
    })
}

/// `k` copies of a box with each corner coordinate shifted by an integer
/// drawn uniformly from `[-range, range]`, clipped to `[0, bounds)`.
pub fn jitter_bboxes(
    bbox: &VoxelBox,
    k: usize,
    range: u32,
    seed: u64,
    bounds: [usize; 3],
) -> Result<Vec<VoxelBox>> {
    bbox.validate()?;
    if k == 0 {
        return Err(Error::param("jitter needs at least one box"));
    }
    let r = i64::from(range);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut lo = bbox.lo;
        let mut hi = bbox.hi;
        for a in 0..3 {
            let max = bounds[a] as i64 - 1;
            lo[a] = (lo[a] + rng.random_range(-r..=r)).clamp(0, max);
            hi[a] = (hi[a] + rng.random_range(-r..=r)).clamp(0, max);
            if lo[a] > hi[a] {
                std::mem::swap(&mut lo[a], &mut hi[a]);
            }
        }
        out.push(VoxelBox { lo, hi });
    }
    Ok(out)
}
