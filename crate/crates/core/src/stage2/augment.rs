//! Axial-plane patch augmentation: quarter-turn rotations and a left-right flip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patch::VoxelBox;
use super::CandidatePatch;
use crate::volgrid::{Geometry, VoxelGrid};

/// Probability that a sampled augmentation includes a rotation.
pub const ROTATION_PROBABILITY: f64 = 0.5;
/// Probability that a sampled augmentation includes the axial flip.
pub const FLIP_PROBABILITY: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentOp {
    Rot90,
    Rot180,
    Rot270,
    AxialFlip,
}

impl AugmentOp {
    fn quarter_turns(self) -> usize {
        match self {
            AugmentOp::Rot90 => 1,
            AugmentOp::Rot180 => 2,
            AugmentOp::Rot270 => 3,
            AugmentOp::AxialFlip => 0,
        }
    }
}

/// Destination of in-plane voxel `(x, y)` after one counter-clockwise quarter
/// turn of an `nx`-by-`ny` plane; the new plane is `ny`-by-`nx`.
fn rot90_xy(x: i64, y: i64, _nx: i64, ny: i64) -> (i64, i64) {
    (ny - 1 - y, x)
}

fn rotate_grid(grid: &VoxelGrid) -> VoxelGrid {
    let g = grid.geometry();
    let [nx, ny, nz] = g.dims;
    let out_geom = Geometry {
        dims: [ny, nx, nz],
        spacing: [g.spacing[1], g.spacing[0], g.spacing[2]],
        origin: g.origin,
    };
    let mut values = vec![0f32; g.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (u, v) = rot90_xy(x as i64, y as i64, nx as i64, ny as i64);
                values[out_geom.index(u as usize, v as usize, z)] = grid.get(x, y, z);
            }
        }
    }
    VoxelGrid::new(out_geom, grid.kind(), values).expect("rotation preserves validity")
}

fn flip_grid(grid: &VoxelGrid) -> VoxelGrid {
    let g = grid.geometry();
    let [nx, ny, nz] = g.dims;
    let mut values = Vec::with_capacity(g.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in (0..nx).rev() {
                values.push(grid.get(x, y, z));
            }
        }
    }
    grid.with_values(values).expect("flip preserves validity")
}

fn rotate_box(b: &VoxelBox, nx: i64, ny: i64) -> VoxelBox {
    let (ax, ay) = rot90_xy(b.lo[0], b.lo[1], nx, ny);
    let (bx, by) = rot90_xy(b.hi[0], b.hi[1], nx, ny);
    VoxelBox {
        lo: [ax.min(bx), ay.min(by), b.lo[2]],
        hi: [ax.max(bx), ay.max(by), b.hi[2]],
    }
}

fn flip_box(b: &VoxelBox, nx: i64) -> VoxelBox {
    VoxelBox {
        lo: [nx - 1 - b.hi[0], b.lo[1], b.lo[2]],
        hi: [nx - 1 - b.lo[0], b.hi[1], b.hi[2]],
    }
}

/// Apply one transform to CT, PET and the jittered boxes together.
pub fn apply_augmentation(patch: &CandidatePatch, op: AugmentOp) -> CandidatePatch {
    let mut out = patch.clone();
    match op {
        AugmentOp::AxialFlip => {
            let nx = out.ct_patch.dims()[0] as i64;
            out.ct_patch = flip_grid(&out.ct_patch);
            out.pet_patch = flip_grid(&out.pet_patch);
            out.bboxes = out.bboxes.iter().map(|b| flip_box(b, nx)).collect();
        }
        _ => {
            for _ in 0..op.quarter_turns() {
                let [nx, ny, _] = out.ct_patch.dims();
                out.ct_patch = rotate_grid(&out.ct_patch);
                out.pet_patch = rotate_grid(&out.pet_patch);
                out.bboxes = out
                    .bboxes
                    .iter()
                    .map(|b| rotate_box(b, nx as i64, ny as i64))
                    .collect();
                out.scale = [out.scale[1], out.scale[0], out.scale[2]];
            }
        }
    }
    out.transforms.push(op);
    out
}

/// Randomly augment a patch using only the allowed ops: a rotation (uniform
/// over the allowed quarter turns) with probability 0.5, then the axial flip
/// with probability 0.25. Deterministic for a given seed.
pub fn augment_patch(patch: &CandidatePatch, ops: &[AugmentOp], seed: u64) -> CandidatePatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations: Vec<AugmentOp> = ops
        .iter()
        .copied()
        .filter(|o| *o != AugmentOp::AxialFlip)
        .collect();
    let mut out = patch.clone();
    let rotate = rng.random_bool(ROTATION_PROBABILITY);
    let pick = rng.random_range(0..rotations.len().max(1));
    if rotate && !rotations.is_empty() {
        out = apply_augmentation(&out, rotations[pick]);
    }
    if rng.random_bool(FLIP_PROBABILITY) && ops.contains(&AugmentOp::AxialFlip) {
        out = apply_augmentation(&out, AugmentOp::AxialFlip);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage2::Slice2D;
    use crate::volgrid::VolumeKind;

    fn patch() -> CandidatePatch {
        let g = Geometry::with_spacing([4, 3, 2], [1.0, 2.0, 2.5]).unwrap();
        let ct = VoxelGrid::from_fn(g, VolumeKind::CtHu, |[x, y, z]| (x + 10 * y + 100 * z) as f32)
            .unwrap();
        let pet = VoxelGrid::from_fn(g, VolumeKind::PetSuv, |[x, y, _]| (x * y) as f32).unwrap();
        CandidatePatch {
            candidate_id: 1,
            ct_patch: ct,
            pet_patch: pet,
            global_slice: Slice2D {
                dims: [1, 1],
                values: vec![0.0],
            },
            bboxes: vec![VoxelBox::new([0, 1, 0], [2, 2, 1]).unwrap()],
            label: Some(true),
            scale: [1.0, 0.5, 1.0],
            transforms: vec![],
        }
    }

    fn strip(mut p: CandidatePatch) -> CandidatePatch {
        p.transforms.clear();
        p
    }

    #[test]
    fn four_quarter_turns_is_identity() {
        let p = patch();
        let mut q = p.clone();
        for _ in 0..4 {
            q = apply_augmentation(&q, AugmentOp::Rot90);
        }
        assert_eq!(strip(q), p);
        let r = apply_augmentation(&apply_augmentation(&p, AugmentOp::Rot90), AugmentOp::Rot270);
        assert_eq!(strip(r), p);
    }

    #[test]
    fn double_flip_is_identity() {
        let p = patch();
        let q = apply_augmentation(&apply_augmentation(&p, AugmentOp::AxialFlip), AugmentOp::AxialFlip);
        assert_eq!(strip(q), p);
    }

    #[test]
    fn rotation_moves_voxels_and_boxes() {
        let p = patch();
        let q = apply_augmentation(&p, AugmentOp::Rot90);
        assert_eq!(q.ct_patch.dims(), [3, 4, 2]);
        // (x, y) -> (ny - 1 - y, x)
        assert_eq!(q.ct_patch.get(2, 1, 0), p.ct_patch.get(1, 0, 0));
        assert_eq!(q.bboxes[0], VoxelBox::new([0, 0, 0], [1, 2, 1]).unwrap());
        assert_eq!(q.label, p.label);
    }

    #[test]
    fn multiset_preserved() {
        let p = patch();
        let sorted = |g: &VoxelGrid| {
            let mut v = g.values().to_vec();
            v.sort_by(f32::total_cmp);
            v
        };
        for seed in 0..20 {
            let q = augment_patch(&p, &[AugmentOp::Rot90, AugmentOp::Rot180, AugmentOp::Rot270, AugmentOp::AxialFlip], seed);
            assert_eq!(sorted(&q.ct_patch), sorted(&p.ct_patch));
            assert_eq!(sorted(&q.pet_patch), sorted(&p.pet_patch));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = patch();
        let ops = [AugmentOp::Rot90, AugmentOp::AxialFlip];
        assert_eq!(augment_patch(&p, &ops, 4), augment_patch(&p, &ops, 4));
        assert_eq!(strip(augment_patch(&p, &[], 4)), p);
    }
}
