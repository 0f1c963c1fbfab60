//! Reference implementations and fixture builders shared by the integration
//! tests. Everything here is deliberately naive.

#![allow(dead_code)]

use std::collections::VecDeque;

use osln::streamfusion::StreamSet;
use osln::volgrid::{BinaryMask, Geometry, VolumeKind, VoxelGrid};
use rand::Rng;

pub fn geometry(dims: [usize; 3], spacing: [f64; 3]) -> Geometry {
    Geometry::with_spacing(dims, spacing).unwrap()
}

/// Union of a few random ellipsoids plus sparse speckle.
pub fn random_mask<R: Rng>(rng: &mut R, geom: Geometry) -> BinaryMask {
    let ext = geom.extent_mm();
    let blobs: Vec<([f64; 3], [f64; 3])> = (0..rng.random_range(1..=4))
        .map(|_| {
            let c = [0, 1, 2].map(|a| rng.random_range(0.0..ext[a]));
            let r = [0, 1, 2].map(|_| rng.random_range(1.0..(ext[0] / 3.0).max(2.0)));
            (c, r)
        })
        .collect();
    let speckle = rng.random_range(0.0..0.01);
    BinaryMask::from_fn(geom, |v| {
        let p = geom.world(v);
        let inside = blobs.iter().any(|(c, r)| {
            (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
        });
        inside || rng.random_bool(speckle)
    })
    .unwrap()
}

/// Bernoulli noise mask.
pub fn noise_mask<R: Rng>(rng: &mut R, geom: Geometry, density: f64) -> BinaryMask {
    BinaryMask::from_fn(geom, |_| rng.random_bool(density)).unwrap()
}

fn at(mask: &BinaryMask, v: [i64; 3]) -> bool {
    mask.geometry().contains(v) && mask.get(v[0] as usize, v[1] as usize, v[2] as usize)
}

/// Min over surface voxels of the Euclidean distance, negative strictly inside.
pub fn brute_signed_distance(mask: &BinaryMask) -> Vec<f64> {
    let geom = *mask.geometry();
    let s = geom.spacing;
    let faces = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
    let mut surface = Vec::new();
    for i in 0..geom.len() {
        let c = geom.coords(i);
        if !mask.bits()[i] {
            continue;
        }
        let v = c.map(|x| x as i64);
        if faces.iter().any(|f| !at(mask, [v[0] + f[0], v[1] + f[1], v[2] + f[2]])) {
            surface.push([c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]]);
        }
    }
    (0..geom.len())
        .map(|i| {
            let c = geom.coords(i);
            let p = [c[0] as f64 * s[0], c[1] as f64 * s[1], c[2] as f64 * s[2]];
            let d2 = surface
                .iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                .fold(f64::INFINITY, f64::min);
            let d = d2.sqrt();
            if mask.bits()[i] && d > 0.0 {
                -d
            } else {
                d
            }
        })
        .collect()
}

/// Neighbour offsets with at most `max_nonzero` non-zero components.
fn neighbours(connectivity: u8) -> Vec<[i64; 3]> {
    let max_nonzero = match connectivity {
        6 => 1,
        18 => 2,
        _ => 3,
    };
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let n = [dx, dy, dz].iter().filter(|d| **d != 0).count();
                if n > 0 && n <= max_nonzero {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Breadth-first flood fill. Each foreground voxel maps to the smallest
/// linear index in its component; background maps to `usize::MAX`.
pub fn flood_fill_partition(mask: &BinaryMask, connectivity: u8) -> Vec<usize> {
    let geom = *mask.geometry();
    let offsets = neighbours(connectivity);
    let mut rep = vec![usize::MAX; geom.len()];
    for seed in 0..geom.len() {
        if !mask.bits()[seed] || rep[seed] != usize::MAX {
            continue;
        }
        rep[seed] = seed;
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            let c = geom.coords(i).map(|x| x as i64);
            for o in &offsets {
                let n = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                if !at(mask, n) {
                    continue;
                }
                let j = geom.index(n[0] as usize, n[1] as usize, n[2] as usize);
                if rep[j] == usize::MAX {
                    rep[j] = seed;
                    queue.push_back(j);
                }
            }
        }
    }
    rep
}

/// Label map to smallest-index representatives, as above.
pub fn canonical_partition(labels: &[u32]) -> Vec<usize> {
    let mut first = std::collections::HashMap::new();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == 0 {
                usize::MAX
            } else {
                *first.entry(l).or_insert(i)
            }
        })
        .collect()
}

pub fn random_probability<R: Rng>(rng: &mut R, geom: Geometry) -> VoxelGrid {
    VoxelGrid::from_fn(geom, VolumeKind::Probability, |_| rng.random::<f32>()).unwrap()
}

/// Fused value at one voxel evaluated straight from the definition.
pub fn fuse_direct(s: &StreamSet, i: usize) -> f32 {
    if s.partition.proximal.bits()[i] {
        s.ct_proximal.values()[i].max(s.ef_proximal.values()[i])
    } else {
        s.ct_distal.values()[i].max(s.ef_distal.values()[i])
    }
}

/// Indices of the voxels whose centres lie within `radius` mm of `center`.
pub fn sphere(geom: &Geometry, center: [f64; 3], radius: f64) -> Vec<usize> {
    (0..geom.len())
        .filter(|&i| {
            let p = geom.world(geom.coords(i));
            (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>() <= radius * radius
        })
        .collect()
}
