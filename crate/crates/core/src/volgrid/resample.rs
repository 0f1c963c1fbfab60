use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, Geometry, VoxelGrid};
use crate::error::{Error, Result};

/// Isotropic in-plane 1 mm, 2.5 mm slices.
pub const DEFAULT_TARGET_SPACING: [f64; 3] = [1.0, 1.0, 2.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

fn validate_target(target_spacing: [f64; 3]) -> Result<()> {
    if target_spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::param(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    Ok(())
}

/// Output geometry: `round(n * s / t)` voxels per axis (half rounds up,
/// minimum 1), same origin.
pub(crate) fn resampled_geometry(geometry: &Geometry, target_spacing: [f64; 3]) -> Geometry {
    let dims = std::array::from_fn(|a| {
        let n = geometry.dims[a] as f64 * geometry.spacing[a] / target_spacing[a];
        ((n + 0.5).floor() as usize).max(1)
    });
    Geometry {
        dims,
        spacing: target_spacing,
        origin: geometry.origin,
    }
}

/// Resample a scalar grid onto a new spacing with the same origin.
pub fn resample(
    grid: &VoxelGrid,
    target_spacing: [f64; 3],
    interpolation: Interpolation,
) -> Result<VoxelGrid> {
    validate_target(target_spacing)?;
    let src = grid.geometry();
    let out = resampled_geometry(src, target_spacing);
    if out == *src {
        return Ok(grid.clone());
    }
    let scale: [f64; 3] = std::array::from_fn(|a| target_spacing[a] / src.spacing[a]);
    let plane = out.dims[0] * out.dims[1];
    let mut values = vec![0.0f32; out.len()];
    values
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(z, slice)| {
            for y in 0..out.dims[1] {
                for x in 0..out.dims[0] {
                    let c = [
                        x as f64 * scale[0],
                        y as f64 * scale[1],
                        z as f64 * scale[2],
                    ];
                    slice[x + out.dims[0] * y] = match interpolation {
                        Interpolation::Trilinear => sample_trilinear(grid, c, None),
                        Interpolation::Nearest => sample_nearest(grid.geometry(), c, |i| {
                            grid.values()[i]
                        }),
                    };
                }
            }
        });
    VoxelGrid::new(out, grid.kind(), values)
}

/// Nearest-neighbour resampling of a mask.
pub fn resample_mask(mask: &BinaryMask, target_spacing: [f64; 3]) -> Result<BinaryMask> {
    validate_target(target_spacing)?;
    let src = mask.geometry();
    let out = resampled_geometry(src, target_spacing);
    if out == *src {
        return Ok(mask.clone());
    }
    let scale: [f64; 3] = std::array::from_fn(|a| target_spacing[a] / src.spacing[a]);
    let bits = (0..out.len())
        .map(|i| {
            let [x, y, z] = out.coords(i);
            let c = [
                x as f64 * scale[0],
                y as f64 * scale[1],
                z as f64 * scale[2],
            ];
            sample_nearest(src, c, |j| mask.bits()[j])
        })
        .collect();
    BinaryMask::new(out, bits)
}

fn sample_nearest<T>(geometry: &Geometry, c: [f64; 3], fetch: impl Fn(usize) -> T) -> T {
    let v: [usize; 3] = std::array::from_fn(|a| {
        (c[a].round().max(0.0) as usize).min(geometry.dims[a] - 1)
    });
    fetch(geometry.index(v[0], v[1], v[2]))
}

/// Trilinear sample at continuous voxel coordinates.
///
/// With `pad = None` coordinates clamp to the volume (edge replication);
/// with `Some(p)` every lattice neighbour outside the volume contributes `p`.
pub fn sample_trilinear(grid: &VoxelGrid, c: [f64; 3], pad: Option<f32>) -> f32 {
    let geom = grid.geometry();
    let dims = geom.dims;
    let mut base = [0i64; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let mut p = c[a];
        if pad.is_none() {
            p = p.clamp(0.0, (dims[a] - 1) as f64);
        }
        let f = p.floor();
        base[a] = f as i64;
        frac[a] = p - f;
    }
    let fetch = |x: i64, y: i64, z: i64| -> f64 {
        if geom.contains([x, y, z]) {
            f64::from(grid.values()[geom.index(x as usize, y as usize, z as usize)])
        } else {
            match pad {
                Some(p) => f64::from(p),
                // Only reachable at the upper edge with zero weight.
                None => {
                    let cl = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
                    f64::from(
                        grid.values()
                            [geom.index(cl(x, dims[0]), cl(y, dims[1]), cl(z, dims[2]))],
                    )
                }
            }
        }
    };
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
    let [x0, y0, z0] = base;
    let [tx, ty, tz] = frac;
    let c00 = lerp(fetch(x0, y0, z0), fetch(x0 + 1, y0, z0), tx);
    let c10 = lerp(fetch(x0, y0 + 1, z0), fetch(x0 + 1, y0 + 1, z0), tx);
    let c01 = lerp(fetch(x0, y0, z0 + 1), fetch(x0 + 1, y0, z0 + 1), tx);
    let c11 = lerp(fetch(x0, y0 + 1, z0 + 1), fetch(x0 + 1, y0 + 1, z0 + 1), tx);
    let c0 = lerp(c00, c10, ty);
    let c1 = lerp(c01, c11, ty);
    lerp(c0, c1, tz) as f32
}
