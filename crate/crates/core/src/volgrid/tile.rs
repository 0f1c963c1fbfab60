//! Sliding-window inference over a volume.
//!
//! Windows tile each axis at the given stride, the last one is pulled back
//! to end at the volume edge, and overlapping predictions are averaged with
//! equal weight. Axes shorter than the window are edge-padded up to the
//! window size before tiling and cropped afterwards.

use rayon::prelude::*;

use super::{BinaryMask, Geometry, VolumeKind, VoxelGrid};
use crate::error::{Error, Result};

/// One window placement in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileWindow {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

/// Window start offsets along one axis.
pub fn tile_starts(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    if window >= dim {
        return vec![0];
    }
    let last = dim - window;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s < last).collect();
    starts.push(last);
    starts
}

fn validate(window: [usize; 3], stride: [usize; 3]) -> Result<()> {
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::param(format!("stride has a zero component: {stride:?}")));
    }
    if window.iter().any(|&w| w == 0) {
        return Err(Error::param(format!("window has a zero component: {window:?}")));
    }
    Ok(())
}

fn crop(grid: &VoxelGrid, start: [usize; 3], size: [usize; 3]) -> Result<VoxelGrid> {
    let src = grid.geometry();
    let geom = Geometry {
        dims: size,
        spacing: src.spacing,
        origin: src.world(start),
    };
    let mut values = Vec::with_capacity(geom.len());
    for z in 0..size[2] {
        for y in 0..size[1] {
            let row = src.index(start[0], start[1] + y, start[2] + z);
            values.extend_from_slice(&grid.values()[row..row + size[0]]);
        }
    }
    VoxelGrid::new(geom, grid.kind(), values)
}

fn pad_edge(grid: &VoxelGrid, dims: [usize; 3]) -> Result<VoxelGrid> {
    let src = grid.geometry();
    let geom = Geometry {
        dims,
        spacing: src.spacing,
        origin: src.origin,
    };
    VoxelGrid::from_fn(geom, grid.kind(), |[x, y, z]| {
        grid.get(
            x.min(src.dims[0] - 1),
            y.min(src.dims[1] - 1),
            z.min(src.dims[2] - 1),
        )
    })
}

/// All window placements for a volume, z-major order.
pub(crate) fn plan_windows(dims: [usize; 3], window: [usize; 3], stride: [usize; 3]) -> Vec<TileWindow> {
    let sx = tile_starts(dims[0], window[0], stride[0]);
    let sy = tile_starts(dims[1], window[1], stride[1]);
    let sz = tile_starts(dims[2], window[2], stride[2]);
    let size = std::array::from_fn(|a| window[a].min(dims[a]));
    let mut out = Vec::with_capacity(sx.len() * sy.len() * sz.len());
    for &z in &sz {
        for &y in &sy {
            for &x in &sx {
                out.push(TileWindow {
                    start: [x, y, z],
                    size,
                });
            }
        }
    }
    out
}

/// Run `per_window` over tiled windows and average the overlapping outputs.
///
/// `per_window` receives a window-sized grid (with its world origin) and
/// must return a probability grid of the same dims. Windows are evaluated in
/// parallel; accumulation happens in a fixed order so the result does not
/// depend on scheduling.
pub fn tile_aggregate<F>(
    grid: &VoxelGrid,
    window: [usize; 3],
    stride: [usize; 3],
    per_window: F,
) -> Result<VoxelGrid>
where
    F: Fn(&VoxelGrid) -> Result<VoxelGrid> + Sync,
{
    validate(window, stride)?;
    let dims = grid.dims();
    let padded_dims: [usize; 3] = std::array::from_fn(|a| dims[a].max(window[a]));
    let padded;
    let work = if padded_dims != dims {
        padded = pad_edge(grid, padded_dims)?;
        &padded
    } else {
        grid
    };

    let geom = *work.geometry();
    let mut sums = vec![0f64; geom.len()];
    let mut counts = vec![0u32; geom.len()];
    let windows = plan_windows(padded_dims, window, stride);
    let batch = rayon::current_num_threads().max(1);
    for chunk in windows.chunks(batch) {
        let outputs: Vec<Result<VoxelGrid>> = chunk
            .par_iter()
            .map(|w| {
                let input = crop(work, w.start, w.size)?;
                let out = per_window(&input)?;
                if out.dims() != w.size {
                    return Err(Error::Invariant(format!(
                        "window function returned dims {:?}, expected {:?}",
                        out.dims(),
                        w.size
                    )));
                }
                out.ensure_kind(VolumeKind::Probability)?;
                Ok(out)
            })
            .collect();
        for (w, out) in chunk.iter().zip(outputs) {
            let out = out?;
            let mut k = 0;
            for z in 0..w.size[2] {
                for y in 0..w.size[1] {
                    let row = geom.index(w.start[0], w.start[1] + y, w.start[2] + z);
                    for x in 0..w.size[0] {
                        sums[row + x] += f64::from(out.values()[k]);
                        counts[row + x] += 1;
                        k += 1;
                    }
                }
            }
        }
    }
    debug_assert!(counts.iter().all(|&c| c > 0));
    let values: Vec<f32> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| ((s / f64::from(c)) as f32).clamp(0.0, 1.0))
        .collect();
    let full = VoxelGrid::new(geom, VolumeKind::Probability, values)?;
    if padded_dims != dims {
        crop(&full, [0; 3], dims)
    } else {
        Ok(full)
    }
}

/// Tiled inference restricted to an in-plane region centred on an ROI mask.
///
/// The x/y extent covers the ROI bounding box (grown to at least one window
/// and centred on the ROI), the full z range is tiled, and voxels outside the
/// tiled region are assigned probability 0.
pub fn tile_aggregate_roi<F>(
    grid: &VoxelGrid,
    roi: &BinaryMask,
    window: [usize; 3],
    stride: [usize; 3],
    per_window: F,
) -> Result<VoxelGrid>
where
    F: Fn(&VoxelGrid) -> Result<VoxelGrid> + Sync,
{
    validate(window, stride)?;
    grid.geometry().ensure_same(roi.geometry(), "tiling ROI")?;
    let (lo, hi) = roi
        .bounding_box()
        .ok_or_else(|| Error::EmptyInput("tiling ROI mask is empty".into()))?;
    let dims = grid.dims();
    let mut start = [0usize; 3];
    let mut size = dims;
    for a in 0..2 {
        let extent = (hi[a] - lo[a] + 1).max(window[a]).min(dims[a]);
        // Twice the centre, to stay in integers.
        let centre2 = lo[a] + hi[a];
        let s = (centre2 + 1).saturating_sub(extent) / 2;
        start[a] = s.min(dims[a] - extent);
        size[a] = extent;
    }
    let region = crop(grid, start, size)?;
    let pred = tile_aggregate(&region, window, stride, per_window)?;
    let mut values = vec![0f32; grid.geometry().len()];
    let geom = grid.geometry();
    for z in 0..size[2] {
        for y in 0..size[1] {
            let dst = geom.index(start[0], start[1] + y, start[2] + z);
            let src = pred.geometry().index(0, y, z);
            values[dst..dst + size[0]].copy_from_slice(&pred.values()[src..src + size[0]]);
        }
    }
    VoxelGrid::new(*geom, VolumeKind::Probability, values)
}
