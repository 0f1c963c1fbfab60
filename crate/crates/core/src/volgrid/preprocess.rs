use serde::{Deserialize, Serialize};

use super::{BinaryMask, VolumeKind, VoxelGrid};
use crate::error::{Error, Result};

/// Default CT clamp window in HU.
pub const DEFAULT_HU_WINDOW: (f32, f32) = (-200.0, 300.0);

/// Clamp CT intensities into `[lo, hi]`.
pub fn truncate_hu(grid: &VoxelGrid, lo: f32, hi: f32) -> Result<VoxelGrid> {
    grid.ensure_kind(VolumeKind::CtHu)?;
    if !(lo < hi) {
        return Err(Error::param(format!("HU window needs lo < hi, got [{lo}, {hi}]")));
    }
    let values = grid.values().iter().map(|v| v.clamp(lo, hi)).collect();
    grid.with_values(values)
}

/// Standardize PET with cohort statistics. The result is a `generic` grid;
/// `generic` input is accepted so that normalizations compose.
pub fn normalize_pet(grid: &VoxelGrid, cohort_mean: f64, cohort_std: f64) -> Result<VoxelGrid> {
    if grid.kind() != VolumeKind::Generic {
        grid.ensure_kind(VolumeKind::PetSuv)?;
    }
    if !(cohort_std > 0.0) || !cohort_std.is_finite() || !cohort_mean.is_finite() {
        return Err(Error::param(format!(
            "PET normalization needs finite mean and positive std, got ({cohort_mean}, {cohort_std})"
        )));
    }
    let values = grid
        .values()
        .iter()
        .map(|&v| ((f64::from(v) - cohort_mean) / cohort_std) as f32)
        .collect();
    VoxelGrid::new(*grid.geometry(), VolumeKind::Generic, values)
}

/// Pooled cohort statistics (population std).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub mean: f64,
    pub std: f64,
    pub count: u64,
}

/// Streaming mean/variance accumulator that merges per-grid partials
/// (Chan et al. pairwise update), so cohorts never need to be resident at once.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_values(&mut self, values: impl IntoIterator<Item = f64>) {
        let mut part = StatsAccumulator::default();
        let mut sum = 0.0;
        let mut vals = Vec::new();
        for v in values {
            sum += v;
            vals.push(v);
        }
        if vals.is_empty() {
            return;
        }
        part.count = vals.len() as u64;
        part.mean = sum / vals.len() as f64;
        part.m2 = vals.iter().map(|v| (v - part.mean) * (v - part.mean)).sum();
        self.merge(&part);
    }

    pub fn push_grid(&mut self, grid: &VoxelGrid, foreground: Option<&BinaryMask>) -> Result<()> {
        grid.ensure_kind(VolumeKind::PetSuv)?;
        match foreground {
            Some(mask) => {
                grid.geometry().ensure_same(mask.geometry(), "PET foreground mask")?;
                self.push_values(
                    grid.values()
                        .iter()
                        .zip(mask.bits())
                        .filter(|(_, &b)| b)
                        .map(|(&v, _)| f64::from(v)),
                );
            }
            None => self.push_values(grid.values().iter().map(|&v| f64::from(v))),
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<CohortStats> {
        if self.count < 2 {
            return Err(Error::EmptyInput(format!(
                "cohort statistics need at least 2 voxels, got {}",
                self.count
            )));
        }
        Ok(CohortStats {
            mean: self.mean,
            std: (self.m2 / self.count as f64).max(0.0).sqrt(),
            count: self.count,
        })
    }
}

/// Pooled mean and population standard deviation over every voxel of every grid.
pub fn compute_cohort_stats(grids: &[VoxelGrid]) -> Result<CohortStats> {
    if grids.is_empty() {
        return Err(Error::EmptyInput("no PET grids given".into()));
    }
    let mut acc = StatsAccumulator::new();
    for g in grids {
        acc.push_grid(g, None)?;
    }
    acc.finish()
}

/// As [`compute_cohort_stats`], restricted to per-grid foreground masks.
pub fn compute_cohort_stats_masked(grids: &[(VoxelGrid, BinaryMask)]) -> Result<CohortStats> {
    if grids.is_empty() {
        return Err(Error::EmptyInput("no PET grids given".into()));
    }
    let mut acc = StatsAccumulator::new();
    for (g, m) in grids {
        acc.push_grid(g, Some(m))?;
    }
    acc.finish()
}
