//! Late fusion of the four stream predictions.
//!
//! Each category (tumor-proximal, tumor-distal) has a CT-only stream and an
//! early-fusion stream. Within a category the streams combine by voxelwise
//! max; the two categories then combine over their disjoint region supports.

use rayon::prelude::*;

use crate::distfield::RegionPartition;
use crate::error::Result;
use crate::volgrid::{BinaryMask, VolumeKind, VoxelGrid};

/// The four stream probability volumes and the region split they apply to.
#[derive(Debug, Clone)]
pub struct StreamSet {
    pub ct_proximal: VoxelGrid,
    pub ef_proximal: VoxelGrid,
    pub ct_distal: VoxelGrid,
    pub ef_distal: VoxelGrid,
    pub partition: RegionPartition,
}

impl StreamSet {
    pub fn new(
        ct_proximal: VoxelGrid,
        ef_proximal: VoxelGrid,
        ct_distal: VoxelGrid,
        ef_distal: VoxelGrid,
        partition: RegionPartition,
    ) -> Result<Self> {
        let set = StreamSet {
            ct_proximal,
            ef_proximal,
            ct_distal,
            ef_distal,
            partition,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        let geom = self.partition.proximal.geometry();
        for (name, g) in [
            ("ct proximal", &self.ct_proximal),
            ("ef proximal", &self.ef_proximal),
            ("ct distal", &self.ct_distal),
            ("ef distal", &self.ef_distal),
        ] {
            g.ensure_kind(VolumeKind::Probability)?;
            g.geometry().ensure_same(geom, name)?;
        }
        Ok(())
    }
}

/// Voxelwise maximum of two streams of one category.
pub fn fuse_category(ct: &VoxelGrid, ef: &VoxelGrid) -> Result<VoxelGrid> {
    ct.geometry().ensure_same(ef.geometry(), "stream fusion")?;
    let values = ct
        .values()
        .par_iter()
        .zip(ef.values())
        .map(|(&a, &b)| a.max(b))
        .collect();
    VoxelGrid::new(*ct.geometry(), fused_kind(ct, ef), values)
}

fn fused_kind(a: &VoxelGrid, b: &VoxelGrid) -> VolumeKind {
    if a.kind() == b.kind() {
        a.kind()
    } else {
        VolumeKind::Generic
    }
}

/// Zero every voxel outside `region`.
pub fn restrict_to_region(p: &VoxelGrid, region: &BinaryMask) -> Result<VoxelGrid> {
    p.geometry().ensure_same(region.geometry(), "region restriction")?;
    let values = p
        .values()
        .par_iter()
        .zip(region.bits())
        .map(|(&v, &inside)| if inside { v } else { 0.0 })
        .collect();
    p.with_values(values)
}

/// Late-fusion probability volume.
///
/// Equivalent to `max(restrict(max(ct_prox, ef_prox), proximal),
/// restrict(max(ct_dis, ef_dis), distal))`; because the regions partition the
/// volume every voxel takes exactly one category's value.
pub fn fuse_late(streams: &StreamSet) -> Result<VoxelGrid> {
    streams.validate()?;
    let prox = restrict_to_region(
        &fuse_category(&streams.ct_proximal, &streams.ef_proximal)?,
        &streams.partition.proximal,
    )?;
    let dist = restrict_to_region(
        &fuse_category(&streams.ct_distal, &streams.ef_distal)?,
        &streams.partition.distal,
    )?;
    let values = prox
        .values()
        .par_iter()
        .zip(dist.values())
        .map(|(&a, &b)| a.max(b))
        .collect();
    VoxelGrid::new(*prox.geometry(), VolumeKind::Probability, values)
}
