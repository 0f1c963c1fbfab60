//! Volume data model: scalar grids, binary masks, file I/O, resampling,
//! intensity preprocessing and tiled-window aggregation.
//!
//! All grids store their samples x-fastest, then y, then z. A voxel at
//! integer index `(i, j, k)` has its center at
//! `origin + (i * sx, j * sy, k * sz)` in world millimetres.

mod io;
mod preprocess;
mod resample;
mod tile;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_volume, encode_volume, read_volume, write_volume, write_volume_to, VolumeRef, VVOL_MAGIC,
};
pub use preprocess::{
    compute_cohort_stats, compute_cohort_stats_masked, normalize_pet, truncate_hu, CohortStats,
    StatsAccumulator, DEFAULT_HU_WINDOW,
};
pub use resample::{resample, resample_mask, sample_trilinear, Interpolation, DEFAULT_TARGET_SPACING};
pub use tile::{tile_aggregate, tile_aggregate_roi, tile_starts, TileWindow};

/// What the samples of a grid mean. Serialized as the VVOL `kind` string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeKind {
    CtHu,
    PetSuv,
    Probability,
    DistanceMm,
    Generic,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::CtHu => "ct-hu",
            VolumeKind::PetSuv => "pet-suv",
            VolumeKind::Probability => "probability",
            VolumeKind::DistanceMm => "distance-mm",
            VolumeKind::Generic => "generic",
        }
    }
}

impl fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VolumeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ct-hu" => VolumeKind::CtHu,
            "pet-suv" => VolumeKind::PetSuv,
            "probability" => VolumeKind::Probability,
            "distance-mm" => VolumeKind::DistanceMm,
            "generic" => VolumeKind::Generic,
            other => return Err(Error::param(format!("unknown volume kind `{other}`"))),
        })
    }
}

/// Sampling lattice shared by grids and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let geom = Geometry {
            dims,
            spacing,
            origin,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Geometry with the origin at zero.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Invariant(format!(
                "dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Invariant(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Invariant(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn contains(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// World position (mm) of a voxel center.
    pub fn world(&self, v: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + v[a] as f64 * self.spacing[a])
    }

    /// Continuous voxel coordinates of a world point.
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    /// Nearest voxel to a world point, or `None` when it falls outside.
    pub fn nearest_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let c = self.continuous_index(p);
        let v: [i64; 3] = std::array::from_fn(|a| c[a].round() as i64);
        if self.contains(v) {
            Some(std::array::from_fn(|a| v[a] as usize))
        } else {
            None
        }
    }

    /// Physical extent along each axis, measured between the outer voxel faces.
    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }

    pub fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.dims, self.spacing, self.origin, other.dims, other.spacing, other.origin
            )))
        }
    }
}

/// Dense scalar field over a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    geometry: Geometry,
    kind: VolumeKind,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(geometry: Geometry, kind: VolumeKind, values: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::Invariant(format!(
                "values length {} does not match dims {:?}",
                values.len(),
                geometry.dims
            )));
        }
        if kind == VolumeKind::Probability {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::Invariant(format!(
                    "probability grid has value {v} at voxel {i}"
                )));
            }
        }
        Ok(VoxelGrid {
            geometry,
            kind,
            values,
        })
    }

    pub fn filled(geometry: Geometry, kind: VolumeKind, value: f32) -> Result<Self> {
        Self::new(geometry, kind, vec![value; geometry.len()])
    }

    pub fn from_fn(
        geometry: Geometry,
        kind: VolumeKind,
        mut f: impl FnMut([usize; 3]) -> f32,
    ) -> Result<Self> {
        let values = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Self::new(geometry, kind, values)
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.geometry.index(x, y, z)]
    }

    /// Same geometry and kind, new samples. Revalidates the kind contract.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::new(self.geometry, self.kind, values)
    }

    /// Reinterpret the samples under another kind.
    pub fn with_kind(self, kind: VolumeKind) -> Result<Self> {
        Self::new(self.geometry, kind, self.values)
    }

    pub fn ensure_kind(&self, expected: VolumeKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: expected.to_string(),
                found: self.kind.to_string(),
            })
        }
    }

    /// Mean of the samples at the given linear indices.
    pub fn mean_at(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let sum: f64 = indices.iter().map(|&i| f64::from(self.values[i])).sum();
        sum / indices.len() as f64
    }
}

/// Dense boolean mask over a [`Geometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, bits: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if bits.len() != geometry.len() {
            return Err(Error::Invariant(format!(
                "mask length {} does not match dims {:?}",
                bits.len(),
                geometry.dims
            )));
        }
        Ok(BinaryMask { geometry, bits })
    }

    pub fn empty(geometry: Geometry) -> Result<Self> {
        Self::new(geometry, vec![false; geometry.len()])
    }

    pub fn full(geometry: Geometry) -> Result<Self> {
        Self::new(geometry, vec![true; geometry.len()])
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> bool) -> Result<Self> {
        let bits = (0..geometry.len()).map(|i| f(geometry.coords(i))).collect();
        Self::new(geometry, bits)
    }

    /// Mask with the given linear indices set.
    pub fn from_indices(geometry: Geometry, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; geometry.len()];
        for &i in indices {
            if i >= bits.len() {
                return Err(Error::param(format!("voxel index {i} out of range")));
            }
            bits[i] = true;
        }
        Self::new(geometry, bits)
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.geometry.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Linear indices of the set voxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            geometry: self.geometry,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Voxel-space bounding box of the set voxels, inclusive.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        bounding_box(&self.geometry, self.indices().iter().copied())
    }
}

/// Inclusive voxel-space bounding box of a set of linear indices.
pub(crate) fn bounding_box(
    geometry: &Geometry,
    indices: impl IntoIterator<Item = usize>,
) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for i in indices {
        any = true;
        let c = geometry.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    any.then_some((lo, hi))
}

/// Either payload a VVOL file can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Grid(VoxelGrid),
    Mask(BinaryMask),
}

impl Volume {
    pub fn geometry(&self) -> &Geometry {
        match self {
            Volume::Grid(g) => g.geometry(),
            Volume::Mask(m) => m.geometry(),
        }
    }

    pub fn into_grid(self) -> Result<VoxelGrid> {
        match self {
            Volume::Grid(g) => Ok(g),
            Volume::Mask(_) => Err(Error::KindMismatch {
                expected: "scalar grid".into(),
                found: "mask".into(),
            }),
        }
    }

    pub fn into_mask(self) -> Result<BinaryMask> {
        match self {
            Volume::Mask(m) => Ok(m),
            Volume::Grid(_) => Err(Error::KindMismatch {
                expected: "mask".into(),
                found: "scalar grid".into(),
            }),
        }
    }

    /// Resample either payload; masks accept nearest-neighbour only.
    pub fn resample(&self, target_spacing: [f64; 3], interpolation: Interpolation) -> Result<Volume> {
        match self {
            Volume::Grid(g) => resample(g, target_spacing, interpolation).map(Volume::Grid),
            Volume::Mask(m) => {
                if interpolation != Interpolation::Nearest {
                    return Err(Error::param(
                        "binary masks must be resampled with nearest-neighbour interpolation",
                    ));
                }
                resample_mask(m, target_spacing).map(Volume::Mask)
            }
        }
    }
}

impl From<VoxelGrid> for Volume {
    fn from(g: VoxelGrid) -> Self {
        Volume::Grid(g)
    }
}

impl From<BinaryMask> for Volume {
    fn from(m: BinaryMask) -> Self {
        Volume::Mask(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_roundtrip() {
        let g = Geometry::with_spacing([3, 4, 5], [1.0, 1.0, 2.5]).unwrap();
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Geometry::with_spacing([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(Geometry::with_spacing([2, 2, 2], [1.0, -1.0, 1.0]).is_err());
        assert!(Geometry::with_spacing([0, 2, 2], [1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn probability_kind_enforced() {
        let g = Geometry::with_spacing([2, 1, 1], [1.0; 3]).unwrap();
        assert!(VoxelGrid::new(g, VolumeKind::Probability, vec![0.0, 1.5]).is_err());
        assert!(VoxelGrid::new(g, VolumeKind::Generic, vec![0.0, 1.5]).is_ok());
        assert!(VoxelGrid::new(g, VolumeKind::Probability, vec![0.0]).is_err());
    }

    #[test]
    fn kind_strings() {
        for k in [
            VolumeKind::CtHu,
            VolumeKind::PetSuv,
            VolumeKind::Probability,
            VolumeKind::DistanceMm,
            VolumeKind::Generic,
        ] {
            assert_eq!(k.as_str().parse::<VolumeKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }
}
