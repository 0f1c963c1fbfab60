//! Signed Euclidean distance to the tumor surface and distance stratification.
//!
//! The surface set is every tumor voxel with a face neighbour outside the
//! mask (voxels on the volume border count as surface). The transform is
//! exact: three separable passes, each computing the lower envelope of
//! parabolas along one axis in millimetres, so anisotropic spacing is honoured
//! and the cost is linear in the voxel count per pass.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volgrid::{BinaryMask, Geometry, VolumeKind, VoxelGrid};

/// Default tumor-proximal cut-off in millimetres.
pub const DEFAULT_STRATIFICATION_MM: f64 = 70.0;

/// Per-voxel signed distance (mm) to the tumor surface: negative inside the
/// tumor, zero on the surface, positive outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceMap {
    geometry: Geometry,
    values: Vec<f64>,
    source_boundary_count: usize,
}

impl SignedDistanceMap {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.geometry.index(x, y, z)]
    }

    /// Number of surface voxels the distances were measured from.
    pub fn source_boundary_count(&self) -> usize {
        self.source_boundary_count
    }

    /// `distance-mm` grid for serialization.
    pub fn to_grid(&self) -> VoxelGrid {
        let values = self.values.iter().map(|&v| v as f32).collect();
        VoxelGrid::new(self.geometry, VolumeKind::DistanceMm, values)
            .expect("distance map geometry is valid")
    }

    /// Rebuild from a `distance-mm` grid. The surface count is recovered
    /// from the zero-valued voxels.
    pub fn from_grid(grid: &VoxelGrid) -> Result<Self> {
        grid.ensure_kind(VolumeKind::DistanceMm)?;
        let values: Vec<f64> = grid.values().iter().map(|&v| f64::from(v)).collect();
        let source_boundary_count = values.iter().filter(|&&v| v == 0.0).count();
        Ok(SignedDistanceMap {
            geometry: *grid.geometry(),
            values,
            source_boundary_count,
        })
    }

    /// Voxels strictly inside the tumor (negative distance).
    pub fn interior_mask(&self) -> BinaryMask {
        let bits = self.values.iter().map(|&v| v < 0.0).collect();
        BinaryMask::new(self.geometry, bits).expect("distance map geometry is valid")
    }
}

const FACE_OFFSETS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn is_surface(mask: &BinaryMask, v: [usize; 3]) -> bool {
    let geom = mask.geometry();
    FACE_OFFSETS.iter().any(|o| {
        let n = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
        !geom.contains(n) || !mask.get(n[0] as usize, n[1] as usize, n[2] as usize)
    })
}

/// Tumor voxels with at least one 6-neighbour outside the mask, ascending.
pub fn extract_boundary(tumor: &BinaryMask) -> Result<Vec<usize>> {
    if tumor.is_all_false() {
        return Err(Error::EmptyInput("tumor mask has no voxels".into()));
    }
    let geom = tumor.geometry();
    Ok(tumor
        .bits()
        .iter()
        .enumerate()
        .filter(|&(i, &b)| b && is_surface(tumor, geom.coords(i)))
        .map(|(i, _)| i)
        .collect())
}

/// Exact signed Euclidean distance transform of the tumor mask.
pub fn signed_edt(tumor: &BinaryMask) -> Result<SignedDistanceMap> {
    let boundary = extract_boundary(tumor)?;
    let geom = *tumor.geometry();
    let mut sq = vec![f64::INFINITY; geom.len()];
    for &i in &boundary {
        sq[i] = 0.0;
    }
    squared_edt_in_place(&geom, &mut sq);
    let values = sq
        .iter()
        .zip(tumor.bits())
        .map(|(&d2, &inside)| {
            let d = d2.sqrt();
            if inside && d > 0.0 {
                -d
            } else {
                d
            }
        })
        .collect();
    Ok(SignedDistanceMap {
        geometry: geom,
        values,
        source_boundary_count: boundary.len(),
    })
}

/// Squared distance (mm²) from every voxel to the nearest zero-valued voxel
/// of `sq`; non-source voxels must hold `+inf` on entry.
pub(crate) fn squared_edt_in_place(geom: &Geometry, sq: &mut [f64]) {
    let [nx, ny, nz] = geom.dims;
    let [sx, sy, sz] = geom.spacing;

    // x: rows are contiguous.
    sq.par_chunks_mut(nx).for_each_init(
        || Envelope::new(nx),
        |env, row| {
            env.line.copy_from_slice(row);
            env.run(sx);
            row.copy_from_slice(&env.out);
        },
    );

    // y: independent per z slice.
    sq.par_chunks_mut(nx * ny).for_each_init(
        || Envelope::new(ny),
        |env, slice| {
            for x in 0..nx {
                for y in 0..ny {
                    env.line[y] = slice[x + nx * y];
                }
                env.run(sy);
                for y in 0..ny {
                    slice[x + nx * y] = env.out[y];
                }
            }
        },
    );

    // z: columns are strided by a whole slice; compute per y then scatter.
    if nz > 1 {
        let plane = nx * ny;
        let src: &[f64] = sq;
        let columns: Vec<Vec<f64>> = (0..ny)
            .into_par_iter()
            .map_init(
                || Envelope::new(nz),
                |env, y| {
                    let mut out = vec![0.0; nx * nz];
                    for x in 0..nx {
                        for z in 0..nz {
                            env.line[z] = src[x + nx * y + plane * z];
                        }
                        env.run(sz);
                        for z in 0..nz {
                            out[z * nx + x] = env.out[z];
                        }
                    }
                    out
                },
            )
            .collect();
        for (y, col) in columns.into_iter().enumerate() {
            for z in 0..nz {
                let dst = nx * y + plane * z;
                sq[dst..dst + nx].copy_from_slice(&col[z * nx..(z + 1) * nx]);
            }
        }
    }
}

/// Scratch space for the 1D lower envelope of parabolas
/// `f(q) + (x - q*spacing)^2`.
struct Envelope {
    line: Vec<f64>,
    out: Vec<f64>,
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Envelope {
            line: vec![0.0; n],
            out: vec![0.0; n],
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    fn run(&mut self, spacing: f64) {
        let n = self.line.len();
        let f = &self.line;
        let v = &mut self.vertices;
        let z = &mut self.bounds;
        let pos = |q: usize| q as f64 * spacing;

        let mut k: Option<usize> = None;
        for q in 0..n {
            let fq = f[q];
            if fq.is_infinite() {
                continue;
            }
            let Some(mut kk) = k else {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                k = Some(0);
                continue;
            };
            loop {
                let p = v[kk];
                let s = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p)))
                    / (2.0 * (pos(q) - pos(p)));
                if s <= z[kk] {
                    // z[0] is -inf, so this never underflows.
                    kk -= 1;
                    continue;
                }
                kk += 1;
                v[kk] = q;
                z[kk] = s;
                z[kk + 1] = f64::INFINITY;
                break;
            }
            k = Some(kk);
        }

        if k.is_none() {
            self.out.fill(f64::INFINITY);
            return;
        }
        let mut kk = 0;
        for q in 0..n {
            let x = pos(q);
            while z[kk + 1] < x {
                kk += 1;
            }
            let d = x - pos(v[kk]);
            self.out[q] = d * d + f[v[kk]];
        }
    }
}

/// Split of the volume into tumor-proximal and tumor-distal voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub proximal: BinaryMask,
    pub distal: BinaryMask,
    pub threshold_mm: f64,
}

impl RegionPartition {
    /// Check that the two masks are disjoint, cover the volume and share geometry.
    pub fn validate(&self) -> Result<()> {
        self.proximal
            .geometry()
            .ensure_same(self.distal.geometry(), "region partition")?;
        let bad = self
            .proximal
            .bits()
            .iter()
            .zip(self.distal.bits())
            .position(|(&p, &d)| p == d);
        match bad {
            Some(i) => Err(Error::Invariant(format!(
                "proximal/distal masks are not a partition at voxel {i}"
            ))),
            None => Ok(()),
        }
    }

    /// Build from a proximal mask alone.
    pub fn from_proximal(proximal: BinaryMask, threshold_mm: f64) -> Self {
        let distal = proximal.not();
        RegionPartition {
            proximal,
            distal,
            threshold_mm,
        }
    }
}

/// Voxels with distance `<= d` are proximal (tumor interior included), the
/// rest distal.
pub fn stratify(dmap: &SignedDistanceMap, d: f64) -> Result<RegionPartition> {
    if d.is_nan() {
        return Err(Error::param("stratification distance is NaN"));
    }
    let bits = dmap.values.iter().map(|&v| v <= d).collect();
    let proximal = BinaryMask::new(dmap.geometry, bits)?;
    Ok(RegionPartition::from_proximal(proximal, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_boundary(mask: &BinaryMask) -> Vec<usize> {
        let g = mask.geometry();
        let mut out = Vec::new();
        for i in 0..g.len() {
            if !mask.bits()[i] {
                continue;
            }
            let [x, y, z] = g.coords(i);
            let [nx, ny, nz] = g.dims;
            let outside = x == 0
                || y == 0
                || z == 0
                || x + 1 == nx
                || y + 1 == ny
                || z + 1 == nz
                || !mask.get(x - 1, y, z)
                || !mask.get(x + 1, y, z)
                || !mask.get(x, y - 1, z)
                || !mask.get(x, y + 1, z)
                || !mask.get(x, y, z - 1)
                || !mask.get(x, y, z + 1);
            if outside {
                out.push(i);
            }
        }
        out
    }

    fn brute_edt(mask: &BinaryMask) -> Vec<f64> {
        let g = mask.geometry();
        let boundary: Vec<[f64; 3]> = brute_boundary(mask)
            .into_iter()
            .map(|i| g.world(g.coords(i)))
            .collect();
        (0..g.len())
            .map(|i| {
                let p = g.world(g.coords(i));
                let d = boundary
                    .iter()
                    .map(|q| {
                        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                if mask.bits()[i] {
                    -d
                } else {
                    d
                }
            })
            .collect()
    }

    fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], p: f64) -> BinaryMask {
        let g = Geometry::with_spacing(dims, spacing).unwrap();
        let mut m = BinaryMask::from_fn(g, |_| rng.random_bool(p)).unwrap();
        if m.is_all_false() {
            m = BinaryMask::from_indices(g, &[0]).unwrap();
        }
        m
    }

    #[test]
    fn single_voxel_boundary() {
        let g = Geometry::with_spacing([3, 3, 3], [1.0; 3]).unwrap();
        let m = BinaryMask::from_indices(g, &[13]).unwrap();
        assert_eq!(extract_boundary(&m).unwrap(), vec![13]);
    }

    #[test]
    fn cube_boundary_excludes_center() {
        let g = Geometry::with_spacing([5, 5, 5], [1.0; 3]).unwrap();
        let m = BinaryMask::from_fn(g, |[x, y, z]| {
            (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z)
        })
        .unwrap();
        let b = extract_boundary(&m).unwrap();
        assert_eq!(b.len(), 26);
        assert!(!b.contains(&g.index(2, 2, 2)));
    }

    #[test]
    fn empty_tumor_rejected() {
        let g = Geometry::with_spacing([3, 3, 3], [1.0; 3]).unwrap();
        let m = BinaryMask::empty(g).unwrap();
        assert!(extract_boundary(&m).is_err());
        assert!(signed_edt(&m).is_err());
    }

    #[test]
    fn boundary_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_mask(&mut rng, [7, 6, 5], [1.0; 3], 0.6);
            assert_eq!(extract_boundary(&m).unwrap(), brute_boundary(&m));
        }
    }

    #[test]
    fn single_source_anisotropic() {
        let g = Geometry::with_spacing([5, 3, 4], [1.0, 1.0, 2.5]).unwrap();
        let m = BinaryMask::from_indices(g, &[0]).unwrap();
        let d = signed_edt(&m).unwrap();
        assert_eq!(d.get(0, 0, 0), 0.0);
        assert!((d.get(3, 0, 0) - 3.0).abs() < 1e-12);
        assert!((d.get(0, 0, 1) - 2.5).abs() < 1e-12);
        assert!((d.get(4, 2, 3) - (16.0f64 + 4.0 + 56.25).sqrt()).abs() < 1e-12);
        assert_eq!(d.source_boundary_count(), 1);
    }

    #[test]
    fn matches_brute_force_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (i, p) in [0.05, 0.3, 0.7, 0.95].iter().cycle().take(16).enumerate() {
            let dims = [6 + i % 4, 5 + i % 3, 4 + i % 5];
            let m = random_mask(&mut rng, dims, [1.0, 1.0, 2.5], *p);
            let d = signed_edt(&m).unwrap();
            let o = brute_edt(&m);
            for (a, b) in d.values().iter().zip(&o) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn flat_volume_has_no_z_pass() {
        let g = Geometry::with_spacing([6, 4, 1], [0.5, 2.0, 3.0]).unwrap();
        let m = BinaryMask::from_indices(g, &[g.index(5, 3, 0)]).unwrap();
        let d = signed_edt(&m).unwrap();
        assert!((d.get(0, 0, 0) - (2.5f64 * 2.5 + 36.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stratification_is_inclusive() {
        let g = Geometry::with_spacing([3, 1, 1], [1.0; 3]).unwrap();
        let dmap = SignedDistanceMap {
            geometry: g,
            values: vec![-3.0, 70.0, 70.1],
            source_boundary_count: 0,
        };
        let part = stratify(&dmap, 70.0).unwrap();
        assert_eq!(part.proximal.bits(), &[true, true, false]);
        assert_eq!(part.distal.bits(), &[false, false, true]);
        part.validate().unwrap();
        assert_eq!(stratify(&dmap, f64::INFINITY).unwrap().proximal.count(), 3);
        assert_eq!(stratify(&dmap, -3.5).unwrap().distal.count(), 3);
        assert!(stratify(&dmap, f64::NAN).is_err());
    }

    #[test]
    fn grid_roundtrip_keeps_surface_count() {
        let g = Geometry::with_spacing([4, 4, 4], [1.0; 3]).unwrap();
        let m = BinaryMask::from_fn(g, |[x, y, z]| x < 2 && y < 2 && z < 2).unwrap();
        let d = signed_edt(&m).unwrap();
        let back = SignedDistanceMap::from_grid(&d.to_grid()).unwrap();
        assert_eq!(back.source_boundary_count(), d.source_boundary_count());
        assert_eq!(d.source_boundary_count(), 8);
    }
}
