//! Synthetic CT/PET patients and an oracle segmenter with known statistics.
//!
//! A phantom is an ellipsoidal tumor plus spherical lymph nodes on a uniform
//! background. The oracle emits a probability blob over each node with a
//! fixed detection probability and scatters Poisson-many spurious blobs in
//! free space, so detection recall and false-positive counts are known in
//! advance.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distfield::DEFAULT_STRATIFICATION_MM;
use crate::error::{Error, Result};
use crate::instancer::{gt_instances, measure, Connectivity, GroundTruthInstance};
use crate::volgrid::{BinaryMask, Geometry, VolumeKind, VoxelGrid};

/// Nominal oracle probability inside a blob.
pub const BLOB_PLATEAU: f64 = 0.9;
/// Blob plateaus after score noise are clamped to this range so every blob
/// survives the default binarization threshold.
pub const PLATEAU_RANGE: [f64; 2] = [0.55, 1.0];
const PLACEMENT_ATTEMPTS: usize = 500;

/// Per-stream seed derived from a base seed, independent of evaluation order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub hu: f32,
    pub pet: f32,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center_mm[a]) / self.semi_axes_mm[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub hu: f32,
    pub pet_intensity: f32,
    pub is_proximal_intent: bool,
}

/// One synthetic patient. The volume origin is the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub tumor: Ellipsoid,
    pub nodes: Vec<NodeSpec>,
    pub background_hu: f32,
    pub background_pet: f32,
    pub noise_std_hu: f32,
    pub noise_std_pet: f32,
    pub seed: u64,
}

fn diagonal(spacing: [f64; 3]) -> f64 {
    spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Visit every voxel whose centre lies within `radius` of `center`.
fn for_ball(geom: &Geometry, center: [f64; 3], radius: f64, mut f: impl FnMut(usize, f64)) {
    let lo = geom.continuous_index(center.map(|c| c - radius));
    let hi = geom.continuous_index(center.map(|c| c + radius));
    let range = |a: usize| {
        let s = lo[a].ceil().max(0.0) as usize;
        let e = (hi[a].floor()).min(geom.dims[a] as f64 - 1.0);
        if e < 0.0 {
            1..0
        } else {
            s..e as usize + 1
        }
    };
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let d = distance(geom.world([x, y, z]), center);
                if d <= radius {
                    f(geom.index(x, y, z), d);
                }
            }
        }
    }
}

fn ball_indices(geom: &Geometry, center: [f64; 3], radius: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for_ball(geom, center, radius, |i, _| out.push(i));
    out.sort_unstable();
    out
}

fn ellipsoid_indices(geom: &Geometry, e: &Ellipsoid) -> Vec<usize> {
    let r = e.semi_axes_mm.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for_ball(geom, e.center_mm, r, |i, _| {
        if e.contains(geom.world(geom.coords(i))) {
            out.push(i);
        }
    });
    out.sort_unstable();
    out
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::with_spacing(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        let geom = self.geometry()?;
        if self.tumor.semi_axes_mm.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::param("tumor semi-axes must be positive"));
        }
        if ellipsoid_indices(&geom, &self.tumor).is_empty() {
            return Err(Error::param("tumor covers no voxel centre"));
        }
        if !(self.noise_std_hu >= 0.0 && self.noise_std_pet >= 0.0) {
            return Err(Error::param("noise standard deviations must be non-negative"));
        }
        let gap = diagonal(self.spacing);
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.radius_mm > 0.0 && n.radius_mm.is_finite()) {
                return Err(Error::param(format!("node {i} radius must be positive")));
            }
            if geom.nearest_voxel(n.center_mm).is_none() {
                return Err(Error::param(format!("node {i} centre lies outside the volume")));
            }
            if ball_indices(&geom, n.center_mm, n.radius_mm).is_empty() {
                return Err(Error::param(format!("node {i} covers no voxel centre")));
            }
            for (j, m) in self.nodes.iter().enumerate().take(i) {
                if distance(n.center_mm, m.center_mm) <= n.radius_mm + m.radius_mm + gap {
                    return Err(Error::param(format!("nodes {j} and {i} overlap or touch")));
                }
            }
        }
        Ok(())
    }
}

/// Generated volumes and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ct: VoxelGrid,
    pub pet: VoxelGrid,
    pub tumor: BinaryMask,
    pub ln: BinaryMask,
    /// Ordered by smallest voxel index, ids from 1.
    pub gt: Vec<GroundTruthInstance>,
    /// The planted sphere behind each entry of `gt`.
    pub gt_nodes: Vec<NodeSpec>,
}

impl Phantom {
    /// Wrap existing volumes so the oracle can run on them. Each annotated
    /// component becomes a sphere at its centroid with its equivalent radius.
    pub fn from_masks(ct: VoxelGrid, pet: VoxelGrid, tumor: BinaryMask, ln: BinaryMask) -> Result<Self> {
        let geom = *ct.geometry();
        for (what, g) in [("PET", pet.geometry()), ("tumor", tumor.geometry()), ("ln", ln.geometry())] {
            geom.ensure_same(g, what)?;
        }
        let gt = gt_instances(&ln, Connectivity::TwentySix);
        let gt_nodes = gt
            .iter()
            .map(|g| NodeSpec {
                center_mm: g.centroid_mm,
                radius_mm: g.radius_mm,
                hu: ct.mean_at(&g.voxel_indices) as f32,
                pet_intensity: pet.mean_at(&g.voxel_indices) as f32,
                is_proximal_intent: false,
            })
            .collect();
        Ok(Phantom {
            ct,
            pet,
            tumor,
            ln,
            gt,
            gt_nodes,
        })
    }
}

fn add_noise(values: &mut [f32], std: f32, rng: &mut ChaCha8Rng) -> Result<()> {
    if std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0f32, std).map_err(|e| Error::param(e.to_string()))?;
    for v in values.iter_mut() {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// Rasterize a phantom. Shapes cover the voxels whose centres they contain;
/// nodes are painted over the tumor. Masks carry no noise.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let geom = spec.geometry()?;
    let n = geom.len();
    let mut ct = vec![spec.background_hu; n];
    let mut pet = vec![spec.background_pet; n];
    let mut tumor = vec![false; n];
    let mut ln = vec![false; n];

    for i in ellipsoid_indices(&geom, &spec.tumor) {
        tumor[i] = true;
        ct[i] = spec.tumor.hu;
        pet[i] = spec.tumor.pet;
    }
    let mut planted: Vec<(Vec<usize>, NodeSpec)> = Vec::with_capacity(spec.nodes.len());
    for node in &spec.nodes {
        let voxels = ball_indices(&geom, node.center_mm, node.radius_mm);
        for &i in &voxels {
            ln[i] = true;
            ct[i] = node.hu;
            pet[i] = node.pet_intensity;
        }
        planted.push((voxels, *node));
    }

    let mut ct_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ct_rng.set_stream(0);
    let mut pet_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    pet_rng.set_stream(1);
    add_noise(&mut ct, spec.noise_std_hu, &mut ct_rng)?;
    add_noise(&mut pet, spec.noise_std_pet, &mut pet_rng)?;

    planted.sort_by_key(|(v, _)| v[0]);
    let (gt, gt_nodes) = planted
        .into_iter()
        .enumerate()
        .map(|(k, (voxels, node))| {
            let m = measure(&geom, &voxels);
            (
                GroundTruthInstance {
                    id: k as u32 + 1,
                    voxel_indices: voxels,
                    centroid_mm: m.centroid_mm,
                    volume_mm3: m.volume_mm3,
                    radius_mm: m.radius_mm,
                },
                node,
            )
        })
        .unzip();

    Ok(Phantom {
        ct: VoxelGrid::new(geom, VolumeKind::CtHu, ct)?,
        pet: VoxelGrid::new(geom, VolumeKind::PetSuv, pet)?,
        tumor: BinaryMask::new(geom, tumor)?,
        ln: BinaryMask::new(geom, ln)?,
        gt,
        gt_nodes,
    })
}

/// Oracle segmenter settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub p_detect: f64,
    pub fp_rate_lambda: f64,
    pub fp_radius_mm: [f64; 2],
    /// Standard deviation of the per-blob plateau around 0.9.
    pub score_noise_std: f64,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            p_detect: 0.8,
            fp_rate_lambda: 3.0,
            fp_radius_mm: [3.0, 6.0],
            score_noise_std: 0.05,
            seed: 0,
        }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(Error::param("p_detect must lie in [0, 1]"));
        }
        if !(self.fp_rate_lambda >= 0.0 && self.fp_rate_lambda.is_finite()) {
            return Err(Error::param("fp_rate_lambda must be finite and non-negative"));
        }
        let [lo, hi] = self.fp_radius_mm;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param("fp_radius_mm must satisfy 0 < lo <= hi"));
        }
        if !(self.score_noise_std >= 0.0 && self.score_noise_std.is_finite()) {
            return Err(Error::param("score_noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A painted probability blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub plateau: f64,
}

/// The probability map together with the random events behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRealization {
    pub probability: VoxelGrid,
    /// Detection event per ground-truth instance, in `gt` order.
    pub detected: Vec<bool>,
    pub node_blobs: Vec<Blob>,
    pub spurious: Vec<Blob>,
    /// Spurious blobs drawn but not placed for lack of free space.
    pub skipped_spurious: usize,
}

fn taper_width(geom: &Geometry) -> f64 {
    geom.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn paint_blob(geom: &Geometry, values: &mut [f32], blob: &Blob) {
    let h = taper_width(geom);
    for_ball(geom, blob.center_mm, blob.radius_mm + h, |i, d| {
        let v = if d <= blob.radius_mm {
            blob.plateau
        } else {
            blob.plateau * (1.0 - (d - blob.radius_mm) / h)
        };
        values[i] = values[i].max(v as f32);
    });
}

fn draw_plateau(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (BLOB_PLATEAU + std * z).clamp(PLATEAU_RANGE[0], PLATEAU_RANGE[1])
}

/// Run the oracle on a phantom.
///
/// Each node is emitted independently with probability `p_detect` as a blob
/// over its planted sphere. Spurious blobs avoid the tumor, every node and
/// each other by at least a voxel diagonal, and stay inside the volume.
pub fn oracle_realize(phantom: &Phantom, oracle: &OracleSpec) -> Result<OracleRealization> {
    oracle.validate()?;
    let geom = *phantom.ct.geometry();
    let h = taper_width(&geom);
    let gap = diagonal(geom.spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(oracle.seed);
    let mut values = vec![0f32; geom.len()];
    let mut occupied: Vec<bool> = phantom
        .tumor
        .bits()
        .iter()
        .zip(phantom.ln.bits())
        .map(|(&t, &l)| t || l)
        .collect();

    let mut detected = Vec::with_capacity(phantom.gt_nodes.len());
    let mut node_blobs = Vec::new();
    for node in &phantom.gt_nodes {
        let hit = rng.random_bool(oracle.p_detect);
        let plateau = draw_plateau(&mut rng, oracle.score_noise_std);
        let blob = Blob {
            center_mm: node.center_mm,
            radius_mm: node.radius_mm,
            plateau,
        };
        for_ball(&geom, blob.center_mm, blob.radius_mm + h, |i, _| occupied[i] = true);
        if hit {
            paint_blob(&geom, &mut values, &blob);
            node_blobs.push(blob);
        }
        detected.push(hit);
    }

    let count = if oracle.fp_rate_lambda > 0.0 {
        let poisson = Poisson::new(oracle.fp_rate_lambda).map_err(|e| Error::param(e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let extent = geom.extent_mm();
    let mut spurious = Vec::with_capacity(count);
    let mut skipped = 0;
    for _ in 0..count {
        let [lo, hi] = oracle.fp_radius_mm;
        let radius = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let plateau = draw_plateau(&mut rng, oracle.score_noise_std);
        let reach = radius + h;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut center = [0.0; 3];
            let mut fits = true;
            for a in 0..3 {
                let min = geom.origin[a] + reach;
                let max = geom.origin[a] + extent[a] - geom.spacing[a] - reach;
                if min > max {
                    fits = false;
                    break;
                }
                center[a] = rng.random_range(min..=max);
            }
            if !fits {
                break;
            }
            let mut free = true;
            for_ball(&geom, center, reach + gap, |i, _| free &= !occupied[i]);
            if free {
                placed = Some(center);
                break;
            }
        }
        match placed {
            Some(center_mm) => {
                let blob = Blob {
                    center_mm,
                    radius_mm: radius,
                    plateau,
                };
                for_ball(&geom, center_mm, reach, |i, _| occupied[i] = true);
                paint_blob(&geom, &mut values, &blob);
                spurious.push(blob);
            }
            None => {
                log::warn!("no free space for a spurious blob of radius {radius:.2} mm");
                skipped += 1;
            }
        }
    }

    Ok(OracleRealization {
        probability: VoxelGrid::new(geom, VolumeKind::Probability, values)?,
        detected,
        node_blobs,
        spurious,
        skipped_spurious: skipped,
    })
}

/// Probability volume produced by the oracle.
pub fn oracle_probmap(phantom: &Phantom, oracle: &OracleSpec) -> Result<VoxelGrid> {
    Ok(oracle_realize(phantom, oracle)?.probability)
}

/// Distribution of synthetic patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Uniform range of each tumor semi-axis.
    pub tumor_semi_axis_mm: [f64; 2],
    pub tumor_hu: f32,
    pub tumor_pet: f32,
    /// Inclusive range of planted nodes per patient.
    pub node_count: [usize; 2],
    pub node_radius_mm: [f64; 2],
    pub node_hu: f32,
    pub node_pet: f32,
    pub background_hu: f32,
    pub background_pet: f32,
    pub noise_std_hu: f32,
    pub noise_std_pet: f32,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            dims: [96, 96, 48],
            spacing: [1.0, 1.0, 2.5],
            tumor_semi_axis_mm: [8.0, 14.0],
            tumor_hu: 40.0,
            tumor_pet: 8.0,
            node_count: [3, 6],
            node_radius_mm: [4.0, 8.0],
            node_hu: 30.0,
            node_pet: 4.0,
            background_hu: -40.0,
            background_pet: 1.0,
            noise_std_hu: 10.0,
            noise_std_pet: 0.2,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        Geometry::with_spacing(self.dims, self.spacing)?;
        let [a, b] = self.tumor_semi_axis_mm;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::param("tumor_semi_axis_mm must satisfy 0 < lo <= hi"));
        }
        let [a, b] = self.node_radius_mm;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::param("node_radius_mm must satisfy 0 < lo <= hi"));
        }
        if self.node_count[0] > self.node_count[1] {
            return Err(Error::param("node_count must satisfy lo <= hi"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draw one patient. The tumor sits near the volume centre; nodes are
/// rejection-sampled so that their oracle blobs stay clear of the tumor, the
/// volume edges and each other. Nodes that find no room are dropped.
pub fn sample_patient(cohort: &CohortSpec, seed: u64) -> Result<PhantomSpec> {
    cohort.validate()?;
    let geom = Geometry::with_spacing(cohort.dims, cohort.spacing)?;
    let extent = geom.extent_mm();
    let h = taper_width(&geom);
    let gap = diagonal(cohort.spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mid: [f64; 3] = std::array::from_fn(|a| 0.5 * (extent[a] - cohort.spacing[a]));
    let tumor = Ellipsoid {
        center_mm: std::array::from_fn(|a| mid[a] + rng.random_range(-4.0..=4.0)),
        semi_axes_mm: std::array::from_fn(|_| uniform(&mut rng, cohort.tumor_semi_axis_mm)),
        hu: cohort.tumor_hu,
        pet: cohort.tumor_pet,
    };
    let tumor_voxels = ellipsoid_indices(&geom, &tumor);
    let mut tumor_bits = vec![false; geom.len()];
    for &i in &tumor_voxels {
        tumor_bits[i] = true;
    }

    let n_nodes = rng.random_range(cohort.node_count[0]..=cohort.node_count[1]);
    let mut nodes: Vec<NodeSpec> = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let radius = uniform(&mut rng, cohort.node_radius_mm);
        let reach = radius + h;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let center: [f64; 3] = std::array::from_fn(|a| {
                let min = reach + gap;
                let max = (extent[a] - cohort.spacing[a] - reach - gap).max(min);
                rng.random_range(min..=max)
            });
            let clear_of_nodes = nodes
                .iter()
                .all(|m| distance(center, m.center_mm) > reach + m.radius_mm + h + 3.0 * gap);
            if !clear_of_nodes {
                continue;
            }
            let mut clear_of_tumor = true;
            for_ball(&geom, center, reach + 2.0 * gap, |i, _| clear_of_tumor &= !tumor_bits[i]);
            if clear_of_tumor && !ball_indices(&geom, center, radius).is_empty() {
                placed = Some(center);
                break;
            }
        }
        let Some(center_mm) = placed else {
            log::warn!("no room for a node of radius {radius:.2} mm");
            continue;
        };
        let surface = tumor_voxels
            .iter()
            .map(|&i| distance(geom.world(geom.coords(i)), center_mm))
            .fold(f64::INFINITY, f64::min);
        nodes.push(NodeSpec {
            center_mm,
            radius_mm: radius,
            hu: cohort.node_hu,
            pet_intensity: cohort.node_pet,
            is_proximal_intent: surface <= DEFAULT_STRATIFICATION_MM,
        });
    }

    Ok(PhantomSpec {
        dims: cohort.dims,
        spacing: cohort.spacing,
        tumor,
        nodes,
        background_hu: cohort.background_hu,
        background_pet: cohort.background_pet,
        noise_std_hu: cohort.noise_std_hu,
        noise_std_pet: cohort.noise_std_pet,
        seed: rng.next_u64(),
    })
}

/// A cohort of synthetic patients with oracle stream predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCohort {
    #[serde(default)]
    pub patients: usize,
    #[serde(default)]
    pub cohort: CohortSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    /// Separate oracle for the early-fusion streams; the CT oracle map is
    /// reused when absent.
    #[serde(default)]
    pub ef_oracle: Option<OracleSpec>,
}

/// One generated patient with its CT-stream and EF-stream probabilities.
#[derive(Debug, Clone)]
pub struct SyntheticPatient {
    pub id: String,
    pub spec: PhantomSpec,
    pub phantom: Phantom,
    pub ct_stream: VoxelGrid,
    pub ef_stream: VoxelGrid,
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:04}")
}

/// Generate patient `index`. All randomness derives from `(master_seed,
/// index)` and the oracle seeds, so any subset can be built in any order.
pub fn synthesize_patient(
    cohort: &SyntheticCohort,
    master_seed: u64,
    index: usize,
) -> Result<SyntheticPatient> {
    let base = derive_seed(master_seed, index as u64);
    let spec = sample_patient(&cohort.cohort, derive_seed(base, 0))?;
    let phantom = generate_phantom(&spec)?;
    let oracle = OracleSpec {
        seed: derive_seed(derive_seed(base, 1), cohort.oracle.seed),
        ..cohort.oracle
    };
    let ct_stream = oracle_probmap(&phantom, &oracle)?;
    let ef_stream = match &cohort.ef_oracle {
        Some(ef) => oracle_probmap(
            &phantom,
            &OracleSpec {
                seed: derive_seed(derive_seed(base, 2), ef.seed),
                ..*ef
            },
        )?,
        None => ct_stream.clone(),
    };
    Ok(SyntheticPatient {
        id: patient_id(index),
        spec,
        phantom,
        ct_stream,
        ef_stream,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::encode_volume;

    fn spec() -> PhantomSpec {
        PhantomSpec {
            dims: [40, 40, 16],
            spacing: [1.0, 1.0, 2.5],
            tumor: Ellipsoid {
                center_mm: [20.0, 20.0, 20.0],
                semi_axes_mm: [5.0, 5.0, 5.0],
                hu: 40.0,
                pet: 8.0,
            },
            nodes: vec![NodeSpec {
                center_mm: [6.0, 6.0, 20.0],
                radius_mm: 3.0,
                hu: 30.0,
                pet_intensity: 4.0,
                is_proximal_intent: true,
            }],
            background_hu: -40.0,
            background_pet: 1.0,
            noise_std_hu: 0.0,
            noise_std_pet: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_levels() {
        let p = generate_phantom(&spec()).unwrap();
        let mut levels: Vec<f32> = p.ct.values().to_vec();
        levels.sort_by(f32::total_cmp);
        levels.dedup();
        assert_eq!(levels, vec![-40.0, 30.0, 40.0]);
        assert_eq!(p.gt.len(), 1);
        assert_eq!(p.ln.count(), p.gt[0].voxel_indices.len());
    }

    #[test]
    fn overlapping_nodes_rejected() {
        let mut s = spec();
        let mut n = s.nodes[0];
        n.center_mm[0] += 5.0;
        s.nodes.push(n);
        assert!(generate_phantom(&s).is_err());
    }

    #[test]
    fn masks_ignore_noise() {
        let a = generate_phantom(&spec()).unwrap();
        let b = generate_phantom(&PhantomSpec {
            noise_std_hu: 25.0,
            noise_std_pet: 1.0,
            ..spec()
        })
        .unwrap();
        assert_eq!(a.tumor, b.tumor);
        assert_eq!(a.ln, b.ln);
        assert_ne!(a.ct, b.ct);
    }

    #[test]
    fn oracle_extremes() {
        let p = generate_phantom(&spec()).unwrap();
        let none = OracleSpec {
            p_detect: 0.0,
            fp_rate_lambda: 0.0,
            ..Default::default()
        };
        assert!(oracle_probmap(&p, &none).unwrap().values().iter().all(|&v| v == 0.0));
        let all = OracleSpec {
            p_detect: 1.0,
            fp_rate_lambda: 0.0,
            score_noise_std: 0.0,
            ..Default::default()
        };
        let m = oracle_probmap(&p, &all).unwrap();
        for &i in &p.gt[0].voxel_indices {
            assert!((m.values()[i] - 0.9).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_outputs_identical() {
        let cohort = SyntheticCohort {
            patients: 2,
            cohort: CohortSpec {
                dims: [48, 48, 20],
                ..Default::default()
            },
            oracle: OracleSpec::default(),
            ef_oracle: None,
        };
        let a = synthesize_patient(&cohort, 9, 1).unwrap();
        let b = synthesize_patient(&cohort, 9, 1).unwrap();
        assert_eq!(encode_volume(&a.phantom.ct).unwrap(), encode_volume(&b.phantom.ct).unwrap());
        assert_eq!(encode_volume(&a.ct_stream).unwrap(), encode_volume(&b.ct_stream).unwrap());
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 7), derive_seed(5, 7));
    }
}
