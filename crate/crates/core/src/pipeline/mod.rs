//! Batch driver: cohort loading, per-patient processing and report assembly.
//!
//! Per patient: resample, clamp CT, normalize PET with cohort statistics,
//! signed distance to the tumor, stratify, fuse the four streams, extract
//! candidates outside the tumor, rescore with the second-stage scorer and
//! match against ground truth. Patients run on a bounded worker pool; results
//! are gathered in cohort order so every output is reproducible.

mod report;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distfield::{signed_edt, stratify, SignedDistanceMap, DEFAULT_STRATIFICATION_MM};
use crate::error::{Error, Result};
use crate::instancer::{
    extract_candidates, gt_instances, CandidateParams, CandidateRecord, Connectivity,
    GroundTruthInstance, GtRecord, InstanceCandidate, DEFAULT_MIN_VOXELS, DEFAULT_TAU,
};
use crate::matcheval::{
    match_instances, EvalConfig, MatchCriterion, PatientHits, DEFAULT_FROC_BUDGETS,
    DEFAULT_OPERATING_PRECISION, DEFAULT_PRECISION_BAND,
};
use crate::phantom::{derive_seed, oracle_probmap, synthesize_patient, OracleSpec, Phantom, SyntheticCohort};
use crate::stage2::{
    classify_candidates, crop_patch, handcrafted_features, jitter_bboxes, CandidatePatch,
    CandidateScorer, PatchConfig, ScorerKind, ScoringInput, DEFAULT_JITTER_RANGE,
};
use crate::streamfusion::{fuse_late, StreamSet};
use crate::volgrid::{
    normalize_pet, read_volume, resample, resample_mask, truncate_hu, BinaryMask, CohortStats,
    Interpolation, StatsAccumulator, VolumeKind, VoxelGrid, DEFAULT_HU_WINDOW,
    DEFAULT_TARGET_SPACING,
};

pub use report::{write_outputs, PatientFailure, PipelineReport};
pub use svg::curve_svg;

/// Everything a pipeline run needs. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Cohort manifest; mutually exclusive with `synthetic`.
    pub manifest: Option<PathBuf>,
    pub synthetic: Option<SyntheticCohort>,
    /// Oracle used for manifest patients that list no stream volumes.
    pub oracle: Option<OracleSpec>,
    /// Not echoed in the report so reruns elsewhere stay byte-identical.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub d_mm: f64,
    pub tau: f64,
    pub connectivity: Connectivity,
    pub min_voxels: usize,
    pub hu_window: [f32; 2],
    pub target_spacing: [f64; 3],
    pub froc_budgets: Vec<f64>,
    pub precision_band: [f64; 2],
    pub operating_precision: f64,
    pub match_criterion: MatchCriterion,
    pub seed: u64,
    pub scorer: ScorerKind,
    pub patch: PatchConfig,
    pub jitter_count: usize,
    pub jitter_range: u32,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            synthetic: None,
            oracle: None,
            output_dir: PathBuf::from("osln-out"),
            d_mm: DEFAULT_STRATIFICATION_MM,
            tau: DEFAULT_TAU,
            connectivity: Connectivity::TwentySix,
            min_voxels: DEFAULT_MIN_VOXELS,
            hu_window: [DEFAULT_HU_WINDOW.0, DEFAULT_HU_WINDOW.1],
            target_spacing: DEFAULT_TARGET_SPACING,
            froc_budgets: DEFAULT_FROC_BUDGETS.to_vec(),
            precision_band: DEFAULT_PRECISION_BAND,
            operating_precision: DEFAULT_OPERATING_PRECISION,
            match_criterion: MatchCriterion::default(),
            seed: 0,
            scorer: ScorerKind::default(),
            patch: PatchConfig::default(),
            jitter_count: 4,
            jitter_range: DEFAULT_JITTER_RANGE,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            tau: self.tau,
            connectivity: self.connectivity,
            min_voxels: self.min_voxels,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            froc_budgets: self.froc_budgets.clone(),
            precision_band: self.precision_band,
            operating_precision: self.operating_precision,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::param("set either `manifest` or `synthetic`, not both"))
            }
            (None, None) => return Err(Error::param("one of `manifest` or `synthetic` is required")),
            _ => {}
        }
        if !(self.d_mm.is_finite() && self.d_mm >= 0.0) {
            return Err(Error::param("d_mm must be finite and non-negative"));
        }
        if !(self.hu_window[0] < self.hu_window[1]) {
            return Err(Error::param("hu_window must satisfy lo < hi"));
        }
        if self.target_spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::param("target_spacing must be positive"));
        }
        if self.jitter_count == 0 {
            return Err(Error::param("jitter_count must be at least 1"));
        }
        if let Some(o) = &self.oracle {
            o.validate()?;
        }
        if let Some(s) = &self.synthetic {
            s.cohort.validate()?;
            s.oracle.validate()?;
            if let Some(ef) = &s.ef_oracle {
                ef.validate()?;
            }
        }
        self.candidate_params().validate()?;
        self.eval_config().validate()?;
        self.match_criterion.validate()?;
        self.patch.validate()
    }
}

/// Stream volume paths of one manifest patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamPaths {
    pub ct_proximal: PathBuf,
    pub ef_proximal: PathBuf,
    pub ct_distal: PathBuf,
    pub ef_distal: PathBuf,
}

/// One patient of a manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub ct: PathBuf,
    pub pet: PathBuf,
    pub tumor: PathBuf,
    pub ln: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<StreamPaths>,
    /// Ground-truth listing for reference; matching uses the `ln` mask.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt: Vec<GtRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub patients: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// The four stream probability volumes of one patient.
#[derive(Debug, Clone)]
pub struct Streams {
    pub ct_proximal: VoxelGrid,
    pub ef_proximal: VoxelGrid,
    pub ct_distal: VoxelGrid,
    pub ef_distal: VoxelGrid,
}

impl Streams {
    fn map(self, mut f: impl FnMut(VoxelGrid) -> Result<VoxelGrid>) -> Result<Self> {
        Ok(Streams {
            ct_proximal: f(self.ct_proximal)?,
            ef_proximal: f(self.ef_proximal)?,
            ct_distal: f(self.ct_distal)?,
            ef_distal: f(self.ef_distal)?,
        })
    }
}

/// Raw or preprocessed volumes of one patient.
#[derive(Debug, Clone)]
pub struct PatientVolumes {
    pub id: String,
    pub ct: VoxelGrid,
    pub pet: VoxelGrid,
    pub tumor: BinaryMask,
    pub ln: BinaryMask,
    pub streams: Option<Streams>,
}

fn load_grid(base: &Path, rel: &Path, kind: VolumeKind) -> Result<VoxelGrid> {
    let grid = read_volume(base.join(rel))?.into_grid()?;
    grid.ensure_kind(kind)?;
    Ok(grid)
}

fn load_mask(base: &Path, rel: &Path) -> Result<BinaryMask> {
    read_volume(base.join(rel))?.into_mask()
}

impl PatientVolumes {
    pub fn load(entry: &ManifestEntry, base_dir: &Path) -> Result<Self> {
        let streams = match &entry.streams {
            Some(s) => Some(Streams {
                ct_proximal: load_grid(base_dir, &s.ct_proximal, VolumeKind::Probability)?,
                ef_proximal: load_grid(base_dir, &s.ef_proximal, VolumeKind::Probability)?,
                ct_distal: load_grid(base_dir, &s.ct_distal, VolumeKind::Probability)?,
                ef_distal: load_grid(base_dir, &s.ef_distal, VolumeKind::Probability)?,
            }),
            None => None,
        };
        Ok(PatientVolumes {
            id: entry.id.clone(),
            ct: load_grid(base_dir, &entry.ct, VolumeKind::CtHu)?,
            pet: load_grid(base_dir, &entry.pet, VolumeKind::PetSuv)?,
            tumor: load_mask(base_dir, &entry.tumor)?,
            ln: load_mask(base_dir, &entry.ln)?,
            streams,
        })
    }
}

/// Where patients come from.
#[derive(Debug, Clone)]
pub enum CohortSource {
    Manifest { manifest: Manifest, base_dir: PathBuf },
    Synthetic { cohort: SyntheticCohort, seed: u64 },
}

impl CohortSource {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        if let Some(s) = &config.synthetic {
            return Ok(CohortSource::Synthetic {
                cohort: s.clone(),
                seed: config.seed,
            });
        }
        let path = config
            .manifest
            .as_ref()
            .ok_or_else(|| Error::param("no cohort source configured"))?;
        Ok(CohortSource::Manifest {
            manifest: Manifest::read(path)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            CohortSource::Manifest { manifest, .. } => manifest.patients.len(),
            CohortSource::Synthetic { cohort, .. } => cohort.patients,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patient_id(&self, index: usize) -> String {
        match self {
            CohortSource::Manifest { manifest, .. } => manifest.patients[index].id.clone(),
            CohortSource::Synthetic { .. } => crate::phantom::patient_id(index),
        }
    }

    pub fn load(&self, index: usize) -> Result<PatientVolumes> {
        match self {
            CohortSource::Manifest { manifest, base_dir } => {
                PatientVolumes::load(&manifest.patients[index], base_dir)
            }
            CohortSource::Synthetic { cohort, seed } => {
                let p = synthesize_patient(cohort, *seed, index)?;
                Ok(PatientVolumes {
                    id: p.id,
                    ct: p.phantom.ct,
                    pet: p.phantom.pet,
                    tumor: p.phantom.tumor,
                    ln: p.phantom.ln,
                    streams: Some(Streams {
                        ct_proximal: p.ct_stream.clone(),
                        ef_proximal: p.ef_stream.clone(),
                        ct_distal: p.ct_stream,
                        ef_distal: p.ef_stream,
                    }),
                })
            }
        }
    }
}

/// Resample everything to the target spacing and clamp CT. PET stays raw
/// until cohort statistics are known.
pub fn preprocess_volumes(v: PatientVolumes, config: &PipelineConfig) -> Result<PatientVolumes> {
    let geom = *v.ct.geometry();
    for (what, g) in [
        ("PET", v.pet.geometry()),
        ("tumor mask", v.tumor.geometry()),
        ("lymph node mask", v.ln.geometry()),
    ] {
        geom.ensure_same(g, &format!("patient {} {what}", v.id))?;
    }
    let t = config.target_spacing;
    let ct = resample(&v.ct, t, Interpolation::Trilinear)?;
    let streams = match v.streams {
        Some(s) => Some(s.map(|g| {
            g.geometry().ensure_same(&geom, &format!("patient {} stream", v.id))?;
            resample(&g, t, Interpolation::Trilinear)
        })?),
        None => None,
    };
    Ok(PatientVolumes {
        ct: truncate_hu(&ct, config.hu_window[0], config.hu_window[1])?,
        pet: resample(&v.pet, t, Interpolation::Trilinear)?,
        tumor: resample_mask(&v.tumor, t)?,
        ln: resample_mask(&v.ln, t)?,
        streams,
        id: v.id,
    })
}

/// Stream volumes, synthesized by the oracle when the patient has none.
pub fn resolve_streams(
    v: &PatientVolumes,
    index: usize,
    config: &PipelineConfig,
) -> Result<Streams> {
    if let Some(s) = &v.streams {
        return Ok(s.clone());
    }
    let oracle = config.oracle.ok_or_else(|| {
        Error::param(format!(
            "patient {} lists no stream volumes and no oracle is configured",
            v.id
        ))
    })?;
    let phantom = Phantom::from_masks(v.ct.clone(), v.pet.clone(), v.tumor.clone(), v.ln.clone())?;
    let seeded = OracleSpec {
        seed: derive_seed(derive_seed(config.seed, index as u64), oracle.seed),
        ..oracle
    };
    let p = oracle_probmap(&phantom, &seeded)?;
    Ok(Streams {
        ct_proximal: p.clone(),
        ef_proximal: p.clone(),
        ct_distal: p.clone(),
        ef_distal: p,
    })
}

/// Second-stage rescoring of one patient's candidates. Returns the
/// candidates with scores replaced and the number of scorer fallbacks.
pub fn rescore_candidates(
    candidates: &[InstanceCandidate],
    ct: &VoxelGrid,
    pet: &VoxelGrid,
    dmap: Option<&SignedDistanceMap>,
    scorer: &dyn CandidateScorer,
    config: &PipelineConfig,
    patient_seed: u64,
) -> Result<(Vec<InstanceCandidate>, usize)> {
    let handcrafted = candidates
        .iter()
        .map(|c| handcrafted_features(c, ct, pet, dmap))
        .collect::<Result<Vec<_>>>()?;
    let patches: Vec<Option<CandidatePatch>> = if scorer.needs_patches() {
        candidates
            .par_iter()
            .map(|c| {
                let mut p = crop_patch(ct, pet, c, &config.patch)?;
                let jittered = jitter_bboxes(
                    &p.bboxes[0],
                    config.jitter_count,
                    config.jitter_range,
                    derive_seed(patient_seed, u64::from(c.id)),
                    config.patch.size,
                )?;
                p.bboxes.extend(jittered);
                Ok(Some(p))
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; candidates.len()]
    };
    let inputs: Vec<ScoringInput<'_>> = candidates
        .iter()
        .zip(&handcrafted)
        .zip(&patches)
        .map(|((c, h), p)| ScoringInput {
            candidate: c,
            patch: p.as_ref(),
            features: None,
            handcrafted: *h,
        })
        .collect();
    let outcomes = classify_candidates(&inputs, scorer);
    let fallbacks = outcomes.iter().filter(|o| o.fell_back).count();
    let rescored = candidates
        .iter()
        .zip(&outcomes)
        .map(|(c, o)| InstanceCandidate {
            score: o.score.q,
            ..c.clone()
        })
        .collect();
    Ok((rescored, fallbacks))
}

/// Label candidates by matching and reduce to the score/hit table.
pub fn label_and_hits(
    candidates: &mut [InstanceCandidate],
    gts: &[GroundTruthInstance],
    criterion: &MatchCriterion,
) -> Result<PatientHits> {
    let m = match_instances(candidates, gts, criterion)?;
    for (c, &h) in candidates.iter_mut().zip(&m.hits) {
        c.label = Some(h);
    }
    Ok(PatientHits::from_match(candidates, &m, gts.len()))
}

/// Everything one patient contributes to the cohort outputs.
#[derive(Debug, Clone)]
pub struct PatientOutcome {
    pub id: String,
    /// Final (second-stage) scores and labels.
    pub candidates: Vec<InstanceCandidate>,
    pub gts: Vec<GroundTruthInstance>,
    pub hits: PatientHits,
    pub first_stage_hits: PatientHits,
    pub fallbacks: usize,
}

impl PatientOutcome {
    pub fn candidate_records(&self) -> Vec<CandidateRecord> {
        self.candidates
            .iter()
            .map(|c| CandidateRecord::from_candidate(&self.id, c))
            .collect()
    }

    pub fn gt_records(&self) -> Vec<GtRecord> {
        self.gts.iter().map(|g| GtRecord::from_instance(&self.id, g)).collect()
    }
}

/// Run one preprocessed patient through the remaining stages.
pub fn process_patient(
    index: usize,
    v: &PatientVolumes,
    pet_stats: &CohortStats,
    config: &PipelineConfig,
    scorer: &dyn CandidateScorer,
) -> Result<PatientOutcome> {
    let pet = normalize_pet(&v.pet, pet_stats.mean, pet_stats.std)?;
    let dmap = signed_edt(&v.tumor)?;
    let partition = stratify(&dmap, config.d_mm)?;
    let s = resolve_streams(v, index, config)?;
    let streams = StreamSet::new(s.ct_proximal, s.ef_proximal, s.ct_distal, s.ef_distal, partition)?;
    let fused = fuse_late(&streams)?;
    let first = extract_candidates(&fused, &config.candidate_params(), Some(&v.tumor))?;
    let gts = gt_instances(&v.ln, config.connectivity);

    let mut first_labeled = first.clone();
    let first_stage_hits = label_and_hits(&mut first_labeled, &gts, &config.match_criterion)?;

    let patient_seed = derive_seed(config.seed, index as u64);
    let scorer_out = rescore_candidates(&first, &v.ct, &pet, Some(&dmap), scorer, config, patient_seed)?;
    let (mut candidates, fallbacks) = scorer_out;
    let hits = label_and_hits(&mut candidates, &gts, &config.match_criterion)?;
    Ok(PatientOutcome {
        id: v.id.clone(),
        candidates,
        gts,
        hits,
        first_stage_hits,
        fallbacks,
    })
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))
}

/// Pooled PET statistics over every patient that loads, merged in cohort order.
pub fn cohort_pet_stats(source: &CohortSource, config: &PipelineConfig) -> Result<CohortStats> {
    let pool = build_pool(config.workers)?;
    let parts: Vec<Option<StatsAccumulator>> = pool.install(|| {
        (0..source.len())
            .into_par_iter()
            .map(|i| {
                let v = source.load(i).and_then(|v| preprocess_volumes(v, config));
                match v {
                    Ok(v) => {
                        let mut acc = StatsAccumulator::new();
                        acc.push_grid(&v.pet, None).ok()?;
                        Some(acc)
                    }
                    Err(e) => {
                        log::warn!("patient {} skipped for PET statistics: {e}", source.patient_id(i));
                        None
                    }
                }
            })
            .collect()
    });
    let mut total = StatsAccumulator::new();
    for p in parts.iter().flatten() {
        total.merge(p);
    }
    total.finish()
}

/// Run the whole pipeline in memory. Per-patient failures are recorded in
/// the report rather than aborting the run.
pub fn run_cohort(config: &PipelineConfig) -> Result<(PipelineReport, Vec<PatientOutcome>)> {
    config.validate()?;
    let source = CohortSource::from_config(config)?;
    if source.is_empty() {
        return Err(Error::EmptyInput("the cohort has no patients".into()));
    }
    let pet_stats = cohort_pet_stats(&source, config)?;
    let scorer = config.scorer.build();
    let pool = build_pool(config.workers)?;
    let results: Vec<Result<PatientOutcome>> = pool.install(|| {
        (0..source.len())
            .into_par_iter()
            .map(|i| {
                let v = preprocess_volumes(source.load(i)?, config)?;
                process_patient(i, &v, &pet_stats, config, scorer.as_ref())
            })
            .collect()
    });

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::error!("patient {} failed: {e}", source.patient_id(i));
                failures.push(PatientFailure {
                    patient_id: source.patient_id(i),
                    error: e.to_string(),
                });
            }
        }
    }
    let report = PipelineReport::assemble(config, scorer.name(), pet_stats, &outcomes, failures)?;
    Ok((report, outcomes))
}

/// Run the pipeline and write `candidates.csv`, `gt.csv`, `report.json`,
/// `pr.svg` and `froc.svg` into the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let (report, outcomes) = run_cohort(config)?;
    write_outputs(&config.output_dir, &report, &outcomes)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c: PipelineConfig = serde_json::from_str(r#"{"synthetic":{"patients":1}}"#).unwrap();
        assert_eq!(c.d_mm, 70.0);
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.connectivity, Connectivity::TwentySix);
        assert_eq!(c.min_voxels, 8);
        assert_eq!(c.hu_window, [-200.0, 300.0]);
        assert_eq!(c.target_spacing, [1.0, 1.0, 2.5]);
        assert_eq!(c.froc_budgets, vec![2.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.operating_precision, 0.15);
        c.validate().unwrap();
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"dmm":70}"#).is_err());
    }

    #[test]
    fn config_needs_one_source() {
        assert!(PipelineConfig::default().validate().is_err());
        let both = PipelineConfig {
            manifest: Some("m.json".into()),
            synthetic: Some(serde_json::from_str(r#"{"patients":1}"#).unwrap()),
            ..Default::default()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn config_ranges() {
        let base: PipelineConfig = serde_json::from_str(r#"{"synthetic":{"patients":1}}"#).unwrap();
        for bad in [
            PipelineConfig { tau: 1.5, ..base.clone() },
            PipelineConfig { d_mm: -1.0, ..base.clone() },
            PipelineConfig { hu_window: [300.0, -200.0], ..base.clone() },
            PipelineConfig { min_voxels: 0, ..base.clone() },
            PipelineConfig { froc_budgets: vec![], ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
