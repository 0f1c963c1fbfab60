//! Pluggable candidate scorers.

use std::path::PathBuf;
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_feature_csv, CandidatePatch, ClassifierScore, FeatureBundle};
use crate::distfield::SignedDistanceMap;
use crate::error::{Error, Result};
use crate::instancer::InstanceCandidate;
use crate::volgrid::{write_volume, VoxelGrid};

/// Hand-crafted per-candidate measurements used by the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandcraftedFeatures {
    /// Mean normalized PET over the candidate voxels.
    pub mean_pet: f64,
    pub radius_mm: f64,
    /// Absolute signed distance to the tumor boundary at the centroid.
    pub tumor_distance_mm: f64,
    /// Mean truncated CT over the candidate voxels.
    pub mean_ct_hu: f64,
}

/// Measure the baseline features. Without a distance map the tumor distance is 0.
pub fn handcrafted_features(
    cand: &InstanceCandidate,
    ct: &VoxelGrid,
    pet: &VoxelGrid,
    dmap: Option<&SignedDistanceMap>,
) -> Result<HandcraftedFeatures> {
    ct.geometry().ensure_same(pet.geometry(), "CT/PET feature source")?;
    let tumor_distance_mm = match dmap {
        Some(d) => {
            d.geometry().ensure_same(ct.geometry(), "distance map feature source")?;
            let [x, y, z] = ct.geometry().nearest_voxel(cand.centroid_mm).ok_or_else(|| {
                Error::param(format!("candidate {} centroid lies outside the volume", cand.id))
            })?;
            d.get(x, y, z).abs()
        }
        None => 0.0,
    };
    Ok(HandcraftedFeatures {
        mean_pet: pet.mean_at(&cand.voxel_indices),
        radius_mm: cand.radius_mm,
        tumor_distance_mm,
        mean_ct_hu: ct.mean_at(&cand.voxel_indices),
    })
}

/// What a scorer may look at for one candidate.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInput<'a> {
    pub candidate: &'a InstanceCandidate,
    pub patch: Option<&'a CandidatePatch>,
    pub features: Option<&'a FeatureBundle>,
    pub handcrafted: HandcraftedFeatures,
}

/// Maps a candidate to a probability in `[0, 1]`.
pub trait CandidateScorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64>;

    /// Whether inputs must carry cropped patches.
    fn needs_patches(&self) -> bool {
        false
    }

    /// One result per input, in input order.
    fn score_batch(&self, inputs: &[ScoringInput<'_>]) -> Vec<Result<f64>> {
        inputs.par_iter().map(|i| self.score(i)).collect()
    }
}

/// Keeps the first-stage mean probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstStageScorer;

impl CandidateScorer for FirstStageScorer {
    fn name(&self) -> &str {
        "first-stage"
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        Ok(input.candidate.score)
    }
}

/// Logistic weights of the baseline scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineWeights {
    pub bias: f64,
    pub mean_pet: f64,
    pub radius_mm: f64,
    pub tumor_distance_mm: f64,
    pub mean_ct_hu: f64,
}

impl Default for BaselineWeights {
    /// Metabolic activity dominates; larger nodes, nodes near the tumor and
    /// soft-tissue density push the score up mildly.
    fn default() -> Self {
        BaselineWeights {
            bias: -1.0,
            mean_pet: 2.0,
            radius_mm: 0.05,
            tumor_distance_mm: -0.005,
            mean_ct_hu: 0.002,
        }
    }
}

/// `q = sigmoid(bias + w . features)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineScorer {
    pub weights: BaselineWeights,
}

impl BaselineScorer {
    pub fn logit(&self, f: &HandcraftedFeatures) -> f64 {
        let w = &self.weights;
        w.bias
            + w.mean_pet * f.mean_pet
            + w.radius_mm * f.radius_mm
            + w.tumor_distance_mm * f.tumor_distance_mm
            + w.mean_ct_hu * f.mean_ct_hu
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CandidateScorer for BaselineScorer {
    fn name(&self) -> &str {
        "baseline"
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        let q = sigmoid(self.logit(&input.handcrafted));
        if q.is_nan() {
            return Err(Error::Scorer(format!(
                "baseline produced NaN for candidate {}",
                input.candidate.id
            )));
        }
        Ok(q)
    }
}

/// Runs an executable once per batch.
///
/// The program receives a scratch directory as its last argument holding
/// `<id>_ct.vvol`, `<id>_pet.vvol`, `<id>_global.vvol`, `candidates.csv`
/// (id, first-stage score, hand-crafted features) and, when present,
/// `local_features.csv` / `global_features.csv`. It must write
/// `scores.csv` with header `candidate_id,q` into the same directory.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct CandidateRow {
    candidate_id: u32,
    first_stage_score: f64,
    mean_pet: f64,
    radius_mm: f64,
    tumor_distance_mm: f64,
    mean_ct_hu: f64,
}

#[derive(Deserialize)]
struct ScoreRow {
    candidate_id: u32,
    q: f64,
}

impl ExternalScorer {
    fn stage(&self, dir: &std::path::Path, inputs: &[ScoringInput<'_>]) -> Result<()> {
        let path = dir.join("candidates.csv");
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        for i in inputs {
            let f = i.handcrafted;
            w.serialize(CandidateRow {
                candidate_id: i.candidate.id,
                first_stage_score: i.candidate.score,
                mean_pet: f.mean_pet,
                radius_mm: f.radius_mm,
                tumor_distance_mm: f.tumor_distance_mm,
                mean_ct_hu: f.mean_ct_hu,
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        for i in inputs {
            let Some(p) = i.patch else { continue };
            let id = i.candidate.id;
            write_volume(&p.ct_patch, dir.join(format!("{id}_ct.vvol")))?;
            write_volume(&p.pet_patch, dir.join(format!("{id}_pet.vvol")))?;
            let sp = p.ct_patch.geometry().spacing;
            write_volume(&p.global_slice.to_grid([sp[0], sp[1]])?, dir.join(format!("{id}_global.vvol")))?;
        }

        let with_features: Vec<(u32, &FeatureBundle)> = inputs
            .iter()
            .filter_map(|i| i.features.map(|f| (i.candidate.id, f)))
            .collect();
        if !with_features.is_empty() {
            let local: Vec<(u32, &[f64])> =
                with_features.iter().map(|(id, f)| (*id, &f.local_vec[..])).collect();
            let global: Vec<(u32, &[f64])> =
                with_features.iter().map(|(id, f)| (*id, &f.global_vec[..])).collect();
            let lp = dir.join("local_features.csv");
            write_feature_csv(std::fs::File::create(&lp).map_err(|e| Error::io(&lp, e))?, "v", &local)?;
            let gp = dir.join("global_features.csv");
            write_feature_csv(std::fs::File::create(&gp).map_err(|e| Error::io(&gp, e))?, "t", &global)?;
        }
        Ok(())
    }

    fn run(&self, inputs: &[ScoringInput<'_>]) -> Result<Vec<ScoreRow>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io("<scratch dir>", e))?;
        self.stage(dir.path(), inputs)?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(dir.path())
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !output.status.success() {
            return Err(Error::Scorer(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let scores = dir.path().join("scores.csv");
        let mut r = csv::Reader::from_path(&scores)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<ScoreRow>, _>>()?;
        Ok(rows)
    }
}

impl CandidateScorer for ExternalScorer {
    fn name(&self) -> &str {
        "external"
    }

    fn needs_patches(&self) -> bool {
        true
    }

    fn score(&self, input: &ScoringInput<'_>) -> Result<f64> {
        self.score_batch(std::slice::from_ref(input)).remove(0)
    }

    fn score_batch(&self, inputs: &[ScoringInput<'_>]) -> Vec<Result<f64>> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let rows = match self.run(inputs) {
            Ok(rows) => rows,
            Err(e) => {
                let msg = e.to_string();
                return inputs.iter().map(|_| Err(Error::Scorer(msg.clone()))).collect();
            }
        };
        let by_id: std::collections::HashMap<u32, f64> =
            rows.into_iter().map(|r| (r.candidate_id, r.q)).collect();
        inputs
            .iter()
            .map(|i| {
                by_id.get(&i.candidate.id).copied().ok_or_else(|| {
                    Error::Scorer(format!("no score returned for candidate {}", i.candidate.id))
                })
            })
            .collect()
    }
}

/// Scorer selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScorerKind {
    FirstStage,
    Baseline {
        #[serde(default)]
        weights: BaselineWeights,
    },
    External {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for ScorerKind {
    fn default() -> Self {
        ScorerKind::Baseline {
            weights: BaselineWeights::default(),
        }
    }
}

impl ScorerKind {
    pub fn build(&self) -> Box<dyn CandidateScorer> {
        match self {
            ScorerKind::FirstStage => Box::new(FirstStageScorer),
            ScorerKind::Baseline { weights } => Box::new(BaselineScorer { weights: *weights }),
            ScorerKind::External { program, args } => Box::new(ExternalScorer {
                program: program.clone(),
                args: args.clone(),
            }),
        }
    }
}

/// Result of rescoring one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringOutcome {
    pub score: ClassifierScore,
    /// The scorer failed and the first-stage score was kept.
    pub fell_back: bool,
    pub error: Option<String>,
}

/// Score every candidate. A failing or out-of-range score falls back to the
/// candidate's first-stage score and is reported in the outcome.
pub fn classify_candidates(
    inputs: &[ScoringInput<'_>],
    scorer: &dyn CandidateScorer,
) -> Vec<ScoringOutcome> {
    let results = scorer.score_batch(inputs);
    inputs
        .iter()
        .zip(results)
        .map(|(input, r)| {
            let id = input.candidate.id;
            match r.and_then(|q| ClassifierScore::new(id, q)) {
                Ok(score) => ScoringOutcome {
                    score,
                    fell_back: false,
                    error: None,
                },
                Err(e) => {
                    log::warn!("scorer {} failed on candidate {id}: {e}", scorer.name());
                    ScoringOutcome {
                        score: ClassifierScore {
                            candidate_id: id,
                            q: input.candidate.score,
                        },
                        fell_back: true,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}
