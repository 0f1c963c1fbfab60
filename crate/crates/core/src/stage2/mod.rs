//! Second stage: candidate patches, feature assembly and rescoring.
//!
//! Each candidate gets a local CT/PET patch, an axial CT slice for global
//! context and optionally externally computed feature vectors. A
//! [`CandidateScorer`] turns these into a probability `q` that replaces the
//! first-stage score.

mod augment;
mod patch;
mod scorer;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{Geometry, VolumeKind, VoxelGrid};

pub use augment::{apply_augmentation, augment_patch, AugmentOp, FLIP_PROBABILITY, ROTATION_PROBABILITY};
pub use patch::{crop_global_slice, crop_patch, jitter_bboxes, PatchConfig, VoxelBox};
pub use scorer::{
    classify_candidates, handcrafted_features, BaselineScorer, BaselineWeights, CandidateScorer,
    ExternalScorer, FirstStageScorer, HandcraftedFeatures, ScorerKind, ScoringInput,
    ScoringOutcome,
};

pub const LOCAL_FEATURE_LEN: usize = 1024;
pub const GLOBAL_FEATURE_LEN: usize = 171;
pub const DEFAULT_JITTER_RANGE: u32 = 3;

/// Row-major 2D array, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub dims: [usize; 2],
    pub values: Vec<f32>,
}

impl Slice2D {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.dims[0] + x]
    }

    /// Single-slice CT grid for export.
    pub fn to_grid(&self, spacing: [f64; 2]) -> Result<VoxelGrid> {
        let g = Geometry::with_spacing([self.dims[0], self.dims[1], 1], [spacing[0], spacing[1], 1.0])?;
        VoxelGrid::new(g, VolumeKind::CtHu, self.values.clone())
    }
}

/// Everything the second stage sees for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePatch {
    pub candidate_id: u32,
    pub ct_patch: VoxelGrid,
    pub pet_patch: VoxelGrid,
    pub global_slice: Slice2D,
    /// Candidate box in patch voxels; the first entry is the unjittered box.
    pub bboxes: Vec<VoxelBox>,
    pub label: Option<bool>,
    /// Per-axis resize factor applied when cropping (1 = none).
    pub scale: [f64; 3],
    pub transforms: Vec<AugmentOp>,
}

/// Local and global feature vectors for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub local_vec: Vec<f64>,
    pub global_vec: Vec<f64>,
    pub assembled: Vec<f64>,
}

/// Concatenate local then global features, enforcing both lengths.
pub fn assemble_feature(local_vec: Vec<f64>, global_vec: Vec<f64>) -> Result<FeatureBundle> {
    if local_vec.len() != LOCAL_FEATURE_LEN || global_vec.len() != GLOBAL_FEATURE_LEN {
        return Err(Error::param(format!(
            "feature lengths must be {LOCAL_FEATURE_LEN} and {GLOBAL_FEATURE_LEN}, got {} and {}",
            local_vec.len(),
            global_vec.len()
        )));
    }
    let mut assembled = Vec::with_capacity(LOCAL_FEATURE_LEN + GLOBAL_FEATURE_LEN);
    assembled.extend_from_slice(&local_vec);
    assembled.extend_from_slice(&global_vec);
    Ok(FeatureBundle {
        local_vec,
        global_vec,
        assembled,
    })
}

/// Second-stage probability for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub candidate_id: u32,
    pub q: f64,
}

impl ClassifierScore {
    pub fn new(candidate_id: u32, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::param(format!(
                "score {q} for candidate {candidate_id} lies outside [0, 1]"
            )));
        }
        Ok(ClassifierScore { candidate_id, q })
    }
}

/// Write `candidate_id,<prefix>0,...` rows.
pub fn write_feature_csv<W: Write>(out: W, prefix: &str, rows: &[(u32, &[f64])]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = vec!["candidate_id".to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (id, values) in rows {
        if values.len() != width {
            return Err(Error::param("feature rows differ in length"));
        }
        let mut rec = vec![id.to_string()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

/// Read feature rows of exactly `width` values after the candidate id.
pub fn read_feature_csv<R: Read>(input: R, width: usize) -> Result<Vec<(u32, Vec<f64>)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != width + 1 || &header[0] != "candidate_id" {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "feature CSV needs `candidate_id` plus {width} columns, found {} columns",
                header.len()
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let parse_err = |field: &str| Error::Format {
            offset,
            message: format!("unparsable feature value `{field}`"),
        };
        let id: u32 = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(f)))
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, values));
    }
    Ok(rows)
}

/// Pair local and global CSV rows by candidate id.
pub fn features_from_csv<R1: Read, R2: Read>(local: R1, global: R2) -> Result<Vec<(u32, FeatureBundle)>> {
    let local = read_feature_csv(local, LOCAL_FEATURE_LEN)?;
    let mut global: std::collections::BTreeMap<u32, Vec<f64>> =
        read_feature_csv(global, GLOBAL_FEATURE_LEN)?.into_iter().collect();
    local
        .into_iter()
        .map(|(id, v)| {
            let t = global
                .remove(&id)
                .ok_or_else(|| Error::param(format!("candidate {id} has no global feature row")))?;
            Ok((id, assemble_feature(v, t)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_features() {
        let b = assemble_feature(vec![0.0; 1024], vec![0.0; 171]).unwrap();
        assert_eq!(b.assembled, vec![0.0; 1195]);
    }

    #[test]
    fn concatenation_order() {
        let v: Vec<f64> = (0..1024).map(f64::from).collect();
        let t: Vec<f64> = (0..171).map(|i| -f64::from(i)).collect();
        let b = assemble_feature(v.clone(), t.clone()).unwrap();
        assert_eq!(&b.assembled[..1024], &v[..]);
        assert_eq!(&b.assembled[1024..], &t[..]);
        assert_eq!(b.assembled[1024], 0.0);
        assert_eq!(b.assembled[1025], -1.0);
    }

    #[test]
    fn wrong_lengths() {
        assert!(assemble_feature(vec![0.0; 1023], vec![0.0; 171]).is_err());
        assert!(assemble_feature(vec![0.0; 1024], vec![0.0; 172]).is_err());
    }

    #[test]
    fn feature_csv_round_trip() {
        let a = vec![0.5; 1024];
        let b = vec![1.25; 1024];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, "v", &[(3, &a), (7, &b)]).unwrap();
        let rows = read_feature_csv(&buf[..], 1024).unwrap();
        assert_eq!(rows, vec![(3, a), (7, b)]);
        assert!(read_feature_csv(&buf[..], 171).is_err());
    }

    #[test]
    fn classifier_score_range() {
        assert!(ClassifierScore::new(1, 1.0).is_ok());
        assert!(ClassifierScore::new(1, 1.01).is_err());
        assert!(ClassifierScore::new(1, f64::NAN).is_err());
    }
}
