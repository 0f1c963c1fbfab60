//! Tabular and volumetric serialization of instances.
//!
//! Candidate CSV columns:
//! `patient_id,candidate_id,cx_mm,cy_mm,cz_mm,volume_mm3,radius_mm,score,label`
//! with `label` written as `1`/`0` and left empty when unknown. Voxel sets
//! travel separately as a label-map VVOL whose samples are candidate ids.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{GroundTruthInstance, InstanceCandidate};
use crate::error::{Error, Result};
use crate::volgrid::{Geometry, VolumeKind, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub patient_id: String,
    pub candidate_id: u32,
    pub cx_mm: f64,
    pub cy_mm: f64,
    pub cz_mm: f64,
    pub volume_mm3: f64,
    pub radius_mm: f64,
    pub score: f64,
    #[serde(with = "label_field")]
    pub label: Option<bool>,
}

impl CandidateRecord {
    pub fn from_candidate(patient_id: &str, c: &InstanceCandidate) -> Self {
        CandidateRecord {
            patient_id: patient_id.to_string(),
            candidate_id: c.id,
            cx_mm: c.centroid_mm[0],
            cy_mm: c.centroid_mm[1],
            cz_mm: c.centroid_mm[2],
            volume_mm3: c.volume_mm3,
            radius_mm: c.radius_mm,
            score: c.score,
            label: c.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub patient_id: String,
    pub gt_id: u32,
    pub cx_mm: f64,
    pub cy_mm: f64,
    pub cz_mm: f64,
    pub volume_mm3: f64,
    pub radius_mm: f64,
}

impl GtRecord {
    pub fn from_instance(patient_id: &str, g: &GroundTruthInstance) -> Self {
        GtRecord {
            patient_id: patient_id.to_string(),
            gt_id: g.id,
            cx_mm: g.centroid_mm[0],
            cy_mm: g.centroid_mm[1],
            cz_mm: g.centroid_mm[2],
            volume_mm3: g.volume_mm3,
            radius_mm: g.radius_mm,
        }
    }
}

mod label_field {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match v {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        let s = String::deserialize(d)?;
        match s.trim() {
            "" => Ok(None),
            "1" | "true" => Ok(Some(true)),
            "0" | "false" => Ok(Some(false)),
            other => Err(serde::de::Error::custom(format!("bad label `{other}`"))),
        }
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = writer(out);
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

const CANDIDATE_HEADER: &[&str] = &[
    "patient_id",
    "candidate_id",
    "cx_mm",
    "cy_mm",
    "cz_mm",
    "volume_mm3",
    "radius_mm",
    "score",
    "label",
];

const GT_HEADER: &[&str] = &[
    "patient_id",
    "gt_id",
    "cx_mm",
    "cy_mm",
    "cz_mm",
    "volume_mm3",
    "radius_mm",
];

pub fn write_candidates_csv<W: Write>(out: W, rows: &[CandidateRecord]) -> Result<()> {
    write_rows(out, rows, CANDIDATE_HEADER)
}

pub fn read_candidates_csv<R: Read>(input: R) -> Result<Vec<CandidateRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, CANDIDATE_HEADER)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_gt_csv<W: Write>(out: W, rows: &[GtRecord]) -> Result<()> {
    write_rows(out, rows, GT_HEADER)
}

pub fn read_gt_csv<R: Read>(input: R) -> Result<Vec<GtRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, GT_HEADER)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().eq(expected.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Format {
            offset: 0,
            message: format!(
                "unexpected CSV header `{}`, expected `{}`",
                found.iter().collect::<Vec<_>>().join(","),
                expected.join(",")
            ),
        })
    }
}

/// Volume whose samples hold candidate ids (0 = background).
pub fn label_map(geometry: &Geometry, candidates: &[InstanceCandidate]) -> Result<VoxelGrid> {
    let mut values = vec![0f32; geometry.len()];
    for c in candidates {
        for &i in &c.voxel_indices {
            values[i] = c.id as f32;
        }
    }
    VoxelGrid::new(*geometry, VolumeKind::Generic, values)
}

/// Reattach voxel sets from a label map to one patient's CSV records.
pub fn candidates_from_label_map(
    labels: &VoxelGrid,
    records: &[CandidateRecord],
) -> Result<Vec<InstanceCandidate>> {
    let mut voxels: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &v) in labels.values().iter().enumerate() {
        if v > 0.0 {
            voxels.entry(v as u32).or_default().push(i);
        }
    }
    records
        .iter()
        .map(|r| {
            let voxel_indices = voxels.remove(&r.candidate_id).ok_or_else(|| {
                Error::Invariant(format!(
                    "candidate {} of patient {} has no voxels in the label map",
                    r.candidate_id, r.patient_id
                ))
            })?;
            Ok(InstanceCandidate {
                id: r.candidate_id,
                voxel_indices,
                centroid_mm: [r.cx_mm, r.cy_mm, r.cz_mm],
                volume_mm3: r.volume_mm3,
                radius_mm: r.radius_mm,
                score: r.score,
                label: r.label,
            })
        })
        .collect()
}
