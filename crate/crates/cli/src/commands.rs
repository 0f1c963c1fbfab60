use std::collections::HashMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use osln::distfield::{signed_edt, stratify, RegionPartition};
use osln::instancer::{
    candidates_from_label_map, extract_candidates, gt_instances, label_map, read_candidates_csv,
    read_gt_csv, write_candidates_csv, write_gt_csv, CandidateRecord, GtRecord,
};
use osln::matcheval::{evaluate, PatientHits};
use osln::phantom::{derive_seed, synthesize_patient, SyntheticCohort};
use osln::pipeline::{
    cohort_pet_stats, label_and_hits, preprocess_volumes, rescore_candidates, resolve_streams,
    run_pipeline, CohortSource, Manifest, ManifestEntry, PipelineConfig, StreamPaths,
};
use osln::stage2::ScorerKind;
use osln::streamfusion::{fuse_late, StreamSet};
use osln::volgrid::{
    normalize_pet, read_volume, write_volume, BinaryMask, VolumeKind, VolumeRef, VoxelGrid,
};

use crate::Command;

fn read_grid(path: &Path, kind: Option<VolumeKind>) -> Result<VoxelGrid> {
    let grid = read_volume(path)
        .and_then(|v| v.into_grid())
        .with_context(|| format!("reading {}", path.display()))?;
    if let Some(k) = kind {
        grid.ensure_kind(k).with_context(|| format!("checking {}", path.display()))?;
    }
    Ok(grid)
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    read_volume(path)
        .and_then(|v| v.into_mask())
        .with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_vol<'a>(volume: impl Into<VolumeRef<'a>>, path: &Path) -> Result<()> {
    drop(create(path)?);
    write_volume(volume, path).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Preprocess {
            params,
            manifest,
            out,
        } => {
            let mut c = params.resolve()?;
            c.manifest = Some(manifest);
            c.synthetic = None;
            preprocess(&c, &out)
        }
        Command::Distmap {
            params,
            tumor,
            out,
            proximal,
            distal,
        } => {
            let c = params.resolve()?;
            let dmap = signed_edt(&read_mask(&tumor)?)?;
            write_vol(&dmap.to_grid(), &out)?;
            let part = stratify(&dmap, c.d_mm)?;
            if let Some(p) = proximal {
                write_vol(&part.proximal, &p)?;
            }
            if let Some(p) = distal {
                write_vol(&part.distal, &p)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fuse {
            params,
            ct_proximal,
            ef_proximal,
            ct_distal,
            ef_distal,
            proximal,
            out,
        } => {
            let c = params.resolve()?;
            let p = Some(VolumeKind::Probability);
            let streams = StreamSet::new(
                read_grid(&ct_proximal, p)?,
                read_grid(&ef_proximal, p)?,
                read_grid(&ct_distal, p)?,
                read_grid(&ef_distal, p)?,
                RegionPartition::from_proximal(read_mask(&proximal)?, c.d_mm),
            )?;
            write_vol(&fuse_late(&streams)?, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Extract {
            params,
            prob,
            tumor,
            ct,
            pet,
            patient_id,
            patient_index,
            out_csv,
            out_labels,
        } => {
            let c = params.resolve()?;
            let prob = read_grid(&prob, Some(VolumeKind::Probability))?;
            let tumor = tumor.as_deref().map(read_mask).transpose()?;
            let mut cands = extract_candidates(&prob, &c.candidate_params(), tumor.as_ref())?;
            if c.scorer != ScorerKind::FirstStage {
                let (Some(ct), Some(pet)) = (ct, pet) else {
                    bail!("rescoring needs --ct and --pet (or --scorer first-stage)");
                };
                let ct = read_grid(&ct, Some(VolumeKind::CtHu))?;
                let pet = read_grid(&pet, None)?;
                let dmap = tumor.as_ref().map(signed_edt).transpose()?;
                let scorer = c.scorer.build();
                let (rescored, fallbacks) = rescore_candidates(
                    &cands,
                    &ct,
                    &pet,
                    dmap.as_ref(),
                    scorer.as_ref(),
                    &c,
                    derive_seed(c.seed, patient_index as u64),
                )?;
                if fallbacks > 0 {
                    eprintln!("{fallbacks} candidates kept their first-stage score");
                }
                cands = rescored;
            }
            let rows: Vec<_> = cands
                .iter()
                .map(|k| CandidateRecord::from_candidate(&patient_id, k))
                .collect();
            write_candidates_csv(create(&out_csv)?, &rows)?;
            write_vol(&label_map(prob.geometry(), &cands)?, &out_labels)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Match {
            params,
            candidates,
            labels,
            gt,
            out,
            gt_out,
            patient_id,
        } => {
            let c = params.resolve()?;
            let records = read_candidates_csv(File::open(&candidates)?)?;
            let id = match (&patient_id, records.first()) {
                (Some(id), _) => id.clone(),
                (None, Some(r)) => r.patient_id.clone(),
                (None, None) => bail!("no candidates; pass --patient-id"),
            };
            if records.iter().any(|r| r.patient_id != id) {
                bail!("match works on one patient at a time");
            }
            let labels = read_grid(&labels, None)?;
            let ln = read_mask(&gt)?;
            labels.geometry().ensure_same(ln.geometry(), "label map vs ground truth")?;
            let mut cands = candidates_from_label_map(&labels, &records)?;
            let gts = gt_instances(&ln, c.connectivity);
            let hits = label_and_hits(&mut cands, &gts, &c.match_criterion)?;
            let rows: Vec<_> = cands
                .iter()
                .map(|k| CandidateRecord::from_candidate(&id, k))
                .collect();
            write_candidates_csv(create(&out)?, &rows)?;
            if let Some(p) = gt_out {
                let rows: Vec<_> = gts.iter().map(|g| GtRecord::from_instance(&id, g)).collect();
                write_gt_csv(create(&p)?, &rows)?;
            }
            let tp = hits.detections.iter().filter(|d| d.1).count();
            println!("{id}: {tp} of {} nodes hit by {} candidates", hits.n_gt, rows.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Froc {
            params,
            candidates,
            gt,
            out,
        } => {
            let c = params.resolve()?;
            froc(&c, &candidates, &gt, &out)
        }
        Command::Phantom {
            patients,
            seed,
            spec,
            out,
        } => {
            let mut cohort: SyntheticCohort = match spec {
                Some(p) => serde_json::from_str(
                    &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )
                .with_context(|| format!("parsing {}", p.display()))?,
                None => serde_json::from_str("{}")?,
            };
            cohort.patients = patients;
            phantom(&cohort, seed, &out)
        }
        Command::Pipeline {
            params,
            manifest,
            patients,
            out,
        } => {
            let mut c = params.resolve()?;
            if let Some(m) = manifest {
                c.manifest = Some(m);
                c.synthetic = None;
            }
            if let Some(n) = patients {
                let mut s = c
                    .synthetic
                    .take()
                    .unwrap_or(serde_json::from_str("{}")?);
                s.patients = n;
                c.synthetic = Some(s);
                c.manifest = None;
            }
            if let Some(o) = out {
                c.output_dir = o;
            }
            let report = run_pipeline(&c)?;
            println!(
                "{} patients, {} failed, {} candidates",
                report.n_patients,
                report.failures.len(),
                report.n_extracted
            );
            if let Some(m) = &report.metrics {
                for b in &m.froc_budgets {
                    println!("recall at {} FP/patient: {:.4}", b.budget, b.recall);
                }
                println!("mFROC: {:.4}", m.mfroc);
            }
            println!("outputs in {}", c.output_dir.display());
            Ok(if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn preprocess(c: &PipelineConfig, out: &Path) -> Result<ExitCode> {
    c.validate()?;
    let source = CohortSource::from_config(c)?;
    let stats = cohort_pet_stats(&source, c)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut failed = 0;
    for i in 0..source.len() {
        let step = || -> Result<()> {
            let v = preprocess_volumes(source.load(i)?, c)?;
            let pet = normalize_pet(&v.pet, stats.mean, stats.std)?;
            let streams = resolve_streams(&v, i, c)?;
            let f = |suffix: &str| out.join(format!("{}_{suffix}.vvol", v.id));
            write_volume(&v.ct, f("ct"))?;
            write_volume(&pet, f("pet"))?;
            write_volume(&v.tumor, f("tumor"))?;
            write_volume(&v.ln, f("ln"))?;
            write_volume(&streams.ct_proximal, f("ct_proximal"))?;
            write_volume(&streams.ef_proximal, f("ef_proximal"))?;
            write_volume(&streams.ct_distal, f("ct_distal"))?;
            write_volume(&streams.ef_distal, f("ef_distal"))?;
            Ok(())
        };
        if let Err(e) = step() {
            eprintln!("patient {} failed: {e:#}", source.patient_id(i));
            failed += 1;
        }
    }
    write_json(&out.join("pet_stats.json"), &stats)?;
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn froc(c: &PipelineConfig, candidates: &[PathBuf], gt: &[PathBuf], out: &Path) -> Result<ExitCode> {
    let mut order: Vec<String> = Vec::new();
    let mut n_gt: HashMap<String, usize> = HashMap::new();
    let mut detections: HashMap<String, Vec<(f64, bool)>> = HashMap::new();
    for p in gt {
        for r in read_gt_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)? {
            if !n_gt.contains_key(&r.patient_id) {
                order.push(r.patient_id.clone());
            }
            *n_gt.entry(r.patient_id).or_default() += 1;
        }
    }
    for p in candidates {
        let rows = read_candidates_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
        for r in rows {
            let Some(label) = r.label else {
                bail!(
                    "candidate {} of patient {} has no label; run `osln match` first",
                    r.candidate_id,
                    r.patient_id
                );
            };
            if !n_gt.contains_key(&r.patient_id) && !detections.contains_key(&r.patient_id) {
                order.push(r.patient_id.clone());
            }
            detections.entry(r.patient_id).or_default().push((r.score, label));
        }
    }
    let hits = order
        .iter()
        .map(|id| {
            PatientHits::new(
                detections.remove(id).unwrap_or_default(),
                n_gt.get(id).copied().unwrap_or(0),
            )
        })
        .collect::<osln::Result<Vec<_>>>()?;
    let metrics = evaluate(&hits, &c.eval_config())?;
    write_json(out, &metrics)?;
    for b in &metrics.froc_budgets {
        println!("recall at {} FP/patient: {:.4}", b.budget, b.recall);
    }
    println!("mFROC: {:.4}", metrics.mfroc);
    Ok(ExitCode::SUCCESS)
}

fn phantom(cohort: &SyntheticCohort, seed: u64, out: &Path) -> Result<ExitCode> {
    cohort.cohort.validate()?;
    cohort.oracle.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::default();
    for i in 0..cohort.patients {
        let p = synthesize_patient(cohort, seed, i)?;
        let name = |suffix: &str| PathBuf::from(format!("{}_{suffix}.vvol", p.id));
        write_volume(&p.phantom.ct, out.join(name("ct")))?;
        write_volume(&p.phantom.pet, out.join(name("pet")))?;
        write_volume(&p.phantom.tumor, out.join(name("tumor")))?;
        write_volume(&p.phantom.ln, out.join(name("ln")))?;
        write_volume(&p.ct_stream, out.join(name("ct_stream")))?;
        write_volume(&p.ef_stream, out.join(name("ef_stream")))?;
        manifest.patients.push(ManifestEntry {
            id: p.id.clone(),
            ct: name("ct"),
            pet: name("pet"),
            tumor: name("tumor"),
            ln: name("ln"),
            streams: Some(StreamPaths {
                ct_proximal: name("ct_stream"),
                ef_proximal: name("ef_stream"),
                ct_distal: name("ct_stream"),
                ef_distal: name("ef_stream"),
            }),
            gt: p
                .phantom
                .gt
                .iter()
                .map(|g| GtRecord::from_instance(&p.id, g))
                .collect(),
        });
    }
    manifest.write(out.join("manifest.json"))?;
    println!("{} patients written to {}", cohort.patients, out.display());
    Ok(ExitCode::SUCCESS)
}
