use osln::instancer::{extract_candidates, CandidateParams};
use osln::phantom::{synthesize_patient, SyntheticCohort};
use osln::pipeline::{rescore_candidates, PipelineConfig};
use osln::stage2::{
    apply_augmentation, assemble_feature, augment_patch, crop_patch, jitter_bboxes, AugmentOp,
    CandidatePatch, PatchConfig, ScorerKind, VoxelBox, GLOBAL_FEATURE_LEN, LOCAL_FEATURE_LEN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cohort() -> SyntheticCohort {
    serde_json::from_str(r#"{"patients": 1}"#).unwrap()
}

fn patches(seed: u64) -> Vec<CandidatePatch> {
    let p = synthesize_patient(&cohort(), seed, 0).unwrap();
    let cands = extract_candidates(&p.ct_stream, &CandidateParams::default(), None).unwrap();
    let config = PatchConfig {
        size: [12, 10, 6],
        margin: 2,
        ..PatchConfig::default()
    };
    cands
        .iter()
        .take(3)
        .map(|c| crop_patch(&p.phantom.ct, &p.phantom.pet, c, &config).unwrap())
        .collect()
}

fn sorted(v: &[f32]) -> Vec<u32> {
    let mut out: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
    out.sort_unstable();
    out
}

fn op() -> impl Strategy<Value = AugmentOp> {
    prop_oneof![
        Just(AugmentOp::Rot90),
        Just(AugmentOp::Rot180),
        Just(AugmentOp::Rot270),
        Just(AugmentOp::AxialFlip),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_permutes_voxels(seed in 0u64..1000, ops in prop::collection::vec(op(), 0..5), aug_seed in any::<u64>()) {
        for p in patches(seed) {
            let mut q = p.clone();
            for &o in &ops {
                q = apply_augmentation(&q, o);
            }
            let r = augment_patch(&p, &ops, aug_seed);
            for out in [&q, &r] {
                prop_assert_eq!(sorted(out.ct_patch.values()), sorted(p.ct_patch.values()));
                prop_assert_eq!(sorted(out.pet_patch.values()), sorted(p.pet_patch.values()));
                prop_assert_eq!(out.label, p.label);
                prop_assert_eq!(out.bboxes.len(), p.bboxes.len());
            }
            let mut back = p.clone();
            for _ in 0..4 {
                back = apply_augmentation(&back, AugmentOp::Rot90);
            }
            prop_assert_eq!(back.ct_patch.values(), p.ct_patch.values());
        }
    }

    #[test]
    fn rescoring_only_touches_scores(seed in 0u64..1000) {
        let p = synthesize_patient(&cohort(), seed, 0).unwrap();
        let cands = extract_candidates(&p.ct_stream, &CandidateParams::default(), None).unwrap();
        let config = PipelineConfig::default();
        for kind in [ScorerKind::FirstStage, ScorerKind::default()] {
            let scorer = kind.build();
            let (out, fallbacks) =
                rescore_candidates(&cands, &p.phantom.ct, &p.phantom.pet, None, scorer.as_ref(), &config, seed).unwrap();
            prop_assert_eq!(fallbacks, 0);
            prop_assert_eq!(out.len(), cands.len());
            for (a, b) in out.iter().zip(&cands) {
                prop_assert_eq!((a.id, &a.voxel_indices, a.centroid_mm, a.radius_mm), (b.id, &b.voxel_indices, b.centroid_mm, b.radius_mm));
                prop_assert!((0.0..=1.0).contains(&a.score));
            }
        }
    }

    #[test]
    fn assembled_feature_is_local_then_global(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local: Vec<f64> = (0..LOCAL_FEATURE_LEN).map(|_| rng.random()).collect();
        let global: Vec<f64> = (0..GLOBAL_FEATURE_LEN).map(|_| rng.random()).collect();
        let f = assemble_feature(local.clone(), global.clone()).unwrap();
        prop_assert_eq!(f.assembled.len(), 1195);
        prop_assert_eq!(&f.assembled[..LOCAL_FEATURE_LEN], &local[..]);
        prop_assert_eq!(&f.assembled[LOCAL_FEATURE_LEN..], &global[..]);
    }

    #[test]
    fn jitter_stays_in_bounds(seed in any::<u64>(), lo in [0i64..20, 0i64..20, 0i64..10], ext in [0i64..10, 0i64..10, 0i64..5], range in 0u32..6) {
        let b = VoxelBox::new(lo, [lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2]]).unwrap();
        let out = jitter_bboxes(&b, 5, range, seed, [30, 30, 15]).unwrap();
        prop_assert_eq!(&out, &jitter_bboxes(&b, 5, range, seed, [30, 30, 15]).unwrap());
        for j in out {
            for a in 0..3 {
                prop_assert!(j.lo[a] <= j.hi[a] && j.lo[a] >= 0 && j.hi[a] < [30, 30, 15][a]);
                if range == 0 {
                    prop_assert_eq!((j.lo, j.hi), (b.lo, b.hi));
                }
            }
        }
    }
}

#[test]
fn jitter_offsets_are_uniform() {
    let b = VoxelBox::new([40, 40, 40], [50, 50, 50]).unwrap();
    let boxes = jitter_bboxes(&b, 10_000, 3, 99, [100, 100, 100]).unwrap();
    let mut counts = [0f64; 7];
    for j in &boxes {
        counts[(j.lo[0] - 40 + 3) as usize] += 1.0;
    }
    let expected = boxes.len() as f64 / 7.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 6 degrees of freedom, 0.1% critical value.
    assert!(chi2 < 22.46, "chi2 {chi2}, counts {counts:?}");
}
