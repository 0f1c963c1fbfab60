use osln::instancer::{GroundTruthInstance, InstanceCandidate};
use osln::matcheval::{
    best_f1, froc_curve, match_instances, mfroc, pr_curve, MatchCriterion, PatientHits,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Case {
    candidates: Vec<InstanceCandidate>,
    gts: Vec<GroundTruthInstance>,
}

/// Instances are runs of voxel ids on a line, so overlaps are frequent.
fn run(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let start = rng.random_range(0..60);
    (start..start + rng.random_range(1..6)).collect()
}

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rng.random_range(1..5))
        .map(|_| {
            let mut taken = vec![false; 80];
            let mut gts = Vec::new();
            for _ in 0..rng.random_range(0..5) {
                let v = run(&mut rng);
                if v.iter().any(|&i| taken[i]) {
                    continue;
                }
                v.iter().for_each(|&i| taken[i] = true);
                gts.push(GroundTruthInstance {
                    id: gts.len() as u32 + 1,
                    voxel_indices: v,
                    centroid_mm: [0.0; 3],
                    volume_mm3: 0.0,
                    radius_mm: rng.random_range(2.0..6.0),
                });
            }
            let candidates = (0..rng.random_range(0..8))
                .map(|k| InstanceCandidate {
                    id: k + 1,
                    voxel_indices: run(&mut rng),
                    centroid_mm: [0.0; 3],
                    volume_mm3: 0.0,
                    radius_mm: rng.random_range(1.0..8.0),
                    score: f64::from(rng.random_range(1..12u32)) / 12.0,
                    label: None,
                })
                .collect();
            Case { candidates, gts }
        })
        .collect()
}

fn table(cases: &[Case]) -> Vec<PatientHits> {
    cases
        .iter()
        .map(|c| {
            let m = match_instances(&c.candidates, &c.gts, &MatchCriterion::default()).unwrap();
            PatientHits::from_match(&c.candidates, &m, c.gts.len())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn thresholded_matching_is_a_prefix(seed in any::<u64>()) {
        let criterion = MatchCriterion::default();
        for c in cases(seed) {
            let full = match_instances(&c.candidates, &c.gts, &criterion).unwrap();
            for t in c.candidates.iter().map(|k| k.score) {
                let kept: Vec<usize> = (0..c.candidates.len()).filter(|&i| c.candidates[i].score >= t).collect();
                let subset: Vec<InstanceCandidate> = kept.iter().map(|&i| c.candidates[i].clone()).collect();
                let m = match_instances(&subset, &c.gts, &criterion).unwrap();
                let tp = m.true_positives();
                prop_assert_eq!(tp + m.false_negatives.len(), c.gts.len());
                prop_assert_eq!(tp + m.false_positives.len(), subset.len());
                for (j, &i) in kept.iter().enumerate() {
                    prop_assert_eq!(m.hits[j], full.hits[i]);
                }
            }
        }
    }

    #[test]
    fn curves_are_monotone(seed in any::<u64>(), mut budgets in prop::collection::vec(0f64..8.0, 1..6)) {
        let t = table(&cases(seed));
        budgets.sort_by(f64::total_cmp);
        let froc = froc_curve(&t, &budgets).unwrap();
        for w in froc.budgets.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
        }
        for w in froc.points.windows(2) {
            prop_assert!(w[1].fp_per_patient >= w[0].fp_per_patient);
            prop_assert!(w[1].recall >= w[0].recall);
        }
        let pr = pr_curve(&t).unwrap();
        for w in pr.points.windows(2) {
            prop_assert!(w[1].threshold > w[0].threshold);
            prop_assert!(w[1].recall <= w[0].recall);
        }
    }

    #[test]
    fn metrics_depend_only_on_score_order(seed in any::<u64>()) {
        let t = table(&cases(seed));
        let warped: Vec<PatientHits> = t
            .iter()
            .map(|p| {
                let scores: Vec<f64> = p.detections.iter().map(|d| (3.0 * d.0).exp() + 1.0).collect();
                p.rescored(&scores).unwrap()
            })
            .collect();
        let budgets = [2.0, 3.0, 4.0, 6.0];
        let (a, b) = (froc_curve(&t, &budgets).unwrap(), froc_curve(&warped, &budgets).unwrap());
        prop_assert_eq!(mfroc(&a).unwrap(), mfroc(&b).unwrap());
        for (x, y) in a.points.iter().zip(&b.points) {
            prop_assert_eq!((x.fp_per_patient, x.recall), (y.fp_per_patient, y.recall));
        }
        let (pa, pb) = (pr_curve(&t).unwrap(), pr_curve(&warped).unwrap());
        prop_assert_eq!(pa.points.len(), pb.points.len());
        for (x, y) in pa.points.iter().zip(&pb.points) {
            prop_assert_eq!((x.precision, x.recall), (y.precision, y.recall));
        }
        if !pa.points.is_empty() {
            prop_assert_eq!(best_f1(&t).unwrap().f1, best_f1(&warped).unwrap().f1);
        }
    }

    #[test]
    fn macro_values_are_patient_means(seed in any::<u64>()) {
        let t = table(&cases(seed));
        let n = t.len() as f64;
        for p in pr_curve(&t).unwrap().points {
            let (mut ps, mut rs) = (0.0, 0.0);
            for patient in &t {
                let kept: Vec<bool> = patient.detections.iter().filter(|d| d.0 >= p.threshold).map(|d| d.1).collect();
                let tp = kept.iter().filter(|h| **h).count() as f64;
                ps += if kept.is_empty() { 1.0 } else { tp / kept.len() as f64 };
                rs += if patient.n_gt == 0 { 1.0 } else { tp / patient.n_gt as f64 };
            }
            prop_assert!((p.precision - ps / n).abs() < 1e-12);
            prop_assert!((p.recall - rs / n).abs() < 1e-12);
        }
    }
}
