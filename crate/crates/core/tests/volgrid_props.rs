use std::sync::Mutex;

use osln::volgrid::{
    decode_volume, encode_volume, normalize_pet, resample, tile_aggregate, truncate_hu, Geometry,
    Interpolation, VolumeKind, VoxelGrid,
};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = VoxelGrid> {
    (
        [1usize..7, 1usize..7, 1usize..7],
        [0.3f64..3.0, 0.3f64..3.0, 0.5f64..5.0],
        prop_oneof![
            Just(VolumeKind::CtHu),
            Just(VolumeKind::PetSuv),
            Just(VolumeKind::Probability),
            Just(VolumeKind::DistanceMm),
        ],
        any::<u64>(),
    )
        .prop_map(|(dims, spacing, kind, salt)| {
            let geom = Geometry::new(dims, spacing, [salt as f64 % 17.0, -3.5, 0.25]).unwrap();
            VoxelGrid::from_fn(geom, kind, |[x, y, z]| {
                let h = (x * 73 + y * 151 + z * 283) as u64 ^ salt;
                let u = (h % 10_007) as f32 / 10_007.0;
                match kind {
                    VolumeKind::Probability => u,
                    _ => (u - 0.5) * 2000.0,
                }
            })
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vvol_round_trip_is_byte_identical(grid in grid_strategy()) {
        let bytes = encode_volume(&grid).unwrap();
        let back = decode_volume(&bytes).unwrap().into_grid().unwrap();
        prop_assert_eq!(&back, &grid);
        prop_assert_eq!(encode_volume(&back).unwrap(), bytes);
    }

    #[test]
    fn resample_to_own_spacing_is_identity(grid in grid_strategy()) {
        let out = resample(&grid, grid.geometry().spacing, Interpolation::Trilinear).unwrap();
        prop_assert_eq!(out, grid);
    }

    #[test]
    fn clamp_is_idempotent(grid in grid_strategy(), lo in -500f32..0.0, width in 1f32..800.0) {
        let grid = grid.with_kind(VolumeKind::CtHu).unwrap();
        let once = truncate_hu(&grid, lo, lo + width).unwrap();
        prop_assert_eq!(truncate_hu(&once, lo, lo + width).unwrap(), once);
    }

    #[test]
    fn unit_normalization_composes(grid in grid_strategy(), mean in -5f64..5.0, std in 0.1f64..4.0) {
        let grid = grid.with_kind(VolumeKind::PetSuv).unwrap();
        let once = normalize_pet(&grid, mean, std).unwrap();
        prop_assert_eq!(normalize_pet(&once, 0.0, 1.0).unwrap(), once);
    }

    #[test]
    fn tile_output_stays_in_window_hull(
        grid in grid_strategy(),
        window in [1usize..5, 1usize..5, 1usize..5],
        step in [1usize..5, 1usize..5, 1usize..5],
    ) {
        let stride: [usize; 3] = std::array::from_fn(|a| step[a].min(window[a]));
        let seen = Mutex::new(Vec::new());
        let out = tile_aggregate(&grid, window, stride, |w| {
            let o = w.geometry().origin;
            let v = ((o[0] * 7.0 + o[1] * 3.0 + o[2]).abs() % 1.0) as f32;
            seen.lock().unwrap().push(v);
            VoxelGrid::filled(*w.geometry(), VolumeKind::Probability, v)
        })
        .unwrap();
        let seen = seen.into_inner().unwrap();
        let lo = seen.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = seen.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(out.values().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }
}
