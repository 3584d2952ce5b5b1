use flnet_core::raster::{coregister_translation, shift_raster};
use flnet_core::synth::{generate_scene, SceneSpec};
use flnet_core::{Raster, RasterError};
use proptest::prelude::*;

fn textured(seed: u64) -> Raster {
    let spec = SceneSpec { seed, hr_size: 144, parcel_count: 14, narrow_feature_count: 2, ..SceneSpec::default() };
    generate_scene(&spec).unwrap().pre_hr.crop(8, 8, 128, 128).unwrap()
}

#[test]
fn self_registration_is_zero() {
    let r = textured(1);
    let reg = coregister_translation(&r, &r, 4).unwrap();
    assert_eq!((reg.dx, reg.dy), (0.0, 0.0));
    assert!((reg.score - 1.0).abs() < 1e-9);
}

#[test]
fn integer_shift_recovered_exactly() {
    let r = textured(2);
    // The correction that maps the moving image back is (3, -2).
    let moving = shift_raster(&r, -3.0, 2.0).unwrap();
    let reg = coregister_translation(&r, &moving, 8).unwrap();
    assert_eq!((reg.dx, reg.dy), (3.0, -2.0));
    let fixed = shift_raster(&moving, reg.dx, reg.dy).unwrap();
    for i in (0..fixed.pixels()).filter(|&i| fixed.is_valid(i)) {
        assert_eq!(fixed.data()[i], r.data()[i]);
    }
}

#[test]
fn subpixel_shift_within_half_pixel() {
    for seed in 0..4 {
        let r = textured(10 + seed);
        let moving = shift_raster(&r, 1.5, 0.0).unwrap();
        let reg = coregister_translation(&r, &moving, 4).unwrap();
        assert!((reg.dx + 1.5).abs() <= 0.5 && reg.dy.abs() <= 0.5, "{reg:?}");
    }
}

#[test]
fn refuses_small_or_disjoint_inputs() {
    let r = textured(3);
    let tiny = r.crop(0, 0, 60, 60).unwrap();
    assert!(matches!(coregister_translation(&tiny, &tiny, 2), Err(RasterError::InsufficientOverlap(_))));
    let mostly_empty = r.masked(|i| i % 128 >= 30);
    let mostly_empty = mostly_empty.masked(|i| i / 128 >= 120);
    assert!(mostly_empty.valid_count() < 64 * 64);
    assert!(matches!(coregister_translation(&r, &mostly_empty, 2), Err(RasterError::InsufficientOverlap(_))));
}

#[test]
fn low_overlap_shifts_are_refused() {
    let r = textured(4);
    // Moving image valid only in the left half, reference only in the right.
    let left = r.masked(|i| i % 128 >= 64);
    let right = r.masked(|i| i % 128 < 64);
    assert!(matches!(coregister_translation(&right, &left, 4), Err(RasterError::InsufficientOverlap(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn recovers_negated_shift(seed in 0u64..1000, a in -6i32..=6, b in -6i32..=6) {
        let r = textured(seed);
        let reg = coregister_translation(&r, &shift_raster(&r, a as f64, b as f64).unwrap(), 6).unwrap();
        prop_assert!((reg.dx + a as f64).abs() <= 0.5 && (reg.dy + b as f64).abs() <= 0.5, "{:?}", reg);
    }
}
