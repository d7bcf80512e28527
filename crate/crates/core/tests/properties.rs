use std::f64::consts::PI;

use proptest::prelude::*;

use mcop::container::{decode_held_out, decode_mcop, encode_held_out, encode_mcop, read_mcop, write_mcop};
use mcop::erosion::erode_image;
use mcop::image::derive_mask;
use mcop::inpaint::normalize_rotation;
use mcop::metrics::chamfer;
use mcop::patchbank::{build_bank, decode_bank, encode_bank, pitch_at};
use mcop::ply::{encode_ply, parse_ply};
use mcop::sweep::{build_rotation_profile, integrate_slit_poses, resample_path, RotationProfile};
use mcop::synth::synth_mask_bank;
use mcop::{BitMask, McopImage, PointCloud};

/// A small image with a seeded mix of known and unknown pixels and the
/// rotation profile of `turn_row`.
fn image_from(width: usize, height: usize, known: &[bool], turn_row: usize, wrap: bool) -> McopImage {
    let profile = build_rotation_profile(height, &vec![turn_row.min(height - 1); width], None).unwrap();
    let mut img = McopImage::new_unknown(width, height, wrap);
    for col in 0..width {
        for row in 0..height {
            img.set_rotation(col, row, profile.column(col)[row]);
            let i = row * width + col;
            if known[i % known.len()] {
                let t = (i as f32 * 0.37).sin().abs();
                img.set_known(col, row, [t, 1.0 - t, 0.5 * t], 1.0 + t);
            }
        }
    }
    img
}

fn image_strategy() -> impl Strategy<Value = McopImage> {
    (4usize..24, 4usize..24, prop::collection::vec(any::<bool>(), 1..64), 0usize..8, any::<bool>())
        .prop_map(|(w, h, known, turn, wrap)| image_from(w, h, &known, turn, wrap))
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..max).prop_map(|pts| {
        let colors = pts.iter().map(|p| [p[0].abs() as f32 / 5.0, 0.5, 0.25]).collect();
        PointCloud::new(pts, colors).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_is_finite_depth(img in image_strategy()) {
        let derived = derive_mask(&img);
        for (i, &d) in img.plane(mcop::Channel::Depth).iter().enumerate() {
            prop_assert_eq!(img.mask()[i], d.is_finite());
            prop_assert_eq!(derived.bits()[i], d.is_finite());
        }
        prop_assert!(img.validate().is_ok());
    }

    #[test]
    fn mcop_round_trip_is_bit_exact(img in image_strategy()) {
        let bytes = encode_mcop(&img).unwrap();
        let back = decode_mcop(&bytes).unwrap();
        prop_assert_eq!(encode_mcop(&back).unwrap(), bytes);
        prop_assert_eq!(back.mask(), img.mask());
        prop_assert_eq!(back.rotation_plane(), img.rotation_plane());
        prop_assert_eq!(back.wraps(), img.wraps());
    }

    #[test]
    fn held_out_round_trip(w in 1usize..40, h in 1usize..40, bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let all: Vec<bool> = (0..w * h).map(|i| bits[i % bits.len()]).collect();
        let map = BitMask::from_bits(w, h, all).unwrap();
        prop_assert_eq!(decode_held_out(&encode_held_out(&map)).unwrap(), map);
    }

    #[test]
    fn built_profiles_sum_to_pi(rows in 2usize..300, turns in prop::collection::vec(0usize..300, 1..20)) {
        let turns: Vec<usize> = turns.into_iter().map(|t| t % rows).collect();
        let profile = build_rotation_profile(rows, &turns, None).unwrap();
        for col in 0..turns.len() {
            let sum: f64 = profile.column(col).iter().sum();
            prop_assert!((sum - PI).abs() <= 1e-12, "column {} sums to {}", col, sum);
            prop_assert!(profile.column(col).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn normalized_columns_sum_to_pi(
        h in 2usize..200,
        w in 1usize..6,
        values in prop::collection::vec(0.0f64..0.5, 1..50),
    ) {
        let mut img = McopImage::new_unknown(w, h, false);
        for col in 0..w {
            for row in 0..h {
                img.set_rotation(col, row, values[(row * 7 + col) % values.len()] + 1e-3);
            }
        }
        let out = normalize_rotation(&img).unwrap();
        for col in 0..w {
            prop_assert!((out.column_rotation_sum(col) - PI).abs() <= 1e-12);
        }
        prop_assert_eq!(out.mask(), img.mask());
    }

    #[test]
    fn chamfer_is_symmetric(a in cloud_strategy(60), b in cloud_strategy(60)) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!(ab.cd >= 0.0);
        prop_assert!((ab.cd - ba.cd).abs() <= 1e-9 * ab.cd.max(1.0));
        prop_assert!((ab.p - ba.c).abs() <= 1e-12 * ab.p.max(1.0));
        prop_assert_eq!(chamfer(&a, &a).unwrap().cd, 0.0);
    }

    #[test]
    fn binary_ply_round_trip_is_exact(cloud in cloud_strategy(200)) {
        let bytes = encode_ply(&cloud, true);
        let back = parse_ply(&bytes).unwrap();
        prop_assert_eq!(back.points(), cloud.points());
        for (c, d) in back.colors().iter().zip(cloud.colors()) {
            for k in 0..3 {
                prop_assert!((c[k] - d[k]).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        prop_assert_eq!(encode_ply(&back, true), bytes);
    }

    #[test]
    fn ascii_ply_round_trip(cloud in cloud_strategy(50)) {
        let back = parse_ply(&encode_ply(&cloud, false)).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (p, q) in back.points().iter().zip(cloud.points()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn erosion_conserves_known_pixels(seed in any::<u64>(), n in 1usize..6, density in 0.5f64..1.0) {
        let known: Vec<bool> = (0..97).map(|i| (i as f64 * 0.618).fract() < density).collect();
        let img = image_from(40, 32, &known, 2, false);
        let masks = synth_mask_bank(4, 12, (0.2, 0.6), seed).unwrap();
        let er = erode_image(&img, &masks, n, (0.0, 1.0), seed).unwrap();
        prop_assert_eq!(er.image.known_count() + er.held_out.count_ones(), img.known_count());
        for i in 0..img.mask().len() {
            let held = er.held_out.bits()[i];
            prop_assert!(!held || img.mask()[i]);
            prop_assert!(!(held && er.image.mask()[i]));
            if er.image.mask()[i] {
                prop_assert_eq!(er.image.plane(mcop::Channel::Depth)[i], img.plane(mcop::Channel::Depth)[i]);
            }
        }
        prop_assert_eq!(er.image.rotation_plane(), img.rotation_plane());
    }

    #[test]
    fn bank_round_trip_and_threshold(seed in any::<u64>(), density in 0.7f64..1.0) {
        let known: Vec<bool> = (0..101).map(|i| (i as f64 * 0.754).fract() < density).collect();
        let img = image_from(48, 24, &known, 3, true);
        let bank = build_bank(std::slice::from_ref(&img), 8, 0.6, 4, 50, seed).unwrap();
        prop_assert!(bank.patches().iter().all(|p| p.completeness() >= 0.6));
        let bytes = encode_bank(&bank);
        let back = decode_bank(&bytes).unwrap();
        prop_assert_eq!(encode_bank(&back), bytes);
        prop_assert_eq!(back.len(), bank.len());
        for (p, q) in back.patches().iter().zip(bank.patches()) {
            prop_assert_eq!(p.mask(), q.mask());
            prop_assert_eq!(p.pitch, q.pitch);
            prop_assert_eq!(p.rotation_plane(), q.rotation_plane());
        }
    }

    #[test]
    fn pitch_accumulates_rotation(rows in 4usize..120, turn in 0usize..100) {
        let turn = turn % rows;
        let img = image_from(3, rows, &[true], turn, false);
        prop_assert_eq!(pitch_at(&img, 1, 0), 0.0);
        let mut running = 0.0;
        for row in 1..rows {
            running += img.rotation(1, row);
            prop_assert!((pitch_at(&img, 1, row) - running).abs() <= 1e-12);
        }
    }
}

#[test]
fn file_round_trip_keeps_bytes() {
    let img = image_from(17, 9, &[true, false, true], 1, true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.mcop");
    write_mcop(&img, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), encode_mcop(&img).unwrap());
    assert_eq!(read_mcop(&path).unwrap(), img);
}

fn circle(n: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

#[test]
fn circle_normals_point_at_the_centre() {
    let path = resample_path(&circle(360, 5.0), 0.0, 0.5, 0.02, true).unwrap();
    let mut worst: f64 = 0.0;
    for f in &path.frames {
        let expected = [-f.base.x, -f.base.y];
        let n = expected[0].hypot(expected[1]);
        let dot = (f.normal.x * expected[0] + f.normal.y * expected[1]) / n;
        worst = worst.max(dot.clamp(-1.0, 1.0).acos());
        assert!((n - 5.5).abs() < 1e-2, "camera radius {n}");
    }
    assert!(worst < 1e-3, "worst normal error {worst} rad");
}

#[test]
fn full_profile_ends_looking_back_down() {
    let path = resample_path(&circle(360, 5.0), 0.0, 0.5, 0.05, true).unwrap();
    let rows = 120;
    let turns: Vec<usize> = (0..path.columns()).map(|c| 1 + c % 60).collect();
    let profile: RotationProfile = build_rotation_profile(rows, &turns, None).unwrap();
    let poses = integrate_slit_poses(&path, &profile, rows, 0.02).unwrap();
    for (col, f) in path.frames.iter().enumerate() {
        let ray = poses.ray(col, rows - 1);
        assert!((ray + f.normal).norm() < 1e-9, "column {col}: {ray:?}");
        let first = poses.ray(col, 0);
        assert!((first - f.normal).norm() < 1e-12);
    }
}
