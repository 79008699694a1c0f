mod common;

use std::collections::HashMap;

use common::*;
use fricvae::augment::{
    color_jitter, erase, five_patch_crop, gaussian_blur, grayscale, random_transform,
    random_transform_traced, rotate, AugmentConfig, TransformKind,
};
use fricvae::{Error, Image, SegMask, IGNORE_CLASS};
use proptest::prelude::*;

/// Mask whose class encodes the pixel position, so misalignment is visible.
fn coordinate_mask(h: usize, w: usize) -> SegMask {
    SegMask::new(h, w, 200, (0..h * w).map(|i| (i % 199) as u8).collect()).unwrap()
}

#[test]
fn five_patches_of_a_64_image() {
    let mut r = rng(1);
    let x = random_image(&mut r, 64, 64);
    let y = coordinate_mask(64, 64);
    let patches = five_patch_crop(&x, &y, 8).unwrap();
    assert_eq!(patches.len(), 5);
    for (px, py) in &patches {
        assert_eq!((px.height(), px.width()), (32, 32));
        assert_eq!((py.height(), py.width()), (32, 32));
    }
    assert_eq!(patches[0].0, x.crop(0, 0, 32, 32).unwrap());
}

#[test]
fn patch_pixels_match_source_coordinates() {
    let mut r = rng(2);
    for (h, w, m) in [(64, 64, 8), (48, 40, 4), (37, 51, 1), (20, 30, 2)] {
        let x = random_image(&mut r, h, w);
        let y = coordinate_mask(h, w);
        let patches = five_patch_crop(&x, &y, m).unwrap();
        let (ph, pw) = (h / 2 / m * m, w / 2 / m * m);
        let origins = [
            (0, 0),
            (0, w - pw),
            (h - ph, 0),
            (h - ph, w - pw),
            ((h - ph) / 2, (w - pw) / 2),
        ];
        for ((px, py), (t, l)) in patches.iter().zip(origins) {
            assert_eq!((py.height(), py.width()), (ph, pw));
            assert_eq!(ph % m, 0);
            for rr in 0..ph {
                for cc in 0..pw {
                    assert_eq!(py.get(rr, cc), y.get(t + rr, l + cc));
                    for ch in 0..3 {
                        assert_eq!(px.get(ch, rr, cc), x.get(ch, t + rr, l + cc));
                    }
                }
            }
        }
    }
}

#[test]
fn crop_errors() {
    let x = Image::filled(6, 6, 3, 0.5);
    let y = SegMask::filled(6, 6, 3, 0).unwrap();
    assert!(matches!(
        five_patch_crop(&x, &y, 8),
        Err(Error::Argument(_))
    ));
    let wrong = SegMask::filled(5, 6, 3, 0).unwrap();
    assert!(matches!(
        five_patch_crop(&x, &wrong, 1),
        Err(Error::Argument(_))
    ));
}

#[test]
fn branch_frequencies_within_three_sigma() {
    let mut r = rng(3);
    let x = random_image(&mut r, 8, 8);
    let y = random_mask(&mut r, 8, 8, 3);
    let cfg = AugmentConfig::default();
    let n = 10_000;
    let mut counts: HashMap<TransformKind, usize> = HashMap::new();
    for seed in 0..n as u64 {
        let (_, _, kind) = random_transform_traced(&x, &y, seed, &cfg).unwrap();
        *counts.entry(kind).or_default() += 1;
    }
    let p = 0.2;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for kind in TransformKind::ALL {
        let c = counts.get(&kind).copied().unwrap_or(0) as f64;
        assert!((c - n as f64 * p).abs() < 3.0 * sigma, "{kind:?}: {c}");
    }
}

#[test]
fn photometric_branches_keep_the_mask() {
    let mut r = rng(4);
    let x = random_image(&mut r, 16, 16);
    let y = random_mask(&mut r, 16, 16, 4);
    let cfg = AugmentConfig::default();
    let mut seen = 0;
    for seed in 0..200 {
        let (ox, oy, kind) = random_transform_traced(&x, &y, seed, &cfg).unwrap();
        if kind != TransformKind::Rotate {
            assert_eq!(oy, y);
            seen += 1;
        }
        if kind == TransformKind::Grayscale {
            for rr in 0..16 {
                for cc in 0..16 {
                    assert_eq!(ox.get(0, rr, cc), ox.get(1, rr, cc));
                    assert_eq!(ox.get(1, rr, cc), ox.get(2, rr, cc));
                }
            }
        }
        if kind == TransformKind::Erase {
            let changed = (0..16 * 16)
                .filter(|&i| (0..3).any(|c| ox.get(c, i / 16, i % 16) != x.get(c, i / 16, i % 16)))
                .count();
            assert!(changed >= 1);
        }
    }
    assert!(seen > 100);
}

#[test]
fn erase_changes_only_the_rectangle() {
    let x = random_image(&mut rng(5), 10, 12);
    let out = erase(&x, 2, 3, 4, 5, 0.25);
    for c in 0..3 {
        for rr in 0..10 {
            for cc in 0..12 {
                let inside = (2..6).contains(&rr) && (3..8).contains(&cc);
                let want = if inside { 0.25 } else { x.get(c, rr, cc) };
                assert_eq!(out.get(c, rr, cc).to_bits(), want.to_bits());
            }
        }
    }
}

#[test]
fn zero_rotation_is_identity() {
    let mut r = rng(6);
    let x = random_image(&mut r, 13, 9);
    let y = random_mask(&mut r, 13, 9, 5);
    let (rx, ry) = rotate(&x, &y, 0.0).unwrap();
    for (a, b) in rx.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(ry, y);
    let (rx, ry) = rotate(&x, &y, 360.0).unwrap();
    for (a, b) in rx.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(ry, y);
}

#[test]
fn half_turn_reverses_pixels() {
    let mut r = rng(7);
    let x = random_image(&mut r, 6, 8);
    let y = random_mask(&mut r, 6, 8, 5);
    let (rx, ry) = rotate(&x, &y, 180.0).unwrap();
    for rr in 0..6 {
        for cc in 0..8 {
            assert_eq!(ry.get(rr, cc), y.get(5 - rr, 7 - cc));
            for c in 0..3 {
                assert!((rx.get(c, rr, cc) - x.get(c, 5 - rr, 7 - cc)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rotation_marks_outside_pixels() {
    let x = Image::filled(16, 16, 3, 0.8);
    let y = SegMask::filled(16, 16, 3, 1).unwrap();
    let (rx, ry) = rotate(&x, &y, 45.0).unwrap();
    assert_eq!(ry.get(0, 0), IGNORE_CLASS);
    assert_eq!(rx.get(0, 0, 0), 0.0);
    assert_eq!(ry.get(8, 8), 1);
    // Black exactly where the mask is ignored.
    for rr in 0..16 {
        for cc in 0..16 {
            if ry.get(rr, cc) == IGNORE_CLASS {
                assert_eq!(rx.get(1, rr, cc), 0.0);
            }
        }
    }
}

#[test]
fn blur_and_jitter_identities() {
    let x = random_image(&mut rng(8), 9, 9);
    let same = color_jitter(&x, 1.0, 1.0, 1.0);
    for (a, b) in same.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let flat = Image::filled(9, 9, 3, 0.4);
    for (a, b) in gaussian_blur(&flat, 1.5).data().iter().zip(flat.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let g = grayscale(&x);
    let expect = 0.299 * x.get(0, 4, 4) + 0.587 * x.get(1, 4, 4) + 0.114 * x.get(2, 4, 4);
    assert!((g.get(0, 4, 4) - expect).abs() < 1e-12);
}

#[test]
fn invalid_config_is_rejected() {
    let bad = AugmentConfig {
        blur_sigma_min: 3.0,
        ..AugmentConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn transforms_keep_ranges_and_labels(seed in any::<u64>(), h in 4usize..20, w in 4usize..20, data_seed in any::<u64>()) {
        let mut r = rng(data_seed);
        let x = random_image(&mut r, h, w);
        let y = random_mask(&mut r, h, w, 6);
        let (ox, oy) = random_transform(&x, &y, seed).unwrap();
        prop_assert_eq!((ox.height(), ox.width(), ox.channels()), (h, w, 3));
        prop_assert!(ox.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(oy.classes().iter().all(|&c| c < 6 || c == IGNORE_CLASS));
        let (again_x, again_y) = random_transform(&x, &y, seed).unwrap();
        prop_assert_eq!(again_x, ox);
        prop_assert_eq!(again_y, oy);
    }

    #[test]
    fn rotated_mask_labels_come_from_the_source(degrees in 0.0..360.0f64, data_seed in any::<u64>()) {
        let mut r = rng(data_seed);
        let x = random_image(&mut r, 12, 12);
        let y = random_mask(&mut r, 12, 12, 6);
        let (_, oy) = rotate(&x, &y, degrees).unwrap();
        let present: std::collections::BTreeSet<u8> = y.classes().iter().copied().collect();
        prop_assert!(oy.classes().iter().all(|c| *c == IGNORE_CLASS || present.contains(c)));
        // The centre pixel never leaves the frame.
        prop_assert_ne!(oy.get(6, 6), IGNORE_CLASS);
    }
}
