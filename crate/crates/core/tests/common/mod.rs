#![allow(dead_code)]

use autograd::ParamSet;
use fricvae::{CvaeConfig, E2EConfig, Image, SegMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, classes: usize) -> SegMask {
    let data = (0..h * w)
        .map(|_| rng.random_range(0..classes as u8))
        .collect();
    SegMask::new(h, w, classes, data).unwrap()
}

/// One level, one latent scale, width 2: a few hundred parameters.
pub fn tiny_cvae() -> CvaeConfig {
    CvaeConfig {
        num_classes: 3,
        levels: 1,
        residual_blocks_per_level: 1,
        latent_scales: 1,
        latent_channels: vec![1],
        base_width: 2,
        seed: 11,
        ..CvaeConfig::default()
    }
}

pub fn small_cvae() -> CvaeConfig {
    CvaeConfig {
        num_classes: 4,
        levels: 3,
        residual_blocks_per_level: 1,
        latent_scales: 3,
        latent_channels: vec![2, 2, 2],
        base_width: 4,
        seed: 5,
        ..CvaeConfig::default()
    }
}

pub fn tiny_e2e() -> E2EConfig {
    E2EConfig {
        height: 8,
        width: 8,
        levels: 1,
        residual_blocks_per_level: 1,
        base_width: 2,
        output_channels: 1,
        affine_widths: vec![4, 4, 1],
        seed: 3,
        ..E2EConfig::default()
    }
}

/// Zero biases put ReLU inputs exactly on the kink wherever the incoming
/// activations vanish, which breaks finite differences; nudge them off it.
pub fn jitter_biases(params: &mut ParamSet, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = params
        .ids()
        .filter(|&id| params.name(id).ends_with(".b"))
        .collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v += r.random_range(-0.1..0.1);
        }
    }
}

/// Set-based IoU: per class, `|{i: p=k} ∩ {i: t=k}| / |{i: p=k} ∪ {i: t=k}|`
/// over the pixel indices that neither mask ignores.
pub fn brute_force_iou(
    pred: &[u8],
    truth: &[u8],
    classes: usize,
    ignore: Option<u8>,
) -> (Vec<Option<f64>>, f64) {
    use std::collections::BTreeSet;
    let kept: Vec<usize> = (0..pred.len())
        .filter(|&i| Some(pred[i]) != ignore && Some(truth[i]) != ignore)
        .collect();
    let per_class: Vec<Option<f64>> = (0..classes as u8)
        .map(|k| {
            let p: BTreeSet<usize> = kept.iter().copied().filter(|&i| pred[i] == k).collect();
            let t: BTreeSet<usize> = kept.iter().copied().filter(|&i| truth[i] == k).collect();
            let union = p.union(&t).count();
            (union > 0).then(|| p.intersection(&t).count() as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_class, mean)
}

fn iou_matches(
    pred: &SegMask,
    truth: &SegMask,
    classes: usize,
    ignore: Option<u8>,
) -> Result<(), String> {
    let got =
        fricvae::metrics::mean_iou(pred, truth, classes, ignore).map_err(|e| e.to_string())?;
    let (per_class, mean) = brute_force_iou(pred.classes(), truth.classes(), classes, ignore);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let same = got.per_class.len() == per_class.len()
        && got
            .per_class
            .iter()
            .zip(&per_class)
            .all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => close(*a, *b),
                (None, None) => true,
                _ => false,
            })
        && close(got.mean, mean);
    if same {
        Ok(())
    } else {
        Err(format!(
            "pred {:?} truth {:?}: got {:?}, oracle {:?} / {mean}",
            pred.classes(),
            truth.classes(),
            got,
            per_class
        ))
    }
}

/// Every pair of 3-class masks with at most four pixels, then `samples`
/// random pairs of every shape up to 4×4 with some ignored pixels.
/// Returns the number of pairs compared.
pub fn check_iou_oracle(samples: usize, seed: u64) -> Result<usize, String> {
    let mut checked = 0;
    for (h, w) in [
        (1, 1),
        (1, 2),
        (2, 1),
        (1, 3),
        (3, 1),
        (1, 4),
        (4, 1),
        (2, 2),
    ] {
        let n = h * w;
        let all = 3usize.pow(n as u32);
        let decode = |mut code: usize| {
            let v: Vec<u8> = (0..n)
                .map(|_| {
                    let d = (code % 3) as u8;
                    code /= 3;
                    d
                })
                .collect();
            SegMask::new(h, w, 3, v).unwrap()
        };
        for a in 0..all {
            for b in 0..all {
                iou_matches(&decode(a), &decode(b), 3, None)?;
                checked += 1;
            }
        }
    }
    let mut r = rng(seed);
    for _ in 0..samples {
        let (h, w) = (r.random_range(1..=4), r.random_range(1..=4));
        let draw = |r: &mut ChaCha8Rng| {
            let v = (0..h * w)
                .map(|_| {
                    if r.random_bool(0.1) {
                        fricvae::IGNORE_CLASS
                    } else {
                        r.random_range(0..3u8)
                    }
                })
                .collect();
            SegMask::new(h, w, 3, v).unwrap()
        };
        let (p, t) = (draw(&mut r), draw(&mut r));
        iou_matches(&p, &t, 3, Some(fricvae::IGNORE_CLASS))?;
        iou_matches(&p, &t, 3, None).or_else(|e| {
            // Without an ignore class the 255 label is out of range.
            if p.classes()
                .iter()
                .chain(t.classes())
                .any(|&c| c == fricvae::IGNORE_CLASS)
            {
                Ok(())
            } else {
                Err(e)
            }
        })?;
        checked += 1;
    }
    Ok(checked)
}
