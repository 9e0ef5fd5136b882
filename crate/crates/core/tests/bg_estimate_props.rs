mod common;

use std::collections::BTreeMap;

use common::shading_fpsnr;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadefield::bg_estimate::{
    estimate, eval_bie_loss, extract_features, fit, BgFeatures, FeatureLayout,
};
use shadefield::envlight::{
    descriptor_from_envmap, make_partition, rotate_envmap, IlluminationDescriptor,
};
use shadefield::forge::{
    build_tuples, crop_background, random_envs, random_scenes, rotated_env, ForgeConfig,
};
use shadefield::raster::{Mask, RgbImage};
use shadefield::shading_field::{compose_shading, shading_bases, ShadingBases, SurfaceGeometry};

fn noise_image(w: usize, h: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| {
        [
            rng.random(),
            rng.random::<f64>() * 2.0,
            rng.random::<f64>() * 0.3,
        ]
    })
}

/// Block means by explicit cell bounds on pixel centers.
fn block_means(img: &RgbImage, gw: usize, gh: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = Vec::new();
    for gy in 0..gh {
        for gx in 0..gw {
            let (x_lo, x_hi) = (
                gx as f64 * w as f64 / gw as f64,
                (gx + 1) as f64 * w as f64 / gw as f64,
            );
            let (y_lo, y_hi) = (
                gy as f64 * h as f64 / gh as f64,
                (gy + 1) as f64 * h as f64 / gh as f64,
            );
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for y in 0..h {
                let cy = y as f64 + 0.5;
                if cy < y_lo || cy >= y_hi {
                    continue;
                }
                for x in 0..w {
                    let cx = x as f64 + 0.5;
                    if cx < x_lo || cx >= x_hi {
                        continue;
                    }
                    let p = img.get(x, y);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
            }
            out.extend(acc.map(|v| v / n));
        }
    }
    out
}

fn synthetic_problem(
    n: usize,
    k: usize,
    seed: u64,
) -> (
    Vec<(BgFeatures, IlluminationDescriptor)>,
    Vec<f64>,
    Vec<f64>,
) {
    let layout = FeatureLayout::new(2, 2);
    let part = make_partition(k).unwrap();
    let out = 3 * k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..layout.dim * out).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..out).map(|_| rng.random::<f64>()).collect();
    let data = (0..n)
        .map(|_| {
            let f: Vec<f64> = (0..layout.dim).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..out)
                .map(|o| b[o] + (0..layout.dim).map(|i| m[i * out + o] * f[i]).sum::<f64>())
                .collect();
            (
                BgFeatures { layout, values: f },
                IlluminationDescriptor::from_flat(part, &y).unwrap(),
            )
        })
        .collect();
    (data, m, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pooled_grid_matches_block_means(w in 4usize..40, h in 4usize..40, gw in 1usize..5, gh in 1usize..5, seed in any::<u64>()) {
        let img = noise_image(w, h, seed);
        let f = extract_features(&img, gw, gh).unwrap();
        let oracle = block_means(&img, gw, gh);
        for (a, b) in f.values.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn training_residual_grows_with_lambda(seed in any::<u64>()) {
        let (mut data, _, _) = synthetic_problem(60, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for (_, d) in &mut data {
            for c in 0..3 {
                for v in &mut d.l[c] {
                    *v += rng.random::<f64>() * 0.5;
                }
            }
        }
        let mut last = 0.0;
        for lambda in [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0] {
            let mse = fit(&data, lambda).unwrap().training_mse.unwrap();
            prop_assert!(mse >= last - 1e-12, "lambda {lambda}: {mse} < {last}");
            last = mse;
        }
    }
}

#[test]
fn realizable_map_is_recovered() {
    let (data, m, b) = synthetic_problem(80, 4, 3);
    let est = fit(&data, 0.0).unwrap();
    assert!(est.training_mse.unwrap() < 1e-12);
    for (w, truth) in est.w.iter().zip(&m) {
        assert!((w - truth).abs() < 1e-6);
    }
    for (w, truth) in est.bias.iter().zip(&b) {
        assert!((w - truth).abs() < 1e-6);
    }
    let (f, d) = &data[17];
    let p = est.predict_features(f).unwrap();
    for (a, e) in p.flatten().iter().zip(d.flatten()) {
        assert!((a - e).abs() < 1e-5);
    }
}

#[test]
fn huge_lambda_predicts_the_mean() {
    let (data, _, _) = synthetic_problem(50, 4, 8);
    let est = fit(&data, 1e12).unwrap();
    assert!(est.w.iter().all(|v| v.abs() < 1e-6));
    let mean: Vec<f64> = (0..12)
        .map(|o| data.iter().map(|(_, d)| d.flatten()[o]).sum::<f64>() / data.len() as f64)
        .collect();
    let p = est.predict_features(&data[0].0).unwrap().flatten();
    for (a, e) in p.iter().zip(&mean) {
        assert!((a - e).abs() < 1e-4 * e.abs().max(1.0));
    }
}

#[test]
fn estimates_are_nonnegative_even_for_black_backgrounds() {
    let envs = random_envs(24, 4, (32, 16)).unwrap();
    let part = make_partition(16).unwrap();
    let data: Vec<_> = envs
        .iter()
        .flat_map(|e| {
            [0.0, 135.0, 270.0].map(|a| {
                let bg = crop_background(&e.env, a, 60.0, (64, 48)).unwrap();
                (
                    extract_features(&bg, 16, 12).unwrap(),
                    descriptor_from_envmap(&rotate_envmap(&e.env, a), &part),
                )
            })
        })
        .collect();
    let est = fit(&data, 1e-2).unwrap();
    let black = RgbImage::new(64, 48);
    assert!(estimate(&est, &black)
        .unwrap()
        .flatten()
        .iter()
        .all(|v| *v >= 0.0));
    for seed in 0..5 {
        let d = estimate(&est, &noise_image(64, 48, seed).scale(20.0)).unwrap();
        assert!(d.flatten().iter().all(|v| *v >= 0.0));
    }
}

/// Toy bases with a known layout for loss checks.
fn toy_bases(k: usize, w: usize, h: usize, seed: u64) -> ShadingBases {
    let geom = common::object_geometry(&common::sphere_scene(), (w, h)).0;
    let mut b = shading_bases(&geom, &make_partition(k).unwrap(), &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut b.data {
        *v = rng.random();
    }
    b
}

fn random_descriptor(k: usize, rng: &mut ChaCha8Rng) -> IlluminationDescriptor {
    let v: Vec<f64> = (0..3 * k).map(|_| rng.random::<f64>() * 3.0).collect();
    IlluminationDescriptor::from_flat(make_partition(k).unwrap(), &v).unwrap()
}

#[test]
fn bie_loss_zero_and_single_coefficient() {
    let bases = toy_bases(8, 24, 18, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt = random_descriptor(8, &mut rng);
    let gt_s = compose_shading(&bases, &gt).unwrap();
    assert_eq!(eval_bie_loss(&gt, &gt, &bases, &gt_s).unwrap(), 0.0);
    let (delta, c, k) = (0.25, 1, 5);
    let mut pred = gt.clone();
    pred.l[c][k] += delta;
    let loss = eval_bie_loss(&pred, &gt, &bases, &gt_s).unwrap();
    // the shading change lives in one of three channels
    let expect = delta / 24.0 + delta * bases.basis_mean(k) / 3.0;
    assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
}

#[test]
fn bie_loss_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [4, 16] {
        let bases = toy_bases(k, 20, 16, k as u64);
        for _ in 0..5 {
            let gt = random_descriptor(k, &mut rng);
            let pred = random_descriptor(k, &mut rng);
            let gt_s = RgbImage::from_fn(20, 16, |_, _| [rng.random(), rng.random(), rng.random()]);
            let loss = eval_bie_loss(&pred, &gt, &bases, &gt_s).unwrap();
            assert!((loss - common::brute_force_bie_loss(&pred, &gt, &bases, &gt_s)).abs() < 1e-7);
        }
    }
}

#[test]
fn fitted_estimator_beats_the_mean_descriptor_on_held_out_tuples() {
    let k = 32;
    let part = make_partition(k).unwrap();
    let train_envs = random_envs(50, 61, (32, 16)).unwrap();
    let data: Vec<_> = train_envs
        .iter()
        .flat_map(|e| {
            [0.0, 90.0, 180.0, 270.0].map(|a| {
                let bg = crop_background(&e.env, a, 60.0, (96, 72)).unwrap();
                (
                    extract_features(&bg, 16, 12).unwrap(),
                    descriptor_from_envmap(&rotate_envmap(&e.env, a), &part),
                )
            })
        })
        .collect();
    assert_eq!(data.len(), 200);
    let est = fit(&data, 1e-2).unwrap();
    let mean_flat: Vec<f64> = (0..3 * k)
        .map(|o| data.iter().map(|(_, d)| d.flatten()[o]).sum::<f64>() / data.len() as f64)
        .collect();
    let mean = IlluminationDescriptor::from_flat(part, &mean_flat).unwrap();

    let envs = random_envs(6, 62, (32, 16)).unwrap();
    let cfg = ForgeConfig {
        seed: 63,
        render_size: (128, 96),
        bg_size: (96, 72),
        ..Default::default()
    };
    let tuples = build_tuples(&random_scenes(2, 64), &envs, &cfg, &BTreeMap::new()).unwrap();
    let (mut shade_est, mut shade_mean) = (0.0, 0.0);
    let (mut psnr_est, mut psnr_mean, mut psnr_gt) = (0.0, 0.0, 0.0);
    for t in &tuples {
        let geom = SurfaceGeometry::from_depth(
            t.depth.clone(),
            t.camera.intrinsics,
            t.camera.rotation(),
            2,
        )
        .unwrap();
        let bases =
            shading_bases(&geom, &part, &cfg.shadow.with_ground(t.camera.ground_plane)).unwrap();
        let gt =
            descriptor_from_envmap(&rotated_env(&envs, t.plan.env, t.plan.rotation_deg), &part);
        let pred = estimate(&est, &t.background).unwrap();
        // shading term only: subtract the descriptor term
        let desc_term = |p: &IlluminationDescriptor| {
            p.flatten()
                .iter()
                .zip(gt.flatten())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / (3 * k) as f64
        };
        shade_est += eval_bie_loss(&pred, &gt, &bases, &t.shading_gt).unwrap() - desc_term(&pred);
        shade_mean += eval_bie_loss(&mean, &gt, &bases, &t.shading_gt).unwrap() - desc_term(&mean);
        let fg = Mask::from_fn(t.mask.width, t.mask.height, |x, y| {
            t.mask.data[y * t.mask.width + x] >= 1.0
        });
        psnr_est += shading_fpsnr(&compose_shading(&bases, &pred).unwrap(), &t.shading_gt, &fg);
        psnr_mean += shading_fpsnr(&compose_shading(&bases, &mean).unwrap(), &t.shading_gt, &fg);
        psnr_gt += shading_fpsnr(&compose_shading(&bases, &gt).unwrap(), &t.shading_gt, &fg);
    }
    let n = tuples.len() as f64;
    eprintln!(
        "held-out shading L1: estimator {:.4}, mean {:.4}; fPSNR estimator {:.2}, mean {:.2}, gt {:.2}",
        shade_est / n,
        shade_mean / n,
        psnr_est / n,
        psnr_mean / n,
        psnr_gt / n
    );
    assert!(shade_est < shade_mean);
    assert!(psnr_est > psnr_mean);
}
