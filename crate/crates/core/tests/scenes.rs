//! End-to-end checks on synthetic scenes with exact ground truth.

use corrdepth::correlation::{
    build_correlation_volume, build_pyramid, CorrelationFeatureMap, CorrelationPyramid, FusionStrategy, LookupConfig,
};
use corrdepth::geometry::{reproject, Pixel, Pose};
use corrdepth::metrics::compute_metrics;
use corrdepth::refine::{
    depth_update_step, fuse_correlation_step, refine_loop, refine_with_gru, GruChannels, GruState, GruWeights,
    OracleUpdater, RefineConfig,
};
use corrdepth::synthscene::{
    gt_flow, gt_flows, make_scene, mutually_visible, scene_features, scene_with_poses, PositionalEncoding, Scene,
    SceneParams, SurfaceKind, DEFAULT_FEATURE_DIM,
};
use corrdepth::triangulation::{flow_from_correlation, init_depth_from_flows};
use corrdepth::upsample::{bilinear_upsample8x, upsample_depth, ContextPyramid, DffmWeights, CONTEXT_CHANNELS};
use corrdepth::{DepthMap, FeatureMap, FlowField};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

fn pyramids(scene: &Scene, seed: u64) -> Vec<CorrelationPyramid> {
    let (r, sources) = scene_features(scene, DEFAULT_FEATURE_DIM, seed).unwrap();
    sources
        .iter()
        .map(|s| build_pyramid(build_correlation_volume(&r, s).unwrap(), 4).unwrap())
        .collect()
}

fn max_relative_error(pred: &DepthMap, gt: &DepthMap) -> f64 {
    pred.data()
        .iter()
        .zip(gt.data())
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, g)| (d - g).abs() / g)
        .fold(0.0, f64::max)
}

#[test]
fn exact_flows_triangulate_to_ground_truth() {
    for (seed, kind) in SurfaceKind::ALL.into_iter().enumerate() {
        let scene = make_scene(kind, SceneParams::default(), 4, seed as u64).unwrap();
        let d0 = init_depth_from_flows(&gt_flows(&scene).unwrap(), scene.rig()).unwrap();
        assert!(2 * d0.valid_count() > d0.data().len(), "{kind}: {}", d0.valid_count());
        let err = max_relative_error(&d0, scene.reference_depth());
        assert!(err < 1e-9, "{kind}: {err:e}");
    }
}

#[test]
fn corrupted_flows_only_move_their_own_pixels() {
    let scene = make_scene(SurfaceKind::TiltedPlane, SceneParams::default(), 4, 11).unwrap();
    let mut flows = gt_flows(&scene).unwrap();
    let (h, w) = (scene.height(), scene.width());
    let mut rng = SplitMix64::seed_from_u64(12);
    let corrupted: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.1)).collect();
    for f in &mut flows {
        for (i, bad) in corrupted.iter().enumerate() {
            if let (true, Some([dx, dy])) = (*bad, f.get(i / w, i % w)) {
                f.set(i / w, i % w, Some([dx + 5.0, dy]));
            }
        }
    }
    let d0 = init_depth_from_flows(&flows, scene.rig()).unwrap();
    let gt = scene.reference_depth();
    for (i, bad) in corrupted.iter().enumerate() {
        let (d, g) = (d0.data()[i], gt.data()[i]);
        if d <= 0.0 {
            continue;
        }
        let rel = (d - g).abs() / g;
        if *bad {
            assert!(rel > 1e-3, "corrupted pixel {i} unchanged");
        } else {
            assert!(rel < 1e-9, "clean pixel {i}: {rel:e}");
        }
    }
}

#[test]
fn x_translation_gives_uniform_disparity() {
    let params = SceneParams::default();
    let b = 0.3;
    let pose = Pose::new(Matrix3::identity(), Vector3::new(-b, 0.0, 0.0)).unwrap();
    let scene = scene_with_poses(SurfaceKind::FrontoParallelPlane, params, vec![pose]).unwrap();
    let fx = params.intrinsics().unwrap().fx;
    let flow = gt_flow(&scene, 1).unwrap();
    let expected = -fx * b / params.depth;
    for y in 0..scene.height() {
        for x in 0..scene.width() {
            if let Some([dx, dy]) = flow.get(y, x) {
                assert!((dx - expected).abs() < 1e-9 && dy.abs() < 1e-9);
            }
        }
    }
    let identity = scene_with_poses(SurfaceKind::Sphere, params, vec![Pose::identity()]).unwrap();
    let flow = gt_flow(&identity, 1).unwrap();
    assert!(flow.vectors().iter().all(|v| v[0].abs() < 1e-12 && v[1].abs() < 1e-12));
}

#[test]
fn gt_flow_matches_reprojection_and_frame_test() {
    let scene = make_scene(SurfaceKind::Step, SceneParams::default(), 3, 5).unwrap();
    let (h, w) = (scene.height(), scene.width());
    let k = scene.rig().intrinsics();
    for s in 1..=3 {
        let flow = gt_flow(&scene, s).unwrap();
        let rel = scene.rig().relative(s - 1);
        for y in 0..h {
            for x in 0..w {
                let p = Pixel::new(x as f64, y as f64);
                let hit = reproject(p, scene.reference_depth().get(y, x), k, rel).ok();
                let in_frame = hit.is_some_and(|(q, z)| {
                    z > 0.0 && q.x >= -0.5 && q.x < w as f64 - 0.5 && q.y >= -0.5 && q.y < h as f64 - 0.5
                });
                assert_eq!(flow.get(y, x).is_some(), in_frame);
                if let (Some([dx, dy]), Some((q, _))) = (flow.get(y, x), hit) {
                    assert!((x as f64 + dx - q.x).abs() < 1e-6 && (y as f64 + dy - q.y).abs() < 1e-6);
                }
            }
        }
    }
}

fn flow_hits(flow: &FlowField, gt: &FlowField, visible: &[bool]) -> (usize, usize) {
    let w = gt.width();
    let mut hits = (0, 0);
    for (i, vis) in visible.iter().enumerate() {
        if !vis {
            continue;
        }
        let (a, b) = (flow.get(i / w, i % w).unwrap(), gt.get(i / w, i % w).unwrap());
        hits.1 += 1;
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        if a[0] == (x + b[0]).round() - x && a[1] == (y + b[1]).round() - y {
            hits.0 += 1;
        }
    }
    hits
}

#[test]
fn positional_features_recover_integer_flow() {
    for (seed, kind) in SurfaceKind::ALL.into_iter().enumerate() {
        let seed = seed as u64;
        let scene = make_scene(kind, SceneParams::default(), 4, seed).unwrap();
        let pyrs = pyramids(&scene, seed);
        let (mut hit, mut total) = (0, 0);
        for (s, pyr) in pyrs.iter().enumerate() {
            let flow = flow_from_correlation(pyr.level(0)).unwrap();
            let (h, t) = flow_hits(&flow, &gt_flow(&scene, s + 1).unwrap(), &mutually_visible(&scene, s + 1).unwrap());
            hit += h;
            total += t;
        }
        let rate = hit as f64 / total as f64;
        assert!(rate >= 0.95, "{kind}: {rate}");
    }
}

#[test]
fn encoding_similarity_falls_with_distance() {
    let bandwidth = 1.2;
    let enc = PositionalEncoding::new(DEFAULT_FEATURE_DIM, bandwidth, 9).unwrap();
    let mut rng = SplitMix64::seed_from_u64(10);
    let point = |rng: &mut SplitMix64| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(1.0..8.0));
    let x = point(&mut rng);
    let e = enc.encode(&x);
    assert!((e.iter().map(|v| v * v).sum::<f32>() - 1.0).abs() < 1e-6);

    let mut previous = f64::INFINITY;
    for step in 0..6 {
        let s = step as f64 * 0.2 / bandwidth;
        let mut mean = 0.0;
        for _ in 0..1000 {
            let a = point(&mut rng);
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let (ea, eb) = (enc.encode(&a), enc.encode(&(a + dir * s)));
            mean += ea.iter().zip(&eb).map(|(p, q)| (*p * *q) as f64).sum::<f64>() / 1000.0;
        }
        assert!(mean < previous, "separation {s}: {mean} after {previous}");
        previous = mean;
    }
}

#[test]
fn center_sample_peaks_at_true_depth() {
    let scene = make_scene(SurfaceKind::TiltedPlane, SceneParams::default(), 4, 21).unwrap();
    let pyrs = pyramids(&scene, 21);
    let cfg = LookupConfig::default();
    let fused = fuse_correlation_step(scene.reference_depth(), &pyrs, scene.rig(), &cfg, FusionStrategy::Averaging).unwrap();
    let visible: Vec<Vec<bool>> = (1..=4).map(|s| mutually_visible(&scene, s).unwrap()).collect();
    let w = scene.width();
    let (mut peak, mut total) = (0, 0);
    for i in 0..scene.height() * w {
        if !visible.iter().all(|v| v[i]) {
            continue;
        }
        total += 1;
        let window = &fused.vector(i / w, i % w)[..cfg.window_len()];
        if window.iter().all(|v| *v <= window[window.len() / 2]) {
            peak += 1;
        }
    }
    assert!(peak as f64 >= 0.95 * total as f64, "{peak} / {total}");
}

#[test]
fn oracle_refinement_converges_from_noisy_depth() {
    for (seed, kind) in [(2, SurfaceKind::Sphere), (3, SurfaceKind::Step)] {
        let scene = make_scene(kind, SceneParams::default(), 4, seed).unwrap();
        let pyrs = pyramids(&scene, seed);
        let gt = scene.reference_depth();
        let mut rng = SplitMix64::seed_from_u64(seed + 100);
        let d0 = DepthMap::from_fn(gt.height(), gt.width(), |y, x| gt.get(y, x) * rng.random_range(0.8..=1.2));
        let iterates = refine_loop(&d0, &pyrs, scene.rig(), &mut OracleUpdater::new(), &RefineConfig::default()).unwrap();
        let mut previous = compute_metrics(&d0, gt).unwrap().abs_rel;
        let first = previous;
        for d in &iterates {
            let a = compute_metrics(d, gt).unwrap().abs_rel;
            assert!(a <= previous, "{kind}: {a} after {previous}");
            previous = a;
        }
        assert!(previous < 0.25 * first, "{kind}: {previous} vs {first}");
    }
}

#[test]
fn zero_weight_upsampling_of_plane_is_accurate() {
    let params = SceneParams {
        height: 12,
        width: 16,
        ..SceneParams::default()
    };
    let scene = make_scene(SurfaceKind::TiltedPlane, params, 1, 4).unwrap();
    let ctx = ContextPyramid::new(FeatureMap::zeros(48, 64, 32), FeatureMap::zeros(24, 32, 48), FeatureMap::zeros(12, 16, 64)).unwrap();
    let up = upsample_depth(scene.reference_depth(), &ctx, &DffmWeights::zeros(CONTEXT_CHANNELS)).unwrap();
    assert_eq!(up.data(), bilinear_upsample8x(scene.reference_depth()).data());
    let m = compute_metrics(&up, &scene.reference_depth_at_scale(8).unwrap()).unwrap();
    assert!(m.abs_rel < 0.01, "{}", m.abs_rel);
}

#[test]
fn seeded_upsampler_doubles_and_stays_positive() {
    let depth = DepthMap::from_fn(6, 8, |y, x| 1.0 + 0.2 * y as f64 + 0.1 * x as f64);
    let mut rng = SplitMix64::seed_from_u64(30);
    let f = |h: usize, w: usize, c: usize, rng: &mut SplitMix64| {
        FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let ctx = ContextPyramid::new(f(24, 32, 32, &mut rng), f(12, 16, 48, &mut rng), f(6, 8, 64, &mut rng)).unwrap();
    let up = upsample_depth(&depth, &ctx, &DffmWeights::seeded(CONTEXT_CHANNELS, 31, 0.5)).unwrap();
    assert_eq!((up.height(), up.width()), (48, 64));
    assert!(up.data().iter().all(|d| *d > 0.0));
}

#[test]
fn gru_refinement_is_identical_across_thread_counts() {
    let params = SceneParams {
        height: 16,
        width: 24,
        ..SceneParams::default()
    };
    let scene = make_scene(SurfaceKind::Sphere, params, 2, 40).unwrap();
    let pyrs = pyramids(&scene, 40);
    let weights = GruWeights::seeded(GruChannels::default(), 41, 0.05);
    let d0 = DepthMap::filled(16, 24, 4.0);
    let cfg = RefineConfig {
        iterations: 3,
        ..RefineConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| refine_with_gru(&d0, &pyrs, scene.rig(), None, &weights, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.len(), 3);
    for (a, b) in one.iter().zip(&four) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_ne!(one[2].data(), d0.data());
}

#[test]
fn depth_update_step_is_translation_equivariant() {
    let (h, w, shift) = (16, 16, (2usize, 3usize));
    let channels = GruChannels::default();
    let weights = GruWeights::seeded(channels, 50, 0.05);
    let mut rng = SplitMix64::seed_from_u64(51);
    let depth = DepthMap::from_fn(h, w, |_, _| rng.random_range(2.0..5.0));
    let corr: Vec<f32> = (0..h * w * 196).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ctx = FeatureMap::new(h, w, 64, (0..h * w * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let hidden = FeatureMap::new(h, w, 64, (0..h * w * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let src = |y: usize, x: usize| (y >= shift.0 && x >= shift.1).then(|| (y - shift.0, x - shift.1));
    let shifted_depth = DepthMap::from_fn(h, w, |y, x| src(y, x).map_or(3.0, |(sy, sx)| depth.get(sy, sx)));
    let shift_map = |m: &FeatureMap| FeatureMap::from_fn(h, w, m.channels(), |y, x, c| src(y, x).map_or(0.0, |(sy, sx)| m.pixel(sy, sx)[c]));
    let corr_map = FeatureMap::new(h, w, 196, corr).unwrap();
    let to_corr = |m: &FeatureMap| CorrelationFeatureMap::new(h, w, 196, m.data().to_vec(), vec![true; h * w]).unwrap();

    let (a, _) = depth_update_step(&depth, &to_corr(&corr_map), Some(&ctx), &GruState { hidden: hidden.clone() }, &weights, 1e-3).unwrap();
    let (b, _) = depth_update_step(
        &shifted_depth,
        &to_corr(&shift_map(&corr_map)),
        Some(&shift_map(&ctx)),
        &GruState { hidden: shift_map(&hidden) },
        &weights,
        1e-3,
    )
    .unwrap();
    // Pre-convolution, reset gate, candidate and the two head layers: five 3x3 hops.
    let margin = 5;
    for y in margin..h - margin - shift.0 {
        for x in margin..w - margin - shift.1 {
            assert_eq!(a.get(y, x).to_bits(), b.get(y + shift.0, x + shift.1).to_bits(), "({y}, {x})");
        }
    }
}
