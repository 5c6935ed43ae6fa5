//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use pldepth::bench::{run_benchmark, BenchConfig, StageSet};
use pldepth::eval::{compute_metrics, post_process_fuse, EvalConfig, Scaling};
use pldepth::io::{load_weights, pcd_bytes, ply_bytes, save_weights};
use pldepth::loss::{reconstruction_error, smoothness_loss, ssim, total_loss, LossConfig};
use pldepth::network::{build_encoder, Shape, WeightStore};
use pldepth::optimizer::{check_gradients, optimize_disparity, synthetic_pair, OptimizerConfig, FD_STEP};
use pldepth::{
    back_project, disparity_to_depth, hflip, DepthMap, DisparityMap, ImageBuffer, Intrinsics, PointCloud, Projection,
    StereoRig, StereoScene,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let stereo = build_encoder(true).param_count();
    let mono = build_encoder(false).param_count();
    ensure(stereo.total == 11_185_920, format!("stereo total {}", stereo.total))?;
    ensure(mono.total == 11_176_512, format!("mono total {}", mono.total))?;
    ensure(stereo.per_layer[0].1 == 18_816, format!("first conv {}", stereo.per_layer[0].1))?;
    ensure(stereo.per_layer[1].1 == 128, format!("first bn {}", stereo.per_layer[1].1))?;
    let blocks: Vec<u64> = stereo
        .per_layer
        .iter()
        .filter(|(n, _)| n.contains(".layer"))
        .map(|(_, c)| *c)
        .collect();
    let want = [73_984, 73_984, 230_144, 295_424, 919_040, 1_180_672, 3_673_088, 4_720_640];
    ensure(blocks == want, format!("block counts {blocks:?}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("stereo {} / mono {} parameters", stereo.total, mono.total))
}

fn criterion_2() -> Outcome {
    let spec = build_encoder(true);
    ensure(spec.input_shape == Shape::new(6, 192, 640), "input shape")?;
    let shapes = spec.propagate_shapes().map_err(|e| e.to_string())?;
    let got = [
        shapes[0],
        shapes[3],
        shapes[spec.feature_taps[2]],
        shapes[spec.feature_taps[3]],
        shapes[spec.feature_taps[4]],
    ];
    let want = [
        Shape::new(64, 96, 320),
        Shape::new(64, 48, 160),
        Shape::new(128, 24, 80),
        Shape::new(256, 12, 40),
        Shape::new(512, 6, 20),
    ];
    ensure(got == want, format!("shapes {got:?}"))?;
    let c = spec.census();
    let census = (c.conv2d, c.batchnorm, c.relu, c.maxpool, c.basic_blocks);
    ensure(census == (20, 20, 17, 1, 8), format!("census {census:?}"))?;
    Ok("shape chain and 20/20/17/1/8 census match".into())
}

fn smooth_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> DisparityMap {
    let base = rng.random_range(1.5..3.5);
    let (a, fx, fy, p) = (
        rng.random_range(0.2..0.8),
        rng.random_range(0.1..0.3),
        rng.random_range(0.1..0.3),
        rng.random_range(0.0..6.0),
    );
    DisparityMap::new(
        ImageBuffer::from_fn(w, h, 1, |x, y, _| {
            base + a * (fx * x as f64 + p).sin() * (fy * y as f64 + 0.5 * p).cos()
        })
        .unwrap(),
    )
    .unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for scene_idx in 0..5u64 {
        let d0 = rng.random_range(1.5..4.0);
        let pair = synthetic_pair(32, 32, 3, d0, 1000 + scene_idx).map_err(|e| e.to_string())?;
        let scene = pair.scene().map_err(|e| e.to_string())?;
        let d = smooth_field(32, 32, &mut rng);
        let report = check_gradients(&scene, &d, &cfg, 20, scene_idx).map_err(|e| e.to_string())?;
        ensure(!report.degenerate, format!("scene {scene_idx} degenerate"))?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    ensure(FD_STEP == 1e-4, "finite-difference step")?;
    ensure(checked >= 100, format!("only {checked} pixels"))?;
    ensure(worst < 1e-3, format!("max relative error {worst:.3e}"))?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("{checked} pixels over 5 scenes, max rel error {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let pair = synthetic_pair(64, 64, 3, 4.0, 404).map_err(|e| e.to_string())?;
    let (d, trace) = optimize_disparity(&pair.left, &pair.right, &pair.rig, &pair.rig.left, &OptimizerConfig::default())
        .map_err(|e| e.to_string())?;
    let margin = 8;
    let mut err = 0.0;
    let mut n = 0;
    for y in margin..64 - margin {
        for x in margin..64 - margin {
            err += (d.get(x, y) - 4.0).abs();
            n += 1;
        }
    }
    let mae = err / n as f64;
    ensure(mae < 0.25, format!("interior MAE {mae:.4} px"))?;
    ensure(trace.is_monotone(), "loss increased within a level")?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("interior MAE {mae:.4} px, monotone trace"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let k = Intrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375).map_err(|e| e.to_string())?;
    let rig = StereoRig::new(k, 0.5327).map_err(|e| e.to_string())?;
    let bf = rig.disparity_depth_product();
    let mut worst_px: f64 = 0.0;
    for _ in 0..100_000 {
        let (x, y) = (rng.random_range(0.0..1242.0), rng.random_range(0.0..375.0));
        let z = rng.random_range(0.5..80.0);
        match k.project(k.back_project_pixel(x, y, z)) {
            Projection::Pixel { x: px, y: py } => worst_px = worst_px.max((px - x).abs()).max((py - y).abs()),
            Projection::BehindCamera => return Err("point behind camera".into()),
        }
    }
    ensure(worst_px <= 1e-9, format!("pixel error {worst_px:.3e}"))?;

    let disparity = DisparityMap::new(
        ImageBuffer::from_fn(1242, 375, 1, |_, _, _| rng.random_range(0.01..300.0)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let depth = disparity_to_depth(&disparity, &rig);
    let mut worst_rel: f64 = 0.0;
    for (z, d) in depth.values().data().iter().zip(disparity.values().data()) {
        worst_rel = worst_rel.max((z * d - bf).abs() / bf);
    }
    ensure(worst_rel <= 1e-12, format!("z·d relative error {worst_rel:.3e}"))?;

    let cloud = back_project(&depth, &k, None).map_err(|e| e.to_string())?;
    for (i, p) in cloud.points.iter().enumerate() {
        let (x, y) = ((i % 1242) as f64, (i / 1242) as f64);
        let Projection::Pixel { x: px, y: py } = k.project(*p) else {
            return Err("back-projected point behind camera".into());
        };
        worst_px = worst_px.max((px - x).abs()).max((py - y).abs());
    }
    ensure(worst_px <= 1e-9, format!("map round trip pixel error {worst_px:.3e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "{} points, max pixel error {worst_px:.1e}, max z·d rel error {worst_rel:.1e}",
        100_000 + cloud.len()
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let cfg = EvalConfig {
        scaling: Scaling::None,
        ..EvalConfig::default()
    };
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let density = rng.random_range(0.05..0.6);
        let gt_rows: Vec<Vec<Option<f64>>> = (0..32)
            .map(|_| {
                (0..32)
                    .map(|_| rng.random_bool(density).then(|| rng.random_range(0.5..90.0)))
                    .collect()
            })
            .collect();
        let pred_rows: Vec<Vec<f64>> = (0..32)
            .map(|_| (0..32).map(|_| rng.random_range(0.0005..95.0)).collect())
            .collect();
        let gt_vals: Vec<f64> = gt_rows.iter().flatten().map(|g| g.unwrap_or(0.0)).collect();
        let gt = DepthMap::new(ImageBuffer::from_plane(32, 32, gt_vals).unwrap()).unwrap();
        let pred = DepthMap::new(ImageBuffer::from_plane(32, 32, pred_rows.concat()).unwrap()).unwrap();
        let oracle = common::metrics_oracle(&pred_rows, &gt_rows, cfg.min_depth, cfg.max_depth);
        let r = match compute_metrics(&pred, &gt, &cfg) {
            Ok(r) => r,
            Err(e) if oracle.n == 0 => {
                ensure(matches!(e, pldepth::Error::EmptyEvaluation), "empty case error kind")?;
                continue;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        ensure(r.n_valid == oracle.n, format!("case {case}: count {} vs {}", r.n_valid, oracle.n))?;
        for (a, b) in [
            (r.abs_rel, oracle.abs_rel),
            (r.sq_rel, oracle.sq_rel),
            (r.rmse, oracle.rmse),
            (r.rmse_log, oracle.rmse_log),
            (r.delta1, oracle.deltas[0]),
            (r.delta2, oracle.deltas[1]),
            (r.delta3, oracle.deltas[2]),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max deviation from oracle {worst:.3e}"))?;

    let g = DepthMap::new(ImageBuffer::from_fn(32, 32, 1, |x, y, _| 1.0 + 0.5 * x as f64 + 0.25 * y as f64).unwrap()).unwrap();
    let id = compute_metrics(&g, &g, &cfg).map_err(|e| e.to_string())?;
    ensure(
        id.abs_rel == 0.0 && id.sq_rel == 0.0 && id.rmse == 0.0 && id.rmse_log == 0.0,
        "identity errors not zero",
    )?;
    ensure(id.delta1 == 1.0 && id.delta2 == 1.0 && id.delta3 == 1.0, "identity deltas not 1")?;
    let scaled = DepthMap::new(g.values().map(|v| 1.25 * v).unwrap()).unwrap();
    let r = compute_metrics(&scaled, &g, &cfg).map_err(|e| e.to_string())?;
    ensure(r.delta1 == 0.0 && r.delta2 == 1.0 && r.delta3 == 1.0, format!("1.25 deltas {r:?}"))?;
    ensure((r.abs_rel - 0.25).abs() <= 1e-12, format!("1.25 abs_rel {}", r.abs_rel))?;
    Ok(format!("50 sparse cases, max deviation {worst:.1e}; identity and 1.25 cases exact"))
}

fn criterion_7() -> Outcome {
    let cfg = LossConfig::default();
    ensure(cfg.lambda_smooth == 0.001, "default smoothness weight")?;
    let pair = synthetic_pair(40, 30, 3, 2.0, 707).map_err(|e| e.to_string())?;
    let img = pair.left.clone();
    let s = ssim(&img, &img, &cfg).map_err(|e| e.to_string())?;
    let ssim_dev = s.data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure(ssim_dev <= 1e-9, format!("SSIM(I,I) deviation {ssim_dev:.3e}"))?;
    let re = reconstruction_error(&img, &img, &cfg).map_err(|e| e.to_string())?;
    ensure(re.data().iter().all(|&v| v == 0.0), "RE(I,I) not zero")?;
    let same = StereoScene::from_pair(img.clone(), img.clone(), pair.rig).map_err(|e| e.to_string())?;
    let zero = DisparityMap::constant(40, 30, 0.0).unwrap();
    let l0 = total_loss(&same, &zero, &cfg).map_err(|e| e.to_string())?;
    ensure(l0.total == 0.0, format!("identical-pair loss {}", l0.total))?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d = smooth_field(40, 30, &mut rng);
    let s1 = smoothness_loss(&d, &img).map_err(|e| e.to_string())?;
    let mut worst_scale: f64 = 0.0;
    for c in [0.01, 0.5, 3.0, 1e3] {
        let dc = DisparityMap::new(d.values().map(|v| c * v).unwrap()).unwrap();
        let sc = smoothness_loss(&dc, &img).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max((sc - s1).abs());
    }
    ensure(worst_scale <= 1e-12, format!("smoothness scale deviation {worst_scale:.3e}"))?;

    let scene = pair.scene().map_err(|e| e.to_string())?;
    let b = total_loss(&scene, &d, &cfg).map_err(|e| e.to_string())?;
    let split = (b.total - (b.photometric + 0.001 * b.smoothness)).abs();
    ensure(split <= 1e-12, format!("total vs parts {split:.3e}"))?;
    Ok(format!(
        "SSIM dev {ssim_dev:.1e}, scale dev {worst_scale:.1e}, decomposition dev {split:.1e}"
    ))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..20 {
        let (w, h) = (rng.random_range(1..120), rng.random_range(1..40));
        let vals = ImageBuffer::from_fn(w, h, 1, |_, _, _| rng.random_range(0.0..200.0)).unwrap();
        let valid: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.9)).collect();
        let d = DisparityMap::with_mask(vals, valid.clone()).unwrap();
        let flipped = DisparityMap::with_mask(hflip(d.values()), pldepth::image::hflip_mask(&valid, w)).unwrap();
        let fused = post_process_fuse(&d, &flipped).map_err(|e| e.to_string())?;
        let same = fused
            .values()
            .data()
            .iter()
            .zip(d.values().data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, format!("case {case} ({w}x{h}) not bit-exact"))?;
    }
    Ok("20 random maps reproduced bit for bit".into())
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let n = 1000;
    let points: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-40.0..40.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.5..80.0),
            ]
        })
        .collect();
    let intensity: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    for with_i in [false, true] {
        let cloud = PointCloud {
            points: points.clone(),
            intensity: with_i.then(|| intensity.clone()),
        };
        for (fmt, parsed) in [
            ("ply", common::read_ply(&ply_bytes(&cloud).unwrap())),
            ("pcd", common::read_pcd(&pcd_bytes(&cloud).unwrap())),
        ] {
            ensure(parsed.records.len() == n, format!("{fmt}: point count"))?;
            ensure(parsed.properties.len() == if with_i { 4 } else { 3 }, format!("{fmt}: properties"))?;
            for (k, r) in parsed.records.iter().enumerate() {
                for a in 0..3 {
                    ensure(r[a] == points[k][a] as f32, format!("{fmt}: point {k} axis {a}"))?;
                }
                if with_i {
                    ensure(r[3] == intensity[k] as f32, format!("{fmt}: intensity {k}"))?;
                }
            }
        }
    }

    let spec = build_encoder(true);
    let store = WeightStore::random_for(&spec, 9);
    let bytes = save_weights(&store).map_err(|e| e.to_string())?;
    let back = load_weights(&bytes).map_err(|e| e.to_string())?;
    ensure(back == store, "weight store round trip")?;

    let mut small = WeightStore::new();
    small.insert("enc.conv1.weight", vec![4, 2, 3, 3], (0..72).map(|i| i as f32 * 0.5).collect()).unwrap();
    small.insert("enc.bn1.bias", vec![4], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
    let small_bytes = save_weights(&small).map_err(|e| e.to_string())?;
    let mut fuzzed = 0;
    for cut in 0..small_bytes.len() {
        let r = std::panic::catch_unwind(|| load_weights(&small_bytes[..cut]));
        match r {
            Ok(Err(pldepth::Error::Load { .. })) => fuzzed += 1,
            Ok(other) => return Err(format!("truncation at {cut} gave {:?}", other.map(|s| s.len()))),
            Err(_) => return Err(format!("loader panicked on truncation at {cut}")),
        }
    }
    for _ in 0..2000 {
        let mut b = if rng.random_bool(0.5) { small_bytes.clone() } else { bytes[..rng.random_range(0..4096)].to_vec() };
        for _ in 0..rng.random_range(1..6) {
            if b.is_empty() {
                break;
            }
            let i = rng.random_range(0..b.len());
            b[i] = rng.random();
        }
        let cut = rng.random_range(0..=b.len());
        if std::panic::catch_unwind(|| load_weights(&b[..cut])).is_err() {
            return Err("loader panicked on fuzzed input".into());
        }
        fuzzed += 1;
    }
    Ok(format!("PLY/PCD exact at f32, {} tensors round-tripped, {fuzzed} fuzzed inputs rejected cleanly", store.len()))
}

fn criterion_10() -> Outcome {
    let model = (640, 192);
    let run = |image: (usize, usize)| {
        run_benchmark(&BenchConfig {
            model_res: model,
            image_res: image,
            iterations: 100,
            warmup: 5,
            stages: StageSet::without_network(),
            threads: Some(1),
            seed: 10,
        })
    };
    let fast = run(model).map_err(|e| e.to_string())?;
    ensure(fast.fast_path && fast.stages[0].skipped && fast.stages[2].skipped, "fast path not flagged")?;
    let mut slowest_margin = f64::INFINITY;
    for image in [(1024, 320), (1242, 375), (1280, 384)] {
        let r = run(image).map_err(|e| e.to_string())?;
        ensure(!r.fast_path, "resize path flagged as fast")?;
        ensure(
            fast.mean_ms < r.mean_ms,
            format!(
                "fast path {:.3} ms not below {}x{} {:.3} ms",
                fast.mean_ms, image.0, image.1, r.mean_ms
            ),
        )?;
        slowest_margin = slowest_margin.min(r.mean_ms - fast.mean_ms);
    }

    let k = Intrinsics::new(707.0, 707.0, 511.5, 159.5, 1024, 320).unwrap();
    let depth = DepthMap::new(ImageBuffer::from_fn(1024, 320, 1, |x, y, _| 1.0 + ((x * 31 + y * 17) % 790) as f64 * 0.1).unwrap()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut times = Vec::new();
    let mut points = 0;
    for _ in 0..5 {
        let start = Instant::now();
        let cloud = pool.install(|| back_project(&depth, &k, None)).map_err(|e| e.to_string())?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        points = cloud.len();
    }
    times.sort_by(f64::total_cmp);
    let median = times[2];
    ensure(points == 327_680, format!("{points} points"))?;
    ensure(median < 50.0, format!("back-projection median {median:.2} ms"))?;
    Ok(format!(
        "fast path {:.3} ms mean, at least {:.3} ms below resize paths; back-projection {median:.2} ms",
        fast.mean_ms, slowest_margin
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "parameter counts", criterion_1),
        (2, "encoder shapes and census", criterion_2),
        (3, "gradient fidelity", criterion_3),
        (4, "geometry recovery", criterion_4),
        (5, "projection round trip", criterion_5),
        (6, "metric oracle equivalence", criterion_6),
        (7, "loss sanity", criterion_7),
        (8, "post-processing identity", criterion_8),
        (9, "serialization round trips", criterion_9),
        (10, "benchmark methodology", criterion_10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}): {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} ({name}): {detail} [{secs:.2} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
