mod common;

use clutterkit::render::{rasterize, render_amodal};
use clutterkit::scene::TextureMode;
use common::*;
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn empty_bin_has_no_instances_and_floor_depth() {
    let scene = manual_scene(vec![], overhead_camera(0.6, 640, 360));
    let fb = rasterize(&scene);
    assert!(fb.instance_ids.as_slice().iter().all(|&i| i == 0));
    // The image center looks at the bin floor.
    assert!((fb.depth.get(320, 180) - 0.6).abs() < 1e-6);
    assert!(fb.depth.as_slice().iter().all(|&d| d > 0.0));
}

#[test]
fn centered_cube_depth_matches_plane() {
    let side = 0.08;
    let cam_h = 0.6;
    let scene = manual_scene(
        vec![instance_at(cube("c", side), Vector3::new(0.0, 0.0, side / 2.0))],
        overhead_camera(cam_h, 640, 360),
    );
    let fb = rasterize(&scene);
    let mask = fb.instance_ids.mask_of(1);
    // Top face spans fx * side / (h - side) = 500 * 0.08 / 0.52 ≈ 76.9 px.
    let n = mask.count();
    assert!((76 * 76..=78 * 78).contains(&n), "{n}");
    for y in 0..360 {
        for x in 0..640 {
            if *mask.get(x, y) {
                assert!((f64::from(*fb.depth.get(x, y)) - (cam_h - side)).abs() < 1e-4);
            }
        }
    }
    // Connected: the bounding box of the mask is completely filled.
    let xs: Vec<_> = (0..640).filter(|&x| (0..360).any(|y| *mask.get(x, y))).collect();
    let ys: Vec<_> = (0..360).filter(|&y| (0..640).any(|x| *mask.get(x, y))).collect();
    assert_eq!(n, xs.len() * ys.len());
    assert_eq!(render_amodal(&scene).masks[0], mask);
}

#[test]
fn covered_cube_is_invisible() {
    let cam = overhead_camera(0.6, 640, 360);
    let scene = manual_scene(
        vec![
            instance_at(cube("small", 0.04), Vector3::new(0.0, 0.0, 0.02)),
            instance_at(cube("big", 0.08), Vector3::new(0.0, 0.0, 0.08)),
        ],
        cam,
    );
    let fb = rasterize(&scene);
    assert_eq!(fb.instance_ids.mask_of(1).count(), 0);
    let amodal = render_amodal(&scene);
    assert!(amodal.masks[0].count() > 0);
}

#[test]
fn rasterize_is_deterministic() {
    let cat = test_catalog(20);
    let scene = random_scene(&cat, &small_config(320, 180), 3);
    assert_eq!(rasterize(&scene), rasterize(&scene));
}

#[test]
fn amodal_contains_visible_on_100_scenes() {
    let cat = test_catalog(30);
    let config = small_config(160, 90);
    for seed in 0..100 {
        let scene = random_scene(&cat, &config, seed);
        let fb = rasterize(&scene);
        let amodal = render_amodal(&scene);
        assert_eq!(amodal.masks.len(), scene.instances.len());
        for (i, m) in amodal.masks.iter().enumerate() {
            let visible = fb.instance_ids.mask_of(i as u16 + 1);
            assert!(visible.is_subset_of(m), "scene {seed} instance {i}");
        }
        let max_id = fb.instance_ids.as_slice().iter().copied().max().unwrap();
        assert!(usize::from(max_id) <= scene.instances.len());
        for (d, id) in fb.depth.as_slice().iter().zip(fb.instance_ids.as_slice()) {
            if *id > 0 {
                assert!(*d > 0.0);
            }
        }
    }
}

#[test]
fn depth_agrees_with_ray_casting() {
    let cat = test_catalog(30);
    let config = small_config(320, 180);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..10 {
        let scene = random_scene(&cat, &config, seed);
        let fb = rasterize(&scene);
        let fg: Vec<_> = (0..fb.depth.len())
            .filter(|&i| fb.instance_ids.as_slice()[i] > 0)
            .collect();
        for _ in 0..10 {
            let i = fg[rng.random_range(0..fg.len())];
            let (x, y) = (i % 320, i / 320);
            let id = fb.instance_ids.as_slice()[i] as usize;
            let inst = &scene.instances[id - 1];
            let eye = Point3::from(scene.camera.pose().translation);
            let far = scene.camera.unproject(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let dir = far - eye;
            // With a unit-depth target, the ray parameter equals axial depth.
            let t = inst
                .mesh
                .triangles()
                .iter()
                .filter_map(|tri| {
                    let w = tri.map(|v| inst.pose.transform_point(&inst.mesh.vertices()[v as usize]));
                    ray_triangle(&eye, &dir, w)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(t.is_finite(), "scene {seed} pixel ({x},{y}) missed instance {id}");
            let d = f64::from(*fb.depth.get(x, y));
            assert!((t - d).abs() < 1e-4 * d.max(1.0), "ray {t} vs raster {d}");
        }
    }
}

#[test]
fn texture_changes_only_rgb() {
    let cat = test_catalog(20);
    let scene = random_scene(&cat, &small_config(320, 180), 8);
    let base = rasterize(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut s = scene.clone();
        for inst in &mut s.instances {
            inst.texture.mode = TextureMode::Checker;
            inst.texture.scale = rng.random_range(0.004..0.02);
            inst.base_color = [rng.random(), rng.random(), rng.random()];
            inst.texture.secondary_color = [rng.random(), rng.random(), rng.random()];
        }
        let fb = rasterize(&s);
        assert_eq!(fb.depth, base.depth);
        assert_eq!(fb.instance_ids, base.instance_ids);
        assert_ne!(fb.rgb, base.rgb);
    }
}
