#![allow(dead_code)]

use std::sync::Arc;

use clutterkit::catalog::{split_catalog, ObjectCatalog, Split};
use clutterkit::geometry::{CameraModel, Intrinsics, Mesh, Pose};
use clutterkit::scene::{
    sample_scene, BinSpec, InstanceSpec, Light, SamplerConfig, SceneSpec, TextureMode, TextureParams,
};
use clutterkit::shapes;
use nalgebra::{Point3, Vector3};

pub fn intrinsics(width: u32, height: u32) -> Intrinsics {
    Intrinsics {
        fx: 500.0 * f64::from(width) / 640.0,
        fy: 500.0 * f64::from(width) / 640.0,
        cx: f64::from(width) / 2.0,
        cy: f64::from(height) / 2.0,
        width,
        height,
    }
}

pub fn overhead_camera(height_m: f64, width: u32, height: u32) -> CameraModel {
    CameraModel::look_at(
        intrinsics(width, height),
        Point3::new(0.0, 0.0, height_m),
        Point3::origin(),
    )
    .unwrap()
}

pub fn flat_texture() -> TextureParams {
    TextureParams {
        mode: TextureMode::Flat,
        scale: 0.01,
        secondary_color: [0.1, 0.9, 0.2],
        noise_seed: 0,
    }
}

pub fn instance_at(mesh: Arc<Mesh>, translation: Vector3<f64>) -> InstanceSpec {
    InstanceSpec {
        object_id: mesh.object_id().into(),
        mesh,
        pose: Pose::from_translation(translation),
        texture: flat_texture(),
        base_color: [0.7, 0.3, 0.2],
    }
}

pub fn cube(id: &str, side: f64) -> Arc<Mesh> {
    Arc::new(shapes::cuboid(id, Vector3::new(side, side, side)).unwrap())
}

pub fn manual_scene(instances: Vec<InstanceSpec>, camera: CameraModel) -> SceneSpec {
    SceneSpec {
        population: instances.iter().map(|i| Arc::clone(&i.mesh)).collect(),
        instances,
        light: Light {
            intensity: 1.0,
            ambient: 0.2,
            direction: Vector3::new(0.3, 0.2, 1.0).normalize(),
        },
        camera,
        bin: BinSpec::default(),
        bin_color: [0.5, 0.5, 0.6],
        scene_seed: 0,
    }
}

pub fn test_catalog(n: usize) -> ObjectCatalog {
    let c = ObjectCatalog::from_meshes(shapes::builtin_catalog(n, 21, (0.03, 0.15)).unwrap()).unwrap();
    split_catalog(&c, 4).unwrap()
}

pub fn small_config(width: u32, height: u32) -> SamplerConfig {
    SamplerConfig {
        width,
        height,
        focal_length_px: [500.0 * f64::from(width) / 640.0; 2],
        ..Default::default()
    }
}

pub fn random_scene(catalog: &ObjectCatalog, config: &SamplerConfig, seed: u64) -> SceneSpec {
    sample_scene(catalog, config, &BinSpec::default(), Split::Train, seed).unwrap()
}

/// Möller–Trumbore; returns the ray parameter of the hit.
pub fn ray_triangle(origin: &Point3<f64>, dir: &Vector3<f64>, tri: [Point3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-1e-9..=1.0 + 1e-9).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-9 || u + v > 1.0 + 1e-9 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}
