//! Randomized bin-clutter scene sampling.
//!
//! A scene configuration draws between 1 and 20 object types and fills the
//! bin with 40 instances of them. Instances fall straight down onto an
//! AABB heightmap of the bin floor and earlier instances; anything whose
//! bottom ends up above the rim is culled. Each configuration is captured
//! several times with re-randomized poses, textures, colors, light and camera.

use std::sync::Arc;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ObjectCatalog, Split};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, CameraModel, Intrinsics, Mesh, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinSpec {
    pub inner_width: f64,
    pub inner_depth: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            inner_width: 0.4,
            inner_depth: 0.3,
            wall_height: 0.2,
            wall_thickness: 0.01,
        }
    }
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.inner_width,
            self.inner_depth,
            self.wall_height,
            self.wall_thickness,
        ];
        if dims.iter().all(|&d| d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bin dimensions must be > 0: {self:?}")))
        }
    }

    /// Interior volume: floor at z = 0, centered on the origin.
    pub fn interior(&self) -> Aabb {
        Aabb {
            min: Point3::new(-self.inner_width / 2.0, -self.inner_depth / 2.0, 0.0),
            max: Point3::new(self.inner_width / 2.0, self.inner_depth / 2.0, self.wall_height),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureMode {
    Flat,
    Checker,
    Noise,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub mode: TextureMode,
    /// Pattern period in object-local meters.
    pub scale: f64,
    pub secondary_color: [f64; 3],
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub object_id: String,
    pub mesh: Arc<Mesh>,
    pub pose: Pose,
    pub texture: TextureParams,
    pub base_color: [f64; 3],
}

impl InstanceSpec {
    pub fn aabb(&self) -> Aabb {
        self.mesh.transformed_aabb(&self.pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub intensity: f64,
    pub ambient: f64,
    /// Unit vector from the surface towards the light.
    pub direction: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Settled, culled instances; instance index `i` renders with id `i + 1`.
    pub instances: Vec<InstanceSpec>,
    /// Object types drawn for this configuration before settling and
    /// culling, in draw order. Capture variants re-settle this population.
    pub population: Vec<Arc<Mesh>>,
    pub light: Light,
    pub camera: CameraModel,
    pub bin: BinSpec,
    pub bin_color: [f64; 3],
    pub scene_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Inclusive range of distinct object types per configuration.
    pub type_count: [usize; 2],
    pub target_total: usize,
    pub light_intensity: [f64; 2],
    pub ambient: f64,
    /// Maximum angle of the light direction from vertical, degrees.
    pub light_tilt_deg: f64,
    /// Distance from the camera to the bin-floor center, meters.
    pub camera_distance: [f64; 2],
    /// Angle of the optical axis from vertical, degrees.
    pub camera_tilt_deg: [f64; 2],
    pub focal_length_px: [f64; 2],
    pub width: u32,
    pub height: u32,
    pub texture_scale: [f64; 2],
    pub captures_per_config: usize,
    /// Heightmap cell size used by settling, meters.
    pub settle_cell: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            type_count: [1, 20],
            target_total: 40,
            light_intensity: [0.5, 1.5],
            ambient: 0.2,
            light_tilt_deg: 45.0,
            camera_distance: [0.45, 0.75],
            camera_tilt_deg: [0.0, 30.0],
            focal_length_px: [480.0, 520.0],
            width: 640,
            height: 360,
            texture_scale: [0.004, 0.03],
            captures_per_config: 3,
            settle_cell: 0.002,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("empty range `{name}`: {r:?}")))
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.type_count;
        if lo < 1 || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "type_count range {:?} must satisfy 1 <= lo <= hi",
                self.type_count
            )));
        }
        if self.target_total < hi {
            return Err(Error::InvalidParameter(format!(
                "target_total {} below type_count max {hi}",
                self.target_total
            )));
        }
        check_range("light_intensity", self.light_intensity)?;
        check_range("camera_distance", self.camera_distance)?;
        check_range("camera_tilt_deg", self.camera_tilt_deg)?;
        check_range("focal_length_px", self.focal_length_px)?;
        check_range("texture_scale", self.texture_scale)?;
        if self.camera_distance[0] <= 0.0 || self.focal_length_px[0] <= 0.0 || self.texture_scale[0] <= 0.0 {
            return Err(Error::InvalidParameter(
                "camera distance, focal length and texture scale must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 || self.captures_per_config == 0 {
            return Err(Error::InvalidParameter(
                "image size and captures_per_config must be positive".into(),
            ));
        }
        if !(self.settle_cell > 0.0) {
            return Err(Error::InvalidParameter("settle_cell must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Uniformly distributed rotation (Shoemake's subgroup method).
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    ))
}

pub fn random_texture(config: &SamplerConfig, rng: &mut impl Rng) -> TextureParams {
    let mode = match rng.random_range(0..4) {
        0 => TextureMode::Flat,
        1 => TextureMode::Checker,
        2 => TextureMode::Noise,
        _ => TextureMode::Gradient,
    };
    TextureParams {
        mode,
        scale: uniform(rng, config.texture_scale),
        secondary_color: random_color(rng),
        noise_seed: rng.random(),
    }
}

fn random_instance(mesh: &Arc<Mesh>, config: &SamplerConfig, rng: &mut impl Rng) -> InstanceSpec {
    let rotation = random_rotation(rng);
    let texture = random_texture(config, rng);
    InstanceSpec {
        object_id: mesh.object_id().to_owned(),
        mesh: Arc::clone(mesh),
        // Placement happens in settle; start above the rim.
        pose: Pose::new(rotation, Vector3::new(0.0, 0.0, 1.0)),
        texture,
        base_color: random_color(rng),
    }
}

/// Draws the object types of one configuration: `k` distinct types with
/// `k` uniform in the configured range (capped at the split size), then
/// `target_total` instances uniform over those types.
pub fn draw_population(
    catalog: &ObjectCatalog,
    config: &SamplerConfig,
    split: Split,
    rng: &mut impl Rng,
) -> Result<Vec<Arc<Mesh>>> {
    let pool = catalog.of_split(split);
    if pool.is_empty() {
        return Err(Error::EmptySplit(split.as_str()));
    }
    let hi = config.type_count[1].min(pool.len());
    let lo = config.type_count[0].min(hi);
    let k = rng.random_range(lo..=hi);
    let chosen = rand::seq::index::sample(rng, pool.len(), k).into_vec();
    Ok((0..config.target_total)
        .map(|_| Arc::clone(&pool[chosen[rng.random_range(0..k)]].mesh))
        .collect())
}

/// Floor heightmap over the bin interior storing the highest AABB top seen
/// per cell.
#[derive(Debug, Clone)]
pub struct HeightMap {
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    heights: Vec<f64>,
}

impl HeightMap {
    pub fn new(bin: &BinSpec, cell: f64) -> Self {
        let nx = (bin.inner_width / cell).ceil().max(1.0) as usize;
        let ny = (bin.inner_depth / cell).ceil().max(1.0) as usize;
        Self {
            origin: (-bin.inner_width / 2.0, -bin.inner_depth / 2.0),
            cell,
            nx,
            ny,
            heights: vec![0.0; nx * ny],
        }
    }

    fn cells(&self, min: (f64, f64), max: (f64, f64)) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let span = |lo: f64, hi: f64, o: f64, n: usize| {
            let a = ((lo - o) / self.cell).floor().clamp(0.0, n as f64) as usize;
            let b = ((hi - o) / self.cell).ceil().clamp(0.0, n as f64) as usize;
            if a < b {
                a..b
            } else {
                // Zero-area footprints still touch the cell they sit in.
                let a = a.min(n - 1);
                a..a + 1
            }
        };
        (
            span(min.0, max.0, self.origin.0, self.nx),
            span(min.1, max.1, self.origin.1, self.ny),
        )
    }

    /// Highest stored height under the footprint.
    pub fn rest_height(&self, min: (f64, f64), max: (f64, f64)) -> f64 {
        let (xs, ys) = self.cells(min, max);
        ys.flat_map(|y| xs.clone().map(move |x| (x, y)))
            .map(|(x, y)| self.heights[y * self.nx + x])
            .fold(0.0, f64::max)
    }

    pub fn stamp(&mut self, min: (f64, f64), max: (f64, f64), top: f64) {
        let (xs, ys) = self.cells(min, max);
        for y in ys {
            for x in xs.clone() {
                let h = &mut self.heights[y * self.nx + x];
                *h = h.max(top);
            }
        }
    }
}

/// Drops each instance, keeping its orientation, so that its AABB center
/// sits at the given xy and its AABB bottom rests on the floor or the
/// heightmap of previously placed instances.
pub fn settle_at(instances: Vec<InstanceSpec>, xys: &[(f64, f64)], bin: &BinSpec, cell: f64) -> Vec<InstanceSpec> {
    assert_eq!(instances.len(), xys.len());
    let mut map = HeightMap::new(bin, cell);
    instances
        .into_iter()
        .zip(xys)
        .map(|(mut inst, &(x, y))| {
            let local = inst.mesh.rotated_aabb(&inst.pose.rotation);
            let half = local.extent() / 2.0;
            let lo = (x - half.x, y - half.y);
            let hi = (x + half.x, y + half.y);
            let rest = map.rest_height(lo, hi);
            let c = local.center();
            inst.pose.translation = Vector3::new(x - c.x, y - c.y, rest - local.min.z);
            let top = rest + local.extent().z;
            map.stamp(lo, hi, top);
            inst
        })
        .collect()
}

/// [`settle_at`] with xy positions drawn uniformly inside the bin interior
/// shrunk by each instance's half extent.
pub fn settle(instances: Vec<InstanceSpec>, bin: &BinSpec, cell: f64, rng: &mut impl Rng) -> Vec<InstanceSpec> {
    let xys: Vec<_> = instances
        .iter()
        .map(|inst| {
            let half = inst.mesh.rotated_aabb(&inst.pose.rotation).extent() / 2.0;
            let draw = |rng: &mut dyn rand::RngCore, span: f64, h: f64| {
                let r = span / 2.0 - h;
                if r > 0.0 {
                    rng.random_range(-r..r)
                } else {
                    0.0
                }
            };
            (
                draw(rng, bin.inner_width, half.x),
                draw(rng, bin.inner_depth, half.y),
            )
        })
        .collect();
    settle_at(instances, &xys, bin, cell)
}

/// Removes every instance whose AABB bottom lies above the bin rim.
pub fn cull_above_bin(instances: Vec<InstanceSpec>, bin: &BinSpec) -> Vec<InstanceSpec> {
    instances
        .into_iter()
        .filter(|inst| inst.aabb().min.z <= bin.wall_height)
        .collect()
}

pub fn random_camera(config: &SamplerConfig, rng: &mut impl Rng) -> Result<CameraModel> {
    let d = uniform(rng, config.camera_distance);
    let tilt = uniform(rng, config.camera_tilt_deg).to_radians();
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let f = uniform(rng, config.focal_length_px);
    let eye = Point3::new(
        d * tilt.sin() * azimuth.cos(),
        d * tilt.sin() * azimuth.sin(),
        d * tilt.cos(),
    );
    let intrinsics = Intrinsics {
        fx: f,
        fy: f,
        cx: f64::from(config.width) / 2.0,
        cy: f64::from(config.height) / 2.0,
        width: config.width,
        height: config.height,
    };
    CameraModel::look_at(intrinsics, eye, Point3::origin())
}

fn random_light(config: &SamplerConfig, rng: &mut impl Rng) -> Light {
    let tilt = rng.random_range(0.0..=config.light_tilt_deg).to_radians();
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    Light {
        intensity: uniform(rng, config.light_intensity),
        ambient: config.ambient,
        direction: Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin(), tilt.cos()),
    }
}

/// Randomizes, settles and culls a population into a capturable scene.
pub fn build_scene(
    population: Vec<Arc<Mesh>>,
    config: &SamplerConfig,
    bin: &BinSpec,
    scene_seed: u64,
) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let instances: Vec<_> = population
        .iter()
        .map(|m| random_instance(m, config, &mut rng))
        .collect();
    let settled = settle(instances, bin, config.settle_cell, &mut rng);
    let instances = cull_above_bin(settled, bin);
    let light = random_light(config, &mut rng);
    let camera = random_camera(config, &mut rng)?;
    let bin_color = random_color(&mut rng);
    Ok(SceneSpec {
        instances,
        population,
        light,
        camera,
        bin: *bin,
        bin_color,
        scene_seed,
    })
}

pub fn sample_scene(
    catalog: &ObjectCatalog,
    config: &SamplerConfig,
    bin: &BinSpec,
    split: Split,
    seed: u64,
) -> Result<SceneSpec> {
    config.validate()?;
    bin.validate()?;
    // The population uses its own stream so that it is shared verbatim by
    // the capture variants regardless of how many draws randomization makes.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let population = draw_population(catalog, config, split, &mut rng)?;
    build_scene(population, config, bin, seed)
}

/// Re-captures a configuration `captures_per_config` times; capture `i`
/// (1-based) is seeded with `scene_seed ^ i`.
pub fn capture_variants(scene: &SceneSpec, config: &SamplerConfig) -> Result<Vec<SceneSpec>> {
    (1..=config.captures_per_config as u64)
        .map(|i| build_scene(scene.population.clone(), config, &scene.bin, scene.scene_seed ^ i))
        .collect()
}
