//! Software z-buffer rasterizer producing aligned RGB, metric depth and
//! instance-id planes, plus per-instance amodal coverage masks.
//!
//! Pixel `(x, y)` samples the image plane at `(x + 0.5, y + 0.5)`. Coverage
//! uses edge functions evaluated with a canonical endpoint order so the two
//! triangles sharing an edge see exactly negated values; together with a
//! top-left tie rule every sample on a shared edge belongs to exactly one of
//! them. Depth is interpolated as `1/z`, which is exact for planar triangles.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Mesh, Pose};
use crate::grid::{BinaryMask, DepthMap, Grid, InstanceMap, ValidityMask};
use crate::scene::{BinSpec, SceneSpec};
use crate::texture::shade_texture;

const NEAR: f64 = 1e-3;
const GROUND_HALF_EXTENT: f64 = 0.75;
const GROUND_COLOR: [f64; 3] = [0.4, 0.4, 0.4];

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub rgb: Grid<[u8; 3]>,
    /// Camera-axis depth in meters, `0` where nothing was hit.
    pub depth: DepthMap,
    /// `0` for background and bin, `i + 1` for `scene.instances[i]`.
    pub instance_ids: InstanceMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmodalMaskSet {
    pub masks: Vec<BinaryMask>,
}

/// Bin floor, four walls and a ground plane, all in world coordinates.
pub fn bin_meshes(bin: &BinSpec) -> Vec<Mesh> {
    use crate::shapes::cuboid;
    let (w, d, h, t) = (bin.inner_width, bin.inner_depth, bin.wall_height, bin.wall_thickness);
    let boxes = [
        // floor slab, top face at z = 0
        ([0.0, 0.0, -t / 2.0], [w + 2.0 * t, d + 2.0 * t, t]),
        ([-(w + t) / 2.0, 0.0, h / 2.0], [t, d + 2.0 * t, h]),
        ([(w + t) / 2.0, 0.0, h / 2.0], [t, d + 2.0 * t, h]),
        ([0.0, -(d + t) / 2.0, h / 2.0], [w, t, h]),
        ([0.0, (d + t) / 2.0, h / 2.0], [w, t, h]),
    ];
    let mut meshes: Vec<Mesh> = boxes
        .iter()
        .enumerate()
        .map(|(i, (c, s))| {
            let m = cuboid(&format!("bin_{i}"), Vector3::from(*s)).expect("positive bin dims");
            let verts = m.vertices().iter().map(|v| v + Vector3::from(*c)).collect();
            Mesh::new(m.object_id(), verts, m.triangles().to_vec()).expect("valid")
        })
        .collect();
    let g = GROUND_HALF_EXTENT;
    let z = -t;
    meshes.push(
        Mesh::new(
            "ground",
            vec![
                Point3::new(-g, -g, z),
                Point3::new(g, -g, z),
                Point3::new(g, g, z),
                Point3::new(-g, g, z),
                // Slightly below, only to give the AABB positive volume.
                Point3::new(0.0, 0.0, z - 1e-3),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .expect("valid"),
    );
    meshes
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Point3<f64>,
    bary: [f64; 3],
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    bary_over_z: [f64; 3],
}

fn orient(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Edge function with canonical endpoint order: `edge(a, b, p) == -edge(b, a, p)` bitwise.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    if a <= b {
        orient(a, b, p)
    } else {
        -orient(b, a, p)
    }
}

fn is_top_left(dx: f64, dy: f64) -> bool {
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

/// Clips a camera-space triangle against `z >= NEAR` and fan-triangulates
/// the result.
fn clip_near(tri: [Point3<f64>; 3]) -> Vec<[ClipVertex; 3]> {
    let verts = [
        ClipVertex { p: tri[0], bary: [1.0, 0.0, 0.0] },
        ClipVertex { p: tri[1], bary: [0.0, 1.0, 0.0] },
        ClipVertex { p: tri[2], bary: [0.0, 0.0, 1.0] },
    ];
    if verts.iter().all(|v| v.p.z >= NEAR) {
        return vec![verts];
    }
    if verts.iter().all(|v| v.p.z < NEAR) {
        return Vec::new();
    }
    let mut poly = Vec::with_capacity(4);
    for i in 0..3 {
        let a = verts[i];
        let b = verts[(i + 1) % 3];
        let (ina, inb) = (a.p.z >= NEAR, b.p.z >= NEAR);
        if ina {
            poly.push(a);
        }
        if ina != inb {
            let t = (NEAR - a.p.z) / (b.p.z - a.p.z);
            let mut p = a.p + (b.p - a.p) * t;
            p.z = NEAR;
            let bary = [0, 1, 2].map(|k| a.bary[k] + (b.bary[k] - a.bary[k]) * t);
            poly.push(ClipVertex { p, bary });
        }
    }
    (1..poly.len() - 1)
        .map(|k| [poly[0], poly[k], poly[k + 1]])
        .collect()
}

/// Calls `frag(x, y, z, bary)` for every covered pixel of a world-space
/// triangle; `bary` are perspective-correct weights of the original vertices.
fn raster_triangle(
    camera: &CameraModel,
    tri_world: [Point3<f64>; 3],
    mut frag: impl FnMut(usize, usize, f64, [f64; 3]),
) {
    let (w, h) = (camera.width(), camera.height());
    let k = *camera.intrinsics();
    let tri_cam = tri_world.map(|p| camera.world_to_camera(&p));
    for sub in clip_near(tri_cam) {
        let sv = sub.map(|v| {
            let inv_z = 1.0 / v.p.z;
            ScreenVertex {
                x: k.fx * v.p.x * inv_z + k.cx,
                y: k.fy * v.p.y * inv_z + k.cy,
                inv_z,
                bary_over_z: v.bary.map(|b| b * inv_z),
            }
        });
        let pts = sv.map(|v| (v.x, v.y));
        if pts.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            continue;
        }
        let area = edge(pts[1], pts[2], pts[0]);
        if area == 0.0 {
            continue;
        }
        let sign = area.signum();
        // Edge i is opposite vertex i.
        let edges = [(1, 2), (2, 0), (0, 1)].map(|(a, b)| {
            let d = (sign * (pts[b].0 - pts[a].0), sign * (pts[b].1 - pts[a].1));
            (a, b, is_top_left(d.0, d.1))
        });
        let min_x = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
        let x1 = ((max_x - 0.5).floor() + 1.0).clamp(0.0, w as f64) as usize;
        let y1 = ((max_y - 0.5).floor() + 1.0).clamp(0.0, h as f64) as usize;
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            'px: for x in x0..x1 {
                let p = (x as f64 + 0.5, py);
                let mut ws = [0.0; 3];
                for (i, &(a, b, top_left)) in edges.iter().enumerate() {
                    let e = sign * edge(pts[a], pts[b], p);
                    if e < 0.0 || (e == 0.0 && !top_left) {
                        continue 'px;
                    }
                    ws[i] = e;
                }
                let sum = ws[0] + ws[1] + ws[2];
                if sum <= 0.0 {
                    continue;
                }
                let l = ws.map(|e| e / sum);
                let inv_z = l[0] * sv[0].inv_z + l[1] * sv[1].inv_z + l[2] * sv[2].inv_z;
                let z = 1.0 / inv_z;
                let bary = [0, 1, 2].map(|c| {
                    (l[0] * sv[0].bary_over_z[c] + l[1] * sv[1].bary_over_z[c] + l[2] * sv[2].bary_over_z[c]) * z
                });
                frag(x, y, z, bary);
            }
        }
    }
}

fn world_triangle(mesh: &Mesh, pose: &Pose, t: usize) -> [Point3<f64>; 3] {
    mesh.triangles()[t].map(|i| pose.transform_point(&mesh.vertices()[i as usize]))
}

struct Surface<'a> {
    mesh: &'a Mesh,
    pose: Pose,
    instance_id: u16,
}

#[derive(Clone, Copy)]
struct GSample {
    depth: f64,
    surface: u32,
    triangle: u32,
    bary: [f64; 3],
}

pub fn rasterize(scene: &SceneSpec) -> Framebuffer {
    let camera = &scene.camera;
    let (w, h) = (camera.width(), camera.height());
    let bin = bin_meshes(&scene.bin);
    let mut surfaces: Vec<Surface> = bin
        .iter()
        .map(|m| Surface { mesh: m, pose: Pose::identity(), instance_id: 0 })
        .collect();
    let first_instance = surfaces.len();
    surfaces.extend(scene.instances.iter().enumerate().map(|(i, inst)| Surface {
        mesh: &inst.mesh,
        pose: inst.pose,
        instance_id: (i + 1) as u16,
    }));

    let mut gbuf: Vec<Option<GSample>> = vec![None; w * h];
    for (s, surf) in surfaces.iter().enumerate() {
        for t in 0..surf.mesh.triangles().len() {
            raster_triangle(camera, world_triangle(surf.mesh, &surf.pose, t), |x, y, z, bary| {
                let slot = &mut gbuf[y * w + x];
                if slot.is_none_or(|g| z < g.depth) {
                    *slot = Some(GSample { depth: z, surface: s as u32, triangle: t as u32, bary });
                }
            });
        }
    }

    let eye = Point3::from(camera.pose().translation);
    let light = scene.light;
    let mut rgb = Grid::filled(w, h, [0u8; 3]);
    let mut depth = Grid::filled(w, h, 0f32);
    let mut ids = Grid::filled(w, h, 0u16);
    for (i, g) in gbuf.iter().enumerate() {
        let Some(g) = g else { continue };
        let surf = &surfaces[g.surface as usize];
        let tri = surf.mesh.triangles()[g.triangle as usize].map(|v| surf.mesh.vertices()[v as usize]);
        let local = Point3::from(tri[0].coords * g.bary[0] + tri[1].coords * g.bary[1] + tri[2].coords * g.bary[2]);
        let world = surf.pose.transform_point(&local);
        let albedo = if (g.surface as usize) < first_instance {
            if surf.mesh.object_id() == "ground" {
                GROUND_COLOR
            } else {
                scene.bin_color
            }
        } else {
            let inst = &scene.instances[g.surface as usize - first_instance];
            shade_texture(&inst.texture, inst.base_color, &local)
        };
        let mut n = surf
            .mesh
            .face_normal(g.triangle as usize)
            .map(|n| surf.pose.transform_vector(&n))
            .unwrap_or_else(Vector3::z);
        if n.dot(&(eye - world)) < 0.0 {
            n = -n;
        }
        let lambert = n.dot(&light.direction).max(0.0);
        let gain = light.ambient + light.intensity * lambert;
        let (x, y) = (i % w, i / w);
        rgb.set(x, y, albedo.map(|c| ((c * gain).clamp(0.0, 1.0) * 255.0).round() as u8));
        depth.set(x, y, g.depth as f32);
        ids.set(x, y, surf.instance_id);
    }
    Framebuffer { rgb, depth, instance_ids: ids }
}

/// Coverage of each instance rendered alone with the scene camera.
pub fn render_amodal(scene: &SceneSpec) -> AmodalMaskSet {
    let camera = &scene.camera;
    let (w, h) = (camera.width(), camera.height());
    let masks = scene
        .instances
        .iter()
        .map(|inst| {
            let mut mask = Grid::filled(w, h, false);
            for t in 0..inst.mesh.triangles().len() {
                raster_triangle(camera, world_triangle(&inst.mesh, &inst.pose, t), |x, y, _, _| {
                    mask.set(x, y, true);
                });
            }
            mask
        })
        .collect();
    AmodalMaskSet { masks }
}

/// Invalidates depths outside `[near, far]` meters.
pub fn apply_depth_cut(depth: &DepthMap, near: f64, far: f64) -> Result<(DepthMap, ValidityMask)> {
    if !(near < far) {
        return Err(Error::InvalidRange { near, far });
    }
    let cut = depth.map(|&d| {
        let dd = f64::from(d);
        if dd >= near && dd <= far {
            d
        } else {
            0.0
        }
    });
    let validity = cut.validity();
    Ok((cut, validity))
}
