//! Triangle meshes, rigid poses and the pinhole camera.
//!
//! World frame: +z up, the bin floor lies at z = 0. Camera frame: +z forward
//! along the optical axis, +x right and +y down, so image columns grow with x
//! and rows grow with y.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    object_id: String,
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    aabb: Aabb,
}

impl Mesh {
    pub fn new(
        object_id: impl Into<String>,
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let object_id = object_id.into();
        if vertices.len() < 3 {
            return Err(Error::DegenerateMesh(object_id, "fewer than 3 vertices"));
        }
        if triangles.is_empty() {
            return Err(Error::DegenerateMesh(object_id, "no triangles"));
        }
        if triangles
            .iter()
            .flatten()
            .any(|&i| i as usize >= vertices.len())
        {
            return Err(Error::DegenerateMesh(object_id, "triangle index out of range"));
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateMesh(object_id, "non-finite vertex"));
        }
        let aabb = Aabb::from_points(&vertices).expect("non-empty");
        if aabb.extent().iter().any(|&e| !(e > 0.0)) {
            return Err(Error::DegenerateMesh(object_id, "zero-volume bounding box"));
        }
        Ok(Self {
            object_id,
            vertices,
            triangles,
            aabb,
        })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    pub fn with_object_id(mut self, id: impl Into<String>) -> Self {
        self.object_id = id.into();
        self
    }

    /// Uniformly scales about the origin.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Mesh::new(
            self.object_id.clone(),
            self.vertices.iter().map(|v| v * factor).collect(),
            self.triangles.clone(),
        )
    }

    /// Rescales so the largest AABB extent falls inside `[lo, hi]`; meshes
    /// already in range are returned unchanged.
    pub fn normalize_extent(&self, lo: f64, hi: f64) -> Result<Self> {
        let largest = self.aabb.extent().max();
        let target = largest.clamp(lo, hi);
        if target == largest {
            return Ok(self.clone());
        }
        self.scaled(target / largest)
    }

    /// Bounding box of the mesh after applying `pose`.
    pub fn transformed_aabb(&self, pose: &Pose) -> Aabb {
        let pts: Vec<_> = self.vertices.iter().map(|v| pose.transform_point(v)).collect();
        Aabb::from_points(&pts).expect("non-empty")
    }

    /// Bounding box after rotation only; used for placement before the
    /// translation is known.
    pub fn rotated_aabb(&self, rotation: &UnitQuaternion<f64>) -> Aabb {
        let pts: Vec<_> = self.vertices.iter().map(|v| rotation * v).collect();
        Aabb::from_points(&pts).expect("non-empty")
    }

    /// Unit normal of triangle `t` from its winding, or `None` when degenerate.
    pub fn face_normal(&self, t: usize) -> Option<Vector3<f64>> {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a)).try_normalize(1e-18)
    }
}

/// Reads the `v`/`f` subset of a Wavefront OBJ file. Polygonal faces are
/// fan-triangulated; everything else (normals, texture coordinates,
/// materials, groups) is ignored.
pub fn load_mesh(path: &Path, object_id: &str) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path, object_id)
}

pub fn parse_obj(text: &str, path: &Path, object_id: &str) -> Result<Mesh> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(lineno, "vertex needs 3 coordinates".into()));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = tokens
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(lineno, format!("bad face index: {e}")))?;
                if idx.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least 3 vertices".into()));
                }
                faces.push((lineno, idx));
            }
            _ => {}
        }
    }

    let n = vertices.len() as i64;
    let mut triangles = Vec::new();
    for (lineno, idx) in faces {
        let resolved: Vec<u32> = idx
            .iter()
            .map(|&i| {
                // OBJ indices are 1-based; negative ones count back from the end.
                let r = if i > 0 { i - 1 } else { n + i };
                if i == 0 || r < 0 || r >= n {
                    Err(parse_err(
                        lineno,
                        format!("face index {i} out of range for {n} vertices"),
                    ))
                } else {
                    Ok(r as u32)
                }
            })
            .collect::<Result<_>>()?;
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Mesh::new(object_id, vertices, triangles)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    intrinsics: Intrinsics,
    /// Camera-to-world.
    pose: Pose,
    world_to_camera: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, z: f64 },
    BehindCamera,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        let Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        } = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("zero image size".into()));
        }
        if !(0.0..f64::from(width)).contains(&cx) || !(0.0..f64::from(height)).contains(&cy) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            intrinsics,
            pose,
            world_to_camera: pose.inverse(),
        })
    }

    /// Camera at `eye` with its optical axis through `target`. Image "down"
    /// follows world -y as closely as the viewing direction allows.
    pub fn look_at(intrinsics: Intrinsics, eye: Point3<f64>, target: Point3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("eye coincides with target".into()))?;
        let mut down_ref = -Vector3::y();
        if forward.cross(&down_ref).norm() < 1e-6 {
            down_ref = Vector3::z();
        }
        let right = down_ref.cross(&forward).normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        let pose = Pose::new(UnitQuaternion::from_rotation_matrix(&rot), eye.coords);
        Self::new(intrinsics, pose)
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.world_to_camera.transform_point(p)
    }

    pub fn project(&self, p_world: &Point3<f64>) -> Projection {
        self.project_camera(&self.world_to_camera(p_world))
    }

    pub fn project_camera(&self, p: &Point3<f64>) -> Projection {
        if p.z <= 0.0 {
            return Projection::BehindCamera;
        }
        let k = &self.intrinsics;
        Projection::Visible {
            u: k.fx * p.x / p.z + k.cx,
            v: k.fy * p.y / p.z + k.cy,
            z: p.z,
        }
    }

    /// Inverse of [`project`](Self::project) for a pixel coordinate and axial depth.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3<f64> {
        let k = &self.intrinsics;
        let p = Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
        self.pose.transform_point(&p)
    }
}
