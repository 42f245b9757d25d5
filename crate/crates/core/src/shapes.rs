//! Procedural industrial-part meshes. They stand in for CAD models when no
//! catalog manifest is supplied, and give tests geometry with known extents.

use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Mesh;

#[derive(Default)]
struct Builder {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
}

impl Builder {
    fn vertex(&mut self, x: f64, y: f64, z: f64) -> u32 {
        self.vertices.push(Point3::new(x, y, z));
        (self.vertices.len() - 1) as u32
    }

    fn tri(&mut self, a: u32, b: u32, c: u32) {
        self.triangles.push([a, b, c]);
    }

    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.tri(a, b, c);
        self.tri(a, c, d);
    }

    /// Extrudes a polygon that is star-shaped about `(cx, cy)` between `z0` and `z1`.
    fn extrude(&mut self, outline: &[(f64, f64)], center: (f64, f64), z0: f64, z1: f64) {
        let n = outline.len() as u32;
        let base = self.vertices.len() as u32;
        for &(x, y) in outline {
            self.vertex(x, y, z0);
        }
        for &(x, y) in outline {
            self.vertex(x, y, z1);
        }
        let c0 = self.vertex(center.0, center.1, z0);
        let c1 = self.vertex(center.0, center.1, z1);
        for i in 0..n {
            let j = (i + 1) % n;
            self.quad(base + i, base + j, base + n + j, base + n + i);
            self.tri(c0, base + j, base + i);
            self.tri(c1, base + n + i, base + n + j);
        }
    }

    fn cuboid(&mut self, min: [f64; 3], max: [f64; 3]) {
        let outline = [
            (min[0], min[1]),
            (max[0], min[1]),
            (max[0], max[1]),
            (min[0], max[1]),
        ];
        let c = ((min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0);
        self.extrude(&outline, c, min[2], max[2]);
    }

    fn finish(self, id: &str) -> Result<Mesh> {
        Mesh::new(id, self.vertices, self.triangles)
    }
}

fn regular_polygon(radius: f64, sides: usize, phase: f64) -> Vec<(f64, f64)> {
    (0..sides)
        .map(|i| {
            let a = phase + TAU * i as f64 / sides as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

pub fn cuboid(id: &str, size: Vector3<f64>) -> Result<Mesh> {
    let h = size / 2.0;
    let mut b = Builder::default();
    b.cuboid([-h.x, -h.y, -h.z], [h.x, h.y, h.z]);
    b.finish(id)
}

pub fn cylinder(id: &str, radius: f64, height: f64, sides: usize) -> Result<Mesh> {
    let mut b = Builder::default();
    b.extrude(&regular_polygon(radius, sides, 0.0), (0.0, 0.0), -height / 2.0, height / 2.0);
    b.finish(id)
}

/// Spur-gear-like blank: a star outline alternating between two radii.
pub fn gear(id: &str, outer: f64, inner: f64, teeth: usize, height: f64) -> Result<Mesh> {
    let outline: Vec<_> = (0..teeth * 2)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = TAU * i as f64 / (teeth * 2) as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect();
    let mut b = Builder::default();
    b.extrude(&outline, (0.0, 0.0), -height / 2.0, height / 2.0);
    b.finish(id)
}

/// Hex-head bolt: a hexagonal prism on top of a round shank.
pub fn bolt(id: &str, shank_radius: f64, shank_len: f64, head_radius: f64, head_h: f64) -> Result<Mesh> {
    let mut b = Builder::default();
    b.extrude(&regular_polygon(shank_radius, 12, 0.0), (0.0, 0.0), 0.0, shank_len);
    b.extrude(
        &regular_polygon(head_radius, 6, 0.0),
        (0.0, 0.0),
        shank_len,
        shank_len + head_h,
    );
    b.finish(id)
}

/// Angle bracket made of two overlapping plates.
pub fn bracket(id: &str, length: f64, width: f64, height: f64, thickness: f64) -> Result<Mesh> {
    let mut b = Builder::default();
    b.cuboid([0.0, 0.0, 0.0], [length, width, thickness]);
    b.cuboid([0.0, 0.0, 0.0], [thickness, width, height]);
    b.finish(id)
}

pub fn cone(id: &str, radius: f64, height: f64, sides: usize) -> Result<Mesh> {
    let mut b = Builder::default();
    let ring: Vec<u32> = regular_polygon(radius, sides, 0.0)
        .into_iter()
        .map(|(x, y)| b.vertex(x, y, 0.0))
        .collect();
    let apex = b.vertex(0.0, 0.0, height);
    let bottom = b.vertex(0.0, 0.0, 0.0);
    for i in 0..sides {
        let (p, q) = (ring[i], ring[(i + 1) % sides]);
        b.tri(p, q, apex);
        b.tri(bottom, q, p);
    }
    b.finish(id)
}

/// Flat washer / ring: a torus with rectangular cross-section.
pub fn washer(id: &str, outer: f64, inner: f64, height: f64, sides: usize) -> Result<Mesh> {
    let mut b = Builder::default();
    let mut ring = |r: f64, z: f64| -> Vec<u32> {
        regular_polygon(r, sides, 0.0)
            .into_iter()
            .map(|(x, y)| b.vertex(x, y, z))
            .collect()
    };
    let (ob, ot) = (ring(outer, 0.0), ring(outer, height));
    let (ib, it) = (ring(inner, 0.0), ring(inner, height));
    for i in 0..sides {
        let j = (i + 1) % sides;
        b.quad(ob[i], ob[j], ot[j], ot[i]);
        b.quad(ib[j], ib[i], it[i], it[j]);
        b.quad(ot[i], ot[j], it[j], it[i]);
        b.quad(ob[j], ob[i], ib[i], ib[j]);
    }
    b.finish(id)
}

pub fn sphere(id: &str, radius: f64, rings: usize, sectors: usize) -> Result<Mesh> {
    let mut b = Builder::default();
    let top = b.vertex(0.0, 0.0, radius);
    let mut grid = Vec::new();
    for r in 1..rings {
        let polar = std::f64::consts::PI * r as f64 / rings as f64;
        let row: Vec<u32> = (0..sectors)
            .map(|s| {
                let az = TAU * s as f64 / sectors as f64;
                b.vertex(
                    radius * polar.sin() * az.cos(),
                    radius * polar.sin() * az.sin(),
                    radius * polar.cos(),
                )
            })
            .collect();
        grid.push(row);
    }
    let bottom = b.vertex(0.0, 0.0, -radius);
    for s in 0..sectors {
        let t = (s + 1) % sectors;
        b.tri(top, grid[0][s], grid[0][t]);
        for r in 0..grid.len() - 1 {
            b.quad(grid[r][s], grid[r + 1][s], grid[r + 1][t], grid[r][t]);
        }
        let last = grid.len() - 1;
        b.tri(bottom, grid[last][t], grid[last][s]);
    }
    b.finish(id)
}

/// `count` randomly-dimensioned parts with ids `part_000…`, each rescaled so
/// its largest extent lies in `extent_range` (meters).
pub fn builtin_catalog(count: usize, seed: u64, extent_range: (f64, f64)) -> Result<Vec<Mesh>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = extent_range;
    (0..count)
        .map(|i| {
            let id = format!("part_{i:03}");
            let size = rng.random_range(lo..=hi);
            let f = |rng: &mut ChaCha8Rng, a: f64, b: f64| size * rng.random_range(a..b);
            let mesh = match i % 8 {
                0 => cuboid(
                    &id,
                    Vector3::new(size, f(&mut rng, 0.3, 1.0), f(&mut rng, 0.1, 0.6)),
                )?,
                1 => cylinder(&id, size / 2.0, f(&mut rng, 0.2, 1.0), rng.random_range(10..24))?,
                2 => {
                    let outer = size / 2.0;
                    gear(&id, outer, outer * rng.random_range(0.7..0.9), rng.random_range(6..16), f(&mut rng, 0.1, 0.4))?
                }
                3 => {
                    let shank = f(&mut rng, 0.6, 0.85);
                    bolt(&id, f(&mut rng, 0.05, 0.1), shank, f(&mut rng, 0.1, 0.18), size - shank)?
                }
                4 => bracket(
                    &id,
                    size,
                    f(&mut rng, 0.2, 0.6),
                    f(&mut rng, 0.3, 0.9),
                    f(&mut rng, 0.04, 0.1),
                )?,
                5 => cone(&id, f(&mut rng, 0.2, 0.5), size, rng.random_range(8..20))?,
                6 => {
                    let outer = size / 2.0;
                    washer(&id, outer, outer * rng.random_range(0.3..0.7), f(&mut rng, 0.05, 0.3), 16)?
                }
                _ => sphere(&id, size / 2.0, rng.random_range(6..10), rng.random_range(8..14))?,
            };
            mesh.normalize_extent(lo, hi)
        })
        .collect()
}
