//! Procedural surface textures evaluated in object-local coordinates.

use nalgebra::Point3;

use crate::scene::{TextureMode, TextureParams};

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn hash(x: i64, y: i64, z: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (z as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise with smoothstep weights, in `[0, 1)`.
pub fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let cell = p.map(f64::floor);
    let f = [p[0] - cell[0], p[1] - cell[1], p[2] - cell[2]].map(|t| t * t * (3.0 - 2.0 * t));
    let [x0, y0, z0] = cell.map(|c| c as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                acc += w * hash(x0 + dx, y0 + dy, z0 + dz, seed);
            }
        }
    }
    acc
}

pub fn shade_texture(params: &TextureParams, base: [f64; 3], local: &Point3<f64>) -> [f64; 3] {
    let q = [local.x / params.scale, local.y / params.scale, local.z / params.scale];
    match params.mode {
        TextureMode::Flat => base,
        TextureMode::Checker => {
            let parity = q.iter().map(|c| c.floor() as i64).sum::<i64>().rem_euclid(2);
            if parity == 0 {
                base
            } else {
                params.secondary_color
            }
        }
        TextureMode::Noise => mix(base, params.secondary_color, value_noise(q, params.noise_seed)),
        TextureMode::Gradient => {
            let axis = (params.noise_seed % 3) as usize;
            mix(base, params.secondary_color, q[axis].rem_euclid(1.0))
        }
    }
}
