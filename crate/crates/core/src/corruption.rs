//! Sensor-like corruption of clean synthetic depth.
//!
//! Stages run in a fixed order: Perlin warp and offset, mask-guided edge
//! dropout, salt-and-pepper, random rectangle erasing. Each stage draws from
//! its own stream derived from the pipeline seed, and is the identity when
//! disabled or configured to zero strength.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, InstanceMap, ValidityMask};
use crate::perlin::Perlin;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerlinConfig {
    pub enabled: bool,
    /// Base frequency in cycles per pixel.
    pub frequency: f64,
    pub octaves: u32,
    pub warp_amplitude_px: f64,
    pub additive_amplitude_m: f64,
}

impl Default for PerlinConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            frequency: 1.0 / 64.0,
            octaves: 4,
            warp_amplitude_px: 2.0,
            additive_amplitude_m: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeNoiseConfig {
    pub enabled: bool,
    /// Band half-width in pixels; 1 means the boundary pixels only.
    pub band_width: u32,
    pub dropout: f64,
}

impl Default for EdgeNoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            band_width: 2,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaltPepperConfig {
    pub enabled: bool,
    pub density: f64,
    pub pepper_fraction: f64,
    /// Range of replacement depths for salt, meters.
    pub salt_range: [f64; 2],
}

impl Default for SaltPepperConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            density: 0.005,
            pepper_fraction: 0.8,
            salt_range: [0.35, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EraseConfig {
    pub enabled: bool,
    /// Inclusive rectangle count range.
    pub count: [u32; 2],
    /// Inclusive side length range in pixels.
    pub size: [u32; 2],
}

impl Default for EraseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            count: [0, 4],
            size: [5, 40],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub perlin: PerlinConfig,
    pub edge: EdgeNoiseConfig,
    pub salt_pepper: SaltPepperConfig,
    pub erase: EraseConfig,
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl CorruptionConfig {
    /// Every stage turned off.
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.perlin.enabled = false;
        c.edge.enabled = false;
        c.salt_pepper.enabled = false;
        c.erase.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.perlin;
        if !(p.frequency > 0.0) || p.octaves == 0 {
            return Err(Error::InvalidParameter("perlin frequency > 0 and octaves >= 1 required".into()));
        }
        if !(p.warp_amplitude_px >= 0.0 && p.additive_amplitude_m >= 0.0) {
            return Err(Error::InvalidParameter("perlin amplitudes must be >= 0".into()));
        }
        probability("edge.dropout", self.edge.dropout)?;
        probability("salt_pepper.density", self.salt_pepper.density)?;
        probability("salt_pepper.pepper_fraction", self.salt_pepper.pepper_fraction)?;
        let [lo, hi] = self.salt_pepper.salt_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad salt range [{lo}, {hi}]")));
        }
        let e = &self.erase;
        if e.count[0] > e.count[1] || e.size[0] > e.size[1] {
            return Err(Error::InvalidParameter("empty erase range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Perlin,
    EdgeNoise,
    SaltPepper,
    Erase,
}

/// Displaces every pixel's lookup by two Perlin fields (nearest pixel,
/// clamped at the border) and adds a third field scaled to meters. A pixel
/// stays invalid if it or its source was invalid.
pub fn warp_perlin(depth: &DepthMap, config: &PerlinConfig, seed: u64) -> DepthMap {
    let (w, h) = depth.dims();
    let fields = [0, 1, 2].map(|s| Perlin::new(derive_seed(seed, s)));
    // Keep the third coordinate off the integer lattice.
    let z = 0.5 + (seed % 997) as f64 * 0.618_033_988_749;
    let (a, b) = (config.warp_amplitude_px, config.additive_amplitude_m);
    let f = config.frequency;
    let o = config.octaves;
    DepthMap::from_fn(w, h, |x, y| {
        let d = *depth.get(x, y);
        if d <= 0.0 {
            return 0.0;
        }
        let (u, v) = (x as f64, y as f64);
        let (sx, sy) = if a > 0.0 {
            let du = a * fields[0].fbm(u, v, z, f, o);
            let dv = a * fields[1].fbm(u, v, z, f, o);
            (
                (u + du).round().clamp(0.0, (w - 1) as f64) as usize,
                (v + dv).round().clamp(0.0, (h - 1) as f64) as usize,
            )
        } else {
            (x, y)
        };
        let src = *depth.get(sx, sy);
        if src <= 0.0 {
            return 0.0;
        }
        if b == 0.0 {
            return src;
        }
        let out = (f64::from(src) + b * fields[2].fbm(u, v, z, f, o)) as f32;
        if out > 0.0 && out.is_finite() {
            out
        } else {
            0.0
        }
    })
}

/// Pixels whose 4-neighborhood contains a different instance id.
pub fn instance_boundaries(ids: &InstanceMap) -> ValidityMask {
    let (w, h) = ids.dims();
    ValidityMask::from_fn(w, h, |x, y| {
        let c = *ids.get(x, y);
        (x > 0 && *ids.get(x - 1, y) != c)
            || (x + 1 < w && *ids.get(x + 1, y) != c)
            || (y > 0 && *ids.get(x, y - 1) != c)
            || (y + 1 < h && *ids.get(x, y + 1) != c)
    })
}

/// Square (Chebyshev) dilation by `radius` pixels, separable.
fn dilate(mask: &ValidityMask, radius: usize) -> ValidityMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let rows = ValidityMask::from_fn(w, h, |x, y| {
        (x.saturating_sub(radius)..=(x + radius).min(w - 1)).any(|xx| *mask.get(xx, y))
    });
    ValidityMask::from_fn(w, h, |x, y| {
        (y.saturating_sub(radius)..=(y + radius).min(h - 1)).any(|yy| *rows.get(x, yy))
    })
}

/// Invalidates pixels within the boundary band independently with the
/// configured dropout probability.
pub fn edge_noise(depth: &DepthMap, ids: &InstanceMap, config: &EdgeNoiseConfig, seed: u64) -> Result<DepthMap> {
    depth.ensure_same_dims(ids)?;
    let mut out = depth.clone();
    if config.band_width == 0 || config.dropout == 0.0 {
        return Ok(out);
    }
    let band = dilate(&instance_boundaries(ids), config.band_width as usize - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (d, &in_band) in out.as_mut_slice().iter_mut().zip(band.as_slice()) {
        if in_band && rng.random::<f64>() < config.dropout {
            *d = 0.0;
        }
    }
    Ok(out)
}

/// Selects each valid pixel with probability `density`; selections become
/// invalid with probability `pepper_fraction`, otherwise they take a
/// uniform depth from `salt_range`.
pub fn salt_pepper(depth: &DepthMap, config: &SaltPepperConfig, seed: u64) -> DepthMap {
    let mut out = depth.clone();
    if config.density == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = config.salt_range;
    for d in out.as_mut_slice() {
        if *d > 0.0 && rng.random::<f64>() < config.density {
            *d = if rng.random::<f64>() < config.pepper_fraction {
                0.0
            } else if lo == hi {
                lo as f32
            } else {
                rng.random_range(lo..hi) as f32
            };
        }
    }
    out
}

/// Invalidates the intersection of the image with a `w × h` rectangle whose
/// top-left corner is `(x0, y0)`; coordinates may lie off-image.
pub fn erase_rect(depth: &mut DepthMap, x0: i64, y0: i64, w: u32, h: u32) {
    let (iw, ih) = (depth.width() as i64, depth.height() as i64);
    let xs = x0.clamp(0, iw)..(x0 + i64::from(w)).clamp(0, iw);
    let ys = y0.clamp(0, ih)..(y0 + i64::from(h)).clamp(0, ih);
    for y in ys {
        for x in xs.clone() {
            depth.set(x as usize, y as usize, 0.0);
        }
    }
}

/// Erases a random number of rectangles centered at uniform image positions.
pub fn random_erase(depth: &DepthMap, config: &EraseConfig, seed: u64) -> DepthMap {
    let mut out = depth.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(config.count[0]..=config.count[1]);
    for _ in 0..k {
        let w = rng.random_range(config.size[0]..=config.size[1]);
        let h = rng.random_range(config.size[0]..=config.size[1]);
        let cx = rng.random_range(0..depth.width() as i64);
        let cy = rng.random_range(0..depth.height() as i64);
        erase_rect(&mut out, cx - i64::from(w / 2), cy - i64::from(h / 2), w, h);
    }
    out
}

/// Runs the full pipeline, reporting each enabled stage's output to `observe`.
pub fn corrupt_observed(
    depth: &DepthMap,
    ids: &InstanceMap,
    config: &CorruptionConfig,
    seed: u64,
    mut observe: impl FnMut(Stage, &DepthMap),
) -> Result<(DepthMap, ValidityMask)> {
    config.validate()?;
    depth.ensure_same_dims(ids)?;
    let mut d = depth.clone();
    if config.perlin.enabled {
        d = warp_perlin(&d, &config.perlin, derive_seed(seed, 10));
        observe(Stage::Perlin, &d);
    }
    if config.edge.enabled {
        d = edge_noise(&d, ids, &config.edge, derive_seed(seed, 11))?;
        observe(Stage::EdgeNoise, &d);
    }
    if config.salt_pepper.enabled {
        d = salt_pepper(&d, &config.salt_pepper, derive_seed(seed, 12));
        observe(Stage::SaltPepper, &d);
    }
    if config.erase.enabled {
        d = random_erase(&d, &config.erase, derive_seed(seed, 13));
        observe(Stage::Erase, &d);
    }
    let validity = d.validity();
    Ok((d, validity))
}

pub fn corrupt(
    depth: &DepthMap,
    ids: &InstanceMap,
    config: &CorruptionConfig,
    seed: u64,
) -> Result<(DepthMap, ValidityMask)> {
    corrupt_observed(depth, ids, config, seed, |_, _| {})
}
