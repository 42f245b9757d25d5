//! Depth preparation: edge-preserving smoothing, hole filling and resizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, InstanceMap, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Chessboard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub depth_cut: [f64; 2],
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub iterations: u32,
    pub fill_metric: DistanceMetric,
    /// Output size `[width, height]`.
    pub target_size: [usize; 2],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            depth_cut: [0.35, 0.8],
            sigma_s: 10.0,
            sigma_r: 0.05,
            iterations: 3,
            fill_metric: DistanceMetric::Euclidean,
            target_size: [640, 360],
        }
    }
}

fn check_filter_params(sigma_s: f64, sigma_r: f64, iterations: u32) -> Result<()> {
    if !(sigma_s > 0.0 && sigma_s.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_s must be positive, got {sigma_s}")));
    }
    // An infinite sigma_r is allowed and disables edge awareness.
    if !(sigma_r > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_r must be positive, got {sigma_r}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    Ok(())
}

/// Transform-domain step lengths along one scanline. `dt[n]` is the distance
/// between samples `n - 1` and `n`; holes cost one pixel, and the range term
/// compares a valid sample with the last valid sample before it.
fn domain_steps(line: &[f64], valid: &[bool], ratio: f64, out: &mut Vec<f64>) {
    out.clear();
    let mut last: Option<f64> = None;
    for (n, (&v, &ok)) in line.iter().zip(valid).enumerate() {
        let mut d = 1.0;
        if ok {
            if let (Some(prev), true) = (last, n > 0) {
                if ratio > 0.0 {
                    d += ratio * (v - prev).abs();
                }
            }
            last = Some(v);
        }
        out.push(d);
    }
}

/// One recursive pass pair (causal then anti-causal) over a scanline, on the
/// weighted signal and its weights simultaneously.
fn recursive_pass(num: &mut [f64], den: &mut [f64], dt: &[f64], a: f64) {
    let n = num.len();
    for i in 1..n {
        let v = a.powf(dt[i]);
        num[i] += v * (num[i - 1] - num[i]);
        den[i] += v * (den[i - 1] - den[i]);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let v = a.powf(dt[i + 1]);
        num[i] += v * (num[i + 1] - num[i]);
        den[i] += v * (den[i + 1] - den[i]);
    }
}

/// Recursive domain-transform filter guided by the depth itself. Invalid
/// pixels carry zero weight and stay invalid.
pub fn domain_transform_filter(
    depth: &DepthMap,
    validity: &ValidityMask,
    sigma_s: f64,
    sigma_r: f64,
    iterations: u32,
) -> Result<DepthMap> {
    check_filter_params(sigma_s, sigma_r, iterations)?;
    depth.ensure_same_dims(validity)?;
    let (w, h) = depth.dims();
    let ratio = sigma_s / sigma_r;
    let mask: Vec<bool> = validity.as_slice().to_vec();
    let mut img: Vec<f64> = depth
        .as_slice()
        .iter()
        .zip(&mask)
        .map(|(&d, &ok)| if ok { f64::from(d) } else { 0.0 })
        .collect();

    // Steps come from the unfiltered input and are reused by every iteration.
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    let mut buf = Vec::new();
    for y in 0..h {
        domain_steps(&img[y * w..(y + 1) * w], &mask[y * w..(y + 1) * w], ratio, &mut buf);
        dx[y * w..(y + 1) * w].copy_from_slice(&buf);
    }
    let mut col = vec![0.0; h];
    let mut col_ok = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = img[y * w + x];
            col_ok[y] = mask[y * w + x];
        }
        domain_steps(&col, &col_ok, ratio, &mut buf);
        for y in 0..h {
            dy[y * w + x] = buf[y];
        }
    }

    let n = f64::from(iterations);
    let mut num = vec![0.0; w.max(h)];
    let mut den = vec![0.0; w.max(h)];
    let mut steps = vec![0.0; h];
    for i in 1..=iterations {
        let sigma_i = sigma_s * 3f64.sqrt() * 2f64.powf(n - f64::from(i)) / (4f64.powf(n) - 1.0).sqrt();
        let a = (-(2f64.sqrt()) / sigma_i).exp();
        for y in 0..h {
            let row = y * w..(y + 1) * w;
            for (k, idx) in row.clone().enumerate() {
                let wgt = if mask[idx] { 1.0 } else { 0.0 };
                num[k] = wgt * img[idx];
                den[k] = wgt;
            }
            recursive_pass(&mut num[..w], &mut den[..w], &dx[row.clone()], a);
            for (k, idx) in row.enumerate() {
                if mask[idx] {
                    img[idx] = num[k] / den[k];
                }
            }
        }
        for x in 0..w {
            for y in 0..h {
                let idx = y * w + x;
                let wgt = if mask[idx] { 1.0 } else { 0.0 };
                num[y] = wgt * img[idx];
                den[y] = wgt;
                steps[y] = dy[idx];
            }
            recursive_pass(&mut num[..h], &mut den[..h], &steps, a);
            for y in 0..h {
                let idx = y * w + x;
                if mask[idx] {
                    img[idx] = num[y] / den[y];
                }
            }
        }
    }
    Ok(DepthMap::from_fn(w, h, |x, y| {
        let idx = y * w + x;
        if mask[idx] {
            img[idx] as f32
        } else {
            0.0
        }
    }))
}

/// Exact squared Euclidean distance transform of one line (lower envelope
/// of parabolas). `f` holds 0 at sites and infinity elsewhere.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Squared Euclidean distance from each pixel to the nearest site.
fn squared_edt(sites: &ValidityMask) -> Grid<u64> {
    let (w, h) = sites.dims();
    let n = w.max(h);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut tmp = vec![0.0; w * h];
    let mut f = vec![0.0; h];
    let mut d = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            f[y] = if *sites.get(x, y) { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&f, &mut d, &mut v, &mut z);
        for y in 0..h {
            tmp[y * w + x] = d[y];
        }
    }
    let mut out = vec![0u64; w * h];
    let mut d = vec![0.0; w];
    for y in 0..h {
        edt_1d(&tmp[y * w..(y + 1) * w], &mut d, &mut v, &mut z);
        for x in 0..w {
            // Distances are sums of squared integers, exact in f64.
            out[y * w + x] = d[x] as u64;
        }
    }
    Grid::from_vec(w, h, out).expect("dims")
}

/// Chessboard distance to the nearest site via a two-pass chamfer sweep.
fn chessboard_dt(sites: &ValidityMask) -> Grid<u64> {
    let (w, h) = sites.dims();
    let inf = u64::MAX / 2;
    let mut d = Grid::from_fn(w, h, |x, y| if *sites.get(x, y) { 0 } else { inf });
    for y in 0..h {
        for x in 0..w {
            let mut best = *d.get(x, y);
            for (dx, dy) in [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w {
                    best = best.min(d.get(nx as usize, ny as usize) + 1);
                }
            }
            d.set(x, y, best);
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut best = *d.get(x, y);
            for (dx, dy) in [(1i64, 1i64), (0, 1), (-1, 1), (1, 0)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && (nx as usize) < w && (ny as usize) < h {
                    best = best.min(d.get(nx as usize, ny as usize) + 1);
                }
            }
            d.set(x, y, best);
        }
    }
    d
}

/// Fills every invalid pixel with the depth of the nearest valid pixel; among
/// equidistant candidates the smallest depth (closest to the sensor) wins.
pub fn fill_holes_with(depth: &DepthMap, validity: &ValidityMask, metric: DistanceMetric) -> Result<DepthMap> {
    depth.ensure_same_dims(validity)?;
    if validity.count() == 0 {
        return Err(Error::AllInvalid);
    }
    let (w, h) = depth.dims();
    let dist = match metric {
        DistanceMetric::Euclidean => squared_edt(validity),
        DistanceMetric::Chessboard => chessboard_dt(validity),
    };
    let mut out = depth.clone();
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if *validity.get(x, y) {
                continue;
            }
            let r = *dist.get(x, y);
            candidates.clear();
            match metric {
                DistanceMetric::Euclidean => {
                    // All lattice offsets with dx² + dy² = r.
                    let mut dx = 0u64;
                    while dx * dx <= r {
                        let rest = r - dx * dx;
                        let dy = (rest as f64).sqrt().round() as u64;
                        if dy * dy == rest {
                            for sx in [-1i64, 1] {
                                for sy in [-1i64, 1] {
                                    candidates.push((sx * dx as i64, sy * dy as i64));
                                }
                            }
                        }
                        dx += 1;
                    }
                }
                DistanceMetric::Chessboard => {
                    let r = r as i64;
                    for t in -r..=r {
                        candidates.extend([(t, -r), (t, r), (-r, t), (r, t)]);
                    }
                }
            }
            let best = candidates
                .iter()
                .filter_map(|&(dx, dy)| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        return None;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    validity.get(nx, ny).then(|| *depth.get(nx, ny))
                })
                .fold(f32::INFINITY, f32::min);
            debug_assert!(best.is_finite());
            out.set(x, y, best);
        }
    }
    Ok(out)
}

pub fn fill_holes(depth: &DepthMap, validity: &ValidityMask) -> Result<DepthMap> {
    fill_holes_with(depth, validity, DistanceMetric::Euclidean)
}

/// Filter then fill, as applied to raw depth before it is stored.
pub fn preprocess_depth(depth: &DepthMap, validity: &ValidityMask, config: &PreprocessConfig) -> Result<DepthMap> {
    let filtered = domain_transform_filter(depth, validity, config.sigma_s, config.sigma_r, config.iterations)?;
    fill_holes_with(&filtered, validity, config.fill_metric)
}

/// Source taps for bilinear sampling without corner alignment.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> [(usize, f64); 2] {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    let t = s - i0 as f64;
    [(i0, 1.0 - t), (i1, t)]
}

fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let scale = src_len as f64 / dst_len as f64;
    (((dst as f64 + 0.5) * scale).floor() as usize).min(src_len - 1)
}

pub fn resize_nearest<T: Clone>(grid: &Grid<T>, width: usize, height: usize) -> Grid<T> {
    let (w, h) = grid.dims();
    Grid::from_fn(width, height, |x, y| grid.get(nearest(x, w, width), nearest(y, h, height)).clone())
}

pub fn resize_rgb(rgb: &Grid<[u8; 3]>, width: usize, height: usize) -> Grid<[u8; 3]> {
    let (w, h) = rgb.dims();
    if (w, h) == (width, height) {
        return rgb.clone();
    }
    Grid::from_fn(width, height, |x, y| {
        let mut acc = [0.0f64; 3];
        for (sy, wy) in taps(y, h, height) {
            for (sx, wx) in taps(x, w, width) {
                let p = rgb.get(sx, sy);
                for c in 0..3 {
                    acc[c] += wx * wy * f64::from(p[c]);
                }
            }
        }
        acc.map(|v| v.round().clamp(0.0, 255.0) as u8)
    })
}

/// Bilinear resize that averages valid sources only; a target pixel is
/// invalid iff every source with positive weight is invalid.
pub fn resize_depth(depth: &DepthMap, width: usize, height: usize) -> DepthMap {
    let (w, h) = depth.dims();
    if (w, h) == (width, height) {
        return depth.clone();
    }
    DepthMap::from_fn(width, height, |x, y| {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (sy, wy) in taps(y, h, height) {
            for (sx, wx) in taps(x, w, width) {
                let d = *depth.get(sx, sy);
                let wgt = wx * wy;
                if wgt > 0.0 && d > 0.0 {
                    num += wgt * f64::from(d);
                    den += wgt;
                }
            }
        }
        if den > 0.0 {
            (num / den) as f32
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResizedSample {
    pub rgb: Grid<[u8; 3]>,
    pub depth: DepthMap,
    pub validity: ValidityMask,
    pub instance_ids: InstanceMap,
}

/// Resizes an aligned sample. Validity is derived from the resized depth so
/// that it stays equivalent to nonzero depth.
pub fn resize_sample(
    rgb: &Grid<[u8; 3]>,
    depth: &DepthMap,
    instance_ids: &InstanceMap,
    width: usize,
    height: usize,
) -> Result<ResizedSample> {
    rgb.ensure_same_dims(depth)?;
    rgb.ensure_same_dims(instance_ids)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("target size must be positive".into()));
    }
    let depth = resize_depth(depth, width, height);
    Ok(ResizedSample {
        rgb: resize_rgb(rgb, width, height),
        validity: depth.validity(),
        depth,
        instance_ids: resize_nearest(instance_ids, width, height),
    })
}
