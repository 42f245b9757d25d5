use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde_json::{json, Value};

use clutterkit::dataset::{read_sample_arrays, SampleRecord};
use clutterkit::fusion::{ConfidenceEstimator, Tensor};

const DEPTH_RANGE: (f32, f32) = (0.35, 0.8);

fn depth_gray(d: f32) -> u8 {
    if d <= 0.0 {
        return 0;
    }
    // Near is bright.
    let t = ((DEPTH_RANGE.1 - d) / (DEPTH_RANGE.1 - DEPTH_RANGE.0)).clamp(0.0, 1.0);
    (40.0 + 215.0 * t).round() as u8
}

fn id_color(id: u16) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let h = u32::from(id).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
}

fn load_estimator(weights: Option<&Path>, seed: u64) -> Result<ConfidenceEstimator> {
    let est = match weights {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).context("parsing estimator weights")?
        }
        None => ConfidenceEstimator::default_random(seed),
    };
    est.validate()?;
    Ok(est)
}

pub fn inspect(
    root: &Path,
    record: &SampleRecord,
    out: &Path,
    confidence_out: Option<&Path>,
    weights: Option<&Path>,
    seed: u64,
) -> Result<Value> {
    let arrays = read_sample_arrays(root, record)?;
    let (w, h) = arrays.dims();
    let est = load_estimator(weights, seed)?;
    let conf = est.estimate(&Tensor::from_depth(&arrays.depth_raw), &Tensor::from_validity(&arrays.depth_raw.validity()))?;
    let conf_px = |x: usize, y: usize| (conf.at3(0, y, x) * 255.0).round().clamp(0.0, 255.0) as u8;

    let panel: RgbImage = ImageBuffer::from_fn((4 * w) as u32, h as u32, |px, py| {
        let (tile, x, y) = (px as usize / w, px as usize % w, py as usize);
        Rgb(match tile {
            0 => *arrays.rgb.get(x, y),
            1 => [depth_gray(*arrays.depth_raw.get(x, y)); 3],
            2 => id_color(*arrays.instance_ids.get(x, y)),
            _ => [conf_px(x, y); 3],
        })
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    panel.save(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = confidence_out {
        let gray: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([conf_px(x as usize, y as usize)]));
        gray.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    let (lo, hi) = conf.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(json!({
        "sample": record.sample_id,
        "panel": out,
        "confidence": confidence_out,
        "panel_size": [4 * w, h],
        "instances": record.annotations.len(),
        "confidence_mean": conf.sum() / conf.len() as f64,
        "confidence_range": [lo, hi],
    }))
}
