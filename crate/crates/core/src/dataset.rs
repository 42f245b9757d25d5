//! On-disk dataset layout, annotations and occlusion rates.
//!
//! ```text
//! <root>/rgb/<sample_id>.png           8-bit RGB
//! <root>/depth_raw/<sample_id>.png     16-bit millimeters, 0 = invalid
//! <root>/depth_filled/<sample_id>.png  16-bit millimeters
//! <root>/mask/<sample_id>.png          16-bit instance ids, 0 = background
//! <root>/annotations.json              manifest with every sample record
//! ```
//!
//! Depth is stored in whole millimeters, so arrays read back equal the
//! written arrays after [`DepthMap::quantize_mm`](crate::grid::Grid::quantize_mm).

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Split;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{meters_to_mm, mm_to_meters, BinaryMask, DepthMap, Grid, InstanceMap};
use crate::render::AmodalMaskSet;
use crate::rle::Rle;
use crate::scene::SceneSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "annotations.json";
const LAYERS: [&str; 4] = ["rgb", "depth_raw", "depth_filled", "mask"];

/// `1 − |visible| / |amodal|`.
pub fn compute_occlusion(visible: &BinaryMask, amodal: &BinaryMask) -> Result<f64> {
    visible.ensure_same_dims(amodal)?;
    if !visible.is_subset_of(amodal) {
        return Err(Error::ContainmentViolation);
    }
    let total = amodal.count();
    if total == 0 {
        return Err(Error::EmptyAmodal);
    }
    Ok(1.0 - visible.count() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    /// Value of this instance in the instance-id image.
    pub instance_index: u16,
    pub object_id: String,
    /// Tight `[x, y, w, h]` box of the visible mask; all zero when fully hidden.
    pub bbox: [usize; 4],
    pub visible_mask: Rle,
    pub amodal_area: u64,
    pub occlusion_rate: f64,
}

impl InstanceAnnotation {
    pub fn validate(&self) -> Result<()> {
        let visible = self.visible_mask.area();
        if self.amodal_area == 0 || visible > self.amodal_area {
            return Err(Error::ContainmentViolation);
        }
        let expected = 1.0 - visible as f64 / self.amodal_area as f64;
        if (self.occlusion_rate - expected).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "instance {}: occlusion {} != {expected}",
                self.instance_index, self.occlusion_rate
            )));
        }
        if self.bbox != self.visible_mask.bbox().unwrap_or([0; 4]) {
            return Err(Error::InvalidParameter(format!("instance {}: bbox is not tight", self.instance_index)));
        }
        Ok(())
    }
}

/// Annotations for every instance whose amodal silhouette reaches the image.
pub fn annotate(scene: &SceneSpec, ids: &InstanceMap, amodal: &AmodalMaskSet) -> Result<Vec<InstanceAnnotation>> {
    if amodal.masks.len() != scene.instances.len() {
        return Err(Error::dims(&[scene.instances.len()], &[amodal.masks.len()]));
    }
    let mut out = Vec::new();
    for (i, (inst, full)) in scene.instances.iter().zip(&amodal.masks).enumerate() {
        if full.count() == 0 {
            continue;
        }
        let index = (i + 1) as u16;
        let visible = ids.mask_of(index);
        let rle = Rle::encode(&visible);
        out.push(InstanceAnnotation {
            instance_index: index,
            object_id: inst.object_id.clone(),
            bbox: rle.bbox().unwrap_or([0; 4]),
            amodal_area: full.count() as u64,
            occlusion_rate: compute_occlusion(&visible, full)?,
            visible_mask: rle,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    pub scene_seed: u64,
    pub scene_index: usize,
    pub capture_index: usize,
    pub intrinsics: Intrinsics,
    /// Layer name to path relative to the dataset root.
    pub files: BTreeMap<String, String>,
    /// Layer name to hex SHA-256 of the file bytes.
    pub checksums: BTreeMap<String, String>,
    pub annotations: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleArrays {
    pub rgb: Grid<[u8; 3]>,
    pub depth_raw: DepthMap,
    pub depth_filled: DepthMap,
    pub instance_ids: InstanceMap,
}

impl SampleArrays {
    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    fn check(&self) -> Result<()> {
        self.rgb.ensure_same_dims(&self.depth_raw)?;
        self.rgb.ensure_same_dims(&self.depth_filled)?;
        self.rgb.ensure_same_dims(&self.instance_ids)
    }
}

fn png_bytes<P: image::PixelWithColorType>(img: &ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn u32_dims(w: usize, h: usize) -> (u32, u32) {
    (w as u32, h as u32)
}

pub fn encode_rgb_png(rgb: &Grid<[u8; 3]>) -> Result<Vec<u8>> {
    let (w, h) = u32_dims(rgb.width(), rgb.height());
    let data: Vec<u8> = rgb.as_slice().iter().flatten().copied().collect();
    png_bytes(&ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, data).expect("buffer size"))
}

pub fn encode_u16_png(values: &Grid<u16>) -> Result<Vec<u8>> {
    let (w, h) = u32_dims(values.width(), values.height());
    png_bytes(&ImageBuffer::<Luma<u16>, _>::from_raw(w, h, values.as_slice().to_vec()).expect("buffer size"))
}

/// Millimeter encoding; 0.5 m becomes 500.
pub fn encode_depth_png(depth: &DepthMap) -> Result<Vec<u8>> {
    encode_u16_png(&depth.map(|&d| meters_to_mm(d)))
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<Grid<[u8; 3]>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let img = img
        .as_rgb8()
        .ok_or_else(|| Error::InvalidParameter(format!("expected 8-bit RGB, got {:?}", img.color())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.pixels().map(|p| p.0).collect())
}

pub fn decode_u16_png(bytes: &[u8]) -> Result<Grid<u16>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let img = img
        .as_luma16()
        .ok_or_else(|| Error::InvalidParameter(format!("expected 16-bit gray, got {:?}", img.color())))?;
    Grid::from_vec(img.width() as usize, img.height() as usize, img.as_raw().clone())
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap> {
    Ok(decode_u16_png(bytes)?.map(|&mm| mm_to_meters(mm)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn layer_path(layer: &str, sample_id: &str) -> String {
    format!("{layer}/{sample_id}.png")
}

/// Writes the four layers of a sample and fills in the record's file paths
/// and checksums. Safe to call concurrently for distinct sample ids.
pub fn write_sample(root: &Path, record: &mut SampleRecord, arrays: &SampleArrays) -> Result<()> {
    arrays.check()?;
    let (w, h) = arrays.dims();
    if (w, h) != (record.intrinsics.width as usize, record.intrinsics.height as usize) {
        return Err(Error::dims(
            &[record.intrinsics.height as usize, record.intrinsics.width as usize],
            &[h, w],
        ));
    }
    for ann in &record.annotations {
        ann.validate()?;
        if ann.visible_mask.size != [h, w] {
            return Err(Error::dims(&[h, w], &ann.visible_mask.size));
        }
        if ann.visible_mask.decode()? != arrays.instance_ids.mask_of(ann.instance_index) {
            return Err(Error::InvalidParameter(format!(
                "instance {} mask disagrees with the id image",
                ann.instance_index
            )));
        }
    }
    let encoded = [
        encode_rgb_png(&arrays.rgb)?,
        encode_depth_png(&arrays.depth_raw)?,
        encode_depth_png(&arrays.depth_filled)?,
        encode_u16_png(&arrays.instance_ids)?,
    ];
    record.files.clear();
    record.checksums.clear();
    for (layer, bytes) in LAYERS.iter().zip(&encoded) {
        let rel = layer_path(layer, &record.sample_id);
        let path = root.join(&rel);
        fs::create_dir_all(path.parent().expect("layer dir"))?;
        fs::write(&path, bytes)?;
        record.files.insert((*layer).into(), rel);
        record.checksums.insert((*layer).into(), sha256_hex(bytes));
    }
    Ok(())
}

/// Loads a sample's arrays, verifying checksums and shapes.
pub fn read_sample_arrays(root: &Path, record: &SampleRecord) -> Result<SampleArrays> {
    let mut bytes = Vec::new();
    for layer in LAYERS {
        let rel = record
            .files
            .get(layer)
            .ok_or_else(|| Error::NotFound(format!("{}: no {layer} layer", record.sample_id)))?;
        let path = root.join(rel);
        let data = match fs::read(&path) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(path.display().to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if record.checksums.get(layer).map(String::as_str) != Some(sha256_hex(&data).as_str()) {
            return Err(Error::ChecksumMismatch(path));
        }
        bytes.push(data);
    }
    let arrays = SampleArrays {
        rgb: decode_rgb_png(&bytes[0])?,
        depth_raw: decode_depth_png(&bytes[1])?,
        depth_filled: decode_depth_png(&bytes[2])?,
        instance_ids: decode_u16_png(&bytes[3])?,
    };
    arrays.check()?;
    let expected = (record.intrinsics.width as usize, record.intrinsics.height as usize);
    if arrays.dims() != expected {
        let (w, h) = arrays.dims();
        return Err(Error::dims(&[expected.1, expected.0], &[h, w]));
    }
    Ok(arrays)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    /// Generation settings as they were used.
    pub config: serde_json::Value,
    /// Sample counts per split.
    pub split_sizes: SplitCounts,
    /// Scene (configuration) counts per split.
    pub scene_counts: SplitCounts,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(seed: u64, config: serde_json::Value, mut samples: Vec<SampleRecord>) -> Self {
        samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut split_sizes = SplitCounts::default();
        let mut scenes: BTreeMap<usize, Split> = BTreeMap::new();
        for s in &samples {
            match s.split {
                Split::Train => split_sizes.train += 1,
                Split::Val => split_sizes.val += 1,
            }
            scenes.insert(s.scene_index, s.split);
        }
        let scene_counts = SplitCounts {
            train: scenes.values().filter(|&&s| s == Split::Train).count(),
            val: scenes.values().filter(|&&s| s == Split::Val).count(),
        };
        Self { schema_version: SCHEMA_VERSION, seed, config, split_sizes, scene_counts, samples }
    }

    pub fn sample(&self, sample_id: &str) -> Result<&SampleRecord> {
        self.samples
            .iter()
            .find(|s| s.sample_id == sample_id)
            .ok_or_else(|| Error::NotFound(format!("sample {sample_id}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported schema version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

/// Writes the manifest atomically (temporary file, then rename).
pub fn export_manifest(root: &Path, manifest: &DatasetManifest) -> Result<PathBuf> {
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!(".{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, manifest.to_json()?)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => e.into(),
    })?;
    DatasetManifest::from_json(&text)
}

/// Looks a sample up in the dataset manifest and loads it.
pub fn read_sample(root: &Path, sample_id: &str) -> Result<(SampleRecord, SampleArrays)> {
    let manifest = load_manifest(root)?;
    let record = manifest.sample(sample_id)?.clone();
    let arrays = read_sample_arrays(root, &record)?;
    Ok((record, arrays))
}
