//! End-to-end dataset generation.
//!
//! Scene `i` of a run is seeded with `derive_seed(seed, i)` and produces
//! `captures_per_config` samples, so output does not depend on how scenes
//! are scheduled across workers.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{split_catalog, ObjectCatalog, Split};
use crate::corruption::{corrupt, CorruptionConfig};
use crate::dataset::{annotate, export_manifest, write_sample, DatasetManifest, SampleArrays, SampleRecord};
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::preprocess::{preprocess_depth, resize_nearest, resize_sample, PreprocessConfig};
use crate::render::{apply_depth_cut, rasterize, render_amodal, AmodalMaskSet};
use crate::scene::{capture_variants, sample_scene, BinSpec, SamplerConfig, SceneSpec};
use crate::seeding::derive_seed;
use crate::shapes::builtin_catalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    /// Catalog manifest of OBJ files. The built-in procedural parts are used
    /// when absent.
    pub manifest: Option<PathBuf>,
    pub builtin_count: usize,
    pub builtin_seed: u64,
    /// Largest-extent normalization range, meters.
    pub extent_range: [f64; 2],
    pub split_seed: u64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            builtin_count: 149,
            builtin_seed: 0,
            extent_range: [0.03, 0.15],
            split_seed: 0,
        }
    }
}

impl CatalogConfig {
    /// Loads the catalog and applies the 4:1 object split unless the manifest
    /// already tags every entry.
    pub fn load(&self) -> Result<ObjectCatalog> {
        let range = (self.extent_range[0], self.extent_range[1]);
        let catalog = match &self.manifest {
            Some(path) => ObjectCatalog::from_manifest(path, range)?,
            None => ObjectCatalog::from_meshes(builtin_catalog(self.builtin_count, self.builtin_seed, range)?)?,
        };
        if catalog.is_fully_split() {
            Ok(catalog)
        } else {
            split_catalog(&catalog, self.split_seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub scenes: usize,
    pub seed: u64,
    /// Fraction of scenes rendered from val objects; 5000 of 35000 by default.
    pub val_fraction: f64,
    pub catalog: CatalogConfig,
    pub sampler: SamplerConfig,
    pub bin: BinSpec,
    pub corruption: CorruptionConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            scenes: 35,
            seed: 7,
            val_fraction: 1.0 / 7.0,
            catalog: CatalogConfig::default(),
            sampler: SamplerConfig::default(),
            bin: BinSpec::default(),
            corruption: CorruptionConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParameter(format!("val_fraction {} not in [0, 1]", self.val_fraction)));
        }
        let [w, h] = self.preprocess.target_size;
        if w == 0 || h == 0 {
            return Err(Error::InvalidParameter("target_size must be positive".into()));
        }
        self.sampler.validate()?;
        self.bin.validate()?;
        self.corruption.validate()
    }

    /// Number of val scenes; they are the last scene indices of the run.
    pub fn val_scenes(&self) -> usize {
        (self.scenes as f64 * self.val_fraction).round() as usize
    }

    pub fn split_of(&self, scene_index: usize) -> Split {
        if scene_index >= self.scenes - self.val_scenes() {
            Split::Val
        } else {
            Split::Train
        }
    }
}

pub fn sample_id(scene_index: usize, capture_index: usize) -> String {
    format!("{scene_index:06}_{capture_index}")
}

/// Intrinsics of an image resized without corner alignment.
pub fn scale_intrinsics(k: &Intrinsics, width: usize, height: usize) -> Intrinsics {
    let sx = width as f64 / f64::from(k.width);
    let sy = height as f64 / f64::from(k.height);
    Intrinsics {
        fx: k.fx * sx,
        fy: k.fy * sy,
        cx: (k.cx + 0.5) * sx - 0.5,
        cy: (k.cy + 0.5) * sy - 0.5,
        width: width as u32,
        height: height as u32,
    }
}

/// A rendered, corrupted and preprocessed capture before it is written.
#[derive(Debug, Clone)]
pub struct Capture {
    pub scene: SceneSpec,
    pub arrays: SampleArrays,
    pub amodal: AmodalMaskSet,
    pub intrinsics: Intrinsics,
}

/// Render → depth cut → corrupt → resize → filter and fill → mm quantize.
pub fn process_capture(scene: SceneSpec, config: &GenerateConfig) -> Result<Capture> {
    let pre = &config.preprocess;
    let fb = rasterize(&scene);
    let amodal = render_amodal(&scene);
    let (cut, _) = apply_depth_cut(&fb.depth, pre.depth_cut[0], pre.depth_cut[1])?;
    let (raw, _) = corrupt(&cut, &fb.instance_ids, &config.corruption, derive_seed(scene.scene_seed, 100))?;

    let [w, h] = pre.target_size;
    let resized = resize_sample(&fb.rgb, &raw, &fb.instance_ids, w, h)?;
    let amodal = if fb.rgb.dims() == (w, h) {
        amodal
    } else {
        AmodalMaskSet { masks: amodal.masks.iter().map(|m| resize_nearest(m, w, h)).collect() }
    };
    let raw = resized.depth.quantize_mm();
    let filled = preprocess_depth(&raw, &raw.validity(), pre)?.quantize_mm();
    let intrinsics = scale_intrinsics(scene.camera.intrinsics(), w, h);
    Ok(Capture {
        scene,
        arrays: SampleArrays { rgb: resized.rgb, depth_raw: raw, depth_filled: filled, instance_ids: resized.instance_ids },
        amodal,
        intrinsics,
    })
}

/// Samples scene `scene_index` of a run and processes each of its captures.
pub fn scene_captures(catalog: &ObjectCatalog, config: &GenerateConfig, scene_index: usize) -> Result<Vec<Capture>> {
    let split = config.split_of(scene_index);
    let seed = derive_seed(config.seed, scene_index as u64);
    let base = sample_scene(catalog, &config.sampler, &config.bin, split, seed)?;
    capture_variants(&base, &config.sampler)?
        .into_iter()
        .map(|scene| process_capture(scene, config))
        .collect()
}

/// Samples, processes and writes every capture of one scene.
pub fn generate_scene(
    catalog: &ObjectCatalog,
    config: &GenerateConfig,
    root: &Path,
    scene_index: usize,
) -> Result<Vec<SampleRecord>> {
    let split = config.split_of(scene_index);
    let mut records = vec![];
    for (capture_index, cap) in scene_captures(catalog, config, scene_index)?.into_iter().enumerate() {
        let mut record = SampleRecord {
            sample_id: sample_id(scene_index, capture_index),
            split,
            scene_seed: cap.scene.scene_seed,
            scene_index,
            capture_index,
            intrinsics: cap.intrinsics,
            files: Default::default(),
            checksums: Default::default(),
            annotations: annotate(&cap.scene, &cap.arrays.instance_ids, &cap.amodal)?,
        };
        write_sample(root, &mut record, &cap.arrays)?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
}

/// Generates `config.scenes` scenes on `workers` threads and writes the
/// manifest once every sample is on disk. On failure no manifest is written.
/// `progress` is called with the number of finished scenes.
pub fn run_generation(
    config: &GenerateConfig,
    root: &Path,
    workers: usize,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<GenerationSummary> {
    config.validate()?;
    if config.scenes == 0 {
        return Err(Error::InvalidParameter("scenes must be positive".into()));
    }
    std::fs::create_dir_all(root)?;
    let catalog = Arc::new(config.catalog.load()?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let done = AtomicUsize::new(0);
    let per_scene: Vec<Vec<SampleRecord>> = pool.install(|| {
        (0..config.scenes)
            .into_par_iter()
            .map(|i| {
                let r = generate_scene(&catalog, config, root, i)?;
                progress(done.fetch_add(1, Ordering::SeqCst) + 1, config.scenes);
                Ok(r)
            })
            .collect::<Result<_>>()
    })?;
    let manifest = DatasetManifest::new(
        config.seed,
        serde_json::to_value(config)?,
        per_scene.into_iter().flatten().collect(),
    );
    let manifest_path = export_manifest(root, &manifest)?;
    Ok(GenerationSummary { manifest_path, manifest })
}
