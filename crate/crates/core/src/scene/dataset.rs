//! On-disk dataset directory.
//!
//! ```text
//! manifest.json          version, scene config, cameras, canonical embeddings
//! scene.json             primitives and embeddings
//! view_<i>.rgb.f32       H*W*3 little-endian f32
//! view_<i>.labels.i32    H*W little-endian i32
//! view_<i>.depth.f32     H*W little-endian f32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camera, RigConfig, SceneConfig, SemanticScene, TrainView};
use crate::error::{Error, Result};
use crate::io;

pub const DATASET_VERSION: &str = "semfield-ds/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene: SemanticScene,
    pub views: Vec<TrainView>,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    config_hash: String,
    seed: u64,
    scene_config: SceneConfig,
    canonical_embeddings: Vec<Vec<f64>>,
    cameras: Vec<Camera>,
    views: Vec<ViewEntry>,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    index: usize,
    width: usize,
    height: usize,
    rgb: String,
    labels: String,
    depth: String,
}

/// Generates a scene and renders its training views.
///
/// `config_hash` is stored verbatim; pass the hash of the run configuration.
pub fn synthesize(
    seed: u64,
    scene: &SceneConfig,
    rig: &RigConfig,
    config_hash: &str,
) -> Result<Dataset> {
    let scene = super::generate_scene(seed, scene)?;
    let cameras = super::orbit_rig(rig, [0.0; 3])?;
    let views = super::render_views(&scene, &cameras)?;
    Ok(Dataset {
        scene,
        views,
        config_hash: config_hash.to_string(),
    })
}

pub fn export_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let scene = &dataset.scene;
    let mut entries = Vec::with_capacity(dataset.views.len());
    for (i, v) in dataset.views.iter().enumerate() {
        let e = ViewEntry {
            index: i,
            width: v.camera.width,
            height: v.camera.height,
            rgb: format!("view_{i}.rgb.f32"),
            labels: format!("view_{i}.labels.i32"),
            depth: format!("view_{i}.depth.f32"),
        };
        io::write_f32_le(&path.join(&e.rgb), &v.rgb)?;
        io::write_i32_le(&path.join(&e.labels), &v.labels)?;
        io::write_f32_le(&path.join(&e.depth), &v.depth)?;
        entries.push(e);
    }
    let manifest = Manifest {
        version: DATASET_VERSION.into(),
        config_hash: dataset.config_hash.clone(),
        seed: scene.seed,
        scene_config: scene.config.clone(),
        canonical_embeddings: scene.canonical_embeddings.clone(),
        cameras: dataset.views.iter().map(|v| v.camera.clone()).collect(),
        views: entries,
    };
    io::write_json(&path.join("scene.json"), scene)?;
    io::write_json(&path.join("manifest.json"), &manifest)
}

pub fn import_dataset(path: &Path) -> Result<Dataset> {
    let mpath = path.join("manifest.json");
    let manifest: Manifest = io::read_versioned_json(&mpath, DATASET_VERSION)?;
    let spath = path.join("scene.json");
    let scene: SemanticScene = io::read_json(&spath)?;
    if scene.canonical_embeddings != manifest.canonical_embeddings
        || scene.seed != manifest.seed
        || scene.config != manifest.scene_config
    {
        return Err(Error::consistency(
            &mpath,
            "manifest disagrees with scene.json",
        ));
    }
    scene
        .check_invariants()
        .map_err(|e| Error::consistency(&spath, e.to_string()))?;
    if manifest.cameras.len() != manifest.views.len() {
        return Err(Error::consistency(
            &mpath,
            format!(
                "{} cameras but {} views",
                manifest.cameras.len(),
                manifest.views.len()
            ),
        ));
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for (cam, e) in manifest.cameras.into_iter().zip(manifest.views) {
        if cam.width != e.width || cam.height != e.height {
            return Err(Error::consistency(
                &mpath,
                format!("view {} resolution disagrees with its camera", e.index),
            ));
        }
        let n = e.width * e.height;
        views.push(TrainView {
            rgb: io::read_f32_le(&path.join(&e.rgb), Some(3 * n))?,
            labels: io::read_i32_le(&path.join(&e.labels), Some(n))?,
            depth: io::read_f32_le(&path.join(&e.depth), Some(n))?,
            camera: cam,
        });
    }
    Ok(Dataset {
        scene,
        views,
        config_hash: manifest.config_hash,
    })
}
