//! Desk-scale experiment plumbing shared by the CLI and the tests.

use std::path::{Path, PathBuf};

use tinyicenet_core::scene::{preprocess, Normalization};
use tinyicenet_core::train::{synth_scene, SceneGenParams};
use tinyicenet_core::{rng, Scene};

use crate::error::{Error, Result};
use crate::scene_file::{read_scene, write_scene};

pub const SCENE_EXT: &str = "tisc";
pub const DESK_SCENES: usize = 64;
pub const DESK_SIZE: usize = 64;

/// Stream keys separating generated corpora from other uses of the seed.
const CORPUS_KEY: u64 = 0x5ce4e;

/// Synthesizes scene `index` of the corpus for `seed`; each scene has its own
/// RNG stream, so any subset can be regenerated independently.
pub fn synth_corpus_scene(seed: u64, index: usize, size: usize, num_classes: usize) -> Result<Scene> {
    let params = SceneGenParams::noiseless(size);
    let raw = synth_scene(&params, &mut rng::stream(seed, &[CORPUS_KEY, index as u64]), &scene_name(index))?;
    Ok(preprocess(&raw, num_classes, Normalization::Clip)?)
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes `count` scenes as `scene_NNNN.tisc` under `dir` (created if needed).
pub fn generate_corpus(dir: &Path, seed: u64, count: usize, size: usize, num_classes: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("{}.{SCENE_EXT}", scene_name(i)));
            write_scene(&path, &synth_corpus_scene(seed, i, size, num_classes)?)?;
            Ok(path)
        })
        .collect()
}

/// Every `.tisc` file in `dir`, in file-name order.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == SCENE_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Core(tinyicenet_core::Error::Empty("scene directory")));
    }
    paths.iter().map(read_scene).collect()
}

/// Holds out the last `min(10, max(1, n/5))` scenes for validation.
pub fn split(scenes: &[Scene]) -> Result<(&[Scene], &[Scene])> {
    if scenes.len() < 2 {
        return Err(Error::Core(tinyicenet_core::Error::InvalidArgument("need at least two scenes to split")));
    }
    let val = (scenes.len() / 5).clamp(1, 10);
    Ok(scenes.split_at(scenes.len() - val))
}
