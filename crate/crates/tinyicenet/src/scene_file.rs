//! `TISC` scene files: magic, u16 version, u32 height, u32 width, HH and HV
//! as little-endian binary32 rows, labels as u8 rows, CRC-32 of everything
//! before it.

use std::path::Path;

use tinyicenet_core::Scene;

use crate::bytes::{check_sealed, expect_magic, put_f32s, seal, Reader};
use crate::error::{Error, Result};

pub const SCENE_MAGIC: [u8; 4] = *b"TISC";
pub const SCENE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode_scene(scene: &Scene) -> Vec<u8> {
    let n = scene.height * scene.width;
    let mut out = Vec::with_capacity(HEADER_LEN + 9 * n + 4);
    out.extend_from_slice(&SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.height as u32).to_le_bytes());
    out.extend_from_slice(&(scene.width as u32).to_le_bytes());
    put_f32s(&mut out, &scene.hh);
    put_f32s(&mut out, &scene.hv);
    out.extend_from_slice(&scene.labels);
    seal(out)
}

/// Decodes a scene; the id is not stored in the file and is supplied by the caller.
pub fn decode_scene(buf: &[u8], id: &str) -> Result<Scene> {
    let mut r = Reader::new(buf);
    expect_magic(&mut r, SCENE_MAGIC, SCENE_VERSION)?;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let n = h
        .checked_mul(w)
        .filter(|n| n.checked_mul(9).is_some())
        .ok_or_else(|| Error::Header(format!("scene dims {h}x{w} overflow")))?;
    check_sealed(buf, HEADER_LEN + 9 * n)?;
    let hh = r.f32s(n, "hh grid")?;
    let hv = r.f32s(n, "hv grid")?;
    let labels = r.take(n, "label grid")?.to_vec();
    Ok(Scene::new(id, h, w, hh, hv, labels)?)
}

pub fn write_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_scene(scene)).map_err(Error::io(path))
}

/// Reads a scene whose id is the file stem.
pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(Error::io(path))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_scene(&buf, &id)
}
