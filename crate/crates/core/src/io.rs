//! On-disk formats: JSON documents, binary PGM rasters, the scene file (JSON
//! registry plus 16-bit height and owner rasters), depth rasters, and mask
//! manifests.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::archetype::FoodArchetype;
use crate::error::{param, Error, Result};
use crate::perception::{DepthImage, InstanceMask, InstanceMaskSet, MaskSource, NoiseRecord};
use crate::raster::{mm_to_units, units_to_mm, Mask, RasterFrame};
use crate::scenegen::{PieceInstance, PieceStamp, RandomizationRecord, StampShape, TrayConfig, TrayScene};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes a binary (P5) PGM. `maxval > 255` selects 16-bit big-endian samples.
pub fn write_pgm(path: &Path, data: &Array2<u16>, maxval: u16) -> Result<()> {
    let (h, w) = data.dim();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut body = Vec::with_capacity(w * h * 2);
    for &v in data.iter() {
        let v = v.min(maxval);
        if maxval > 255 {
            body.extend_from_slice(&v.to_be_bytes());
        } else {
            body.push(v as u8);
        }
    }
    write!(out, "P5\n{w} {h}\n{maxval}\n")
        .and_then(|_| out.write_all(&body))
        .and_then(|_| out.flush())
        .map_err(io_err(path))
}

/// Reads a binary (P5) PGM of either sample depth.
pub fn read_pgm(path: &Path) -> Result<Array2<u16>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| Error::Pgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let sample = if maxval > 255 { 2 } else { 1 };
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() < w * h * sample {
        return Err(bad("truncated sample data"));
    }
    let data: Vec<u16> = if sample == 2 {
        body.chunks_exact(2)
            .take(w * h)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..w * h].iter().map(|&b| b as u16).collect()
    };
    Array2::from_shape_vec((h, w), data).map_err(|_| bad("shape mismatch"))
}

/// Millimetre heights to 16-bit levels of 0.01 mm (saturating).
pub fn heights_to_levels(mm: &Array2<f64>) -> Array2<u16> {
    mm.mapv(|v| mm_to_units(v).clamp(0, u16::MAX as i32) as u16)
}

pub fn levels_to_heights(levels: &Array2<u16>) -> Array2<f64> {
    levels.mapv(|v| units_to_mm(v as i32))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PieceRecord {
    id: u32,
    archetype: String,
    shape: StampShape,
    anchor: [i64; 2],
    position_mm: [f64; 2],
    rest_height_mm: f64,
    #[serde(default)]
    damage: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SceneDocument {
    tray: TrayConfig,
    frame: RasterFrame,
    seed: u64,
    randomization: RandomizationRecord,
    archetypes: std::collections::BTreeMap<String, FoodArchetype>,
    next_id: u32,
    pieces: Vec<PieceRecord>,
    heightmap: Option<String>,
    owner_map: Option<String>,
}

/// Paths of a saved scene: `<stem>.json`, `<stem>_height.pgm`,
/// `<stem>_owner.pgm`.
pub fn scene_paths(json: &Path) -> (PathBuf, PathBuf) {
    let stem = json.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let dir = json.parent().unwrap_or(Path::new(""));
    (
        dir.join(format!("{stem}_height.pgm")),
        dir.join(format!("{stem}_owner.pgm")),
    )
}

pub fn save_scene(scene: &TrayScene, json: &Path) -> Result<()> {
    let (hp, op) = scene_paths(json);
    write_pgm(&hp, &heights_to_levels(&scene.heightmap_mm()), u16::MAX)?;
    let owners = scene.owner_map.mapv(|id| id.min(u16::MAX as u32) as u16);
    write_pgm(&op, &owners, u16::MAX)?;
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    let doc = SceneDocument {
        tray: scene.tray.clone(),
        frame: scene.frame,
        seed: scene.seed,
        randomization: scene.randomization.clone(),
        archetypes: scene.archetypes.clone(),
        next_id: scene.next_id,
        pieces: scene
            .pieces
            .iter()
            .map(|p| PieceRecord {
                id: p.id,
                archetype: p.archetype.clone(),
                shape: p.stamp.shape.clone(),
                anchor: [p.anchor.0, p.anchor.1],
                position_mm: [p.position_mm.0, p.position_mm.1],
                rest_height_mm: p.rest_height_mm(),
                damage: p.damage,
            })
            .collect(),
        heightmap: name(&hp),
        owner_map: name(&op),
    };
    write_json(json, &doc)
}

/// Loads a scene by re-rasterizing every piece and recomposing the surface.
/// When the height raster named in the document exists it must agree with the
/// recomposition.
pub fn load_scene(json: &Path) -> Result<TrayScene> {
    let doc: SceneDocument = read_json(json)?;
    let res = doc.frame.resolution_mm;
    let mut scene = TrayScene::empty(&doc.tray);
    if scene.frame != doc.frame {
        return Err(param("scene frame does not match its tray configuration"));
    }
    scene.seed = doc.seed;
    scene.randomization = doc.randomization;
    scene.archetypes = doc.archetypes;
    scene.next_id = doc.next_id;
    let mut last = 0;
    for rec in doc.pieces {
        if rec.id <= last {
            return Err(param("piece ids must be strictly increasing"));
        }
        last = rec.id;
        if !scene.archetypes.contains_key(&rec.archetype) {
            return Err(Error::UnknownArchetype(rec.archetype));
        }
        let stamp = PieceStamp::rasterize(&rec.shape, res)?;
        scene.pieces.push(PieceInstance {
            id: rec.id,
            archetype: rec.archetype,
            stamp,
            anchor: (rec.anchor[0], rec.anchor[1]),
            position_mm: (rec.position_mm[0], rec.position_mm[1]),
            rest_height: mm_to_units(rec.rest_height_mm),
            visible_px: 0,
            damage: rec.damage,
        });
    }
    scene.recompose();
    if let Some(name) = doc.heightmap {
        let path = json.parent().unwrap_or(Path::new("")).join(name);
        if path.exists() {
            let stored = read_pgm(&path)?;
            let expected = heights_to_levels(&scene.heightmap_mm());
            if stored != expected {
                return Err(Error::Pgm {
                    path,
                    reason: "height raster disagrees with the piece registry".into(),
                });
            }
        }
    }
    Ok(scene)
}

/// Writes depth as a 16-bit PGM of 0.01 mm levels.
pub fn save_depth(depth: &DepthImage, path: &Path) -> Result<()> {
    write_pgm(path, &heights_to_levels(&depth.heights), u16::MAX)
}

/// Reads a depth PGM onto `frame`. The noise record is not stored in the
/// raster and comes back zeroed.
pub fn load_depth(path: &Path, frame: RasterFrame) -> Result<DepthImage> {
    let levels = read_pgm(path)?;
    if levels.dim() != (frame.height, frame.width) {
        return Err(param("depth raster does not match the frame dimensions"));
    }
    Ok(DepthImage {
        frame,
        heights: levels_to_heights(&levels),
        noise: NoiseRecord::default(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MaskEntry {
    id: u32,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MaskManifest {
    source: MaskSource,
    frame: RasterFrame,
    instances: Vec<MaskEntry>,
}

/// Writes one 8-bit PGM per instance (`<stem>_<id>.pgm`, 255 = inside) next
/// to a JSON manifest listing ids, files and the source tag. Per-instance
/// files keep overlapping masks representable.
pub fn save_masks(set: &InstanceMaskSet, manifest: &Path) -> Result<()> {
    let stem = manifest.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut instances = Vec::with_capacity(set.len());
    for m in &set.masks {
        let file = format!("{stem}_{:05}.pgm", m.id);
        let grid = m.mask.to_grid().mapv(|b| if b { 255u16 } else { 0 });
        write_pgm(&dir.join(&file), &grid, 255)?;
        instances.push(MaskEntry {
            id: m.id,
            file,
            score: m.score,
        });
    }
    write_json(
        manifest,
        &MaskManifest {
            source: set.source,
            frame: set.frame,
            instances,
        },
    )
}

/// Reads a mask manifest. Any non-zero sample counts as inside.
pub fn load_masks(manifest: &Path) -> Result<InstanceMaskSet> {
    let doc: MaskManifest = read_json(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut masks = Vec::with_capacity(doc.instances.len());
    for e in doc.instances {
        let levels = read_pgm(&dir.join(&e.file))?;
        if levels.dim() != (doc.frame.height, doc.frame.width) {
            return Err(param(format!("mask {} does not match the manifest frame", e.id)));
        }
        masks.push(InstanceMask {
            id: e.id,
            mask: Mask::from_grid(&levels.mapv(|v| v > 0)),
            score: e.score,
        });
    }
    Ok(InstanceMaskSet::new(doc.frame, doc.source, masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::ArchetypeLibrary;
    use crate::perception::{corrupt_masks, render_depth, render_masks, CorruptionParams};
    use crate::scenegen::{generate_scene, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pgm_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((3, 5), |(r, c)| (r * 1000 + c * 7) as u16);
        let p16 = dir.path().join("a.pgm");
        write_pgm(&p16, &data, u16::MAX).unwrap();
        assert_eq!(read_pgm(&p16).unwrap(), data);
        let small = data.mapv(|v| v % 256);
        let p8 = dir.path().join("b.pgm");
        write_pgm(&p8, &small, 255).unwrap();
        assert_eq!(read_pgm(&p8).unwrap(), small);
        let bytes = fs::read(&p16).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n65535\n"));
        assert_eq!(bytes.len(), 13 + 30);
    }

    #[test]
    fn pgm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_pgm(&p).is_err());
        fs::write(&p, b"P5\n4 4\n255\nab").unwrap();
        assert!(read_pgm(&p).is_err());
    }

    #[test]
    fn scene_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lib = ArchetypeLibrary::default();
        let mut scene = generate_scene(&SceneConfig::for_archetype("taro"), &lib, 21).unwrap();
        scene.pieces[0].damage = Some(3.5);
        let path = dir.path().join("scene.json");
        save_scene(&scene, &path).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back, scene);
        let (hp, _) = scene_paths(&path);
        assert_eq!(levels_to_heights(&read_pgm(&hp).unwrap()), scene.heightmap_mm());
    }

    #[test]
    fn depth_and_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lib = ArchetypeLibrary::default();
        let scene = generate_scene(&SceneConfig::for_archetype("mushroom"), &lib, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let depth = render_depth(&scene, 0.0, 0.01, &mut rng).unwrap();
        let dp = dir.path().join("depth.pgm");
        save_depth(&depth, &dp).unwrap();
        assert_eq!(load_depth(&dp, scene.frame).unwrap().heights, depth.heights);

        let params = CorruptionParams {
            boundary_jitter: 1,
            merge_prob: 0.5,
            drop_prob: 0.1,
            confidence_floor: 0.0,
        };
        let masks = corrupt_masks(&render_masks(&scene), &params, &mut rng).unwrap();
        let mp = dir.path().join("masks.json");
        save_masks(&masks, &mp).unwrap();
        assert_eq!(load_masks(&mp).unwrap(), masks);
    }
}
