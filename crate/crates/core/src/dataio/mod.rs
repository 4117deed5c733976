//! Scene ingestion and the on-disk scene format.
//!
//! A scene lives in its own directory:
//!
//! ```text
//! scene.json     {"id", "width", "height", "rooms": [[[x, y], …], …],
//!                 "density": "density.pgm", "masks": ["mask_000.pgm", …]}
//! density.pgm    P5, maxval 255
//! mask_NNN.pgm   P5, 0 = background, 255 = room
//! ```
//!
//! A dataset directory holds one scene directory per id plus `index.json`
//! listing the ids in order.

mod pgm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use pgm::{read_pgm, write_pgm};
pub use synth::{degrade_masks, generate_scene, MaskDegradation, SynthConfig};

use crate::error::{Error, Result};
use crate::geometry::{rasterize, Floorplan, Point2, Polygon, RasterGrid};

pub const SCENE_FILE: &str = "scene.json";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

/// Single-channel top-view density, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Rounds every cell to the nearest multiple of 1/255, the precision the
    /// PGM file stores.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = to_byte(*v) as f32 / 255.0;
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_byte(v)).collect()
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary room mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    /// Pixels whose centers fall inside `poly`.
    pub fn from_polygon(poly: &Polygon, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: rasterize(poly, &RasterGrid::pixels(width, height)),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Morphological dilation with a `(2r+1)²` square.
    pub fn dilate(&self, r: usize) -> Mask {
        self.morph(r, true)
    }

    /// Morphological erosion with a `(2r+1)²` square; outside the image
    /// counts as background.
    pub fn erode(&self, r: usize) -> Mask {
        self.morph(r, false)
    }

    fn morph(&self, r: usize, dilate: bool) -> Mask {
        let (w, h) = (self.width, self.height);
        // Separable: rows then columns.
        let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
            let mut out = vec![false; w * h];
            for y in 0..h {
                for x in 0..w {
                    let (c, len) = if horizontal { (x, w) } else { (y, h) };
                    let lo = c.saturating_sub(r);
                    let hi = (c + r).min(len - 1);
                    let at = |k: usize| if horizontal { src[y * w + k] } else { src[k * w + x] };
                    out[y * w + x] = if dilate {
                        (lo..=hi).any(at)
                    } else {
                        c >= r && c + r < len && (lo..=hi).all(at)
                    };
                }
            }
            out
        };
        let rows = pass(&self.data, true);
        Mask {
            width: w,
            height: h,
            data: pass(&rows, false),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceMasks {
    pub masks: Vec<Mask>,
}

impl InstanceMasks {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// One mask per ground-truth room, rasterized from its polygon.
    pub fn from_floorplan(fp: &Floorplan) -> Self {
        Self {
            masks: fp
                .rooms
                .iter()
                .map(|r| Mask::from_polygon(r, fp.width, fp.height))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub density: DensityMap,
    pub gt: Floorplan,
    pub masks: Option<InstanceMasks>,
}

/// Raw per-cell point counts of the gravity-axis projection. The cloud's x–y
/// bounding square (longer side, 5% margin on each side) is mapped onto the
/// grid; world `y` points up, image rows point down.
pub fn project_counts(pc: &PointCloud, width: usize, height: usize) -> Result<Vec<u32>> {
    if pc.points.is_empty() {
        return Err(Error::DegenerateExtent("empty point cloud".into()));
    }
    if pc.points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::DegenerateExtent("non-finite point".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pc.points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let side = if extent > 0.0 {
        extent * 1.1
    } else if pc.points.len() == 1 {
        1.0
    } else {
        return Err(Error::DegenerateExtent(format!(
            "all {} points coincide",
            pc.points.len()
        )));
    };
    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let (left, top) = (cx - 0.5 * side, cy + 0.5 * side);
    let mut counts = vec![0u32; width * height];
    for p in &pc.points {
        let col = ((p[0] - left) / side * width as f64).floor();
        let row = ((top - p[1]) / side * height as f64).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < width && (row as usize) < height {
            counts[row as usize * width + col as usize] += 1;
        }
    }
    Ok(counts)
}

/// Projects a cloud along gravity and normalizes by the busiest cell.
pub fn project_density(pc: &PointCloud, width: usize, height: usize) -> Result<DensityMap> {
    let counts = project_counts(pc, width, height)?;
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f32;
    Ok(DensityMap {
        width,
        height,
        data: counts.iter().map(|&c| c as f32 / max).collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneManifest {
    id: String,
    width: usize,
    height: usize,
    rooms: Vec<Vec<Point2>>,
    density: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<String>>,
}

/// Rooms-only JSON shared by scene manifests and exported predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomsFile {
    #[serde(default)]
    pub id: Option<String>,
    pub width: usize,
    pub height: usize,
    pub rooms: Vec<Vec<Point2>>,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => Error::schema(path, e.to_string()),
        _ => Error::json(path, e),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a `rooms` JSON (scene manifest or prediction export) into polygons.
pub fn read_rooms(path: &Path) -> Result<RoomsFile> {
    read_json(path)
}

fn rooms_to_polygons(path: &Path, rooms: Vec<Vec<Point2>>) -> Result<Vec<Polygon>> {
    rooms
        .into_iter()
        .enumerate()
        .map(|(i, r)| Polygon::new(r).map_err(|e| Error::schema(path, format!("room {i}: {e}"))))
        .collect()
}

pub fn save_scene(rec: &SceneRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (rec.density.width, rec.density.height);
    write_pgm(&dir.join("density.pgm"), w, h, &rec.density.to_bytes())?;
    let masks = rec
        .masks
        .as_ref()
        .map(|m| {
            m.masks
                .iter()
                .enumerate()
                .map(|(i, mask)| {
                    let name = format!("mask_{i:03}.pgm");
                    write_pgm(&dir.join(&name), mask.width, mask.height, &mask.to_bytes())?;
                    Ok(name)
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let manifest = SceneManifest {
        id: rec.id.clone(),
        width: w,
        height: h,
        rooms: rec
            .gt
            .rooms
            .iter()
            .map(|r| r.vertices().to_vec())
            .collect(),
        density: "density.pgm".into(),
        masks,
    };
    write_json(&dir.join(SCENE_FILE), &manifest)
}

pub fn load_scene(dir: &Path) -> Result<SceneRecord> {
    let path = dir.join(SCENE_FILE);
    let m: SceneManifest = read_json(&path)?;
    let (w, h) = (m.width, m.height);
    let (dw, dh, bytes) = read_pgm(&dir.join(&m.density))?;
    if (dw, dh) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            got: (dw, dh),
        });
    }
    let density = DensityMap {
        width: w,
        height: h,
        data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    };
    let masks = m
        .masks
        .map(|names| {
            names
                .iter()
                .map(|name| {
                    let (mw, mh, bytes) = read_pgm(&dir.join(name))?;
                    if (mw, mh) != (w, h) {
                        return Err(Error::DimensionMismatch {
                            expected: (w, h),
                            got: (mw, mh),
                        });
                    }
                    let mask = Mask {
                        width: w,
                        height: h,
                        data: bytes.iter().map(|&b| b >= 128).collect(),
                    };
                    if mask.is_empty() {
                        return Err(Error::schema(dir.join(name), "empty mask"));
                    }
                    Ok(mask)
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?
        .map(|masks| InstanceMasks { masks });
    let rooms = rooms_to_polygons(&path, m.rooms)?;
    let gt = Floorplan::new(rooms, w, h).map_err(|e| Error::schema(&path, e.to_string()))?;
    Ok(SceneRecord {
        id: m.id,
        density,
        gt,
        masks,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIndex {
    scenes: Vec<String>,
}

pub fn save_dataset(scenes: &[SceneRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in scenes {
        save_scene(s, &dir.join(&s.id))?;
    }
    let index = DatasetIndex {
        scenes: scenes.iter().map(|s| s.id.clone()).collect(),
    };
    write_json(&dir.join(INDEX_FILE), &index)
}

/// Scene directories of a dataset, in index order. Without an index file,
/// every subdirectory holding a `scene.json` is taken in name order. A
/// directory that is itself a scene yields just itself.
pub fn dataset_scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    if dir.join(SCENE_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let index = dir.join(INDEX_FILE);
    if index.is_file() {
        let idx: DatasetIndex = read_json(&index)?;
        return Ok(idx.scenes.iter().map(|s| dir.join(s)).collect());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SCENE_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SceneRecord>> {
    dataset_scene_dirs(dir)?
        .iter()
        .map(|d| load_scene(d))
        .collect()
}
