//! Corner selection, polygonization and export of decoder outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{write_json, DensityMap, RoomsFile};
use crate::error::{Error, Result};
use crate::geometry::{angle_cosine, dp_simplify_indices, Floorplan, Point2, Polygon};
use crate::model::DecoderOutput;
use crate::query_init::RoomQueries;

/// Image side the pixel tolerance is quoted for.
pub const REFERENCE_SIDE: f64 = 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub t_pro: f64,
    pub t_ang: f64,
    /// Douglas–Peucker tolerance in pixels of a 256-pixel image.
    pub dp_eps: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            t_pro: 0.01,
            t_ang: 3f64.sqrt() / 2.0,
            dp_eps: 4.0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_pro) || !(0.0..=1.0).contains(&self.t_ang) || !(self.dp_eps >= 0.0) {
            return Err(Error::Config(format!(
                "need t_pro, t_ang in [0, 1] and dp_eps >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Tolerance in pixels of an image whose longer side is `side`.
    pub fn scaled_eps(&self, side: usize) -> f64 {
        self.dp_eps * side as f64 / REFERENCE_SIDE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRoom {
    pub polygon: Polygon,
    /// Query row the room came from.
    pub source: usize,
    /// Index into the `n` decoder vertices of each polygon vertex.
    pub indices: Vec<usize>,
    /// Corner probability of each polygon vertex.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRoom {
    pub source: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFloorplan {
    pub width: usize,
    pub height: usize,
    pub rooms: Vec<ExtractedRoom>,
    pub dropped: Vec<DroppedRoom>,
}

impl VectorFloorplan {
    pub fn to_floorplan(&self) -> Floorplan {
        Floorplan {
            rooms: self.rooms.iter().map(|r| r.polygon.clone()).collect(),
            width: self.width,
            height: self.height,
        }
    }

    /// Rooms whose boundary crosses itself.
    pub fn non_simple_count(&self) -> usize {
        self.rooms.iter().filter(|r| !r.polygon.is_simple()).count()
    }
}

/// Indices, ascending, of vertices kept as corners: probability above
/// `t_pro`, or an angle sharper than `t_ang` in absolute cosine. Vertices
/// whose angle is undefined count as failing the angle test.
pub fn select_vertices(probs: &[f64], coords: &[Point2], cfg: &ExtractionConfig) -> Result<Vec<usize>> {
    if probs.len() != coords.len() {
        return Err(Error::Shape(format!("{} probabilities for {} vertices", probs.len(), coords.len())));
    }
    Ok((0..coords.len())
        .filter(|&j| probs[j] > cfg.t_pro || angle_cosine(coords, j).is_ok_and(|c| c.abs() < cfg.t_ang))
        .collect())
}

/// Selection followed by Douglas–Peucker for one closed sequence. Returns
/// kept indices into `coords`.
pub fn extract_room(probs: &[f64], coords: &[Point2], eps: f64, cfg: &ExtractionConfig) -> Result<Vec<usize>> {
    let mut sel = select_vertices(probs, coords, cfg)?;
    if sel.len() < 3 {
        sel = (0..coords.len()).collect();
    }
    let pts: Vec<Point2> = sel.iter().map(|&i| coords[i]).collect();
    let kept = if eps > 0.0 { dp_simplify_indices(&pts, eps) } else { (0..pts.len()).collect() };
    Ok(kept.into_iter().map(|k| sel[k]).collect())
}

/// Vectorizes the first `valid_count` rooms of a decoder output.
pub fn extract_floorplan(out: &DecoderOutput, q: &RoomQueries, cfg: &ExtractionConfig, width: usize, height: usize) -> Result<VectorFloorplan> {
    cfg.validate()?;
    if out.m != q.m || out.n != q.n {
        return Err(Error::Shape(format!("decoder output {} x {} for {} x {} queries", out.m, out.n, q.m, q.n)));
    }
    let eps = cfg.scaled_eps(width.max(height));
    let last = out.final_queries();
    let (w, h) = (width as f64, height as f64);
    let mut rooms = Vec::new();
    let mut dropped = Vec::new();
    for r in 0..q.valid_count.min(out.m) {
        let coords: Vec<Point2> = last[r * out.n * 2..(r + 1) * out.n * 2]
            .chunks_exact(2)
            .map(|c| Point2::new(c[0] * w, c[1] * h))
            .collect();
        let probs = out.corner_probs(r);
        let idx = extract_room(&probs, &coords, eps, cfg)?;
        match Polygon::new(idx.iter().map(|&i| coords[i]).collect()) {
            Ok(poly) if poly.len() == idx.len() => {
                let mut indices = idx;
                if !poly.is_clockwise() {
                    indices.reverse();
                }
                rooms.push(ExtractedRoom {
                    polygon: Polygon::new(indices.iter().map(|&i| coords[i]).collect())?,
                    source: r,
                    probs: indices.iter().map(|&i| probs[i]).collect(),
                    indices,
                });
            }
            Ok(_) => dropped.push(DroppedRoom {
                source: r,
                reason: "coincident vertices after simplification".into(),
            }),
            Err(e) => {
                log::debug!("room {r} dropped: {e}");
                dropped.push(DroppedRoom {
                    source: r,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(VectorFloorplan {
        width,
        height,
        rooms,
        dropped,
    })
}

/// Rooms JSON readable by the scene loader and the evaluator.
pub fn export_json(fp: &VectorFloorplan, id: Option<&str>, path: &Path) -> Result<()> {
    let file = RoomsFile {
        id: id.map(str::to_owned),
        width: fp.width,
        height: fp.height,
        rooms: fp.rooms.iter().map(|r| r.polygon.vertices().to_vec()).collect(),
    };
    write_json(path, &file)
}

const PALETTE: [&str; 8] = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324"];

pub fn render_svg(fp: &VectorFloorplan, underlay: Option<&DensityMap>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = fp.width,
        h = fp.height
    );
    let _ = writeln!(s, r#"<rect width="{}" height="{}" fill="black"/>"#, fp.width, fp.height);
    if let Some(dm) = underlay {
        let _ = writeln!(s, r#"<g id="density">"#);
        for y in 0..dm.height {
            for x in 0..dm.width {
                let v = dm.at(x, y);
                if v > 0.0 {
                    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="1" height="1" fill="rgb({g},{g},{g})"/>"#);
                }
            }
        }
        let _ = writeln!(s, "</g>");
    }
    for (i, r) in fp.rooms.iter().enumerate() {
        let mut d = String::new();
        for (k, p) in r.polygon.vertices().iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3} ", if k == 0 { "M" } else { "L" }, p.x, p.y);
        }
        d.push('Z');
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<path d="{d}" fill="{c}" fill-opacity="0.35" stroke="{c}" stroke-width="1"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_svg(fp: &VectorFloorplan, underlay: Option<&DensityMap>, path: &Path) -> Result<()> {
    fs::write(path, render_svg(fp, underlay)).map_err(|e| Error::io(path, e))
}
