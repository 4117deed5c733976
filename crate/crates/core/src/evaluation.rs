//! Room, corner and angle precision / recall / F1, and room IoU.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, Floorplan, Point2, Polygon};
use crate::training::hungarian;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub corner_px: f64,
    pub angle_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.5,
            corner_px: 10.0,
            angle_deg: 5.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_thresh) || !(self.corner_px >= 0.0) || !(self.angle_deg >= 0.0) {
            return Err(Error::Config(format!("invalid evaluation thresholds {self:?}")));
        }
        Ok(())
    }
}

/// Raw counts; summing them over scenes gives the micro average.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gt: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.matched += o.matched;
        self.predicted += o.predicted;
        self.gt += o.gt;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gt: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl From<Counts> for LevelMetrics {
    fn from(c: Counts) -> Self {
        let (p, r) = (ratio(c.matched, c.predicted), ratio(c.matched, c.gt));
        Self {
            precision: p,
            recall: r,
            f1: f1(p, r),
            matched: c.matched,
            predicted: c.predicted,
            gt: c.gt,
        }
    }
}

/// Everything needed to aggregate one or more scenes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneCounts {
    pub room: Counts,
    pub corner: Counts,
    pub angle: Counts,
    /// Sum over ground-truth rooms of the IoU with their assigned prediction.
    pub iou_sum: f64,
}

impl SceneCounts {
    pub fn add(&mut self, o: &SceneCounts) {
        self.room.add(&o.room);
        self.corner.add(&o.corner);
        self.angle.add(&o.angle);
        self.iou_sum += o.iou_sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub room: LevelMetrics,
    pub room_iou: f64,
    pub corner: LevelMetrics,
    pub angle: LevelMetrics,
    pub scenes: usize,
    pub thresholds: EvalConfig,
}

impl MetricsReport {
    pub fn from_counts(c: &SceneCounts, scenes: usize, thresholds: EvalConfig) -> Self {
        Self {
            room: c.room.into(),
            room_iou: if c.room.gt == 0 { 0.0 } else { c.iou_sum / c.room.gt as f64 },
            corner: c.corner.into(),
            angle: c.angle.into(),
            scenes,
            thresholds,
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>9} {:>9} {:>9} {:>17}", "level", "precision", "recall", "f1", "matched/pred/gt");
        for (name, m) in [("room", &self.room), ("corner", &self.corner), ("angle", &self.angle)] {
            let counts = format!("{}/{}/{}", m.matched, m.predicted, m.gt);
            let _ = writeln!(s, "{name:<8} {:>9.4} {:>9.4} {:>9.4} {counts:>17}", m.precision, m.recall, m.f1);
        }
        let _ = writeln!(s, "room IoU {:.4} over {} scene(s)", self.room_iou, self.scenes);
        let t = &self.thresholds;
        let _ = writeln!(s, "thresholds: IoU >= {}, corner <= {} px, angle <= {} deg", t.iou_thresh, t.corner_px, t.angle_deg);
        s
    }
}

/// Minimum-cost one-to-one pairs of a `rows × cols` cost matrix of any shape.
fn assign(cost: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows <= cols {
        hungarian(cost, rows, cols).into_iter().enumerate().collect()
    } else {
        let t: Vec<f64> = (0..cols).flat_map(|c| (0..rows).map(move |r| cost[r * cols + c])).collect();
        hungarian(&t, cols, rows).into_iter().enumerate().map(|(c, r)| (r, c)).collect()
    }
}

/// Interior angle in degrees at vertex `j`, reflex angles above 180.
pub fn interior_angle(poly: &Polygon, j: usize) -> f64 {
    let v = poly.vertices();
    let n = v.len();
    let (a, p, b) = (v[(j + n - 1) % n], v[j], v[(j + 1) % n]);
    let (u, w) = (a - p, b - p);
    let cos = (u.dot(w) / (u.norm() * w.norm())).clamp(-1.0, 1.0);
    let open = cos.acos().to_degrees();
    let turn = (p - a).cross(b - p);
    if turn * poly.signed_area() >= 0.0 {
        open
    } else {
        360.0 - open
    }
}

fn corner_counts(pred: &Polygon, gt: &Polygon, cfg: &EvalConfig) -> (usize, usize) {
    let (pv, gv): (&[Point2], &[Point2]) = (pred.vertices(), gt.vertices());
    let cost: Vec<f64> = gv.iter().flat_map(|g| pv.iter().map(move |p| g.dist(*p))).collect();
    let mut corners = 0;
    let mut angles = 0;
    for (gi, pi) in assign(&cost, gv.len(), pv.len()) {
        if cost[gi * pv.len() + pi] <= cfg.corner_px {
            corners += 1;
            if (interior_angle(gt, gi) - interior_angle(pred, pi)).abs() <= cfg.angle_deg {
                angles += 1;
            }
        }
    }
    (corners, angles)
}

/// Counts for one scene.
pub fn scene_counts(pred: &Floorplan, gt: &Floorplan, cfg: &EvalConfig) -> Result<SceneCounts> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::FrameMismatch {
            pred: (pred.width, pred.height),
            gt: (gt.width, gt.height),
        });
    }
    let (np, ng) = (pred.rooms.len(), gt.rooms.len());
    let mut iou = vec![0.0; ng * np];
    for (i, g) in gt.rooms.iter().enumerate() {
        for (j, p) in pred.rooms.iter().enumerate() {
            iou[i * np + j] = polygon_iou(g, p).unwrap_or(0.0);
        }
    }
    let neg: Vec<f64> = iou.iter().map(|v| -v).collect();
    let mut c = SceneCounts {
        room: Counts {
            matched: 0,
            predicted: np,
            gt: ng,
        },
        corner: Counts {
            matched: 0,
            predicted: pred.rooms.iter().map(Polygon::len).sum(),
            gt: gt.rooms.iter().map(Polygon::len).sum(),
        },
        ..SceneCounts::default()
    };
    c.angle = c.corner;
    for (gi, pj) in assign(&neg, ng, np) {
        let v = iou[gi * np + pj];
        c.iou_sum += v;
        if v >= cfg.iou_thresh {
            c.room.matched += 1;
            let (k, a) = corner_counts(&pred.rooms[pj], &gt.rooms[gi], cfg);
            c.corner.matched += k;
            c.angle.matched += a;
        }
    }
    Ok(c)
}

pub fn evaluate(pred: &Floorplan, gt: &Floorplan, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    Ok(MetricsReport::from_counts(&scene_counts(pred, gt, cfg)?, 1, *cfg))
}

/// Micro-averaged report over scene pairs.
pub fn evaluate_many<'a>(pairs: impl IntoIterator<Item = (&'a Floorplan, &'a Floorplan)>, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut total = SceneCounts::default();
    let mut scenes = 0;
    for (p, g) in pairs {
        total.add(&scene_counts(p, g, cfg)?);
        scenes += 1;
    }
    Ok(MetricsReport::from_counts(&total, scenes, *cfg))
}
