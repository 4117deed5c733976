//! Synthetic rectilinear floorplans with matching density maps and masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DensityMap, InstanceMasks, Mask, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{Floorplan, Point2, Polygon};
use crate::representation::normalize_start;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDegradation {
    pub p_drop: f64,
    pub morph_min: usize,
    pub morph_max: usize,
}

impl Default for MaskDegradation {
    fn default() -> Self {
        Self {
            p_drop: 0.05,
            morph_min: 1,
            morph_max: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub rooms_min: usize,
    pub rooms_max: usize,
    pub min_side: usize,
    /// Smallest notch cut from a rectangle to make an L-shape. No edge of a
    /// generated room is shorter than this.
    pub min_notch: usize,
    pub l_shape_prob: f64,
    pub wall_points_per_px: f64,
    pub jitter_sigma: f64,
    pub interior_points_per_px: f64,
    /// Free pixels kept between rooms and around the image border.
    pub gap: usize,
    pub max_retries: usize,
    pub degrade: Option<MaskDegradation>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            rooms_min: 1,
            rooms_max: 4,
            min_side: 12,
            min_notch: 12,
            l_shape_prob: 0.5,
            wall_points_per_px: 4.0,
            jitter_sigma: 0.5,
            interior_points_per_px: 0.03,
            gap: 3,
            max_retries: 500,
            degrade: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, max_rooms: usize) -> Result<()> {
        if self.rooms_min < 1 || self.rooms_min > self.rooms_max {
            return Err(Error::Config(format!(
                "rooms_min {} / rooms_max {} must satisfy 1 <= min <= max",
                self.rooms_min, self.rooms_max
            )));
        }
        if self.rooms_max > max_rooms {
            return Err(Error::Config(format!(
                "rooms_max {} exceeds the model capacity of {max_rooms} rooms",
                self.rooms_max
            )));
        }
        let room_span = self.min_side + 2 * self.gap;
        if self.width < room_span || self.height < room_span {
            return Err(Error::Config("image too small for one room".into()));
        }
        Ok(())
    }

    fn max_side(&self) -> usize {
        (self.width.min(self.height) / 2).max(self.min_side + 1)
    }
}

/// Rectangle `[x0,x1]×[y0,y1]`, optionally with one corner notched out, as a
/// clockwise (y-down) polygon.
fn room_polygon(x0: f64, y0: f64, x1: f64, y1: f64, notch: Option<(usize, f64, f64)>) -> Polygon {
    let mut pts: Vec<Point2> = Vec::with_capacity(6);
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    for (k, &(cx, cy)) in corners.iter().enumerate() {
        match notch {
            Some((which, cw, ch)) if which == k => {
                let steps: [(f64, f64); 3] = match k {
                    0 => [(x0, y0 + ch), (x0 + cw, y0 + ch), (x0 + cw, y0)],
                    1 => [(x1 - cw, y0), (x1 - cw, y0 + ch), (x1, y0 + ch)],
                    2 => [(x1, y1 - ch), (x1 - cw, y1 - ch), (x1 - cw, y1)],
                    _ => [(x0 + cw, y1), (x0 + cw, y1 - ch), (x0, y1 - ch)],
                };
                pts.extend(steps.iter().map(|&(x, y)| Point2::new(x, y)));
            }
            _ => pts.push(Point2::new(cx, cy)),
        }
    }
    normalize_start(&Polygon::new(pts).expect("rooms have positive extent"))
}

/// Deterministic synthetic scene for `seed`.
pub fn generate_scene(seed: u64, cfg: &SynthConfig) -> Result<SceneRecord> {
    cfg.validate(usize::MAX)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let target = rng.gen_range(cfg.rooms_min..=cfg.rooms_max);
    // Occupied pixels, grown by the gap around every placed room.
    let mut blocked = Mask::empty(w, h);
    let mut rooms: Vec<Polygon> = Vec::with_capacity(target);
    let mut masks: Vec<Mask> = Vec::with_capacity(target);
    let max_side = cfg.max_side();
    let mut retries = 0;
    while rooms.len() < target {
        if retries >= cfg.max_retries {
            if rooms.len() >= cfg.rooms_min {
                break;
            }
            return Err(Error::Generation(format!(
                "seed {seed}: placed {} of {} rooms after {} attempts",
                rooms.len(),
                target,
                cfg.max_retries
            )));
        }
        retries += 1;
        let rw = rng.gen_range(cfg.min_side..=max_side.min(w - 2 * cfg.gap));
        let rh = rng.gen_range(cfg.min_side..=max_side.min(h - 2 * cfg.gap));
        let x0 = rng.gen_range(cfg.gap..=w - cfg.gap - rw);
        let y0 = rng.gen_range(cfg.gap..=h - cfg.gap - rh);
        // Arms of an L keep at least min_side / 2 + 2 pixels, and never less
        // than the notch minimum.
        let arm = (cfg.min_side / 2 + 2).max(cfg.min_notch);
        let notch = if rng.gen_bool(cfg.l_shape_prob)
            && rw >= cfg.min_notch + arm
            && rh >= cfg.min_notch + arm
        {
            let cw = rng.gen_range(cfg.min_notch..=rw - arm) as f64;
            let ch = rng.gen_range(cfg.min_notch..=rh - arm) as f64;
            Some((rng.gen_range(0..4usize), cw, ch))
        } else {
            None
        };
        let poly = room_polygon(
            x0 as f64,
            y0 as f64,
            (x0 + rw) as f64,
            (y0 + rh) as f64,
            notch,
        );
        let mask = Mask::from_polygon(&poly, w, h);
        if mask.data.iter().zip(&blocked.data).any(|(&a, &b)| a && b) {
            continue;
        }
        let grown = mask.dilate(cfg.gap);
        for (b, g) in blocked.data.iter_mut().zip(&grown.data) {
            *b |= *g;
        }
        rooms.push(poly);
        masks.push(mask);
    }
    let density = synthesize_density(&rooms, w, h, cfg, &mut rng);
    let mut instance = InstanceMasks { masks };
    if let Some(deg) = &cfg.degrade {
        instance = degrade_masks(&instance, seed, deg);
    }
    Ok(SceneRecord {
        id: format!("synth_{seed:08}"),
        density,
        gt: Floorplan::new(rooms, w, h)?,
        masks: Some(instance),
    })
}

fn synthesize_density(
    rooms: &[Polygon],
    w: usize,
    h: usize,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> DensityMap {
    let jitter = Normal::new(0.0, cfg.jitter_sigma).expect("sigma is finite");
    let mut counts = vec![0u32; w * h];
    let mut splat = |p: Point2| {
        if p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64 {
            counts[p.y as usize * w + p.x as usize] += 1;
        }
    };
    for room in rooms {
        for (a, b) in room.edges() {
            let k = (a.dist(b) * cfg.wall_points_per_px).round() as usize;
            for _ in 0..k {
                let t: f64 = rng.gen();
                let p = a.lerp(b, t);
                splat(Point2::new(
                    p.x + jitter.sample(rng),
                    p.y + jitter.sample(rng),
                ));
            }
        }
        let (lo, hi) = room.bounds();
        let k = (room.area() * cfg.interior_points_per_px).round() as usize;
        let mut placed = 0;
        for _ in 0..k * 4 {
            if placed == k {
                break;
            }
            let p = Point2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if room.contains(p) {
                splat(p);
                placed += 1;
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f32;
    let mut density = DensityMap {
        width: w,
        height: h,
        data: counts.iter().map(|&c| c as f32 / max).collect(),
    };
    density.quantize();
    density
}

/// Emulates imperfect segmentation: each mask is dropped with `p_drop`,
/// otherwise eroded or dilated by a radius in `morph_min..=morph_max`. Uses
/// its own random stream so the clean scene for `seed` is unaffected.
pub fn degrade_masks(masks: &InstanceMasks, seed: u64, cfg: &MaskDegradation) -> InstanceMasks {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Vec::with_capacity(masks.len());
    for m in &masks.masks {
        let drop = rng.gen_bool(cfg.p_drop.clamp(0.0, 1.0));
        let r = rng.gen_range(cfg.morph_min..=cfg.morph_max.max(cfg.morph_min));
        let grow: bool = rng.gen();
        if drop {
            continue;
        }
        let d = if r == 0 {
            m.clone()
        } else if grow {
            m.dilate(r)
        } else {
            m.erode(r)
        };
        if !d.is_empty() {
            out.push(d);
        }
    }
    InstanceMasks { masks: out }
}
