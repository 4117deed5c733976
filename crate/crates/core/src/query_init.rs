//! Room-aware query initialization: instance-mask contours sampled into the
//! decoder's initial `M × N × 2` coordinate state.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{InstanceMasks, Mask};
use crate::error::{Error, Result};
use crate::geometry::{dp_simplify, Point2, Polygon};
use crate::representation::{normalize_start, uniform_sample};

/// Contour simplification tolerance in pixels.
pub const CONTOUR_EPS: f64 = 1.0;

/// Normalized room coordinates, row-major `m × n × 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomQueries {
    pub m: usize,
    pub n: usize,
    pub coords: Vec<f64>,
    /// Leading rows derived from masks; the rest are padding.
    pub valid_count: usize,
}

impl RoomQueries {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n * 2..(i + 1) * self.n * 2]
    }

    /// Rows in pixel units for a `width × height` image.
    pub fn row_points(&self, i: usize, width: usize, height: usize) -> Vec<Point2> {
        self.row(i)
            .chunks_exact(2)
            .map(|c| Point2::new(c[0] * width as f64, c[1] * height as f64))
            .collect()
    }
}

/// Largest 4-connected foreground component; ties go to the component met
/// first in raster order.
fn largest_component(mask: &Mask) -> Option<Vec<bool>> {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![0u32; w * h];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.map_or(true, |(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    best.map(|(_, id)| label.iter().map(|&l| l == id).collect())
}

/// Follows the pixel-edge boundary of a 4-connected region clockwise
/// (y-down), keeping the region on the right. Returns the lattice corners
/// where the direction changes.
fn trace_outer_boundary(inside: &[bool], w: usize, h: usize) -> Vec<Point2> {
    let at = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && inside[y as usize * w + x as usize]
    };
    let first = inside.iter().position(|&b| b).expect("non-empty region");
    let (sx, sy) = ((first % w) as i64, (first / w) as i64);
    // Directions east, south, west, north; a right turn is +1.
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let (mut x, mut y, mut d) = (sx, sy, 0usize);
    let mut corners = vec![Point2::new(sx as f64, sy as f64)];
    loop {
        x += DIRS[d].0;
        y += DIRS[d].1;
        // Pixels ahead of vertex (x, y), right and left of the heading.
        let (right, left) = match d {
            0 => (at(x, y), at(x, y - 1)),
            1 => (at(x - 1, y), at(x, y)),
            2 => (at(x - 1, y - 1), at(x - 1, y)),
            _ => (at(x, y - 1), at(x - 1, y - 1)),
        };
        let nd = if !right {
            (d + 1) % 4
        } else if left {
            (d + 3) % 4
        } else {
            d
        };
        if (x, y) == (sx, sy) {
            break;
        }
        if nd != d {
            corners.push(Point2::new(x as f64, y as f64));
        }
        d = nd;
    }
    corners
}

/// Outer contour of the largest component, simplified, clockwise and
/// start-normalized.
pub fn mask_to_polygon(mask: &Mask) -> Result<Polygon> {
    mask_to_polygon_eps(mask, CONTOUR_EPS)
}

fn mask_to_polygon_eps(mask: &Mask, eps: f64) -> Result<Polygon> {
    let region = largest_component(mask).ok_or(Error::EmptyMask)?;
    let contour = Polygon::new(trace_outer_boundary(&region, mask.width, mask.height))?;
    let simplified = dp_simplify(&contour, eps)?;
    Ok(normalize_start(&simplified.ensure_clockwise()))
}

/// Mask contour with at most `max_corners` vertices, coarsening the
/// simplification tolerance as needed.
fn contour_within(mask: &Mask, max_corners: usize) -> Result<Polygon> {
    let mut eps = CONTOUR_EPS;
    loop {
        let p = mask_to_polygon_eps(mask, eps)?;
        if p.len() <= max_corners.max(4) {
            return Ok(p);
        }
        eps *= 1.5;
    }
}

/// Mask rows first (largest area first), uniform random padding after.
pub fn init_queries(masks: &InstanceMasks, m: usize, n: usize, seed: u64) -> Result<RoomQueries> {
    if masks.len() > m {
        return Err(Error::Capacity {
            what: "instance masks",
            got: masks.len(),
            limit: m,
        });
    }
    let mut order: Vec<&Mask> = masks.masks.iter().collect();
    order.sort_by_key(|mk| std::cmp::Reverse(mk.area()));
    let mut coords = Vec::with_capacity(m * n * 2);
    for mask in &order {
        let poly = contour_within(mask, n)?;
        let seq = uniform_sample(&poly, n)?;
        let (w, h) = (mask.width as f64, mask.height as f64);
        coords.extend(seq.vertices.iter().flat_map(|v| [v.p.x / w, v.p.y / h]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.extend((0..(m - order.len()) * n * 2).map(|_| rng.gen::<f64>()));
    Ok(RoomQueries {
        m,
        n,
        coords,
        valid_count: order.len(),
    })
}

/// Fully random queries; `valid_count` is carried over from elsewhere (the
/// number of detected rooms) since no row is tied to a mask.
pub fn random_queries(m: usize, n: usize, valid_count: usize, seed: u64) -> RoomQueries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RoomQueries {
        m,
        n,
        coords: (0..m * n * 2).map(|_| rng.gen::<f64>()).collect(),
        valid_count: valid_count.min(m),
    }
}
