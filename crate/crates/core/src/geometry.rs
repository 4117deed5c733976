//! Planar polygon primitives in pixel space.
//!
//! Coordinates follow the image convention: origin at the top-left corner,
//! `y` growing downward. Under that convention a polygon whose shoelace sum
//! is positive is traversed clockwise on screen, and that is the orientation
//! every stored room polygon uses.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive vertices closer than this are merged on construction.
pub const MERGE_TOLERANCE: f64 = 1e-9;

const IOU_SUPERSAMPLE: f64 = 4.0;
const IOU_MIN_CELLS: f64 = 256.0;
const IOU_MAX_CELLS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        Self::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Shoelace signed area of a closed vertex loop; positive means clockwise
/// under y-down axes.
pub fn signed_area(vertices: &[Point2]) -> Result<f64> {
    if vertices.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "need at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    Ok(shoelace(vertices) * 0.5)
}

fn shoelace(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
        .sum()
}

/// Cosine of the angle at vertex `j` between the edges to its cyclic
/// neighbours.
pub fn angle_cosine(vertices: &[Point2], j: usize) -> Result<f64> {
    let n = vertices.len();
    if n < 3 || j >= n {
        return Err(Error::InvalidPolygon(format!(
            "vertex {j} out of range for loop of {n}"
        )));
    }
    let v = vertices[j];
    let a = vertices[(j + n - 1) % n] - v;
    let b = vertices[(j + 1) % n] - v;
    let (la, lb) = (a.norm(), b.norm());
    if la <= MERGE_TOLERANCE || lb <= MERGE_TOLERANCE {
        return Err(Error::DegenerateEdge { index: j });
    }
    Ok((a.dot(b) / (la * lb)).clamp(-1.0, 1.0))
}

/// An ordered simple polygon. Construction merges repeated consecutive
/// vertices but does not reorient; see [`Polygon::ensure_clockwise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl TryFrom<Vec<Point2>> for Polygon {
    type Error = Error;
    fn try_from(v: Vec<Point2>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if let Some(bad) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidPolygon(format!(
                "non-finite vertex at index {bad}"
            )));
        }
        let mut merged: Vec<Point2> = Vec::with_capacity(vertices.len());
        for p in vertices {
            if merged
                .last()
                .map_or(true, |q: &Point2| q.dist(p) > MERGE_TOLERANCE)
            {
                merged.push(p);
            }
        }
        while merged.len() > 1 && merged[0].dist(merged[merged.len() - 1]) <= MERGE_TOLERANCE {
            merged.pop();
        }
        if merged.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 distinct vertices, got {}",
                merged.len()
            )));
        }
        Ok(Self { vertices: merged })
    }

    pub fn from_coords(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point2> {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices) * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn is_clockwise(&self) -> bool {
        self.signed_area() > 0.0
    }

    /// Reverses the traversal iff the polygon is counter-clockwise. The first
    /// vertex stays first.
    pub fn ensure_clockwise(&self) -> Polygon {
        if self.signed_area() < 0.0 {
            let mut v = self.vertices.clone();
            v[1..].reverse();
            Polygon { vertices: v }
        } else {
            self.clone()
        }
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn angle_cosine(&self, j: usize) -> Result<f64> {
        angle_cosine(&self.vertices, j)
    }

    /// Cyclic rotation so that vertex `start` becomes vertex 0.
    pub fn rotated(&self, start: usize) -> Polygon {
        let mut v = self.vertices.clone();
        let k = start % v.len();
        v.rotate_left(k);
        Polygon { vertices: v }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        self.map(|p| Point2::new(p.x + dx, p.y + dy))
    }

    pub fn scaled(&self, k: f64) -> Polygon {
        self.map(|p| p * k)
    }

    /// Applies `f` to every vertex; the result is not re-validated beyond
    /// what `f` preserves (similarity transforms keep validity).
    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn bounds(&self) -> (Point2, Point2) {
        bounds_of(&self.vertices)
    }

    /// Even-odd point containment.
    pub fn contains(&self, p: Point2) -> bool {
        crossing_inside(&self.vertices, p)
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// No two non-adjacent edges touch and no adjacent edges fold back.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let v = &self.vertices;
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (c, d) = (v[j], v[(j + 1) % n]);
                if adjacent {
                    // Shared vertex; reject only collinear overlap.
                    let shared = if j == i + 1 { b } else { a };
                    let other_a = if j == i + 1 { a } else { b };
                    let other_c = if j == i + 1 { d } else { c };
                    let u = other_a - shared;
                    let w = other_c - shared;
                    if u.cross(w).abs() <= 1e-12 * u.norm() * w.norm() && u.dot(w) > 0.0 {
                        return false;
                    }
                } else if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

pub(crate) fn bounds_of(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

pub(crate) fn crossing_inside(vertices: &[Point2], p: Point2) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching counts.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// A regular sampling lattice over an axis-aligned window. Cell `(c, r)`
/// covers `[x0 + c*cell, x0 + (c+1)*cell) × [y0 + r*cell, …)` and is sampled
/// at its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterGrid {
    pub x0: f64,
    pub y0: f64,
    pub cell: f64,
    pub cols: usize,
    pub rows: usize,
}

impl RasterGrid {
    /// Unit-pixel grid covering a `width × height` image.
    pub fn pixels(width: usize, height: usize) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            cell: 1.0,
            cols: width,
            rows: height,
        }
    }

    pub fn center(&self, col: usize, row: usize) -> Point2 {
        Point2::new(
            self.x0 + (col as f64 + 0.5) * self.cell,
            self.y0 + (row as f64 + 0.5) * self.cell,
        )
    }
}

/// Marks every cell whose center lies inside `poly` (even-odd rule),
/// row-major.
pub fn rasterize(poly: &Polygon, grid: &RasterGrid) -> Vec<bool> {
    let mut out = vec![false; grid.cols * grid.rows];
    let v = poly.vertices();
    let n = v.len();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for r in 0..grid.rows {
        let y = grid.y0 + (r as f64 + 0.5) * grid.cell;
        xs.clear();
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Cells with center in [span0, span1).
            let c0 = ((span[0] - grid.x0) / grid.cell - 0.5).ceil().max(0.0);
            let c1 = ((span[1] - grid.x0) / grid.cell - 0.5).ceil().max(0.0);
            let (c0, c1) = (c0 as usize, (c1 as usize).min(grid.cols));
            let row = &mut out[r * grid.cols..(r + 1) * grid.cols];
            for cell in row.iter_mut().take(c1).skip(c0) {
                *cell = true;
            }
        }
    }
    out
}

/// Intersection over union by super-sampled rasterization of the union
/// bounding box.
pub fn polygon_iou(a: &Polygon, b: &Polygon) -> Result<f64> {
    let (la, ha) = a.bounds();
    let (lb, hb) = b.bounds();
    let lo = Point2::new(la.x.min(lb.x), la.y.min(lb.y));
    let hi = Point2::new(ha.x.max(hb.x), ha.y.max(hb.y));
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if !(extent > 0.0) || a.area() + b.area() == 0.0 {
        return Err(Error::UndefinedIou);
    }
    // 4 samples per pixel, refined for tiny shapes, capped per side.
    let mut cell = 1.0 / IOU_SUPERSAMPLE;
    if extent / cell < IOU_MIN_CELLS {
        cell = extent / IOU_MIN_CELLS;
    }
    if extent / cell > IOU_MAX_CELLS as f64 {
        cell = extent / IOU_MAX_CELLS as f64;
    }
    let grid = RasterGrid {
        x0: lo.x,
        y0: lo.y,
        cell,
        cols: (((hi.x - lo.x) / cell).ceil() as usize).clamp(1, IOU_MAX_CELLS),
        rows: (((hi.y - lo.y) / cell).ceil() as usize).clamp(1, IOU_MAX_CELLS),
    };
    let ra = rasterize(a, &grid);
    let rb = rasterize(b, &grid);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in ra.iter().zip(&rb) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::UndefinedIou);
    }
    Ok(inter as f64 / union as f64)
}

/// Douglas–Peucker on an open chain; returns kept indices in order, always
/// including both endpoints.
pub fn dp_simplify_open(points: &[Point2], eps: f64) -> Vec<usize> {
    match points.len() {
        0 => return Vec::new(),
        1 => return vec![0],
        _ => {}
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((s, e)) = stack.pop() {
        if e <= s + 1 {
            continue;
        }
        let (mut best, mut dmax) = (s, -1.0);
        for i in (s + 1)..e {
            let d = point_segment_distance(points[i], points[s], points[e]);
            if d > dmax {
                dmax = d;
                best = i;
            }
        }
        if eps == 0.0 || dmax > eps {
            keep[best] = true;
            stack.push((s, best));
            stack.push((best, e));
        }
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

/// Closed-loop Douglas–Peucker: the loop is split at its two farthest-apart
/// vertices and each half is simplified as an open chain. Kept vertices stay
/// in their original cyclic order.
pub fn dp_simplify(p: &Polygon, eps: f64) -> Result<Polygon> {
    if !(eps >= 0.0) {
        return Err(Error::Contract(format!("dp epsilon must be >= 0, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(p.clone());
    }
    let kept = dp_simplify_indices(p.vertices(), eps);
    if kept.len() < 3 {
        return Err(Error::DegenerateResult(format!(
            "simplification left {} vertices",
            kept.len()
        )));
    }
    Polygon::new(kept.iter().map(|&i| p.vertices()[i]).collect())
}

/// Indices kept by closed-loop Douglas–Peucker, ascending.
pub fn dp_simplify_indices(v: &[Point2], eps: f64) -> Vec<usize> {
    let n = v.len();
    if n <= 3 {
        return (0..n).collect();
    }
    let (mut fi, mut fj, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = v[i].dist(v[j]);
            if d > best {
                best = d;
                fi = i;
                fj = j;
            }
        }
    }
    let mut keep = vec![false; n];
    let first: Vec<Point2> = v[fi..=fj].to_vec();
    for k in dp_simplify_open(&first, eps) {
        keep[fi + k] = true;
    }
    let second: Vec<Point2> = (fj..=n + fi).map(|k| v[k % n]).collect();
    for k in dp_simplify_open(&second, eps) {
        keep[(fj + k) % n] = true;
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

/// Set of room polygons sharing one image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Floorplan {
    pub rooms: Vec<Polygon>,
    pub width: usize,
    pub height: usize,
}

impl Floorplan {
    pub fn new(rooms: Vec<Polygon>, width: usize, height: usize) -> Result<Self> {
        if rooms.is_empty() {
            return Err(Error::InvalidPolygon("floorplan without rooms".into()));
        }
        let (w, h) = (width as f64, height as f64);
        for (i, room) in rooms.iter().enumerate() {
            if room
                .vertices()
                .iter()
                .any(|p| p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h)
            {
                return Err(Error::InvalidPolygon(format!(
                    "room {i} leaves the {width}x{height} frame"
                )));
            }
        }
        Ok(Self {
            rooms,
            width,
            height,
        })
    }
}
