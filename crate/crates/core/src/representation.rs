//! Fixed-length room encoding: every room becomes `n` vertices spaced evenly
//! by arc length along its clockwise contour, starting at the upper-left
//! corner, with each true corner snapped onto its arc-nearest sample and
//! labelled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Floorplan, Point2, Polygon};

pub const DEFAULT_VERTICES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledVertex {
    pub p: Point2,
    pub corner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSequence {
    pub vertices: Vec<LabeledVertex>,
}

impl RoomSequence {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.vertices.iter().map(|v| v.p).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.vertices.iter().map(|v| v.corner).collect()
    }

    pub fn corner_count(&self) -> usize {
        self.vertices.iter().filter(|v| v.corner).count()
    }

    /// Row-major `n × 2` coordinates divided by the image size.
    pub fn normalized(&self, width: usize, height: usize) -> Vec<f64> {
        let (w, h) = (width as f64, height as f64);
        self.vertices
            .iter()
            .flat_map(|v| [v.p.x / w, v.p.y / h])
            .collect()
    }
}

/// Rotates a polygon so that vertex 0 minimizes `x + y`; ties go to the
/// smaller `y`, then the smaller `x`.
pub fn normalize_start(p: &Polygon) -> Polygon {
    let key = |q: &Point2| (q.x + q.y, q.y, q.x);
    let start = p
        .vertices()
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| key(a).partial_cmp(&key(b)).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    p.rotated(start)
}

/// Arc-length position of every vertex from vertex 0, plus the perimeter.
fn arc_positions(p: &Polygon) -> (Vec<f64>, f64) {
    let mut cum = Vec::with_capacity(p.len());
    let mut s = 0.0;
    for (a, b) in p.edges() {
        cum.push(s);
        s += a.dist(b);
    }
    (cum, s)
}

/// `n` points at arc lengths `k * perimeter / n` from vertex 0, all
/// unlabelled.
pub fn uniform_sample(p: &Polygon, n: usize) -> Result<RoomSequence> {
    let limit = p.len().max(4);
    if n < limit {
        return Err(Error::Capacity {
            what: "polygon corners for sample count",
            got: limit,
            limit: n,
        });
    }
    let (cum, perimeter) = arc_positions(p);
    let v = p.vertices();
    let step = perimeter / n as f64;
    let mut edge = 0;
    let vertices = (0..n)
        .map(|k| {
            let s = k as f64 * step;
            while edge + 1 < v.len() && cum[edge + 1] <= s {
                edge += 1;
            }
            let a = v[edge];
            let b = v[(edge + 1) % v.len()];
            let len = a.dist(b);
            let t = if len > 0.0 { ((s - cum[edge]) / len).clamp(0.0, 1.0) } else { 0.0 };
            let p = if t == 0.0 { a } else { a.lerp(b, t) };
            LabeledVertex { p, corner: false }
        })
        .collect();
    Ok(RoomSequence { vertices })
}

/// Sample slot for each corner: arc-nearest sample, then pushed forward on
/// collisions and pulled back where the tail would overflow.
fn corner_slots(cum: &[f64], step: f64, n: usize) -> Vec<usize> {
    let c = cum.len();
    let mut slots: Vec<usize> = cum
        .iter()
        .map(|&s| {
            let x = s / step;
            let lo = x.floor();
            let k = if x - lo > 0.5 { lo + 1.0 } else { lo };
            (k as usize).min(n - 1)
        })
        .collect();
    for i in 1..c {
        if slots[i] <= slots[i - 1] {
            slots[i] = slots[i - 1] + 1;
        }
    }
    for i in (0..c).rev() {
        let cap = if i + 1 == c { n - 1 } else { slots[i + 1] - 1 };
        slots[i] = slots[i].min(cap);
    }
    slots
}

/// Replaces the arc-nearest sample of every corner of `p` with the corner
/// itself and labels it.
pub fn snap_corners(seq: &RoomSequence, p: &Polygon) -> Result<RoomSequence> {
    let n = seq.len();
    if p.len() > n {
        return Err(Error::Capacity {
            what: "polygon corners",
            got: p.len(),
            limit: n,
        });
    }
    let (cum, perimeter) = arc_positions(p);
    let mut out = seq.clone();
    for (corner, slot) in p
        .vertices()
        .iter()
        .zip(corner_slots(&cum, perimeter / n as f64, n))
    {
        out.vertices[slot] = LabeledVertex {
            p: *corner,
            corner: true,
        };
    }
    Ok(out)
}

/// The labelled vertices, in sequence order, as a polygon.
pub fn sequence_to_polygon(seq: &RoomSequence) -> Result<Polygon> {
    let corners: Vec<Point2> = seq
        .vertices
        .iter()
        .filter(|v| v.corner)
        .map(|v| v.p)
        .collect();
    if corners.len() < 3 {
        return Err(Error::DegenerateResult(format!(
            "sequence has {} corner labels",
            corners.len()
        )));
    }
    Polygon::new(corners)
}

/// Clockwise, start-normalized, sampled and snapped encoding of one room.
pub fn encode_room(p: &Polygon, n: usize) -> Result<RoomSequence> {
    let canon = normalize_start(&p.ensure_clockwise());
    let seq = uniform_sample(&canon, n)?;
    snap_corners(&seq, &canon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledFloorplan {
    pub rooms: Vec<RoomSequence>,
    pub width: usize,
    pub height: usize,
}

impl SampledFloorplan {
    pub fn encode(fp: &Floorplan, n: usize) -> Result<Self> {
        let rooms = fp
            .rooms
            .iter()
            .map(|r| encode_room(r, n))
            .collect::<Result<_>>()?;
        Ok(Self {
            rooms,
            width: fp.width,
            height: fp.height,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Polygon {
        Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    fn l_shape() -> Polygon {
        Polygon::from_coords(&[
            (10.0, 10.0), (50.0, 10.0), (50.0, 30.0), (30.0, 30.0), (30.0, 60.0), (10.0, 60.0),
        ])
        .unwrap()
    }

    #[test]
    fn start_is_upper_left() {
        let p = Polygon::from_coords(&[(1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]).unwrap();
        let n = normalize_start(&p);
        assert_eq!(n.vertices()[0], Point2::new(0.0, 0.0));
        assert_eq!(normalize_start(&n), n);
        // x + y tie broken by smaller y.
        let d = Polygon::from_coords(&[(0.0, 2.0), (1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]).unwrap();
        assert_eq!(normalize_start(&d).vertices()[0], Point2::new(2.0, 0.0));
    }

    #[test]
    fn start_normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let k = rng.gen_range(3..10);
            let mut ang: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            ang.sort_by(f64::total_cmp);
            ang.dedup();
            if ang.len() < 3 {
                continue;
            }
            let p = Polygon::new(ang.iter().map(|a| Point2::new(50.0 + 20.0 * a.cos(), 50.0 + 20.0 * a.sin())).collect()).unwrap();
            let once = normalize_start(&p);
            assert_eq!(normalize_start(&once), once);
        }
    }

    #[test]
    fn square_samples() {
        let s = uniform_sample(&unit_square(), 8).unwrap();
        let expect = [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (1.0, 0.5), (1.0, 1.0), (0.5, 1.0), (0.0, 1.0), (0.0, 0.5)];
        for (v, e) in s.vertices.iter().zip(expect) {
            assert_eq!(v.p, Point2::new(e.0, e.1));
            assert!(!v.corner);
        }
        let four = uniform_sample(&unit_square(), 4).unwrap();
        assert_eq!(four.positions(), unit_square().vertices());
        assert!(matches!(uniform_sample(&l_shape(), 5), Err(Error::Capacity { .. })));
    }

    #[test]
    fn square_labels() {
        let sq = unit_square();
        let s = snap_corners(&uniform_sample(&sq, 8).unwrap(), &sq).unwrap();
        let labels: Vec<u8> = s.labels().iter().map(|&b| b as u8).collect();
        assert_eq!(labels, vec![1, 0, 1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn corner_between_samples_snaps_to_arc_nearest() {
        // Perimeter 20, n = 8 → step 2.5; corner (6,0) at arc 6 lies between
        // samples at 5.0 and 7.5.
        let p = Polygon::from_coords(&[(0.0, 0.0), (6.0, 0.0), (6.0, 4.0), (0.0, 4.0)]).unwrap();
        let seq = uniform_sample(&p, 8).unwrap();
        let snapped = snap_corners(&seq, &p).unwrap();
        let (cum, per) = arc_positions(&p);
        let step = per / 8.0;
        for (c, &arc) in p.vertices().iter().zip(&cum) {
            // Brute-force nearest sample by arc length.
            let best = (0..8)
                .min_by(|&a, &b| {
                    let da = (a as f64 * step - arc).abs();
                    let db = (b as f64 * step - arc).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(snapped.vertices[best].p, *c);
            assert!(snapped.vertices[best].corner);
        }
    }

    #[test]
    fn l_shape_round_trip() {
        let p = l_shape();
        let seq = encode_room(&p, 40).unwrap();
        assert_eq!(seq.corner_count(), 6);
        assert_eq!(sequence_to_polygon(&seq).unwrap(), normalize_start(&p));
        for v in &seq.vertices {
            assert!(p.boundary_distance(v.p) < 1e-9);
        }
    }

    #[test]
    fn decode_errors_and_triangles() {
        let mut seq = uniform_sample(&unit_square(), 8).unwrap();
        assert!(matches!(sequence_to_polygon(&seq), Err(Error::DegenerateResult(_))));
        for i in [0, 2, 4] {
            seq.vertices[i].corner = true;
        }
        let tri = sequence_to_polygon(&seq).unwrap();
        assert_eq!(tri.vertices(), &[Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0)]);
    }

    #[test]
    fn slot_collisions_keep_order() {
        // Two corners whose nearest slot coincides.
        let slots = corner_slots(&[0.0, 1.0, 1.2, 9.9], 2.5, 4);
        assert_eq!(slots, vec![0, 1, 2, 3]);
        let slots = corner_slots(&[0.0, 9.0, 9.5, 9.8], 2.5, 4);
        assert_eq!(slots, vec![0, 1, 2, 3]);
    }

    #[test]
    fn equal_arc_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let w = rng.gen_range(5.0..80.0);
            let h = rng.gen_range(5.0..80.0);
            let p = Polygon::from_coords(&[(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]).unwrap();
            let n = rng.gen_range(4..60);
            let seq = uniform_sample(&p, n).unwrap();
            let step = p.perimeter() / n as f64;
            let arc = |q: Point2| -> f64 {
                if q.y == 0.0 { q.x } else if q.x == w { w + q.y } else if q.y == h { w + h + (w - q.x) } else { 2.0 * w + h + (h - q.y) }
            };
            for k in 1..n {
                let gap = arc(seq.vertices[k].p) - arc(seq.vertices[k - 1].p);
                assert!((gap - step).abs() < 1e-9, "gap {gap} step {step}");
            }
        }
    }
}
