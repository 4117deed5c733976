//! Soft rasterization loss between predicted and target vertex loops.

use crate::autograd::{sigmoid, CustomOp, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{bounds_of, crossing_inside, Point2};

/// Border added around the union bounding box, in multiples of the
/// softness temperature.
const PAD_TAUS: f64 = 3.0;

#[derive(Clone, Copy)]
struct EdgeFoot {
    d: f64,
    t: f64,
    c: Point2,
}

/// Soft occupancy of one polygon at one point, with what backward needs.
struct Occupancy {
    o: f64,
    /// Softened distance magnitude.
    ds: f64,
    /// `-1` inside, `+1` outside.
    sign: f64,
    z: f64,
    dmin: f64,
}

fn occupancy(poly: &[Point2], p: Point2, tau: f64, feet: &mut Vec<EdgeFoot>) -> Occupancy {
    let n = poly.len();
    feet.clear();
    let mut dmin = f64::INFINITY;
    for e in 0..n {
        let (a, b) = (poly[e], poly[(e + 1) % n]);
        let ab = b - a;
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let c = a + ab * t;
        let d = p.dist(c);
        dmin = dmin.min(d);
        feet.push(EdgeFoot { d, t, c });
    }
    let mut z = 0.0;
    let mut acc = 0.0;
    for f in feet.iter() {
        let w = (-(f.d - dmin) / tau).exp();
        z += w;
        acc += w * f.d;
    }
    let ds = acc / z;
    let sign = if crossing_inside(poly, p) { -1.0 } else { 1.0 };
    Occupancy {
        o: sigmoid(-sign * ds / tau),
        ds,
        sign,
        z,
        dmin,
    }
}

/// Pushes `g = ∂L/∂O` back to the polygon vertices; returns `∂L/∂p`.
fn occupancy_backward(poly: &[Point2], occ: &Occupancy, feet: &[EdgeFoot], p: Point2, tau: f64, g: f64, grad: Option<&mut [Point2]>) -> Point2 {
    let n = poly.len();
    let gds = g * occ.o * (1.0 - occ.o) * (-occ.sign / tau);
    let mut gp = Point2::new(0.0, 0.0);
    let mut grad = grad;
    for (e, f) in feet.iter().enumerate() {
        if f.d <= 0.0 {
            continue;
        }
        let w = (-(f.d - occ.dmin) / tau).exp() / occ.z;
        let gd = gds * w * (1.0 - (f.d - occ.ds) / tau);
        let unit = (f.c - p) * (1.0 / f.d);
        gp = gp - unit * gd;
        if let Some(gr) = grad.as_deref_mut() {
            gr[e] = gr[e] + unit * (gd * (1.0 - f.t));
            let k = (e + 1) % n;
            gr[k] = gr[k] + unit * (gd * f.t);
        }
    }
    gp
}

fn extreme(points: &[Point2], axis: usize, max: bool) -> (f64, usize) {
    let coord = |p: &Point2| if axis == 0 { p.x } else { p.y };
    let mut best = (coord(&points[0]), 0);
    for (i, p) in points.iter().enumerate().skip(1) {
        let v = coord(p);
        if (max && v > best.0) || (!max && v < best.0) {
            best = (v, i);
        }
    }
    best
}

/// Mean absolute occupancy difference between `pred` and `gt` on a
/// `res × res` grid over their padded union box. With `grad = Some(s)`,
/// also returns `s · ∂loss/∂pred`.
pub(crate) fn pair_loss(pred: &[Point2], gt: &[Point2], res: usize, tau: f64, grad: Option<f64>) -> Result<(f64, Vec<Point2>)> {
    let both: Vec<Point2> = pred.iter().chain(gt).copied().collect();
    let (lo, hi) = bounds_of(&both);
    if !(hi.x > lo.x && hi.y > lo.y) {
        return Err(Error::DegenerateExtent(format!(
            "raster box [{}, {}] x [{}, {}]",
            lo.x, hi.x, lo.y, hi.y
        )));
    }
    let pad = PAD_TAUS * tau;
    let (x0, y0) = (lo.x - pad, lo.y - pad);
    let (sx, sy) = ((hi.x - lo.x + 2.0 * pad) / res as f64, (hi.y - lo.y + 2.0 * pad) / res as f64);
    let cells = (res * res) as f64;
    let mut gpred = vec![Point2::new(0.0, 0.0); pred.len()];
    // Gradient with respect to the box corners, through the pixel centers.
    let (mut g_lo, mut g_hi) = (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0));
    let mut feet_p = Vec::with_capacity(pred.len());
    let mut feet_g = Vec::with_capacity(gt.len());
    let mut total = 0.0;
    for r in 0..res {
        let fy = (r as f64 + 0.5) / res as f64;
        for c in 0..res {
            let fx = (c as f64 + 0.5) / res as f64;
            let p = Point2::new(x0 + (c as f64 + 0.5) * sx, y0 + (r as f64 + 0.5) * sy);
            let op = occupancy(pred, p, tau, &mut feet_p);
            let og = occupancy(gt, p, tau, &mut feet_g);
            let diff = op.o - og.o;
            total += diff.abs();
            if let Some(scale) = grad {
                let g = scale * diff.signum() / cells;
                if g == 0.0 {
                    continue;
                }
                let gp1 = occupancy_backward(pred, &op, &feet_p, p, tau, g, Some(&mut gpred));
                let gp2 = occupancy_backward(gt, &og, &feet_g, p, tau, -g, None);
                let gp = gp1 + gp2;
                g_lo = g_lo + Point2::new(gp.x * (1.0 - fx), gp.y * (1.0 - fy));
                g_hi = g_hi + Point2::new(gp.x * fx, gp.y * fy);
            }
        }
    }
    if grad.is_some() {
        // The box extremes move with whichever vertex attains them.
        let np = pred.len();
        for (axis, gl, gh) in [(0, g_lo.x, g_hi.x), (1, g_lo.y, g_hi.y)] {
            for (max, gv) in [(false, gl), (true, gh)] {
                let (_, i) = extreme(&both, axis, max);
                if i < np {
                    if axis == 0 {
                        gpred[i].x += gv;
                    } else {
                        gpred[i].y += gv;
                    }
                }
            }
        }
    }
    Ok((total / cells, gpred))
}

/// Custom op over matched prediction rows `[p, n, 2]` (normalized). The
/// output is the mean over pairs of [`pair_loss`] in pixel space.
pub struct RasterLoss {
    pub targets: Vec<Vec<Point2>>,
    pub width: f64,
    pub height: f64,
    pub res: usize,
    pub tau: f64,
}

impl RasterLoss {
    fn rows(&self, x: &Tensor) -> Result<Vec<Vec<Point2>>> {
        if x.shape.len() != 3 || x.shape[2] != 2 || x.shape[0] != self.targets.len() {
            return Err(Error::Shape(format!(
                "raster loss input {:?} for {} targets",
                x.shape,
                self.targets.len()
            )));
        }
        let n = x.shape[1];
        Ok((0..x.shape[0])
            .map(|r| {
                x.data[r * n * 2..(r + 1) * n * 2]
                    .chunks_exact(2)
                    .map(|c| Point2::new(c[0] * self.width, c[1] * self.height))
                    .collect()
            })
            .collect())
    }
}

impl CustomOp for RasterLoss {
    fn name(&self) -> &str {
        "raster_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
        if self.tau <= 0.0 || self.res == 0 {
            return Err(Error::Config(format!(
                "raster loss needs tau > 0 and res > 0 (got {}, {})",
                self.tau, self.res
            )));
        }
        let rows = self.rows(inputs[0])?;
        let mut total = 0.0;
        for (p, t) in rows.iter().zip(&self.targets) {
            total += pair_loss(p, t, self.res, self.tau, None)?.0;
        }
        let v = if rows.is_empty() { 0.0 } else { total / rows.len() as f64 };
        Ok((Tensor::scalar(v), Vec::new()))
    }

    fn backward(&self, inputs: &[&Tensor], _saved: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0];
        let rows = self.rows(x).expect("validated in forward");
        let n = x.shape[1];
        let scale = grad_out[0] / rows.len().max(1) as f64;
        let mut g = vec![0.0; x.numel()];
        for (r, (p, t)) in rows.iter().zip(&self.targets).enumerate() {
            let (_, gp) = pair_loss(p, t, self.res, self.tau, Some(scale)).expect("validated in forward");
            for (j, v) in gp.iter().enumerate() {
                g[(r * n + j) * 2] = v.x * self.width;
                g[(r * n + j) * 2 + 1] = v.y * self.height;
            }
        }
        vec![Some(g)]
    }
}
