use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::matching::{match_rooms, MatchResult};
use super::raster::RasterLoss;
use crate::autograd::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::model::ForwardOutput;
use crate::representation::SampledFloorplan;

/// Edges shorter than this (in pixels) make a vertex angle undefined; such
/// vertices are left out of the angle loss.
pub const ANGLE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub coord: f64,
    pub ras: f64,
    pub ang: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            coord: 5.0,
            ras: 1.0,
            ang: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.coord, self.ras, self.ang].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Ground truth of one scene in the form the losses consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Per room, `n × 2` coordinates normalized by the image size.
    pub rooms: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
    pub width: usize,
    pub height: usize,
}

impl Target {
    pub fn from_sampled(s: &SampledFloorplan) -> Self {
        Self {
            rooms: s.rooms.iter().map(|r| r.normalized(s.width, s.height)).collect(),
            labels: s.rooms.iter().map(|r| r.labels()).collect(),
            width: s.width,
            height: s.height,
        }
    }

    fn pixels(&self, room: usize) -> Vec<Point2> {
        let (w, h) = (self.width as f64, self.height as f64);
        self.rooms[room].chunks_exact(2).map(|c| Point2::new(c[0] * w, c[1] * h)).collect()
    }
}

/// Cosines of the vertex angles of a closed loop; `None` where an adjacent
/// edge is shorter than [`ANGLE_EPS`].
pub fn loop_cosines(pts: &[Point2]) -> Vec<Option<f64>> {
    let n = pts.len();
    (0..n)
        .map(|j| {
            let a = pts[(j + n - 1) % n] - pts[j];
            let b = pts[(j + 1) % n] - pts[j];
            let (la, lb) = (a.norm(), b.norm());
            (la > ANGLE_EPS && lb > ANGLE_EPS).then(|| a.dot(b) / (la * lb))
        })
        .collect()
}

/// Mean over pairs of `(1/n) Σ_j |cos θ_j^gt − cos θ_j^pred|`, angles taken in
/// pixel space.
pub struct AngleLoss {
    pub targets: Vec<Vec<Option<f64>>>,
    pub width: f64,
    pub height: f64,
}

impl AngleLoss {
    fn rows(&self, x: &Tensor) -> Result<(usize, Vec<Vec<Point2>>)> {
        if x.shape.len() != 3 || x.shape[2] != 2 || x.shape[0] != self.targets.len() {
            return Err(Error::Shape(format!(
                "angle loss input {:?} for {} targets",
                x.shape,
                self.targets.len()
            )));
        }
        let n = x.shape[1];
        if self.targets.iter().any(|t| t.len() != n) {
            return Err(Error::Shape("angle targets must have one entry per vertex".into()));
        }
        let rows = (0..x.shape[0])
            .map(|r| {
                x.data[r * n * 2..(r + 1) * n * 2]
                    .chunks_exact(2)
                    .map(|c| Point2::new(c[0] * self.width, c[1] * self.height))
                    .collect()
            })
            .collect();
        Ok((n, rows))
    }
}

impl CustomOp for AngleLoss {
    fn name(&self) -> &str {
        "angle_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
        let (n, rows) = self.rows(inputs[0])?;
        let mut total = 0.0;
        for (pts, gt) in rows.iter().zip(&self.targets) {
            let pred = loop_cosines(pts);
            let s: f64 = pred
                .iter()
                .zip(gt)
                .filter_map(|(p, g)| Some((p.as_ref()? - g.as_ref()?).abs()))
                .sum();
            total += s / n as f64;
        }
        let v = if rows.is_empty() { 0.0 } else { total / rows.len() as f64 };
        Ok((Tensor::scalar(v), Vec::new()))
    }

    fn backward(&self, inputs: &[&Tensor], _saved: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0];
        let (n, rows) = self.rows(x).expect("validated in forward");
        let scale = grad_out[0] / (rows.len().max(1) * n) as f64;
        let mut g = vec![0.0; x.numel()];
        for (r, (pts, gt)) in rows.iter().zip(&self.targets).enumerate() {
            let mut gp = vec![Point2::new(0.0, 0.0); n];
            for j in 0..n {
                let Some(cg) = gt[j] else { continue };
                let (ip, inx) = ((j + n - 1) % n, (j + 1) % n);
                let a = pts[ip] - pts[j];
                let b = pts[inx] - pts[j];
                let (la, lb) = (a.norm(), b.norm());
                if la <= ANGLE_EPS || lb <= ANGLE_EPS {
                    continue;
                }
                let cos = a.dot(b) / (la * lb);
                let s = scale * (cos - cg).signum();
                let ga = (b * (1.0 / (la * lb)) - a * (cos / (la * la))) * s;
                let gb = (a * (1.0 / (la * lb)) - b * (cos / (lb * lb))) * s;
                gp[ip] = gp[ip] + ga;
                gp[inx] = gp[inx] + gb;
                gp[j] = gp[j] - ga - gb;
            }
            for (j, v) in gp.iter().enumerate() {
                g[(r * n + j) * 2] = v.x * self.width;
                g[(r * n + j) * 2 + 1] = v.y * self.height;
            }
        }
        vec![Some(g)]
    }
}

fn matched_rows(g: &mut Graph, q: Var, m: &MatchResult) -> Result<Var> {
    g.index_select(q, &m.assignment)
}

/// Mean per-vertex L1 distance between matched rows and their targets.
pub fn loss_coord(g: &mut Graph, q: Var, m: &MatchResult, target: &Target) -> Result<Var> {
    let n = g.shape(q)[1];
    let rows = matched_rows(g, q, m)?;
    let gt = g.constant(Tensor::new(
        vec![target.rooms.len(), n, 2],
        target.rooms.concat(),
    )?);
    let l1 = g.l1(rows, gt)?;
    // l1 averages over both coordinates; a vertex distance sums them.
    Ok(g.scale(l1, 2.0))
}

pub fn loss_angle(g: &mut Graph, q: Var, m: &MatchResult, target: &Target) -> Result<Var> {
    let rows = matched_rows(g, q, m)?;
    let op = AngleLoss {
        targets: (0..target.rooms.len()).map(|r| loop_cosines(&target.pixels(r))).collect(),
        width: target.width as f64,
        height: target.height as f64,
    };
    g.custom(Arc::new(op) as Arc<dyn CustomOp>, &[rows])
}

pub fn loss_raster(g: &mut Graph, q: Var, m: &MatchResult, target: &Target, res: usize, tau: f64) -> Result<Var> {
    let rows = matched_rows(g, q, m)?;
    let op = RasterLoss {
        targets: (0..target.rooms.len()).map(|r| target.pixels(r)).collect(),
        width: target.width as f64,
        height: target.height as f64,
        res,
        tau,
    };
    g.custom(Arc::new(op) as Arc<dyn CustomOp>, &[rows])
}

/// Per-vertex corner labels for all `m` rows: matched rows take their
/// target labels, the rest are all zero.
pub fn class_targets(m_rows: usize, n: usize, matching: &MatchResult, target: &Target) -> Vec<usize> {
    let mut t = vec![0; m_rows * n];
    for (i, &row) in matching.assignment.iter().enumerate() {
        for (j, &l) in target.labels[i].iter().enumerate() {
            t[row * n + j] = l as usize;
        }
    }
    t
}

/// Mean two-way cross-entropy over every vertex of every row.
pub fn loss_cls(g: &mut Graph, logits: Var, m_rows: usize, n: usize, matching: &MatchResult, target: &Target) -> Result<Var> {
    let t = class_targets(m_rows, n, matching, target);
    g.cross_entropy(logits, &t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub raster_res: usize,
    pub tau_sd: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            raster_res: 64,
            tau_sd: 1.0,
        }
    }
}

/// Unweighted loss components (summed over layers for the geometric ones)
/// and the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub cls: f64,
    pub coord: f64,
    pub ras: f64,
    pub ang: f64,
}

pub struct LossTerms {
    pub total: Var,
    pub values: LossValues,
    pub matching: MatchResult,
}

/// Matching on the final queries, geometric losses on every refined layer
/// `Q_1 .. Q_L` under that matching, classification on the final logits.
pub fn total_loss(g: &mut Graph, out: &ForwardOutput, target: &Target, s: &LossSettings) -> Result<LossTerms> {
    let last = *out.queries.last().expect("at least one snapshot");
    let shape = g.shape(last).to_vec();
    let (m_rows, n) = (shape[0], shape[1]);
    if target.rooms.iter().any(|r| r.len() != n * 2) {
        return Err(Error::Shape(format!("target rooms must have {n} vertices")));
    }
    let matching = match_rooms(g.data(last), m_rows, n, &target.rooms)?;
    let w = s.weights;
    let cls = loss_cls(g, out.logits, m_rows, n, &matching, target)?;
    let mut values = LossValues {
        total: 0.0,
        cls: g.value(cls).item(),
        coord: 0.0,
        ras: 0.0,
        ang: 0.0,
    };
    let mut total = g.scale(cls, w.cls);
    if !target.rooms.is_empty() {
        for &q in &out.queries[1..] {
            let c = loss_coord(g, q, &matching, target)?;
            let r = loss_raster(g, q, &matching, target, s.raster_res, s.tau_sd)?;
            let a = loss_angle(g, q, &matching, target)?;
            values.coord += g.value(c).item();
            values.ras += g.value(r).item();
            values.ang += g.value(a).item();
            for (v, k) in [(c, w.coord), (r, w.ras), (a, w.ang)] {
                let t = g.scale(v, k);
                total = g.add(total, t)?;
            }
        }
    }
    values.total = g.value(total).item();
    Ok(LossTerms { total, values, matching })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::dataio::{generate_scene, SynthConfig};
    use crate::geometry::Polygon;
    use crate::representation::encode_room;

    fn target_of(polys: &[Polygon], w: usize, h: usize, n: usize) -> Target {
        let rooms = polys.iter().map(|p| encode_room(p, n).unwrap()).collect();
        Target::from_sampled(&SampledFloorplan { rooms, width: w, height: h })
    }

    fn square_target(n: usize) -> Target {
        let p = Polygon::from_coords(&[(10.0, 10.0), (30.0, 10.0), (30.0, 30.0), (10.0, 30.0)]).unwrap();
        target_of(&[p], 40, 40, n)
    }

    fn identity_match(k: usize) -> MatchResult {
        MatchResult {
            assignment: (0..k).collect(),
            total_cost: 0.0,
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let t = square_target(8);
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 8, 2], t.rooms[0].clone()).unwrap());
        let m = identity_match(1);
        let c = loss_coord(&mut g, q, &m, &t).unwrap();
        let a = loss_angle(&mut g, q, &m, &t).unwrap();
        let r = loss_raster(&mut g, q, &m, &t, 64, 1.0).unwrap();
        assert!(g.value(c).item() < 1e-9);
        assert!(g.value(a).item() < 1e-9);
        assert!(g.value(r).item() < 1e-3);
    }

    #[test]
    fn coord_shift() {
        let t = square_target(8);
        let mut shifted = t.rooms[0].clone();
        for i in (0..16).step_by(2) {
            shifted[i] += 0.1;
        }
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 8, 2], shifted.clone()).unwrap());
        let c = loss_coord(&mut g, q, &identity_match(1), &t).unwrap();
        assert!((g.value(c).item() - 0.1).abs() < 1e-12);
        let pc = crate::training::pair_cost(&shifted, &t.rooms[0]).unwrap();
        assert!((g.value(c).item() - pc / 8.0).abs() < 1e-12);
    }

    #[test]
    fn angle_rigid_invariance_and_spike() {
        let t = square_target(4);
        // Rigid motion of the prediction: rotate by 30 degrees about (20, 20).
        let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
        let rot: Vec<f64> = t.rooms[0]
            .chunks_exact(2)
            .flat_map(|p| {
                let (x, y) = (p[0] * 40.0 - 20.0, p[1] * 40.0 - 20.0);
                [(c * x - s * y + 20.0) / 40.0, (s * x + c * y + 20.0) / 40.0]
            })
            .collect();
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 4, 2], rot).unwrap());
        let a = loss_angle(&mut g, q, &identity_match(1), &t).unwrap();
        assert!(g.value(a).item() < 1e-12);

        // Pull one neighbor so that vertex 0 has a 45 degree corner.
        let mut pulled = t.rooms[0].clone();
        pulled[6] = 30.0 / 40.0;
        let pts: Vec<Point2> = pulled.chunks_exact(2).map(|p| Point2::new(p[0] * 40.0, p[1] * 40.0)).collect();
        let cos = loop_cosines(&pts);
        assert!((cos[0].unwrap() - 45f64.to_radians().cos()).abs() < 1e-12);
        let contribution = (0.0 - cos[0].unwrap()).abs();
        assert!((contribution - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn angle_gradient() {
        let t = square_target(6);
        let op = Arc::new(AngleLoss {
            targets: vec![loop_cosines(&t.pixels(0))],
            width: 40.0,
            height: 40.0,
        });
        let x = Tensor::new(vec![1, 6, 2], vec![0.2, 0.3, 0.5, 0.22, 0.8, 0.3, 0.78, 0.7, 0.5, 0.8, 0.25, 0.66]).unwrap();
        let err = grad_check(|g, v| g.custom(op.clone(), &[v[0]]), &[x]).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn degenerate_edge_is_skipped() {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        let c = loop_cosines(&pts);
        assert!(c[0].is_none() && c[1].is_none() && c[2].is_some());
    }

    #[test]
    fn cls_examples() {
        let t = square_target(4);
        let m = identity_match(1);
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::zeros(&[8, 2]));
        let l = loss_cls(&mut g, uniform, 2, 4, &m, &t).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);

        let targets = class_targets(2, 4, &m, &t);
        let perfect: Vec<f64> = targets.iter().flat_map(|&c| if c == 1 { [-20.0, 20.0] } else { [20.0, -20.0] }).collect();
        let p = g.constant(Tensor::new(vec![8, 2], perfect).unwrap());
        let l = loss_cls(&mut g, p, 2, 4, &m, &t).unwrap();
        assert!(g.value(l).item() < 1e-3);

        // Two vertices by hand: logits (1, 0) with label 0 and (0, 2) with
        // label 1.
        let h = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap());
        let l = g.cross_entropy(h, &[0, 1]).unwrap();
        let want = ((1.0 + (-1f64).exp()).ln() + (1.0 + (-2f64).exp()).ln()) / 2.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }

    fn toy_output(g: &mut Graph, t: &Target, m_rows: usize, layers: usize, noise: f64) -> ForwardOutput {
        let n = t.rooms[0].len() / 2;
        let mut coords = vec![0.5; m_rows * n * 2];
        for (i, r) in t.rooms.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                coords[i * n * 2 + j] = v + noise * ((j * 31 % 7) as f64 - 3.0) / 300.0;
            }
        }
        let q0 = g.constant(Tensor::new(vec![m_rows, n, 2], coords.clone()).unwrap());
        let queries = (0..=layers)
            .map(|_| g.leaf(Tensor::new(vec![m_rows, n, 2], coords.clone()).unwrap()))
            .collect::<Vec<_>>();
        let m = identity_match(t.rooms.len());
        let labels = class_targets(m_rows, n, &m, t);
        let logits = labels.iter().flat_map(|&c| if c == 1 { [-12.0, 12.0] } else { [12.0, -12.0] }).collect();
        let logits = g.leaf(Tensor::new(vec![m_rows * n, 2], logits).unwrap());
        let mut queries = queries;
        queries[0] = q0;
        ForwardOutput {
            queries,
            logits,
            states: Vec::new(),
        }
    }

    #[test]
    fn perfect_total_and_components() {
        let t = square_target(8);
        let mut g = Graph::new();
        let out = toy_output(&mut g, &t, 3, 2, 0.0);
        let s = LossSettings::default();
        let terms = total_loss(&mut g, &out, &t, &s).unwrap();
        assert!(terms.values.total < 1e-3, "{:?}", terms.values);

        let mut g = Graph::new();
        let out = toy_output(&mut g, &t, 3, 2, 1.0);
        let terms = total_loss(&mut g, &out, &t, &s).unwrap();
        let v = &terms.values;
        let hand = 2.0 * v.cls + 5.0 * v.coord + v.ras + v.ang;
        assert!((v.total - hand).abs() < 1e-12);
        let doubled = LossSettings {
            weights: LossWeights { coord: 10.0, ..s.weights },
            ..s
        };
        let mut g = Graph::new();
        let out = toy_output(&mut g, &t, 3, 2, 1.0);
        let t2 = total_loss(&mut g, &out, &t, &doubled).unwrap();
        assert!((t2.values.total - v.total - 5.0 * v.coord).abs() < 1e-12);
    }

    #[test]
    fn corrupting_any_layer_raises_loss() {
        let t = square_target(8);
        let s = LossSettings::default();
        let base = {
            let mut g = Graph::new();
            let out = toy_output(&mut g, &t, 2, 3, 0.0);
            total_loss(&mut g, &out, &t, &s).unwrap().values.total
        };
        for layer in 1..=3 {
            let mut g = Graph::new();
            let mut out = toy_output(&mut g, &t, 2, 3, 0.0);
            let mut bad = g.value(out.queries[layer]).clone();
            bad.data[0] += 0.05;
            bad.data[5] -= 0.03;
            out.queries[layer] = g.leaf(bad);
            let v = total_loss(&mut g, &out, &t, &s).unwrap().values.total;
            assert!(v > base, "layer {layer}");
        }
    }

    #[test]
    fn total_loss_gradient() {
        let scene = generate_scene(3, &SynthConfig { width: 64, height: 64, min_side: 10, min_notch: 6, rooms_max: 2, ..SynthConfig::default() }).unwrap();
        let sampled = SampledFloorplan::encode(&scene.gt, 12).unwrap();
        let t = Target::from_sampled(&sampled);
        let s = LossSettings {
            raster_res: 16,
            ..LossSettings::default()
        };
        let mut g0 = Graph::new();
        let out = toy_output(&mut g0, &t, 3, 1, 1.0);
        let inputs = vec![g0.value(out.queries[1]).clone(), g0.value(out.logits).clone()];
        let q0 = g0.value(out.queries[0]).clone();
        let err = grad_check(
            |g, v| {
                let q0 = g.constant(q0.clone());
                let out = ForwardOutput {
                    queries: vec![q0, v[0]],
                    logits: v[1],
                    states: Vec::new(),
                };
                Ok(total_loss(g, &out, &t, &s)?.total)
            },
            &inputs,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
