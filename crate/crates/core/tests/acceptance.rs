//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `POLYROOM_ACCEPTANCE=1,4,7` runs a subset.

use std::sync::Arc;
use std::time::Instant;

use polyroom::autograd::{grad_check, grad_check_sampled, CustomOp, Graph, Tensor, Var};
use polyroom::dataio::{degrade_masks, generate_scene, MaskDegradation, SceneRecord, SynthConfig};
use polyroom::evaluation::{evaluate, EvalConfig};
use polyroom::extraction::{extract_floorplan, extract_room, ExtractionConfig};
use polyroom::geometry::{rasterize, Floorplan, Point2, Polygon, RasterGrid};
use polyroom::model::{Bound, Model, ModelConfig};
use polyroom::parallel::Execution;
use polyroom::pipeline::{evaluate_model, scene_queries};
use polyroom::representation::{encode_room, normalize_start, sequence_to_polygon, SampledFloorplan};
use polyroom::training::{
    loop_cosines, loss_angle, loss_coord, loss_raster, match_rooms, pair_cost, prepare_samples, AngleLoss, MatchResult, QueryInit,
    RasterLoss, Target, TrainConfig, Trainer,
};
use polyroom::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 1)`, away from the kink at zero.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(0.1..1.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 }).collect(),
    )
    .unwrap()
}

/// Reduces any output to a scalar with fixed, uneven weights.
fn probe(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = g.constant(Tensor::new(shape, (0..n).map(|i| ((i * 7919) % 13) as f64 / 7.0 - 0.8).collect())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        m: 2,
        n: 3,
        d: 8,
        layers: 2,
        heads: 2,
        k_points: 2,
        ffn_dim: 16,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, seed).unwrap();
    // Zero-initialized heads would hide gradient paths.
    let mut r = rng(seed + 1);
    for t in model.params_mut().tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.2..0.2));
    }
    model
}

fn block_check<F>(model: &Model, extra: Vec<Tensor>, f: F) -> f64
where
    F: Fn(&mut Graph, &Bound, &[Var]) -> Result<Var>,
{
    let np = model.params().len();
    let mut inputs = model.params().tensors().to_vec();
    inputs.extend(extra);
    grad_check_sampled(
        |g, v| {
            let b = Bound::from_vars(v[..np].to_vec());
            f(g, &b, &v[np..])
        },
        &inputs,
        4,
        5,
    )
    .unwrap()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    let mut note = |name: &str, err: f64| {
        checks += 1;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name.to_owned());
        }
    };
    macro_rules! op {
        ($name:expr, [$($t:expr),*], |$g:ident, $v:ident| $body:expr) => {{
            let inputs = vec![$($t),*];
            let err = grad_check(|$g: &mut Graph, $v: &[Var]| { let y = $body?; probe($g, y) }, &inputs).unwrap();
            note($name, err);
        }};
    }
    op!("add", [uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2, 3], -1.0, 1.0)], |g, v| g.add(v[0], v[1]));
    op!("sub", [uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2, 3], -1.0, 1.0)], |g, v| g.sub(v[0], v[1]));
    op!("mul", [uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2, 3], -1.0, 1.0)], |g, v| g.mul(v[0], v[1]));
    op!("scale", [uniform(&mut r, &[4], -1.0, 1.0)], |g, v| Ok::<_, polyroom::Error>(g.scale(v[0], -1.7)));
    op!("relu", [off_zero(&mut r, &[3, 3])], |g, v| Ok::<_, polyroom::Error>(g.relu(v[0])));
    op!("sigmoid", [uniform(&mut r, &[5], -3.0, 3.0)], |g, v| Ok::<_, polyroom::Error>(g.sigmoid(v[0])));
    op!("clamp", [Tensor::new(vec![4], vec![-0.9, -0.2, 0.3, 0.8]).unwrap()], |g, v| Ok::<_, polyroom::Error>(g.clamp(v[0], -0.5, 0.5)));
    op!("add_bias", [uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[4], -1.0, 1.0)], |g, v| g.add_bias(v[0], v[1]));
    op!("matmul", [uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[4, 2], -1.0, 1.0)], |g, v| g.matmul(v[0], v[1]));
    op!("bmm", [uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[2, 4, 2], -1.0, 1.0)], |g, v| g.bmm(v[0], v[1]));
    op!("linear", [uniform(&mut r, &[3, 4], -1.0, 1.0), uniform(&mut r, &[4, 2], -1.0, 1.0), uniform(&mut r, &[2], -1.0, 1.0)], |g, v| g.linear(v[0], v[1], v[2]));
    op!("transpose", [uniform(&mut r, &[2, 3, 2], -1.0, 1.0)], |g, v| g.transpose(v[0]));
    op!("reshape", [uniform(&mut r, &[2, 6], -1.0, 1.0)], |g, v| g.reshape(v[0], &[3, 4]));
    op!("concat", [uniform(&mut r, &[2, 3], -1.0, 1.0), uniform(&mut r, &[2, 2], -1.0, 1.0)], |g, v| g.concat(&[v[0], v[1]], 1));
    op!("slice", [uniform(&mut r, &[3, 5], -1.0, 1.0)], |g, v| g.slice(v[0], 1, 1, 3));
    op!("index_select", [uniform(&mut r, &[4, 2], -1.0, 1.0)], |g, v| g.index_select(v[0], &[2, 0, 2]));
    op!("broadcast", [uniform(&mut r, &[2, 3], -1.0, 1.0)], |g, v| g.broadcast(v[0], 1, 4));
    op!("softmax", [uniform(&mut r, &[3, 4], -2.0, 2.0)], |g, v| g.softmax(v[0], 1));
    op!("layer_norm", [uniform(&mut r, &[3, 6], -2.0, 2.0), uniform(&mut r, &[6], 0.5, 1.5), uniform(&mut r, &[6], -1.0, 1.0)], |g, v| g.layer_norm(v[0], v[1], v[2]));
    op!("attention", [uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[2, 3, 4], -1.0, 1.0), uniform(&mut r, &[2, 3, 4], -1.0, 1.0)], |g, v| g.scaled_dot_attention(v[0], v[1], v[2], 2));
    op!("bilinear", [uniform(&mut r, &[4, 5, 3], -1.0, 1.0), uniform(&mut r, &[6, 2], 0.15, 0.85)], |g, v| g.bilinear_sample(v[0], v[1]));
    op!("conv2d", [uniform(&mut r, &[4, 4, 2], -1.0, 1.0), uniform(&mut r, &[18, 3], -0.5, 0.5), uniform(&mut r, &[3], -0.5, 0.5)], |g, v| g.conv2d(v[0], v[1], v[2], 2));
    op!("sinusoid", [uniform(&mut r, &[3, 2], 0.0, 1.0)], |g, v| g.sinusoidal_embed(v[0], 8, 10.0));
    op!("cross_entropy", [uniform(&mut r, &[4, 3], -2.0, 2.0)], |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]));
    op!("l1", [Tensor::new(vec![4], vec![0.3, -0.2, 1.0, 0.5]).unwrap(), Tensor::new(vec![4], vec![0.1, 0.4, -0.5, 0.9]).unwrap()], |g, v| g.l1(v[0], v[1]));
    op!("sum", [uniform(&mut r, &[2, 2], -1.0, 1.0)], |g, v| Ok::<_, polyroom::Error>(g.sum(v[0])));
    op!("mean", [uniform(&mut r, &[2, 3], -1.0, 1.0)], |g, v| Ok::<_, polyroom::Error>(g.mean(v[0])));

    let sq = |x0: f64, y0: f64, s: f64| vec![Point2::new(x0, y0), Point2::new(x0 + s, y0), Point2::new(x0 + s, y0 + s), Point2::new(x0, y0 + s)];
    let raster: Arc<dyn CustomOp> = Arc::new(RasterLoss {
        targets: vec![sq(8.0, 8.0, 16.0)],
        width: 32.0,
        height: 32.0,
        res: 16,
        tau: 1.0,
    });
    let pred = Tensor::new(vec![1, 4, 2], vec![0.3, 0.22, 0.8, 0.3, 0.74, 0.71, 0.27, 0.8]).unwrap();
    note("raster loss", grad_check(|g, v| g.custom(raster.clone(), &[v[0]]), &[pred.clone()]).unwrap());
    let angle: Arc<dyn CustomOp> = Arc::new(AngleLoss {
        targets: vec![loop_cosines(&sq(8.0, 8.0, 16.0))],
        width: 32.0,
        height: 32.0,
    });
    note("angle loss", grad_check(|g, v| g.custom(angle.clone(), &[v[0]]), &[pred]).unwrap());

    // Fixed seeds; a random draw can land within the step size of a ReLU kink.
    let model = small_model(61);
    let cfg = model.config().clone();
    let state = |s: u64| uniform(&mut rng(s), &[cfg.m, cfg.n, cfg.d], -1.0, 1.0);
    let q = uniform(&mut rng(70), &[cfg.m, cfg.n, 2], 0.15, 0.85);
    let feats = uniform(&mut rng(71), &[4, 4, cfg.d], -1.0, 1.0);
    note(
        "room-aware self-attention",
        block_check(&model, vec![state(72), state(73)], |g, b, v| {
            let y = model.room_aware_self_attention(g, b, 0, v[0], v[1])?;
            probe(g, y)
        }),
    );
    note(
        "cross-attention",
        block_check(&model, vec![state(74), state(75), q.clone(), feats.clone()], |g, b, v| {
            let y = model.cross_attention(g, b, 0, v[0], v[1], v[2], v[3])?;
            probe(g, y)
        }),
    );
    note(
        "decoder layer",
        block_check(&model, vec![state(76), q, feats], |g, b, v| {
            let (x, q) = model.decoder_layer(g, b, 0, v[0], v[1], v[2])?;
            let a = probe(g, x)?;
            let c = probe(g, q)?;
            g.add(a, c)
        }),
    );
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-5 && secs < 60.0,
        format!("{checks} checks, max relative error {:.2e} ({}), {secs:.1} s", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------------------
// 2. Attention factorization

fn masked_dense(model: &Model, prefix: &str, x: &Tensor, pos: &Tensor, allowed: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let cfg = model.config();
    let (t, d, heads) = (cfg.m * cfg.n, cfg.d, cfg.heads);
    let dh = d / heads;
    let p = |name: &str| model.params().get(&format!("{prefix}.{name}")).unwrap().data.clone();
    let proj = |input: &[f64], w: &[f64], b: &[f64]| {
        let rows = input.len() / d;
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for o in 0..d {
                out[r * d + o] = b[o] + (0..d).map(|i| input[r * d + i] * w[i * d + o]).sum::<f64>();
            }
        }
        out
    };
    let a: Vec<f64> = x.data.iter().zip(&pos.data).map(|(u, v)| u + v).collect();
    let q = proj(&a, &p("q.weight"), &p("q.bias"));
    let k = proj(&a, &p("k.weight"), &p("k.bias"));
    let v = proj(&x.data, &p("v.weight"), &p("v.bias"));
    let mut o = vec![0.0; t * d];
    for h in 0..heads {
        for i in 0..t {
            let js: Vec<usize> = (0..t).filter(|&j| allowed(i, j)).collect();
            let s: Vec<f64> = js
                .iter()
                .map(|&j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = s.iter().copied().fold(f64::MIN, f64::max);
            let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..dh {
                o[i * d + h * dh + c] = js.iter().zip(&s).map(|(&j, sv)| (sv - mx).exp() / z * v[j * d + h * dh + c]).sum();
            }
        }
    }
    proj(&o, &p("o.weight"), &p("o.bias"))
}

fn criterion_attention() -> Outcome {
    let model = small_model(7);
    let cfg = ModelConfig { m: 3, n: 5, ..model.config().clone() };
    let mut model = Model::new(cfg.clone(), 7).unwrap();
    let mut r = rng(8);
    for t in model.params_mut().tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += r.gen_range(-0.2..0.2));
    }
    let x = uniform(&mut r, &[cfg.m, cfg.n, cfg.d], -1.0, 1.0);
    let pos = uniform(&mut r, &[cfg.m, cfg.n, cfg.d], -1.0, 1.0);
    let mut g = Graph::new();
    let b = model.bind_frozen(&mut g);
    let (xv, pv) = (g.constant(x.clone()), g.constant(pos.clone()));
    let intra = model.intra_room_attention(&mut g, &b, 0, xv, pv).unwrap();
    let inter = model.inter_room_attention(&mut g, &b, 0, xv, pv).unwrap();
    let n = cfg.n;
    let dev = |got: &[f64], want: &[f64]| got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let e_intra = dev(g.data(intra), &masked_dense(&model, "decoder.0.intra", &x, &pos, |i, j| i / n == j / n));
    let e_inter = dev(g.data(inter), &masked_dense(&model, "decoder.0.inter", &x, &pos, |i, j| i % n == j % n));

    let full = ModelConfig {
        m: 20,
        n: 40,
        d: 8,
        heads: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(full.clone(), 16).unwrap();
    let x = uniform(&mut r, &[20, 40, 8], -1.0, 1.0);
    let count = |vanilla: bool| {
        let mut g = Graph::new();
        let b = model.bind_frozen(&mut g);
        let (xv, pv) = (g.constant(x.clone()), g.constant(x.clone()));
        if vanilla {
            model.vanilla_self_attention(&mut g, &b, 0, xv, pv).unwrap();
        } else {
            model.room_aware_self_attention(&mut g, &b, 0, xv, pv).unwrap();
        }
        g.score_elements().iter().sum::<usize>()
    };
    let (ra, va) = (count(false), count(true));
    outcome(
        e_intra < 1e-10 && e_inter < 1e-10 && ra == 48_000 && va == 640_000 && va >= 10 * ra,
        format!("oracle deviation intra {e_intra:.1e} inter {e_inter:.1e}; score elements {ra} vs {va} ({:.1}x)", va as f64 / ra as f64),
    )
}

// ---------------------------------------------------------------------------
// 3. Representation round trip

/// Stacked bars with distinct ends, rotated by a random multiple of 90°.
fn random_rectilinear(r: &mut ChaCha8Rng) -> Polygon {
    let bars = r.gen_range(1..=5);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut y = 0.0;
    let mut prev: Option<(i32, i32)> = None;
    for _ in 0..bars {
        let h = r.gen_range(4..20) as f64;
        let (mut x0, mut x1) = (r.gen_range(0..15), r.gen_range(25..45));
        if let Some((p0, p1)) = prev {
            while x0 == p0 {
                x0 = r.gen_range(0..15);
            }
            while x1 == p1 {
                x1 = r.gen_range(25..45);
            }
        }
        left.push(Point2::new(x0 as f64, y));
        left.push(Point2::new(x0 as f64, y + h));
        right.push(Point2::new(x1 as f64, y));
        right.push(Point2::new(x1 as f64, y + h));
        prev = Some((x0, x1));
        y += h;
    }
    let mut pts = right;
    pts.extend(left.into_iter().rev());
    let turns = r.gen_range(0..4);
    let (ox, oy) = (r.gen_range(5.0..50.0), r.gen_range(5.0..50.0));
    let pts = pts
        .into_iter()
        .map(|p| {
            let mut q = p;
            for _ in 0..turns {
                q = Point2::new(-q.y, q.x);
            }
            Point2::new(q.x + 100.0 + ox, q.y + 100.0 + oy)
        })
        .collect();
    Polygon::new(pts).unwrap()
}

fn min_corner_gap_ok(p: &Polygon, n: usize) -> bool {
    let limit = 2.0 * p.perimeter() / n as f64;
    p.edges().all(|(a, b)| a.dist(b) >= limit)
}

fn criterion_round_trip() -> Outcome {
    let mut r = rng(3);
    let (mut tested, mut failures, mut rejected, mut max_corners) = (0, 0, 0, 0);
    while tested < 1000 {
        let p = random_rectilinear(&mut r);
        if p.len() > 20 || !min_corner_gap_ok(&p, 40) {
            rejected += 1;
            continue;
        }
        tested += 1;
        max_corners = max_corners.max(p.len());
        let want = normalize_start(&p.ensure_clockwise());
        let ok = encode_room(&p, 40).and_then(|s| sequence_to_polygon(&s)).is_ok_and(|got| got.vertices() == want.vertices());
        if !ok {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{tested} polygons (up to {max_corners} corners, {rejected} draws rejected by the gap rule), {failures} failures"),
    )
}

// ---------------------------------------------------------------------------
// 4. Matching oracle

fn brute_force(cost: &[f64], rows: usize, cols: usize) -> f64 {
    fn rec(cost: &[f64], rows: usize, cols: usize, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if i == rows {
            *best = best.min(acc);
            return;
        }
        for j in 0..cols {
            if !used[j] {
                used[j] = true;
                rec(cost, rows, cols, i + 1, used, acc + cost[i * cols + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, rows, cols, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

fn criterion_matching() -> Outcome {
    let mut r = rng(4);
    let n = 6;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m_gt = r.gen_range(1..=6);
        let m = r.gen_range(m_gt..=8);
        let pred: Vec<f64> = (0..m * n * 2).map(|_| r.gen()).collect();
        let gt: Vec<Vec<f64>> = (0..m_gt).map(|_| (0..n * 2).map(|_| r.gen()).collect()).collect();
        let res = match_rooms(&pred, m, n, &gt).unwrap();
        let cost: Vec<f64> = gt.iter().flat_map(|g| (0..m).map(|j| pair_cost(&pred[j * n * 2..(j + 1) * n * 2], g).unwrap()).collect::<Vec<_>>()).collect();
        worst = worst.max((res.total_cost - brute_force(&cost, m_gt, m)).abs());
    }
    outcome(worst <= 1e-12, format!("200 instances, max |hungarian - brute force| = {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. Extraction identity

fn criterion_extraction() -> Outcome {
    let sc = SynthConfig::default();
    let cfg = ExtractionConfig::default();
    let eps = cfg.scaled_eps(sc.width.max(sc.height));
    let (mut rooms, mut failures, mut seed) = (0, 0, 0);
    while rooms < 500 {
        let scene = generate_scene(seed, &sc).unwrap();
        seed += 1;
        for p in &scene.gt.rooms {
            if rooms == 500 {
                break;
            }
            rooms += 1;
            let seq = encode_room(p, 40).unwrap();
            let probs: Vec<f64> = seq.labels().iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
            let pos = seq.positions();
            let got: Vec<Point2> = extract_room(&probs, &pos, eps, &cfg).unwrap().iter().map(|&i| pos[i]).collect();
            if got != sequence_to_polygon(&seq).unwrap().vertices() {
                failures += 1;
            }
        }
    }
    outcome(failures == 0, format!("{rooms} rooms from {seed} scenes at {}x{}, dp_eps {eps} px, {failures} mismatches", sc.width, sc.height))
}

// ---------------------------------------------------------------------------
// 6. Metric self-test

fn criterion_metrics() -> Outcome {
    let cfg = EvalConfig::default();
    let mut problems = Vec::new();
    let sc = SynthConfig { width: 128, height: 128, min_side: 16, min_notch: 8, ..SynthConfig::default() };
    for seed in 0..20 {
        let gt = generate_scene(seed, &sc).unwrap().gt;
        let r = evaluate(&gt, &gt, &cfg).unwrap();
        let all = [r.room, r.corner, r.angle].iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0);
        if !all || r.room_iou != 1.0 {
            problems.push(format!("identity on scene {seed}"));
        }
    }
    let gt = loop {
        let s = generate_scene(100, &SynthConfig { rooms_min: 2, rooms_max: 2, ..sc.clone() }).unwrap();
        break s.gt;
    };
    let empty = Floorplan {
        rooms: vec![],
        width: gt.width,
        height: gt.height,
    };
    let r = evaluate(&empty, &gt, &cfg).unwrap();
    if [r.room, r.corner, r.angle].iter().any(|m| m.recall != 0.0 || m.precision != 0.0) {
        problems.push("empty prediction".into());
    }
    let half = Floorplan {
        rooms: vec![gt.rooms[0].clone()],
        ..gt.clone()
    };
    let r = evaluate(&half, &gt, &cfg).unwrap();
    if r.room.recall != 0.5 || r.room.precision != 1.0 || (r.room.f1 - 2.0 / 3.0).abs() > 1e-15 {
        problems.push(format!("one of two rooms: {:?}", r.room));
    }
    outcome(problems.is_empty(), if problems.is_empty() { "identity on 20 scenes, empty prediction, one of two rooms".into() } else { problems.join("; ") })
}

// ---------------------------------------------------------------------------
// 7. Loss identities

fn criterion_losses() -> Outcome {
    let scene = generate_scene(5, &SynthConfig { width: 128, height: 128, min_side: 16, min_notch: 8, ..SynthConfig::default() }).unwrap();
    let sampled = SampledFloorplan::encode(&scene.gt, 40).unwrap();
    let target = Target::from_sampled(&sampled);
    let k = target.rooms.len();
    let mut g = Graph::new();
    let q = g.constant(Tensor::new(vec![k, 40, 2], target.rooms.concat()).unwrap());
    let m = MatchResult {
        assignment: (0..k).collect(),
        total_cost: 0.0,
    };
    let c = loss_coord(&mut g, q, &m, &target).unwrap();
    let a = loss_angle(&mut g, q, &m, &target).unwrap();
    let r = loss_raster(&mut g, q, &m, &target, 64, 1.0).unwrap();
    let (c, a, r) = (g.value(c).item(), g.value(a).item(), g.value(r).item());

    // Disjoint 20 px squares, nearly hard rendering.
    let sq = |x0: f64, y0: f64| vec![Point2::new(x0, y0), Point2::new(x0 + 20.0, y0), Point2::new(x0 + 20.0, y0 + 20.0), Point2::new(x0, y0 + 20.0)];
    let (pa, pb) = (sq(10.0, 10.0), sq(40.0, 40.0));
    let op = RasterLoss {
        targets: vec![pb.clone()],
        width: 100.0,
        height: 100.0,
        res: 128,
        tau: 0.01,
    };
    let x = Tensor::new(vec![1, 4, 2], pa.iter().flat_map(|p| [p.x / 100.0, p.y / 100.0]).collect()).unwrap();
    let soft = op.forward(&[&x]).unwrap().0.item();
    let grid = RasterGrid {
        x0: 10.0,
        y0: 10.0,
        cell: 50.0 / 128.0,
        cols: 128,
        rows: 128,
    };
    let ha = rasterize(&Polygon::new(pa).unwrap(), &grid);
    let hb = rasterize(&Polygon::new(pb).unwrap(), &grid);
    let hard = ha.iter().zip(&hb).filter(|(u, v)| u != v).count() as f64 / ha.len() as f64;
    let rel = (soft - hard).abs() / hard;
    outcome(
        c < 1e-9 && a < 1e-9 && r < 1e-3 && rel < 0.05,
        format!("identical: coord {c:.1e}, angle {a:.1e}, raster {r:.1e}; disjoint squares soft {soft:.4} vs hard {hard:.4} ({:.2}% off)", rel * 100.0),
    )
}

// ---------------------------------------------------------------------------
// 8. Single-sample overfit

fn desk_model() -> ModelConfig {
    ModelConfig {
        d: 64,
        layers: 3,
        ..ModelConfig::default()
    }
}

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let sc = SynthConfig {
        width: 128,
        height: 128,
        rooms_min: 2,
        rooms_max: 2,
        min_side: 16,
        min_notch: 8,
        ..SynthConfig::default()
    };
    let scene = generate_scene(7, &sc).unwrap();
    let mc = desk_model();
    let data = prepare_samples(std::slice::from_ref(&scene), mc.m, mc.n, QueryInit::Masks, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(Model::new(mc.clone(), 0).unwrap(), cfg).unwrap();
    let recs = t.train(&data, |_| Ok(())).unwrap();
    let last = recs.last().unwrap();
    let q = scene_queries(&scene, mc.m, mc.n, QueryInit::Masks, 0).unwrap();
    let out = t.model.predict(&scene.density, &q).unwrap();
    let fp = extract_floorplan(&out, &q, &ExtractionConfig::default(), 128, 128).unwrap();
    let f1 = evaluate(&fp.to_floorplan(), &scene.gt, &EvalConfig::default()).unwrap().room.f1;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        recs.len() == 500 && last.total < 0.02 && f1 == 1.0 && secs < 300.0,
        format!("{} steps, final loss {:.4}, room F1 {f1:.3}, {secs:.0} s", recs.len(), last.total),
    )
}

// ---------------------------------------------------------------------------
// 9 and 10. Desk-scale training

const BUDGET_SECS: f64 = 1800.0;
/// Wall time kept back for evaluation after training stops.
const EVAL_RESERVE_SECS: f64 = 150.0;

fn desk_synth() -> SynthConfig {
    SynthConfig {
        width: 128,
        height: 128,
        rooms_min: 1,
        rooms_max: 4,
        min_side: 16,
        min_notch: 8,
        ..SynthConfig::default()
    }
}

fn desk_data() -> (Vec<SceneRecord>, Vec<SceneRecord>) {
    let sc = desk_synth();
    let train = (0..500).map(|i| generate_scene(i, &sc).unwrap()).collect();
    let test = (0..50).map(|i| generate_scene(1_000_000 + i, &sc).unwrap()).collect();
    (train, test)
}

struct DeskRun {
    room_f1: f64,
    corner_f1: f64,
    steps: u64,
    secs: f64,
    model: Model,
}

fn desk_train(init: QueryInit, train: &[SceneRecord], test: &[SceneRecord], start: Instant) -> DeskRun {
    let mc = desk_model();
    let data = prepare_samples(train, mc.m, mc.n, init, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 1000,
        init,
        time_limit_secs: Some(BUDGET_SECS - EVAL_RESERVE_SECS - start.elapsed().as_secs_f64()),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(Model::new(mc, 0).unwrap(), cfg).unwrap();
    t.train(&data, |_| Ok(())).unwrap();
    let (r, _) = evaluate_model(&t.model, test, init, 0, &ExtractionConfig::default(), &EvalConfig::default(), Execution::available()).unwrap();
    DeskRun {
        room_f1: r.room.f1,
        corner_f1: r.corner.f1,
        steps: t.step,
        secs: start.elapsed().as_secs_f64(),
        model: t.model,
    }
}

fn criterion_desk(shared: &mut Option<(f64, f64)>) -> Outcome {
    let start = Instant::now();
    let (train, test) = desk_data();
    let run = desk_train(QueryInit::GtMasks, &train, &test, start);
    let degraded: Vec<SceneRecord> = test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            let deg = MaskDegradation {
                p_drop: 0.05,
                morph_min: 2,
                morph_max: 2,
            };
            s.masks = Some(degrade_masks(s.masks.as_ref().unwrap(), 5_000 + i as u64, &deg));
            s
        })
        .collect();
    let (rd, _) = evaluate_model(&run.model, &degraded, QueryInit::Masks, 0, &ExtractionConfig::default(), &EvalConfig::default(), Execution::available()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    *shared = Some((run.room_f1, secs));
    let drop = run.room_f1 - rd.room.f1;
    outcome(
        run.room_f1 >= 0.85 && run.corner_f1 >= 0.60 && drop <= 0.10 && secs <= BUDGET_SECS,
        format!(
            "{} steps; GT masks room F1 {:.3}, corner F1 {:.3}; degraded masks room F1 {:.3} (drop {drop:.3}); {secs:.0} s",
            run.steps, run.room_f1, run.corner_f1, rd.room.f1
        ),
    )
}

fn criterion_ablation(shared: &mut Option<(f64, f64)>) -> Outcome {
    let reference = match *shared {
        Some((f1, _)) => f1,
        None => {
            criterion_desk(shared);
            shared.unwrap().0
        }
    };
    let start = Instant::now();
    let (train, test) = desk_data();
    let run = desk_train(QueryInit::Random, &train, &test, start);
    let drop = reference - run.room_f1;
    outcome(
        drop >= 0.05 && run.secs <= BUDGET_SECS,
        format!("{} steps; random init room F1 {:.3} vs {reference:.3} (drop {drop:.3}); {:.0} s", run.steps, run.room_f1, run.secs),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("POLYROOM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |i: usize| selected.as_ref().map_or(true, |s| s.contains(&i));
    let mut shared = None;
    let names = [
        "gradient fidelity",
        "attention factorization",
        "representation round trip",
        "matching oracle",
        "extraction identity",
        "metric self-test",
        "loss identities",
        "single-sample overfit",
        "desk-scale training",
        "initialization ablation",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if !want(id) {
            continue;
        }
        let o = match id {
            1 => criterion_gradients(),
            2 => criterion_attention(),
            3 => criterion_round_trip(),
            4 => criterion_matching(),
            5 => criterion_extraction(),
            6 => criterion_metrics(),
            7 => criterion_losses(),
            8 => criterion_overfit(),
            9 => criterion_desk(&mut shared),
            _ => criterion_ablation(&mut shared),
        };
        if !o.pass {
            failed += 1;
        }
        println!("{} {id:>2}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
