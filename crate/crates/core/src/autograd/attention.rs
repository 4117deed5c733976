use super::gemm::{gemm, Mat};
use super::kernels::softmax_rows;

/// Returns the output `[b, t, d]` and the attention probabilities
/// `[b, heads, t, t]`.
pub(crate) fn forward(q: &[f64], k: &[f64], v: &[f64], b: usize, t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; b * t * d];
    let mut probs = vec![0.0; b * heads * t * t];
    for bi in 0..b {
        for h in 0..heads {
            let off = bi * t * d + h * dh;
            let p = &mut probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
            gemm(t, dh, t, scale, Mat::strided(&q[off..], d, 1), Mat::strided(&k[off..], 1, d), 0.0, p, t);
            softmax_rows(p, t);
            gemm(t, t, dh, 1.0, Mat::rows(p, t), Mat::strided(&v[off..], d, 1), 0.0, &mut out[off..], d);
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    g: &[f64],
    b: usize,
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; q.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gv = vec![0.0; v.len()];
    let mut gs = vec![0.0; t * t];
    for bi in 0..b {
        for h in 0..heads {
            let off = bi * t * d + h * dh;
            let p = &probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
            let gh = Mat::strided(&g[off..], d, 1);
            gemm(t, t, dh, 1.0, Mat::t(p, t), gh, 0.0, &mut gv[off..], d);
            gemm(t, dh, t, 1.0, gh, Mat::strided(&v[off..], 1, d), 0.0, &mut gs, t);
            for (prow, srow) in p.chunks_exact(t).zip(gs.chunks_exact_mut(t)) {
                let dot: f64 = prow.iter().zip(srow.iter()).map(|(a, b)| a * b).sum();
                for (s, &pv) in srow.iter_mut().zip(prow) {
                    *s = pv * (*s - dot) * scale;
                }
            }
            gemm(t, t, dh, 1.0, Mat::rows(&gs, t), Mat::strided(&k[off..], d, 1), 0.0, &mut gq[off..], d);
            gemm(t, t, dh, 1.0, Mat::t(&gs, t), Mat::strided(&q[off..], d, 1), 0.0, &mut gk[off..], d);
        }
    }
    (gq, gk, gv)
}
