use std::f64::consts::TAU;

pub(crate) const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `[p, q, inner] -> [q, p, inner]`.
pub(crate) fn swap01(data: &[f64], p: usize, q: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..p {
        for j in 0..q {
            let src = (i * q + j) * inner;
            let dst = (j * p + i) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

pub(crate) fn softmax(data: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (data[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| y[at(j)] * g[at(j)]).sum();
            for j in 0..len {
                out[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    out
}

/// In-place row softmax of a `rows × cols` buffer.
pub(crate) fn softmax_rows(buf: &mut [f64], cols: usize) {
    for row in buf.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

pub(crate) fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[t] - lse
}

/// Returns the output and per-row `[mean, 1/std]`.
pub(crate) fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d.max(1);
    let mut y = vec![0.0; x.len()];
    let mut saved = Vec::with_capacity(2 * rows);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            y[r * d + j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
        }
        saved.push(mean);
        saved.push(rstd);
    }
    (y, saved)
}

pub(crate) fn layer_norm_backward(
    x: &[f64],
    d: usize,
    gamma: &[f64],
    saved: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut ggamma = vec![0.0; d];
    let mut gbeta = vec![0.0; d];
    let mut xhat = vec![0.0; d];
    let mut gxhat = vec![0.0; d];
    for (r, row) in x.chunks_exact(d).enumerate() {
        let (mean, rstd) = (saved[2 * r], saved[2 * r + 1]);
        let gr = &g[r * d..(r + 1) * d];
        for j in 0..d {
            xhat[j] = (row[j] - mean) * rstd;
            gxhat[j] = gr[j] * gamma[j];
            ggamma[j] += gr[j] * xhat[j];
            gbeta[j] += gr[j];
        }
        let m1 = gxhat.iter().sum::<f64>() / d as f64;
        let m2 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            gx[r * d + j] = rstd * (gxhat[j] - m1 - xhat[j] * m2);
        }
    }
    (gx, ggamma, gbeta)
}

/// Continuous pixel coordinate of a normalized position, its clamped value
/// and whether clamping kicked in.
fn axis_coord(p: f64, size: usize) -> (f64, bool) {
    let u = p * size as f64 - 0.5;
    let hi = (size - 1) as f64;
    if u < 0.0 {
        (0.0, true)
    } else if u > hi {
        (hi, true)
    } else {
        (u, false)
    }
}

/// Lower cell index and fractional part; the lower index never exceeds
/// `size - 2`, so an exact cell center uses the cell to its right.
fn axis_cell(u: f64, size: usize) -> (usize, usize, f64) {
    if size == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (u.floor() as usize).min(size - 2);
    (i0, i0 + 1, u - i0 as f64)
}

pub(crate) fn bilinear_forward(grid: &[f64], h: usize, w: usize, c: usize, points: &[f64]) -> Vec<f64> {
    let p = points.len() / 2;
    let mut out = vec![0.0; p * c];
    for i in 0..p {
        let (u, _) = axis_coord(points[2 * i], w);
        let (v, _) = axis_coord(points[2 * i + 1], h);
        let (x0, x1, fx) = axis_cell(u, w);
        let (y0, y1, fy) = axis_cell(v, h);
        let taps = [
            ((y0 * w + x0) * c, (1.0 - fx) * (1.0 - fy)),
            ((y0 * w + x1) * c, fx * (1.0 - fy)),
            ((y1 * w + x0) * c, (1.0 - fx) * fy),
            ((y1 * w + x1) * c, fx * fy),
        ];
        let o = &mut out[i * c..(i + 1) * c];
        for (base, wt) in taps {
            if wt != 0.0 {
                for (acc, g) in o.iter_mut().zip(&grid[base..base + c]) {
                    *acc += wt * g;
                }
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward(
    grid: &[f64],
    h: usize,
    w: usize,
    c: usize,
    points: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = points.len() / 2;
    let mut gg = vec![0.0; grid.len()];
    let mut gp = vec![0.0; points.len()];
    for i in 0..p {
        let (u, cu) = axis_coord(points[2 * i], w);
        let (v, cv) = axis_coord(points[2 * i + 1], h);
        let (x0, x1, fx) = axis_cell(u, w);
        let (y0, y1, fy) = axis_cell(v, h);
        let gi = &g[i * c..(i + 1) * c];
        let (b00, b01, b10, b11) = (
            (y0 * w + x0) * c,
            (y0 * w + x1) * c,
            (y1 * w + x0) * c,
            (y1 * w + x1) * c,
        );
        let (w00, w01, w10, w11) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
        let mut du = 0.0;
        let mut dv = 0.0;
        for ch in 0..c {
            let go = gi[ch];
            gg[b00 + ch] += w00 * go;
            gg[b01 + ch] += w01 * go;
            gg[b10 + ch] += w10 * go;
            gg[b11 + ch] += w11 * go;
            let (g00, g01, g10, g11) = (grid[b00 + ch], grid[b01 + ch], grid[b10 + ch], grid[b11 + ch]);
            du += go * ((1.0 - fy) * (g01 - g00) + fy * (g11 - g10));
            dv += go * ((1.0 - fx) * (g10 - g00) + fx * (g11 - g01));
        }
        if !cu && w > 1 {
            gp[2 * i] = du * w as f64;
        }
        if !cv && h > 1 {
            gp[2 * i + 1] = dv * h as f64;
        }
    }
    (gg, gp)
}

/// Patch matrix `[Ho·Wo, 9·Cin]` for a padded 3×3 convolution.
pub(crate) fn im2col(x: &[f64], h: usize, w: usize, cin: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
    let k = 9 * cin;
    let mut cols = vec![0.0; ho * wo * k];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * cin;
                    let dst = (ky * 3 + kx) * cin;
                    row[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], h: usize, w: usize, cin: usize, stride: usize) -> Vec<f64> {
    let (ho, wo) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
    let k = 9 * cin;
    let mut x = vec![0.0; h * w * cin];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * k..(oy * wo + ox + 1) * k];
            for ky in 0..3 {
                let iy = (oy * stride + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * stride + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * cin;
                    let src = (ky * 3 + kx) * cin;
                    for (a, b) in x[dst..dst + cin].iter_mut().zip(&row[src..src + cin]) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

fn sinusoid_freq(i: usize, half: usize, temperature: f64) -> f64 {
    TAU / temperature.powf((2 * (i / 2)) as f64 / half as f64)
}

pub(crate) fn sinusoid(q: &[f64], dim: usize, temperature: f64) -> Vec<f64> {
    let half = dim / 2;
    let p = q.len() / 2;
    let mut out = vec![0.0; p * dim];
    for r in 0..p {
        for a in 0..2 {
            let coord = q[2 * r + a];
            for i in 0..half {
                let arg = coord * sinusoid_freq(i, half, temperature);
                out[r * dim + a * half + i] = if i % 2 == 0 { arg.sin() } else { arg.cos() };
            }
        }
    }
    out
}

pub(crate) fn sinusoid_backward(q: &[f64], dim: usize, temperature: f64, g: &[f64]) -> Vec<f64> {
    let half = dim / 2;
    let p = q.len() / 2;
    let mut gq = vec![0.0; q.len()];
    for r in 0..p {
        for a in 0..2 {
            let coord = q[2 * r + a];
            let mut acc = 0.0;
            for i in 0..half {
                let f = sinusoid_freq(i, half, temperature);
                let arg = coord * f;
                let d = if i % 2 == 0 { arg.cos() } else { -arg.sin() };
                acc += g[r * dim + a * half + i] * d * f;
            }
            gq[2 * r + a] = acc;
        }
    }
    gq
}
