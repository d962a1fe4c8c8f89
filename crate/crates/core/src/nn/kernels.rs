//! Dense numeric kernels shared by the graph operations.

/// `out += a @ b` with `a: (n, k)`, `b: (k, m)`.
pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a @ b^T` with `a: (n, m)`, `b: (k, m)`, `out: (n, k)`.
pub fn mm_bt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] += dot(arow, brow);
        }
    }
}

/// `out += a^T @ b` with `a: (n, k)`, `b: (n, m)`, `out: (k, m)`.
pub fn mm_at(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax_in_place(row: &mut [f64]) {
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

/// Grouped multi-head attention. Returns the output and the attention
/// probabilities laid out as `[block][head][query][key]`.
pub fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    group: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut probs = vec![0.0; n * heads * group];
    for blk in 0..n / group {
        let g0 = blk * group;
        for h in 0..heads {
            let off = h * dh;
            for i in 0..group {
                let qi = &q[(g0 + i) * d + off..(g0 + i) * d + off + dh];
                let base = ((blk * heads + h) * group + i) * group;
                let row = &mut probs[base..base + group];
                for (j, slot) in row.iter_mut().enumerate() {
                    let kj = &k[(g0 + j) * d + off..(g0 + j) * d + off + dh];
                    *slot = dot(qi, kj) * scale;
                }
                softmax_in_place(row);
                let orow = &mut out[(g0 + i) * d + off..(g0 + i) * d + off + dh];
                for (j, &p) in row.iter().enumerate() {
                    let vj = &v[(g0 + j) * d + off..(g0 + j) * d + off + dh];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    gout: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    group: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; n * d];
    let mut gk = vec![0.0; n * d];
    let mut gv = vec![0.0; n * d];
    let mut dp = vec![0.0; group];
    for blk in 0..n / group {
        let g0 = blk * group;
        for h in 0..heads {
            let off = h * dh;
            for i in 0..group {
                let base = ((blk * heads + h) * group + i) * group;
                let p = &probs[base..base + group];
                let go = &gout[(g0 + i) * d + off..(g0 + i) * d + off + dh];
                for j in 0..group {
                    let vj = &v[(g0 + j) * d + off..(g0 + j) * d + off + dh];
                    dp[j] = dot(go, vj);
                    let gvj = &mut gv[(g0 + j) * d + off..(g0 + j) * d + off + dh];
                    for (g, x) in gvj.iter_mut().zip(go) {
                        *g += p[j] * x;
                    }
                }
                let inner = dot(p, &dp);
                for j in 0..group {
                    let ds = p[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        gq[(g0 + i) * d + off + c] += ds * k[(g0 + j) * d + off + c];
                        gk[(g0 + j) * d + off + c] += ds * q[(g0 + i) * d + off + c];
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}

pub struct DeformDims {
    pub n: usize,
    pub d: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub heads: usize,
    pub points: usize,
}

/// The four bilinear taps around `(px, py)` in cell-index coordinates, where
/// integer coordinates are cell centers. Out-of-map taps are `None`.
#[inline]
fn taps(px: f64, py: f64, map_h: usize, map_w: usize) -> ([Option<usize>; 4], f64, f64) {
    let x0 = px.floor();
    let y0 = py.floor();
    let (fx, fy) = (px - x0, py - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let cell = |x: i64, y: i64| -> Option<usize> {
        if x >= 0 && y >= 0 && (x as usize) < map_w && (y as usize) < map_h {
            Some(y as usize * map_w + x as usize)
        } else {
            None
        }
    };
    ([cell(x0, y0), cell(x0 + 1, y0), cell(x0, y0 + 1), cell(x0 + 1, y0 + 1)], fx, fy)
}

/// Bilinear interpolation of a `(map_h, map_w, channels)` map at cell-index
/// coordinates `(px, py)`, with zeros outside the map.
pub fn bilinear_sample(map: &[f64], map_h: usize, map_w: usize, channels: usize, px: f64, py: f64) -> Vec<f64> {
    let (cells, fx, fy) = taps(px, py, map_h, map_w);
    let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let mut out = vec![0.0; channels];
    for (cell, w) in cells.iter().zip(wts) {
        if let Some(c) = cell {
            for (o, v) in out.iter_mut().zip(&map[c * channels..(c + 1) * channels]) {
                *o += w * v;
            }
        }
    }
    out
}

#[inline]
fn sample_pos(refs: &[f64], offsets: &[f64], i: usize, idx: usize, dims: &DeformDims) -> (f64, f64) {
    let hp2 = dims.heads * dims.points * 2;
    let px = refs[i * 2] * dims.map_w as f64 + offsets[i * hp2 + idx * 2] - 0.5;
    let py = refs[i * 2 + 1] * dims.map_h as f64 + offsets[i * hp2 + idx * 2 + 1] - 0.5;
    (px, py)
}

pub fn deform_forward(value: &[f64], refs: &[f64], offsets: &[f64], weights: &[f64], dims: &DeformDims) -> Vec<f64> {
    let DeformDims { n, d, map_h, map_w, heads, points } = *dims;
    let dh = d / heads;
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for a in 0..heads {
            let orow = &mut out[i * d + a * dh..i * d + (a + 1) * dh];
            for s in 0..points {
                let idx = a * points + s;
                let w = weights[i * heads * points + idx];
                let (px, py) = sample_pos(refs, offsets, i, idx, dims);
                let (cells, fx, fy) = taps(px, py, map_h, map_w);
                let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                for (cell, cw) in cells.iter().zip(wts) {
                    if let Some(c) = cell {
                        let vrow = &value[c * d + a * dh..c * d + (a + 1) * dh];
                        let f = w * cw;
                        for (o, v) in orow.iter_mut().zip(vrow) {
                            *o += f * v;
                        }
                    }
                }
            }
        }
    }
    out
}

pub struct DeformGrads {
    pub value: Vec<f64>,
    pub refs: Vec<f64>,
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn deform_backward(
    value: &[f64],
    refs: &[f64],
    offsets: &[f64],
    weights: &[f64],
    gout: &[f64],
    dims: &DeformDims,
) -> DeformGrads {
    let DeformDims { n, d, map_h, map_w, heads, points } = *dims;
    let dh = d / heads;
    let mut g = DeformGrads {
        value: vec![0.0; value.len()],
        refs: vec![0.0; refs.len()],
        offsets: vec![0.0; offsets.len()],
        weights: vec![0.0; weights.len()],
    };
    let zero = vec![0.0; dh];
    for i in 0..n {
        for a in 0..heads {
            let go = &gout[i * d + a * dh..i * d + (a + 1) * dh];
            for s in 0..points {
                let idx = a * points + s;
                let w = weights[i * heads * points + idx];
                let (px, py) = sample_pos(refs, offsets, i, idx, dims);
                let (cells, fx, fy) = taps(px, py, map_h, map_w);
                let row = |cell: Option<usize>| -> &[f64] {
                    match cell {
                        Some(c) => &value[c * d + a * dh..c * d + (a + 1) * dh],
                        None => &zero,
                    }
                };
                let (v00, v10, v01, v11) = (row(cells[0]), row(cells[1]), row(cells[2]), row(cells[3]));
                let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                let mut dw = 0.0;
                let mut dpx = 0.0;
                let mut dpy = 0.0;
                for c in 0..dh {
                    let sampled = wts[0] * v00[c] + wts[1] * v10[c] + wts[2] * v01[c] + wts[3] * v11[c];
                    dw += go[c] * sampled;
                    dpx += go[c] * ((1.0 - fy) * (v10[c] - v00[c]) + fy * (v11[c] - v01[c]));
                    dpy += go[c] * ((1.0 - fx) * (v01[c] - v00[c]) + fx * (v11[c] - v10[c]));
                }
                g.weights[i * heads * points + idx] += dw;
                for (cell, cw) in cells.iter().zip(wts) {
                    if let Some(cidx) = cell {
                        let f = w * cw;
                        let dst = &mut g.value[cidx * d + a * dh..cidx * d + (a + 1) * dh];
                        for (dv, gc) in dst.iter_mut().zip(go) {
                            *dv += f * gc;
                        }
                    }
                }
                let hp2 = heads * points * 2;
                g.offsets[i * hp2 + idx * 2] += w * dpx;
                g.offsets[i * hp2 + idx * 2 + 1] += w * dpy;
                g.refs[i * 2] += w * dpx * map_w as f64;
                g.refs[i * 2 + 1] += w * dpy * map_h as f64;
            }
        }
    }
    g
}
