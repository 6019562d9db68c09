//! Reverse-mode gradients of [`super::circular_axial_attention`].

use rayon::prelude::*;

use super::{forward_column, AttentionParams, FeatureMap};
use crate::error::{Error, Result};

/// Gradients of `sum(upstream * y)` with respect to the input and every
/// parameter tensor. `params` reuses the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub input: FeatureMap,
    pub params: AttentionParams,
}

fn zero_like(p: &AttentionParams) -> AttentionParams {
    let mut g = p.clone();
    for t in g.tensors_mut() {
        t.fill(0.0);
    }
    g
}

fn add_into(acc: &mut AttentionParams, part: &AttentionParams) {
    for (a, b) in acc.tensors_mut().into_iter().zip(part.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// `da += outer(g, a)` for `rows x cols` accumulators; returns `W^T g`.
fn linear_backward(w: &[f64], a: &[f64], g: &[f64], dw: &mut [f64], back: &mut [f64]) {
    let cols = a.len();
    for (r, &gr) in g.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            drow[c] += gr * a[c];
            back[c] += gr * row[c];
        }
    }
}

fn backward_column(
    x: &FeatureMap,
    p: &AttentionParams,
    dy: &FeatureMap,
    j: usize,
) -> (AttentionParams, Vec<f64>) {
    let cache = forward_column(x, p, j);
    let (h, d, m, nh) = (x.h, x.d, p.span, p.heads);
    let dh = p.head_dim();
    let mut g = zero_like(p);
    let mut dx = vec![0.0; h * d];

    let mut dc = vec![0.0; h * d];
    for i in 0..h {
        let gy = dy.at(i, j);
        for (b, v) in g.post_b.iter_mut().zip(gy) {
            *b += v;
        }
        linear_backward(&p.post_w, &cache.c[i * d..(i + 1) * d], gy, &mut g.post_w, &mut dc[i * d..(i + 1) * d]);
        if p.residual {
            for (a, b) in dx[i * d..(i + 1) * d].iter_mut().zip(gy) {
                *a += b;
            }
        }
    }

    let mut dq = vec![0.0; nh * h * dh];
    let mut dk = vec![0.0; nh * h * dh];
    let mut dv = vec![0.0; nh * h * dh];
    let mut da = vec![0.0; m];
    for n in 0..nh {
        for o in 0..h {
            let dout = &dc[o * d + n * dh..o * d + (n + 1) * dh];
            let a = &cache.a[(n * h + o) * m..(n * h + o + 1) * m];
            let qi = (n * h + o) * dh;
            let rows: Vec<usize> = (0..m)
                .map(|t| (o as i64 + p.offset(t)).rem_euclid(h as i64) as usize)
                .collect();
            let mut weighted = 0.0;
            for t in 0..m {
                let vi = (n * h + rows[t]) * dh;
                let ti = (n * m + t) * dh;
                let mut s = 0.0;
                for e in 0..dh {
                    s += dout[e] * (cache.v[vi + e] + p.r_v[ti + e]);
                    dv[vi + e] += a[t] * dout[e];
                    g.r_v[ti + e] += a[t] * dout[e];
                }
                da[t] = s;
                weighted += a[t] * s;
            }
            for t in 0..m {
                let dl = a[t] * (da[t] - weighted);
                let ki = (n * h + rows[t]) * dh;
                let ti = (n * m + t) * dh;
                for e in 0..dh {
                    let (q, k) = (cache.q[qi + e], cache.k[ki + e]);
                    dq[qi + e] += dl * (k + p.r_q[ti + e]);
                    dk[ki + e] += dl * (q + p.r_k[ti + e]);
                    g.r_q[ti + e] += dl * q;
                    g.r_k[ti + e] += dl * k;
                }
            }
        }
    }

    let mut dz = vec![0.0; h * d];
    for n in 0..nh {
        let wsl = n * dh * d..(n + 1) * dh * d;
        for i in 0..h {
            let zi = &cache.z[i * d..(i + 1) * d];
            let gi = (n * h + i) * dh..(n * h + i + 1) * dh;
            let dzi = &mut dz[i * d..(i + 1) * d];
            linear_backward(&p.w_q[wsl.clone()], zi, &dq[gi.clone()], &mut g.w_q[wsl.clone()], dzi);
            linear_backward(&p.w_k[wsl.clone()], zi, &dk[gi.clone()], &mut g.w_k[wsl.clone()], dzi);
            linear_backward(&p.w_v[wsl.clone()], zi, &dv[gi], &mut g.w_v[wsl.clone()], dzi);
        }
    }

    for i in 0..h {
        let gz = &dz[i * d..(i + 1) * d];
        for (b, v) in g.pre_b.iter_mut().zip(gz) {
            *b += v;
        }
        linear_backward(&p.pre_w, x.at(i, j), gz, &mut g.pre_w, &mut dx[i * d..(i + 1) * d]);
    }
    (g, dx)
}

/// Analytic gradients. Columns are processed in parallel; their parameter
/// contributions are summed in column order.
pub fn attention_parameter_gradients(
    x: &FeatureMap,
    p: &AttentionParams,
    upstream: &FeatureMap,
) -> Result<AttentionGradients> {
    p.check_input(x)?;
    if (upstream.h, upstream.w, upstream.d) != (x.h, x.w, x.d) {
        return Err(Error::shape("upstream gradient and input differ in shape"));
    }
    let parts: Vec<(AttentionParams, Vec<f64>)> = (0..x.w)
        .into_par_iter()
        .map(|j| backward_column(x, p, upstream, j))
        .collect();
    let mut params = zero_like(p);
    let mut input = FeatureMap::zeros(x.h, x.w, x.d);
    for (j, (g, dx)) in parts.iter().enumerate() {
        add_into(&mut params, g);
        for i in 0..x.h {
            input.at_mut(i, j).copy_from_slice(&dx[i * x.d..(i + 1) * x.d]);
        }
    }
    Ok(AttentionGradients { input, params })
}
