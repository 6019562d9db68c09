//! Multi-head self-attention restricted to a circular window along the
//! vertical axis of a feature map, with relative positional terms on
//! queries, keys and values.
//!
//! Per pixel the input first passes a 1×1 linear map. Each head then
//! projects to queries, keys and values, attends over the `m` rows around
//! the output row (wrapping modulo `h`), and the concatenated head outputs
//! pass a second 1×1 map, optionally added to the input.

mod backward;
mod reference;

pub use backward::{attention_parameter_gradients, AttentionGradients};
pub use reference::{brute_force_axial_attention, global_self_attention};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// `h x w x d` tensor stored as `[(i * w + j) * d + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::shape(format!("feature map dims must be positive, got {h}x{w}x{d}")));
        }
        if data.len() != h * w * d {
            return Err(Error::shape(format!(
                "{h}x{w}x{d} feature map needs {} values, got {}",
                h * w * d,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature map holds non-finite values"));
        }
        Ok(Self { h, w, d, data })
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self {
            h,
            w,
            d,
            data: vec![0.0; h * w * d],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.w + j) * self.d;
        &self.data[s..s + self.d]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let s = (i * self.w + j) * self.d;
        &mut self.data[s..s + self.d]
    }

    /// Circular shift by `k` rows: row `i` moves to row `(i + k) mod h`.
    pub fn roll_rows(&self, k: usize) -> Self {
        let mut out = Self::zeros(self.h, self.w, self.d);
        let row = self.w * self.d;
        for i in 0..self.h {
            let dst = (i + k) % self.h;
            out.data[dst * row..(dst + 1) * row].copy_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        out
    }
}

/// Learnable tensors, all row-major. With `dh = d_in / heads`:
/// `w_q`, `w_k`, `w_v` are `heads x dh x d_in`; `r_q`, `r_k`, `r_v` are
/// `heads x m x dh` indexed by window slot (offset plus `m / 2`); `pre_w`
/// and `post_w` are `d_in x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub span: usize,
    pub d_in: usize,
    pub residual: bool,
    pub pre_w: Vec<f64>,
    pub pre_b: Vec<f64>,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub r_q: Vec<f64>,
    pub r_k: Vec<f64>,
    pub r_v: Vec<f64>,
    pub post_w: Vec<f64>,
    pub post_b: Vec<f64>,
}

/// Tensor names in storage order.
pub const TENSOR_NAMES: [&str; 10] = [
    "pre_w", "pre_b", "w_q", "w_k", "w_v", "r_q", "r_k", "r_v", "post_w", "post_b",
];

impl AttentionParams {
    /// Identity pre/post maps and zero projections and tables.
    pub fn zeros(d_in: usize, heads: usize, span: usize, residual: bool) -> Result<Self> {
        if heads == 0 || d_in == 0 || d_in % heads != 0 {
            return Err(Error::invalid(format!(
                "{heads} heads do not divide {d_in} channels"
            )));
        }
        if span == 0 {
            return Err(Error::invalid("attention span must be positive"));
        }
        let dh = d_in / heads;
        let mut eye = vec![0.0; d_in * d_in];
        for c in 0..d_in {
            eye[c * d_in + c] = 1.0;
        }
        Ok(Self {
            heads,
            span,
            d_in,
            residual,
            pre_w: eye.clone(),
            pre_b: vec![0.0; d_in],
            w_q: vec![0.0; heads * dh * d_in],
            w_k: vec![0.0; heads * dh * d_in],
            w_v: vec![0.0; heads * dh * d_in],
            r_q: vec![0.0; heads * span * dh],
            r_k: vec![0.0; heads * span * dh],
            r_v: vec![0.0; heads * span * dh],
            post_w: eye,
            post_b: vec![0.0; d_in],
        })
    }

    /// Every tensor drawn uniformly from `[-scale, scale]` with a seeded
    /// ChaCha8 stream, in [`TENSOR_NAMES`] order.
    pub fn random(d_in: usize, heads: usize, span: usize, residual: bool, scale: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(d_in, heads, span, residual)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        Ok(p)
    }

    pub fn head_dim(&self) -> usize {
        self.d_in / self.heads
    }

    pub fn tensors(&self) -> [&Vec<f64>; 10] {
        [
            &self.pre_w, &self.pre_b, &self.w_q, &self.w_k, &self.w_v, &self.r_q, &self.r_k,
            &self.r_v, &self.post_w, &self.post_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.pre_w,
            &mut self.pre_b,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.r_q,
            &mut self.r_k,
            &mut self.r_v,
            &mut self.post_w,
            &mut self.post_b,
        ]
    }

    /// Expected tensor lengths in [`TENSOR_NAMES`] order.
    pub fn tensor_lens(&self) -> [usize; 10] {
        let (d, m, dh, nh) = (self.d_in, self.span, self.head_dim(), self.heads);
        [d * d, d, nh * dh * d, nh * dh * d, nh * dh * d, nh * m * dh, nh * m * dh, nh * m * dh, d * d, d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_in % self.heads != 0 || self.span == 0 {
            return Err(Error::invalid(format!(
                "bad attention configuration: {} heads, {} channels, span {}",
                self.heads, self.d_in, self.span
            )));
        }
        for ((name, t), n) in TENSOR_NAMES.iter().zip(self.tensors()).zip(self.tensor_lens()) {
            if t.len() != n {
                return Err(Error::shape(format!("{name} has {} entries, expected {n}", t.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("{name} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, x: &FeatureMap) -> Result<()> {
        self.validate()?;
        if x.d != self.d_in {
            return Err(Error::shape(format!(
                "input has {} channels, parameters expect {}",
                x.d, self.d_in
            )));
        }
        if self.span > x.h {
            return Err(Error::invalid(format!(
                "span {} exceeds the {} rows of the input",
                self.span, x.h
            )));
        }
        Ok(())
    }

    /// Signed row offset of window slot `t`.
    pub fn offset(&self, t: usize) -> i64 {
        t as i64 - (self.span / 2) as i64
    }
}

/// `out = W a + b` for a `rows x cols` matrix `W`.
pub(crate) fn affine(w: &[f64], b: Option<&[f64]>, a: &[f64], out: &mut [f64]) {
    let cols = a.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = b.map_or(0.0, |b| b[r]);
        for (wk, ak) in row.iter().zip(a) {
            s += wk * ak;
        }
        *o = s;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-column intermediate values kept for the backward pass.
pub(crate) struct ColumnCache {
    /// Pre-map output, `h x d_in`.
    pub z: Vec<f64>,
    /// Per head `h x dh`, concatenated over heads.
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax weights, `heads x h x m`.
    pub a: Vec<f64>,
    /// Concatenated head outputs, `h x d_in`.
    pub c: Vec<f64>,
    /// Final output, `h x d_in`.
    pub y: Vec<f64>,
    pub multiplies: u64,
}

pub(crate) fn forward_column(x: &FeatureMap, p: &AttentionParams, j: usize) -> ColumnCache {
    let (h, d, m, nh) = (x.h, x.d, p.span, p.heads);
    let dh = p.head_dim();
    let mut mults = 0u64;

    let mut z = vec![0.0; h * d];
    for i in 0..h {
        affine(&p.pre_w, Some(&p.pre_b), x.at(i, j), &mut z[i * d..(i + 1) * d]);
    }
    mults += (h * d * d) as u64;

    let mut q = vec![0.0; nh * h * dh];
    let mut k = vec![0.0; nh * h * dh];
    let mut v = vec![0.0; nh * h * dh];
    for n in 0..nh {
        let wsl = n * dh * d..(n + 1) * dh * d;
        for i in 0..h {
            let zi = &z[i * d..(i + 1) * d];
            let o = (n * h + i) * dh..(n * h + i + 1) * dh;
            affine(&p.w_q[wsl.clone()], None, zi, &mut q[o.clone()]);
            affine(&p.w_k[wsl.clone()], None, zi, &mut k[o.clone()]);
            affine(&p.w_v[wsl.clone()], None, zi, &mut v[o]);
        }
    }
    mults += (3 * nh * h * dh * d) as u64;

    let mut a = vec![0.0; nh * h * m];
    let mut c = vec![0.0; h * d];
    let mut logits = vec![0.0; m];
    for n in 0..nh {
        for o in 0..h {
            let qo = &q[(n * h + o) * dh..(n * h + o + 1) * dh];
            for (t, l) in logits.iter_mut().enumerate() {
                let pr = (o as i64 + p.offset(t)).rem_euclid(h as i64) as usize;
                let kp = &k[(n * h + pr) * dh..(n * h + pr + 1) * dh];
                let tab = (n * m + t) * dh..(n * m + t + 1) * dh;
                *l = dot(qo, kp) + dot(qo, &p.r_q[tab.clone()]) + dot(kp, &p.r_k[tab]);
            }
            let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            let w = &mut a[(n * h + o) * m..(n * h + o + 1) * m];
            for (wt, &l) in w.iter_mut().zip(&logits) {
                *wt = (l - mx).exp();
                sum += *wt;
            }
            for wt in w.iter_mut() {
                *wt /= sum;
            }
            let out = &mut c[o * d + n * dh..o * d + (n + 1) * dh];
            for t in 0..m {
                let pr = (o as i64 + p.offset(t)).rem_euclid(h as i64) as usize;
                let vp = &v[(n * h + pr) * dh..(n * h + pr + 1) * dh];
                let rv = &p.r_v[(n * m + t) * dh..(n * m + t + 1) * dh];
                for e in 0..dh {
                    out[e] += w[t] * (vp[e] + rv[e]);
                }
            }
        }
    }
    mults += (nh * h * m * 4 * dh) as u64;

    let mut y = vec![0.0; h * d];
    for i in 0..h {
        let yi = &mut y[i * d..(i + 1) * d];
        affine(&p.post_w, Some(&p.post_b), &c[i * d..(i + 1) * d], yi);
        if p.residual {
            for (a, b) in yi.iter_mut().zip(x.at(i, j)) {
                *a += b;
            }
        }
    }
    mults += (h * d * d) as u64;

    ColumnCache {
        z,
        q,
        k,
        v,
        a,
        c,
        y,
        multiplies: mults,
    }
}

/// Output and operation counts of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStats {
    /// Floating-point multiplications performed.
    pub multiplies: u64,
    /// Largest deviation of a softmax weight row sum from 1.
    pub max_weight_sum_error: f64,
}

/// Forward pass; columns run in parallel and are independent.
pub fn circular_axial_attention(x: &FeatureMap, p: &AttentionParams) -> Result<FeatureMap> {
    circular_axial_attention_with_stats(x, p).map(|(y, _)| y)
}

pub fn circular_axial_attention_with_stats(
    x: &FeatureMap,
    p: &AttentionParams,
) -> Result<(FeatureMap, AttentionStats)> {
    p.check_input(x)?;
    let cols: Vec<ColumnCache> = (0..x.w).into_par_iter().map(|j| forward_column(x, p, j)).collect();
    let mut y = FeatureMap::zeros(x.h, x.w, x.d);
    let mut stats = AttentionStats {
        multiplies: 0,
        max_weight_sum_error: 0.0,
    };
    for (j, col) in cols.iter().enumerate() {
        for i in 0..x.h {
            y.at_mut(i, j).copy_from_slice(&col.y[i * x.d..(i + 1) * x.d]);
        }
        stats.multiplies += col.multiplies;
        for row in col.a.chunks_exact(p.span) {
            let e = (row.iter().sum::<f64>() - 1.0).abs();
            stats.max_weight_sum_error = stats.max_weight_sum_error.max(e);
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singleton_window_returns_value_plus_table() {
        let mut p = AttentionParams::random(2, 1, 1, false, 0.5, 7).unwrap();
        p.pre_w = vec![1.0, 0.0, 0.0, 1.0];
        p.pre_b = vec![0.0; 2];
        p.post_w = p.pre_w.clone();
        p.post_b = vec![0.0; 2];
        let x = FeatureMap::new(1, 1, 2, vec![0.3, -1.1]).unwrap();
        let y = circular_axial_attention(&x, &p).unwrap();
        let v0 = p.w_v[0] * 0.3 + p.w_v[1] * -1.1 + p.r_v[0];
        let v1 = p.w_v[2] * 0.3 + p.w_v[3] * -1.1 + p.r_v[1];
        assert_relative_eq!(y.data[0], v0, epsilon = 1e-15);
        assert_relative_eq!(y.data[1], v1, epsilon = 1e-15);
        p.residual = true;
        let y = circular_axial_attention(&x, &p).unwrap();
        assert_relative_eq!(y.data[0], v0 + 0.3, epsilon = 1e-15);
    }

    #[test]
    fn uniform_weights_give_column_mean() {
        let (h, w, d) = (5, 3, 2);
        let mut p = AttentionParams::zeros(d, 1, h, false).unwrap();
        p.w_v = vec![1.0, 0.0, 0.0, 1.0];
        let data: Vec<f64> = (0..h * w * d).map(|k| (k as f64 * 0.37).sin()).collect();
        let x = FeatureMap::new(h, w, d, data).unwrap();
        let y = circular_axial_attention(&x, &p).unwrap();
        for j in 0..w {
            for c in 0..d {
                let mean = (0..h).map(|i| x.at(i, j)[c]).sum::<f64>() / h as f64;
                for i in 0..h {
                    assert_relative_eq!(y.at(i, j)[c], mean, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_configurations() {
        assert!(AttentionParams::zeros(6, 4, 3, false).is_err());
        let p = AttentionParams::zeros(4, 2, 5, false).unwrap();
        assert!(circular_axial_attention(&FeatureMap::zeros(4, 2, 4), &p).is_err());
        assert!(circular_axial_attention(&FeatureMap::zeros(5, 2, 2), &p).is_err());
        let mut bad = p.clone();
        bad.r_v.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn weights_normalized_and_counts_linear() {
        let x = FeatureMap::new(16, 2, 4, (0..128).map(|k| (k as f64).cos()).collect()).unwrap();
        let mut counts = vec![];
        for m in [4, 8, 16] {
            let p = AttentionParams::random(4, 2, m, true, 0.3, 1).unwrap();
            let (_, s) = circular_axial_attention_with_stats(&x, &p).unwrap();
            assert!(s.max_weight_sum_error <= 1e-12);
            counts.push(s.multiplies as i64);
        }
        assert_eq!(counts[2] - counts[1], 2 * (counts[1] - counts[0]));
    }
}
