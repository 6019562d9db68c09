//! Slow direct evaluations used as correctness references.

use super::{AttentionParams, FeatureMap};
use crate::error::{Error, Result};

fn pre_map(p: &AttentionParams, x: &[f64]) -> Vec<f64> {
    (0..p.d_in)
        .map(|r| p.pre_b[r] + (0..p.d_in).map(|c| p.pre_w[r * p.d_in + c] * x[c]).sum::<f64>())
        .collect()
}

fn project(p: &AttentionParams, w: &[f64], head: usize, z: &[f64]) -> Vec<f64> {
    let dh = p.head_dim();
    (0..dh)
        .map(|e| (0..p.d_in).map(|c| w[(head * dh + e) * p.d_in + c] * z[c]).sum())
        .collect()
}

fn post_map(p: &AttentionParams, c: &[f64]) -> Vec<f64> {
    (0..p.d_in)
        .map(|r| p.post_b[r] + (0..p.d_in).map(|k| p.post_w[r * p.d_in + k] * c[k]).sum::<f64>())
        .collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Window attention evaluated output by output, recomputing every
/// projection on the fly.
pub fn brute_force_axial_attention(x: &FeatureMap, p: &AttentionParams) -> Result<FeatureMap> {
    p.check_input(x)?;
    let (h, dh, m) = (x.h as i64, p.head_dim(), p.span);
    let mut y = FeatureMap::zeros(x.h, x.w, x.d);
    for j in 0..x.w {
        for o in 0..x.h {
            let zo = pre_map(p, x.at(o, j));
            let mut concat = Vec::with_capacity(p.d_in);
            for n in 0..p.heads {
                let q = project(p, &p.w_q, n, &zo);
                let mut logits = Vec::with_capacity(m);
                let mut values = Vec::with_capacity(m);
                for t in 0..m {
                    let row = (o as i64 + p.offset(t)).rem_euclid(h) as usize;
                    let zp = pre_map(p, x.at(row, j));
                    let k = project(p, &p.w_k, n, &zp);
                    let v = project(p, &p.w_v, n, &zp);
                    let rq = &p.r_q[(n * m + t) * dh..(n * m + t + 1) * dh];
                    let rk = &p.r_k[(n * m + t) * dh..(n * m + t + 1) * dh];
                    let rv = &p.r_v[(n * m + t) * dh..(n * m + t + 1) * dh];
                    let mut l = 0.0;
                    for e in 0..dh {
                        l += q[e] * k[e] + q[e] * rq[e] + k[e] * rk[e];
                    }
                    logits.push(l);
                    values.push((0..dh).map(|e| v[e] + rv[e]).collect::<Vec<f64>>());
                }
                let a = softmax(&logits);
                for e in 0..dh {
                    concat.push((0..m).map(|t| a[t] * values[t][e]).sum());
                }
            }
            let mut out = post_map(p, &concat);
            if p.residual {
                for (a, b) in out.iter_mut().zip(x.at(o, j)) {
                    *a += b;
                }
            }
            y.at_mut(o, j).copy_from_slice(&out);
        }
    }
    Ok(y)
}

/// Unrestricted self-attention over every lattice position, without
/// positional terms or residual, sharing the pre/post maps and head
/// projections of `p`. Quadratic in `h * w`.
pub fn global_self_attention(x: &FeatureMap, p: &AttentionParams) -> Result<FeatureMap> {
    p.validate()?;
    if x.d != p.d_in {
        return Err(Error::shape(format!(
            "input has {} channels, parameters expect {}",
            x.d, p.d_in
        )));
    }
    let dh = p.head_dim();
    let n_pix = x.h * x.w;
    let z: Vec<Vec<f64>> = (0..n_pix).map(|k| pre_map(p, &x.data[k * x.d..(k + 1) * x.d])).collect();
    let mut y = FeatureMap::zeros(x.h, x.w, x.d);
    for o in 0..n_pix {
        let mut concat = Vec::with_capacity(p.d_in);
        for n in 0..p.heads {
            let q = project(p, &p.w_q, n, &z[o]);
            let logits: Vec<f64> = (0..n_pix)
                .map(|k| {
                    let kp = project(p, &p.w_k, n, &z[k]);
                    (0..dh).map(|e| q[e] * kp[e]).sum()
                })
                .collect();
            let a = softmax(&logits);
            let mut acc = vec![0.0; dh];
            for (k, ak) in a.iter().enumerate() {
                let v = project(p, &p.w_v, n, &z[k]);
                for e in 0..dh {
                    acc[e] += ak * v[e];
                }
            }
            concat.extend(acc);
        }
        let out = post_map(p, &concat);
        y.data[o * x.d..(o + 1) * x.d].copy_from_slice(&out);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn global_with_zero_queries_averages_everything() {
        let mut p = AttentionParams::zeros(2, 1, 1, false).unwrap();
        p.w_v = vec![1.0, 0.0, 0.0, 1.0];
        let x = FeatureMap::new(3, 2, 2, (0..12).map(|k| k as f64 * 0.5 - 1.0).collect()).unwrap();
        let y = global_self_attention(&x, &p).unwrap();
        for c in 0..2 {
            let mean = (0..6).map(|k| x.data[k * 2 + c]).sum::<f64>() / 6.0;
            assert!((0..6).all(|k| (y.data[k * 2 + c] - mean).abs() < 1e-12));
        }
    }

    #[test]
    fn global_single_pixel_is_value_projection() {
        let p = AttentionParams::random(2, 1, 1, false, 1.0, 3).unwrap();
        let x = FeatureMap::new(1, 1, 2, vec![0.4, -0.9]).unwrap();
        let y = global_self_attention(&x, &p).unwrap();
        let z = pre_map(&p, &x.data);
        let v = project(&p, &p.w_v, 0, &z);
        let expect = post_map(&p, &v);
        assert_relative_eq!(y.data[0], expect[0], epsilon = 1e-15);
        assert_relative_eq!(y.data[1], expect[1], epsilon = 1e-15);
    }
}
