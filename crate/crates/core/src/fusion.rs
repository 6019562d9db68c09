//! Pair enumeration and confidence-weighted fusion of aligned depth maps.

use crate::error::{Error, Result};
use crate::raster::{ConfidenceMap, DepthMap, ScalarMap};

/// All unordered camera pairs `(a, b)` with `a < b`, in lexicographic order.
pub fn enumerate_pairs(m: usize) -> Result<Vec<(usize, usize)>> {
    if m < 2 {
        return Err(Error::invalid(format!("need at least two cameras, got {m}")));
    }
    Ok((0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect())
}

/// Per-pixel confidence-weighted mean of the valid depths. A view counts
/// where both its depth and its confidence are valid. If all contributing
/// confidences are zero the plain mean is used. Pixels without any
/// contributing view are invalid.
pub fn fuse_depths(aligned: &[(DepthMap, ConfidenceMap)]) -> Result<DepthMap> {
    let Some((first, _)) = aligned.first() else {
        return Err(Error::invalid("nothing to fuse"));
    };
    let g = first.geometry;
    for (d, c) in aligned {
        if d.geometry != g || c.geometry != g {
            return Err(Error::shape("fused maps must share one geometry"));
        }
    }
    Ok(ScalarMap::from_fn(g, |i, j| {
        let idx = i * g.width + j;
        let (mut wsum, mut wdsum, mut sum, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for (d, c) in aligned {
            if !(d.valid[idx] && c.valid[idx]) {
                continue;
            }
            let (dv, cv) = (d.values[idx], c.values[idx].max(0.0));
            wsum += cv as f64;
            wdsum += cv as f64 * dv as f64;
            sum += dv as f64;
            n += 1;
            lo = lo.min(dv);
            hi = hi.max(dv);
        }
        if n == 0 {
            return None;
        }
        let mean = if wsum > 0.0 { wdsum / wsum } else { sum / n as f64 };
        Some((mean as f32).clamp(lo, hi))
    }))
}
