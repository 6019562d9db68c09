//! Disparity and depth error metrics.
//!
//! Sums use compensated (Neumaier) accumulation in pixel order, so means of
//! constant errors over power-of-two pixel counts come out exact.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::geometry::{unproject_pixel, PanoramaGeometry, PixelCoord};
use crate::raster::ScalarMap;

#[derive(Debug, Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn total(&self) -> f64 {
        self.s + self.c
    }
}

fn percent(count: usize, n: usize) -> f64 {
    100.0 * count as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityReport {
    pub count: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Percentages of pixels with error strictly above 1, 3 and 5 px.
    pub px1: f64,
    pub px3: f64,
    pub px5: f64,
    /// Percentage with error above 3 px and above 5% of the ground truth.
    pub d1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthReport {
    pub count: usize,
    /// Pixels dropped for a nonpositive prediction or ground truth.
    pub excluded: usize,
    pub mae: f64,
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub silog: f64,
    /// Percentages with `max(p/g, g/p)` below `1.25^k`.
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricReport {
    Disparity(DisparityReport),
    Depth(DepthReport),
}

impl MetricReport {
    /// Key/value pairs in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        match self {
            MetricReport::Disparity(r) => vec![
                ("count", r.count as f64),
                ("mae", r.mae),
                ("rmse", r.rmse),
                ("px1", r.px1),
                ("px3", r.px3),
                ("px5", r.px5),
                ("d1", r.d1),
            ],
            MetricReport::Depth(r) => vec![
                ("count", r.count as f64),
                ("excluded", r.excluded as f64),
                ("mae", r.mae),
                ("rmse", r.rmse),
                ("abs_rel", r.abs_rel),
                ("sq_rel", r.sq_rel),
                ("silog", r.silog),
                ("delta1", r.delta1),
                ("delta2", r.delta2),
                ("delta3", r.delta3),
            ],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MetricReport::Disparity(_) => "disparity",
            MetricReport::Depth(_) => "depth",
        }
    }
}

fn evaluated<'a>(
    pred: &'a ScalarMap,
    gt: &'a ScalarMap,
    mask: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.geometry != gt.geometry {
        return Err(Error::shape("prediction and ground truth differ in geometry"));
    }
    if let Some(m) = mask {
        if m.len() != gt.values.len() {
            return Err(Error::shape(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                gt.values.len()
            )));
        }
    }
    Ok((0..gt.values.len())
        .filter(move |&k| pred.valid[k] && gt.valid[k] && mask.map_or(true, |m| m[k]))
        .map(move |k| (pred.values[k] as f64, gt.values[k] as f64)))
}

pub fn disparity_metrics(pred: &ScalarMap, gt: &ScalarMap, mask: Option<&[bool]>) -> Result<DisparityReport> {
    let (mut abs, mut sq) = (Sum::default(), Sum::default());
    let (mut n, mut o1, mut o3, mut o5, mut d1) = (0, 0, 0, 0, 0);
    for (p, g) in evaluated(pred, gt, mask)? {
        let e = (p - g).abs();
        abs.add(e);
        sq.add(e * e);
        n += 1;
        o1 += (e > 1.0) as usize;
        o3 += (e > 3.0) as usize;
        o5 += (e > 5.0) as usize;
        d1 += (e > 3.0 && e > 0.05 * g.abs()) as usize;
    }
    if n == 0 {
        return Err(Error::invalid("no pixels to evaluate"));
    }
    Ok(DisparityReport {
        count: n,
        mae: abs.total() / n as f64,
        rmse: (sq.total() / n as f64).sqrt(),
        px1: percent(o1, n),
        px3: percent(o3, n),
        px5: percent(o5, n),
        d1: percent(d1, n),
    })
}

pub fn depth_metrics(pred: &ScalarMap, gt: &ScalarMap, mask: Option<&[bool]>) -> Result<DepthReport> {
    let mut s = [Sum::default(); 6];
    let (mut n, mut excluded) = (0usize, 0usize);
    let mut deltas = [0usize; 3];
    for (p, g) in evaluated(pred, gt, mask)? {
        if !(p > 0.0 && g > 0.0) {
            excluded += 1;
            continue;
        }
        let e = p - g;
        let le = p.ln() - g.ln();
        s[0].add(e.abs());
        s[1].add(e * e);
        s[2].add(e.abs() / g);
        s[3].add(e * e / g);
        s[4].add(le * le);
        s[5].add(le);
        let ratio = (p / g).max(g / p);
        for (k, t) in [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25].iter().enumerate() {
            deltas[k] += (ratio < *t) as usize;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid(format!(
            "no pixels to evaluate ({excluded} excluded as nonpositive)"
        )));
    }
    let nf = n as f64;
    let mean_le = s[5].total() / nf;
    Ok(DepthReport {
        count: n,
        excluded,
        mae: s[0].total() / nf,
        rmse: (s[1].total() / nf).sqrt(),
        abs_rel: s[2].total() / nf,
        sq_rel: s[3].total() / nf,
        silog: (s[4].total() / nf - mean_le * mean_le).max(0.0),
        delta1: percent(deltas[0], n),
        delta2: percent(deltas[1], n),
        delta3: percent(deltas[2], n),
    })
}

/// Pixels whose ray elevation from the yz-plane is at most `atan(π/2)`,
/// the field of view of a cylinder panorama with `W = H / 2`.
pub fn central_band_mask(g: &PanoramaGeometry) -> Vec<bool> {
    let limit = FRAC_PI_2.atan();
    let mut mask = Vec::with_capacity(g.len());
    for i in 0..g.height {
        for j in 0..g.width {
            let ray = unproject_pixel(PixelCoord::center(i, j), g);
            mask.push(ray.x.atan2(ray.y.hypot(ray.z)).abs() <= limit);
        }
    }
    mask
}
