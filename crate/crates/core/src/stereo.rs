//! Cost-volume stereo matching on rectified cylindrical pairs with
//! soft-argmin disparity regression and a three-hypothesis confidence.
//!
//! Volumes are stored row-major as `[(i * W + j) * D + d]`. The vertical
//! axis is the 360° one, so every window wraps vertically and clamps
//! horizontally. All sums run in a fixed relative order, which makes the
//! matcher exactly equivariant to circular vertical shifts.

use rayon::prelude::*;

use crate::attention::{circular_axial_attention, AttentionParams, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::PanoramaGeometry;
use crate::raster::{ConfidenceMap, DisparityMap, Panorama, ScalarMap};
use crate::resample::RectifiedPair;

/// Cost given to hypotheses whose match would fall left of the right image.
pub const OUT_OF_RANGE_COST: f32 = 1.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// Hamming distance between census codes of an odd window (at most 7).
    Census(usize),
    /// Mean absolute luminance difference over an odd window.
    Sad(usize),
}

impl Default for CostKind {
    fn default() -> Self {
        CostKind::Census(7)
    }
}

impl CostKind {
    pub fn default_temperature(self) -> f64 {
        match self {
            CostKind::Census(_) => 0.5,
            CostKind::Sad(_) => 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub geometry: PanoramaGeometry,
    pub max_disparity: usize,
    pub costs: Vec<f32>,
}

impl CostVolume {
    pub fn new(geometry: PanoramaGeometry, max_disparity: usize, costs: Vec<f32>) -> Result<Self> {
        if max_disparity < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 disparity hypotheses, got {max_disparity}"
            )));
        }
        if costs.len() != geometry.len() * max_disparity {
            return Err(Error::shape(format!(
                "cost volume needs {} entries, got {}",
                geometry.len() * max_disparity,
                costs.len()
            )));
        }
        if let Some(c) = costs.iter().find(|c| !c.is_finite()) {
            return Err(Error::domain(format!("cost volume holds non-finite cost {c}")));
        }
        Ok(Self {
            geometry,
            max_disparity,
            costs,
        })
    }

    pub fn costs_at(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.geometry.width + col) * self.max_disparity;
        &self.costs[start..start + self.max_disparity]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub geometry: PanoramaGeometry,
    pub max_disparity: usize,
    pub probs: Vec<f32>,
}

impl ProbabilityVolume {
    /// Validates shape, nonnegativity and per-pixel normalization.
    pub fn new(geometry: PanoramaGeometry, max_disparity: usize, probs: Vec<f32>) -> Result<Self> {
        if max_disparity < 1 || probs.len() != geometry.len() * max_disparity {
            return Err(Error::shape(format!(
                "probability volume needs {} entries, got {}",
                geometry.len() * max_disparity,
                probs.len()
            )));
        }
        for p in probs.chunks_exact(max_disparity) {
            if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::domain("probabilities must be finite and nonnegative"));
            }
            let s: f64 = p.iter().map(|&x| x as f64).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::domain(format!("probabilities sum to {s}, not 1")));
            }
        }
        Ok(Self {
            geometry,
            max_disparity,
            probs,
        })
    }

    pub fn probs_at(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.geometry.width + col) * self.max_disparity;
        &self.probs[start..start + self.max_disparity]
    }
}

/// Default hypothesis count for a rectified geometry: 272 from 1024 rows
/// up, 256 from 512 rows, proportionally fewer below. Never exceeds `W`.
pub fn default_max_disparity(g: &PanoramaGeometry) -> usize {
    let d = if g.height >= 1024 {
        272
    } else if g.height >= 512 {
        256
    } else {
        (256 * g.height / 512).max(2)
    };
    d.min(g.width).max(2)
}

fn check_window(w: usize, max: usize) -> Result<()> {
    if w == 0 || w % 2 == 0 || w > max {
        return Err(Error::invalid(format!(
            "window must be odd and between 1 and {max}, got {w}"
        )));
    }
    Ok(())
}

fn check_disparity(g: &PanoramaGeometry, d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid(format!("max disparity must be at least 2, got {d}")));
    }
    if d > g.width {
        return Err(Error::invalid(format!(
            "max disparity {d} exceeds image width {}",
            g.width
        )));
    }
    Ok(())
}

/// Census codes: bit set where the neighbour is darker than the center.
fn census_codes(lum: &[f32], g: &PanoramaGeometry, window: usize) -> Vec<u64> {
    let (h, w) = (g.height as i64, g.width as i64);
    let r = (window / 2) as i64;
    let mut codes = vec![0u64; lum.len()];
    codes
        .par_chunks_mut(g.width)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, code) in row.iter_mut().enumerate() {
                let center = lum[i * g.width + j];
                let mut c = 0u64;
                for di in -r..=r {
                    let ii = (i as i64 + di).rem_euclid(h) as usize;
                    for dj in -r..=r {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let jj = (j as i64 + dj).clamp(0, w - 1) as usize;
                        c = (c << 1) | (lum[ii * g.width + jj] < center) as u64;
                    }
                }
                *code = c;
            }
        });
    codes
}

/// Per-pixel matching costs without the out-of-range sentinel. The right
/// column `j - d` is clamped at the border so that windowed filters see
/// plausible values; [`mark_out_of_range`] fixes the centers afterwards.
fn raw_volume(
    g: &PanoramaGeometry,
    max_d: usize,
    dist: impl Fn(usize, usize, usize) -> f32 + Sync,
) -> Vec<f32> {
    let w = g.width;
    let mut costs = vec![0.0f32; g.len() * max_d];
    costs
        .par_chunks_mut(w * max_d)
        .enumerate()
        .for_each(|(i, row)| {
            for j in 0..w {
                for d in 0..max_d {
                    let jr = j.saturating_sub(d);
                    row[j * max_d + d] = dist(i, j, jr);
                }
            }
        });
    costs
}

fn mark_out_of_range(cv: &mut CostVolume) {
    let (w, max_d) = (cv.geometry.width, cv.max_disparity);
    cv.costs.par_chunks_mut(w * max_d).for_each(|row| {
        for j in 0..w.min(max_d) {
            for d in j + 1..max_d {
                row[j * max_d + d] = OUT_OF_RANGE_COST;
            }
        }
    });
}

/// Sums two horizontal dynamic-programming passes (left to right and right
/// to left) with penalties `p1` for a one-step disparity change and `p2`
/// for larger jumps. Rows are independent.
fn scanline_smooth(cv: &CostVolume, p1: f32, p2: f32) -> CostVolume {
    let g = cv.geometry;
    let (w, nd) = (g.width, cv.max_disparity);
    let mut costs = vec![0.0f32; cv.costs.len()];
    costs
        .par_chunks_mut(w * nd)
        .zip(cv.costs.par_chunks(w * nd))
        .for_each(|(out, src)| {
            let mut prev = vec![0.0f32; nd];
            let mut cur = vec![0.0f32; nd];
            for forward in [true, false] {
                for step in 0..w {
                    let j = if forward { step } else { w - 1 - step };
                    let c = &src[j * nd..(j + 1) * nd];
                    if step == 0 {
                        cur.copy_from_slice(c);
                    } else {
                        let floor = prev.iter().fold(f32::INFINITY, |m, &x| m.min(x));
                        for d in 0..nd {
                            let mut best = prev[d];
                            if d > 0 {
                                best = best.min(prev[d - 1] + p1);
                            }
                            if d + 1 < nd {
                                best = best.min(prev[d + 1] + p1);
                            }
                            best = best.min(floor + p2);
                            cur[d] = c[d] + best - floor;
                        }
                    }
                    for (o, v) in out[j * nd..(j + 1) * nd].iter_mut().zip(&cur) {
                        *o += v;
                    }
                    std::mem::swap(&mut prev, &mut cur);
                }
            }
        });
    CostVolume {
        geometry: g,
        max_disparity: nd,
        costs,
    }
}

fn luminance_pair(pair: &RectifiedPair) -> (Vec<f32>, Vec<f32>) {
    (pair.left.luminance(), pair.right.luminance())
}

fn raw_costs(pair: &RectifiedPair, max_d: usize, cost: CostKind) -> Result<CostVolume> {
    let g = *pair.geometry();
    check_disparity(&g, max_d)?;
    let (left, right) = luminance_pair(pair);
    let w = g.width;
    let costs = match cost {
        CostKind::Census(win) => {
            check_window(win, 7)?;
            let cl = census_codes(&left, &g, win);
            let cr = census_codes(&right, &g, win);
            raw_volume(&g, max_d, |i, j, jr| (cl[i * w + j] ^ cr[i * w + jr]).count_ones() as f32)
        }
        CostKind::Sad(win) => {
            check_window(win, g.height.min(g.width))?;
            let raw = raw_volume(&g, max_d, |i, j, jr| (left[i * w + j] - right[i * w + jr]).abs());
            let cv = CostVolume {
                geometry: g,
                max_disparity: max_d,
                costs: raw,
            };
            box_filter(&cv, win).costs
        }
    };
    Ok(CostVolume {
        geometry: g,
        max_disparity: max_d,
        costs,
    })
}

/// Matching costs for every pixel and hypothesis `d ∈ [0, D)`, comparing
/// the left window at `(i, j)` with the right window at `(i, j - d)`.
pub fn build_cost_volume(pair: &RectifiedPair, max_disparity: usize, cost: CostKind) -> Result<CostVolume> {
    let mut cv = raw_costs(pair, max_disparity, cost)?;
    mark_out_of_range(&mut cv);
    Ok(cv)
}

/// Separable mean filter over a `window x window` neighbourhood of every
/// hypothesis slice. Rows wrap, columns clamp.
fn box_filter(cv: &CostVolume, window: usize) -> CostVolume {
    let g = cv.geometry;
    let (h, w, nd) = (g.height, g.width, cv.max_disparity);
    let r = (window / 2) as i64;
    let norm = 1.0 / (window * window) as f32;
    let row_len = w * nd;

    let mut horiz = vec![0.0f32; cv.costs.len()];
    horiz
        .par_chunks_mut(row_len)
        .zip(cv.costs.par_chunks(row_len))
        .for_each(|(out, src)| {
            for j in 0..w {
                let o = &mut out[j * nd..(j + 1) * nd];
                for dj in -r..=r {
                    let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                    let s = &src[jj * nd..(jj + 1) * nd];
                    for (a, b) in o.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        });

    let mut costs = vec![0.0f32; cv.costs.len()];
    costs.par_chunks_mut(row_len).enumerate().for_each(|(i, out)| {
        for di in -r..=r {
            let ii = (i as i64 + di).rem_euclid(h as i64) as usize;
            let s = &horiz[ii * row_len..(ii + 1) * row_len];
            for (a, b) in out.iter_mut().zip(s) {
                *a += b;
            }
        }
        for a in out.iter_mut() {
            *a *= norm;
        }
    });

    CostVolume {
        geometry: g,
        max_disparity: nd,
        costs,
    }
}

/// Box-filter aggregation of a cost volume (`window` odd).
pub fn aggregate_costs(cv: &CostVolume, window: usize) -> Result<CostVolume> {
    check_window(window, cv.geometry.height.min(cv.geometry.width))?;
    Ok(box_filter(cv, window))
}

fn softmax_in_place(costs: &mut [f32], max_d: usize, tau: f64) {
    costs.par_chunks_mut(max_d * 64).for_each(|block| {
        let mut e = vec![0.0f64; max_d];
        for c in block.chunks_exact_mut(max_d) {
            let cmin = c.iter().fold(f32::INFINITY, |m, &x| m.min(x)) as f64;
            let mut sum = 0.0;
            for (ek, &ck) in e.iter_mut().zip(c.iter()) {
                *ek = (-(ck as f64 - cmin) / tau).exp();
                sum += *ek;
            }
            for (ck, &ek) in c.iter_mut().zip(&e) {
                *ck = (ek / sum) as f32;
            }
        }
    });
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Per-pixel softmax of `-cost / tau`.
pub fn softmax_probabilities(cv: &CostVolume, tau: f64) -> Result<ProbabilityVolume> {
    check_temperature(tau)?;
    let mut probs = cv.costs.clone();
    softmax_in_place(&mut probs, cv.max_disparity, tau);
    Ok(ProbabilityVolume {
        geometry: cv.geometry,
        max_disparity: cv.max_disparity,
        probs,
    })
}

/// Consuming variant of [`softmax_probabilities`] that reuses the buffer.
pub fn into_probabilities(cv: CostVolume, tau: f64) -> Result<ProbabilityVolume> {
    check_temperature(tau)?;
    let mut probs = cv.costs;
    softmax_in_place(&mut probs, cv.max_disparity, tau);
    Ok(ProbabilityVolume {
        geometry: cv.geometry,
        max_disparity: cv.max_disparity,
        probs,
    })
}

/// Soft-argmin: the probability-weighted mean hypothesis, clamped to
/// `[0, D - 1]`.
pub fn regress_disparity(pv: &ProbabilityVolume) -> DisparityMap {
    let top = (pv.max_disparity - 1) as f64;
    let values = pv
        .probs
        .par_chunks_exact(pv.max_disparity)
        .map(|p| {
            let s: f64 = p.iter().enumerate().map(|(d, &x)| d as f64 * x as f64).sum();
            s.clamp(0.0, top) as f32
        })
        .collect();
    ScalarMap {
        geometry: pv.geometry,
        values,
        valid: vec![true; pv.geometry.len()],
    }
}

/// Probability mass on the three hypotheses nearest the regressed
/// disparity: `r - 1, r, r + 1` with `r` rounded half away from zero.
pub fn confidence_map(pv: &ProbabilityVolume, disp: &DisparityMap) -> Result<ConfidenceMap> {
    if disp.geometry != pv.geometry {
        return Err(Error::shape("disparity and probability volume differ in geometry"));
    }
    let nd = pv.max_disparity as i64;
    let values = pv
        .probs
        .par_chunks_exact(pv.max_disparity)
        .zip(disp.values.par_iter())
        .map(|(p, &d)| {
            let r = (d as f64).round() as i64;
            let s: f64 = (r - 1..=r + 1)
                .filter(|&k| (0..nd).contains(&k))
                .map(|k| p[k as usize] as f64)
                .sum();
            s.clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(ScalarMap {
        geometry: pv.geometry,
        values,
        valid: disp.valid.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct MatchParams {
    /// Hypothesis count; [`default_max_disparity`] when `None`.
    pub max_disparity: Option<usize>,
    pub cost: CostKind,
    /// Box aggregation window, or `None` to skip aggregation.
    pub aggregation: Option<usize>,
    /// Softmax temperature; the cost kind's default when `None`.
    pub temperature: Option<f64>,
    /// Left/right consistency threshold in pixels; `None` disables the check.
    pub lr_check: Option<f64>,
    /// Run circular attention over per-pixel features and match those by
    /// windowed absolute difference instead of `cost`.
    pub attention: Option<AttentionParams>,
    /// Reject pixels whose best cost exceeds this value.
    pub max_cost: Option<f64>,
    /// Horizontal semi-global smoothing penalties `(p1, p2)` applied after
    /// aggregation.
    pub smoothing: Option<(f32, f32)>,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            max_disparity: None,
            cost: CostKind::default(),
            aggregation: Some(5),
            temperature: None,
            lr_check: Some(1.0),
            attention: None,
            max_cost: None,
            smoothing: None,
        }
    }
}

impl MatchParams {
    /// Census matching with horizontal smoothing and a softer temperature.
    /// Slanted and curved surfaces survive the left/right check far more
    /// often than with box aggregation alone.
    pub fn smoothed() -> Self {
        Self {
            temperature: Some(4.0),
            smoothing: Some((2.0, 24.0)),
            ..Self::default()
        }
    }

    /// Horizontal reach of the matching window. Pixels closer than this to
    /// either side border, or matched that close to the border, are
    /// rejected because their windows are clamped.
    pub fn support_radius(&self) -> usize {
        let base = match (&self.attention, self.cost) {
            (Some(_), _) => 1,
            (None, CostKind::Census(w) | CostKind::Sad(w)) => w / 2,
        };
        base + self.aggregation.map_or(0, |a| a / 2)
    }

    fn tau(&self) -> f64 {
        self.temperature.unwrap_or_else(|| match self.attention {
            Some(_) => CostKind::Sad(1).default_temperature(),
            None => self.cost.default_temperature(),
        })
    }
}

/// Number of input channels of [`pixel_features`].
pub const FEATURE_CHANNELS: usize = 4;

/// Per-pixel features fed to attention: luminance, its horizontal and
/// vertical central differences (rows wrap, columns clamp) and the
/// squared gradient magnitude.
pub fn pixel_features(img: &Panorama) -> FeatureMap {
    let g = img.geometry;
    let (h, w) = (g.height, g.width);
    let lum = img.luminance();
    let mut data = Vec::with_capacity(h * w * FEATURE_CHANNELS);
    for i in 0..h {
        let up = (i + h - 1) % h;
        let down = (i + 1) % h;
        for j in 0..w {
            let l = lum[i * w + j] as f64;
            let gx = (lum[i * w + (j + 1).min(w - 1)] - lum[i * w + j.saturating_sub(1)]) as f64 * 0.5;
            let gy = (lum[down * w + j] - lum[up * w + j]) as f64 * 0.5;
            data.extend_from_slice(&[l, gx, gy, gx * gx + gy * gy]);
        }
    }
    FeatureMap::new(h, w, FEATURE_CHANNELS, data).expect("feature shape is consistent")
}

fn feature_costs(pair: &RectifiedPair, max_d: usize, params: &AttentionParams) -> Result<CostVolume> {
    let g = *pair.geometry();
    check_disparity(&g, max_d)?;
    let fl = circular_axial_attention(&pixel_features(&pair.left), params)?;
    let fr = circular_axial_attention(&pixel_features(&pair.right), params)?;
    let c = fl.d;
    let w = g.width;
    let costs = raw_volume(&g, max_d, |i, j, jr| {
        let a = &fl.data[(i * w + j) * c..(i * w + j + 1) * c];
        let b = &fr.data[(i * w + jr) * c..(i * w + jr + 1) * c];
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() as f32
    });
    Ok(CostVolume {
        geometry: g,
        max_disparity: max_d,
        costs,
    })
}

fn disparity_and_confidence(
    pair: &RectifiedPair,
    params: &MatchParams,
    max_d: usize,
) -> Result<(DisparityMap, ConfidenceMap, Vec<f32>)> {
    let mut cv = match &params.attention {
        Some(a) => feature_costs(pair, max_d, a)?,
        None => raw_costs(pair, max_d, params.cost)?,
    };
    if let Some(win) = params.aggregation {
        check_window(win, cv.geometry.height.min(cv.geometry.width))?;
        cv = box_filter(&cv, win);
    }
    mark_out_of_range(&mut cv);
    if let Some((p1, p2)) = params.smoothing {
        cv = scanline_smooth(&cv, p1, p2);
        mark_out_of_range(&mut cv);
    }
    let best: Vec<f32> = cv
        .costs
        .par_chunks_exact(max_d)
        .map(|c| c.iter().fold(f32::INFINITY, |m, &x| m.min(x)))
        .collect();
    let pv = into_probabilities(cv, params.tau())?;
    let disp = regress_disparity(&pv);
    let conf = confidence_map(&pv, &disp)?;
    Ok((disp, conf, best))
}

fn flip_horizontal(img: &Panorama) -> Panorama {
    let (w, c) = (img.width(), img.channels);
    let mut data = Vec::with_capacity(img.data.len());
    for row in img.data.chunks_exact(w * c) {
        for j in (0..w).rev() {
            data.extend_from_slice(&row[j * c..(j + 1) * c]);
        }
    }
    let mask = img
        .mask
        .as_ref()
        .map(|m| m.chunks_exact(w).flat_map(|r| r.iter().rev().copied()).collect());
    Panorama {
        geometry: img.geometry,
        channels: c,
        data,
        mask,
    }
}

/// Disparity and confidence of the left image. Pixels are invalid where the
/// left image is masked, where the pixel or its match lies within
/// [`MatchParams::support_radius`] of a side border, where the right image
/// is masked at the match, where the best cost exceeds
/// [`MatchParams::max_cost`], or where the left/right check fails.
pub fn match_pair(pair: &RectifiedPair, params: &MatchParams) -> Result<(DisparityMap, ConfidenceMap)> {
    let out = match_pair_detailed(pair, params)?;
    Ok((out.disparity, out.confidence))
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub disparity: DisparityMap,
    pub confidence: ConfidenceMap,
    /// Lowest (aggregated) cost over all hypotheses, valid everywhere.
    pub best_cost: ScalarMap,
}

/// [`match_pair`] that also returns the per-pixel best cost.
pub fn match_pair_detailed(pair: &RectifiedPair, params: &MatchParams) -> Result<MatchOutput> {
    let g = *pair.geometry();
    let max_d = params.max_disparity.unwrap_or_else(|| default_max_disparity(&g));
    check_disparity(&g, max_d)?;
    let (mut disp, mut conf, best) = disparity_and_confidence(pair, params, max_d)?;

    let right_disp = match params.lr_check {
        Some(t) if !(t >= 0.0) => {
            return Err(Error::invalid(format!("consistency threshold must be nonnegative, got {t}")))
        }
        Some(_) => {
            let flipped = RectifiedPair {
                left: flip_horizontal(&pair.right),
                right: flip_horizontal(&pair.left),
                baseline: pair.baseline,
                pose_left: pair.pose_left,
            };
            let (d, _, _) = disparity_and_confidence(&flipped, params, max_d)?;
            let w = g.width;
            Some(
                d.values
                    .chunks_exact(w)
                    .flat_map(|r| r.iter().rev().copied())
                    .collect::<Vec<f32>>(),
            )
        }
        None => None,
    };

    let w = g.width;
    let border = params.support_radius();
    for idx in 0..g.len() {
        let j = idx % w;
        let d = disp.values[idx] as f64;
        let jr = (j as f64 + 0.5 - d).floor();
        let mut ok = pair.left.is_valid(idx) && j >= border && j + border < w && jr >= border as f64;
        if let Some(t) = params.max_cost {
            ok &= best[idx] as f64 <= t;
        }
        if ok {
            let ridx = idx - j + jr as usize;
            ok = pair.right.is_valid(ridx);
            if let (Some(rd), Some(t)) = (&right_disp, params.lr_check) {
                ok &= (rd[ridx] as f64 - d).abs() <= t;
            }
        }
        disp.valid[idx] = ok;
        conf.valid[idx] = ok;
    }
    Ok(MatchOutput {
        disparity: disp,
        confidence: conf,
        best_cost: ScalarMap::dense(g, best)?,
    })
}
