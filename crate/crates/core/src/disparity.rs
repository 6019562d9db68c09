//! Disparity to depth under the spherical and cylindrical models, and
//! alignment of per-pair depth maps to a reference view.
//!
//! Stored depth is always the Euclidean distance from the camera center.
//! In a rectified frame the right camera sits at `-B` along x.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    cartesian_to_spherical, project_to_pixel, unproject_pixel, PanoramaGeometry, PixelCoord, Pose,
    Projection, Vec3,
};
use crate::raster::{ConfidenceMap, DepthMap, DisparityMap, ScalarMap};
use crate::resample::{sample_map, Interp};

/// Left-camera distance from angular disparity `d` (radians) when the left
/// ray has elevation `phi` measured toward the right camera.
pub fn depth_from_disparity_spherical(phi: f64, d: f64, baseline: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("angular disparity must be positive, got {d}")));
    }
    if d.sin() == 0.0 {
        return Err(Error::domain("angular disparity has zero sine"));
    }
    let rho = baseline * ((phi + FRAC_PI_2).sin() / d.tan() - (phi + FRAC_PI_2).cos());
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::domain(format!(
            "angular disparity {d} at elevation {phi} gives nonpositive depth"
        )));
    }
    Ok(rho)
}

/// [`depth_from_disparity_spherical`] for an elevation `phi_l` measured in
/// the rectified left frame, where the right camera lies toward -x.
pub fn depth_from_left_elevation(phi_l: f64, d: f64, baseline: f64) -> Result<f64> {
    depth_from_disparity_spherical(-phi_l, d, baseline)
}

/// Distance from the cylinder axis for pixel disparity `d`.
pub fn depth_from_disparity_cylindrical(d: f64, baseline: f64, g: &PanoramaGeometry) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("cylindrical disparity must be positive, got {d}")));
    }
    Ok(baseline * g.radius() / d)
}

pub fn disparity_from_depth_cylindrical(rho_cyl: f64, baseline: f64, g: &PanoramaGeometry) -> Result<f64> {
    if !(rho_cyl > 0.0) || !rho_cyl.is_finite() {
        return Err(Error::domain(format!("axial distance must be positive, got {rho_cyl}")));
    }
    Ok(baseline * g.radius() / rho_cyl)
}

/// Euclidean distance of the point at axial distance `rho_cyl` seen at
/// horizontal pixel coordinate `u` of a cylindrical panorama.
pub fn euclidean_from_cylindrical(rho_cyl: f64, u: f64, g: &PanoramaGeometry) -> f64 {
    let x = (g.width as f64 / 2.0 - u) / g.radius() * rho_cyl;
    rho_cyl.hypot(x)
}

/// Cylindrical pixel disparity of the point whose angular disparity is
/// `d_ang` at left elevation `phi_l`. `None` when the depth is not positive.
pub fn cylindrical_disparity_from_angular(
    d_ang: f64,
    phi_l: f64,
    baseline: f64,
    radius: f64,
) -> Option<f64> {
    let rho_s = depth_from_left_elevation(phi_l, d_ang, baseline).ok()?;
    let rho_cyl = rho_s * phi_l.cos();
    let d = baseline * radius / rho_cyl;
    (d > 0.0 && d.is_finite()).then_some(d)
}

/// Per-pixel Euclidean depth of a cylindrical disparity map, in the same
/// cylindrical geometry.
pub fn cylindrical_depth_map(disp: &DisparityMap, baseline: f64) -> Result<DepthMap> {
    check_cylindrical(disp)?;
    let g = disp.geometry;
    Ok(ScalarMap::from_fn(g, |i, j| {
        let d = disp.get(i, j)? as f64;
        let rho_cyl = depth_from_disparity_cylindrical(d, baseline, &g).ok()?;
        Some(euclidean_from_cylindrical(rho_cyl, j as f64 + 0.5, &g) as f32)
    }))
}

/// Per-pixel Euclidean depth of a Cassini angular disparity map.
pub fn spherical_depth_map(disp: &DisparityMap, baseline: f64) -> Result<DepthMap> {
    if disp.geometry.projection != Projection::Cassini {
        return Err(Error::invalid("angular disparity maps must be Cassini"));
    }
    let g = disp.geometry;
    Ok(ScalarMap::from_fn(g, |i, j| {
        let d = disp.get(i, j)? as f64;
        let phi = (j as f64 + 0.5) * PI / g.width as f64 - FRAC_PI_2;
        depth_from_left_elevation(phi, d, baseline).ok().map(|r| r as f32)
    }))
}

fn check_cylindrical(m: &ScalarMap) -> Result<()> {
    if m.geometry.projection != Projection::Cylindrical {
        return Err(Error::invalid(format!(
            "expected a cylindrical map, got {}",
            m.geometry.projection.name()
        )));
    }
    Ok(())
}

fn check_cassini(g: &PanoramaGeometry) -> Result<()> {
    if g.projection != Projection::Cassini {
        return Err(Error::invalid(format!(
            "expected a Cassini geometry, got {}",
            g.projection.name()
        )));
    }
    Ok(())
}

/// Resamples a cylindrical disparity map into a Cassini depth map of the
/// same (rectified left) frame. Disparity is interpolated bilinearly and
/// converted along each Cassini ray; rays outside the cylinder's field of
/// view are masked.
pub fn cylindrical_disparity_to_cassini_depth(
    disp: &DisparityMap,
    baseline: f64,
    out_geom: &PanoramaGeometry,
) -> Result<DepthMap> {
    check_cylindrical(disp)?;
    check_cassini(out_geom)?;
    if !(baseline > 0.0) {
        return Err(Error::domain(format!("baseline must be positive, got {baseline}")));
    }
    let radius = disp.geometry.radius();
    Ok(resample_rows(out_geom, |ray| {
        let px = project_to_pixel(ray, &disp.geometry).ok()?;
        let d = sample_map(disp, px, Interp::Bilinear)?;
        if !(d > 0.0) {
            return None;
        }
        let rho_cyl = baseline * radius / d;
        let cos_phi = ray.y.hypot(ray.z);
        Some((rho_cyl / cos_phi) as f32)
    }))
}

/// Bilinear resampling of a cylindrical confidence map onto a Cassini grid
/// of the same frame, clamped to `[0, 1]`.
pub fn cylindrical_confidence_to_cassini(
    conf: &ConfidenceMap,
    out_geom: &PanoramaGeometry,
) -> Result<ConfidenceMap> {
    check_cylindrical(conf)?;
    check_cassini(out_geom)?;
    Ok(resample_rows(out_geom, |ray| {
        let px = project_to_pixel(ray, &conf.geometry).ok()?;
        sample_map(conf, px, Interp::Bilinear).map(|c| c.clamp(0.0, 1.0) as f32)
    }))
}

fn resample_rows(
    out_geom: &PanoramaGeometry,
    f: impl Fn(&Vec3) -> Option<f32> + Sync,
) -> ScalarMap {
    let width = out_geom.width;
    let mut values = vec![0.0f32; out_geom.len()];
    let mut valid = vec![false; out_geom.len()];
    values
        .par_chunks_mut(width)
        .zip(valid.par_chunks_mut(width))
        .enumerate()
        .for_each(|(row, (vals, ok))| {
            for col in 0..width {
                let ray = unproject_pixel(PixelCoord::center(row, col), out_geom);
                if let Some(v) = f(&ray) {
                    vals[col] = v;
                    ok[col] = true;
                }
            }
        });
    ScalarMap {
        geometry: *out_geom,
        values,
        valid,
    }
}

/// How a warped source sample covers destination pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Splat {
    /// Only the destination pixel containing the warped sample.
    Point,
    /// Every destination pixel whose ray lies within the sample's angular
    /// footprint: the source pixel's half-diagonal, rescaled by the
    /// source/destination distance ratio and multiplied by `scale`.
    /// Candidates far from a pixel's ray are slightly penalized so the
    /// nearest of several similar-depth samples wins.
    Footprint { scale: f64 },
}

impl Default for Splat {
    fn default() -> Self {
        Splat::Point
    }
}

const OFF_CENTER_PENALTY: f64 = 0.05;

/// Forward-warps a Cassini depth map from `src_pose` to `ref_pose`,
/// keeping the nearest surface per destination pixel. Destination pixels
/// hit by no sample are invalid.
pub fn align_depth_to_reference(
    src: &DepthMap,
    src_pose: &Pose,
    ref_pose: &Pose,
    splat: Splat,
) -> Result<DepthMap> {
    Ok(warp(src, None, src_pose, ref_pose, splat)?.0)
}

/// [`align_depth_to_reference`] carrying a confidence map along with the
/// depth: each destination pixel takes the confidence of its winning sample.
pub fn align_depth_and_confidence(
    src: &DepthMap,
    conf: &ConfidenceMap,
    src_pose: &Pose,
    ref_pose: &Pose,
    splat: Splat,
) -> Result<(DepthMap, ConfidenceMap)> {
    if conf.geometry != src.geometry {
        return Err(Error::shape("confidence and depth maps differ in geometry"));
    }
    let (d, c) = warp(src, Some(conf), src_pose, ref_pose, splat)?;
    Ok((d, c.expect("payload requested")))
}

struct Warped {
    depth: f64,
    pixel: PixelCoord,
    dir: Vec3,
}

fn warp(
    src: &DepthMap,
    payload: Option<&ScalarMap>,
    src_pose: &Pose,
    ref_pose: &Pose,
    splat: Splat,
) -> Result<(DepthMap, Option<ScalarMap>)> {
    let g = src.geometry;
    check_cassini(&g)?;
    let to_ref = ref_pose.inverse().compose(src_pose);
    let (w, h) = (g.width, g.height);

    // Packed (f32 key bits, source index); positive f32 keys order like
    // their bit patterns, so an integer minimum is a depth test with a
    // deterministic tie-break on the source index.
    let zbuf: Vec<AtomicU64> = (0..g.len()).map(|_| AtomicU64::new(u64::MAX)).collect();
    let dst_rays: Option<Vec<Vec3>> = match splat {
        Splat::Point => None,
        Splat::Footprint { .. } => Some(
            (0..g.len())
                .into_par_iter()
                .map(|k| unproject_pixel(PixelCoord::center(k / w, k % w), &g))
                .collect(),
        ),
    };

    let warp_one = |idx: usize| -> Option<Warped> {
        if !src.valid[idx] {
            return None;
        }
        let depth = src.values[idx] as f64;
        if !(depth > 0.0) || !depth.is_finite() {
            return None;
        }
        let ray = unproject_pixel(PixelCoord::center(idx / w, idx % w), &g);
        let p = to_ref.transform_point(&(ray * depth));
        let d = p.norm();
        if !(d > 0.0) {
            return None;
        }
        let pixel = project_to_pixel(&p, &g).ok()?;
        Some(Warped {
            depth: d,
            pixel,
            dir: p / d,
        })
    };

    let submit = |dst: usize, key: f64, src_idx: usize| {
        let packed = ((key as f32).to_bits() as u64) << 32 | src_idx as u64;
        zbuf[dst].fetch_min(packed, Ordering::Relaxed);
    };

    (0..h).into_par_iter().for_each(|row| {
        for col in 0..w {
            let idx = row * w + col;
            let Some(s) = warp_one(idx) else { continue };
            let center = nearest_pixel(&g, s.pixel);
            match splat {
                Splat::Point => {
                    if let Some(dst) = center {
                        submit(dst, s.depth, idx);
                    }
                }
                Splat::Footprint { scale } => {
                    let rays = dst_rays.as_ref().expect("footprint rays");
                    let src_depth = src.values[idx] as f64;
                    let phi_s = (col as f64 + 0.5) * PI / w as f64 - FRAC_PI_2;
                    let half_diag = 0.5 * (PI / w as f64).hypot(TAU / h as f64 * phi_s.cos());
                    let alpha = half_diag * scale * src_depth / s.depth;
                    let key = |dst: usize| {
                        let cos = rays[dst].dot(&s.dir).clamp(-1.0, 1.0);
                        let off = (cos.acos() / alpha).min(1.0);
                        s.depth * (1.0 + OFF_CENTER_PENALTY * off)
                    };
                    if let Some(dst) = center {
                        submit(dst, key(dst), idx);
                    }
                    for_each_in_cap(&g, &s.dir, alpha, |dst| {
                        if Some(dst) != center {
                            submit(dst, key(dst), idx);
                        }
                    });
                }
            }
        }
    });

    let mut depth = ScalarMap::invalid(g);
    let mut out_payload = payload.map(|_| ScalarMap::invalid(g));
    let winners: Vec<Option<usize>> = zbuf
        .into_iter()
        .map(|a| {
            let packed = a.into_inner();
            (packed != u64::MAX).then_some((packed & 0xffff_ffff) as usize)
        })
        .collect();
    for (dst, winner) in winners.into_iter().enumerate() {
        let Some(src_idx) = winner else { continue };
        let s = warp_one(src_idx).expect("winning sample warps");
        depth.values[dst] = s.depth as f32;
        depth.valid[dst] = true;
        if let (Some(out), Some(pl)) = (out_payload.as_mut(), payload) {
            out.values[dst] = pl.values[src_idx];
            out.valid[dst] = pl.valid[src_idx];
        }
    }
    Ok((depth, out_payload))
}

fn nearest_pixel(g: &PanoramaGeometry, px: PixelCoord) -> Option<usize> {
    let (w, h) = (g.width as f64, g.height as f64);
    if !(px.u >= 0.0 && px.u < w) || !px.v.is_finite() {
        return None;
    }
    let col = px.u.floor() as usize;
    let row = (px.v.floor() as i64).rem_euclid(g.height as i64) as usize;
    debug_assert!(px.v > -h && px.v < 2.0 * h);
    Some(row * g.width + col)
}

/// Calls `f` for every Cassini pixel whose center ray is within angle
/// `alpha` of the unit direction `dir`.
fn for_each_in_cap(g: &PanoramaGeometry, dir: &Vec3, alpha: f64, mut f: impl FnMut(usize)) {
    let Ok(c) = cartesian_to_spherical(dir) else { return };
    let (w, h) = (g.width as f64, g.height as f64);
    let col_of = |phi: f64| (phi + FRAC_PI_2) * w / PI - 0.5;
    let lo = col_of(c.phi - alpha).ceil().max(0.0) as i64;
    let hi = col_of(c.phi + alpha).floor().min(w - 1.0) as i64;
    let cos_alpha = alpha.cos();
    let (sin_c, cos_c) = c.phi.sin_cos();
    for col in lo..=hi {
        let phi = (col as f64 + 0.5) * PI / w - FRAC_PI_2;
        let (sin_p, cos_p) = phi.sin_cos();
        let num = cos_alpha - sin_p * sin_c;
        let den = cos_p * cos_c;
        let half_width = if den <= 1e-12 {
            if num <= 0.0 {
                PI
            } else {
                continue;
            }
        } else {
            let ratio = num / den;
            if ratio > 1.0 {
                continue;
            } else if ratio <= -1.0 {
                PI
            } else {
                ratio.acos()
            }
        };
        let row_of = |theta: f64| (theta + PI) * h / TAU - 0.5;
        let (r0, r1) = if half_width >= PI {
            (0, g.height as i64 - 1)
        } else {
            let r0 = row_of(c.theta - half_width).ceil() as i64;
            let r1 = row_of(c.theta + half_width).floor() as i64;
            (r0, r1.min(r0 + g.height as i64 - 1))
        };
        for r in r0..=r1 {
            let row = r.rem_euclid(g.height as i64) as usize;
            f(row * g.width + col as usize);
        }
    }
}
