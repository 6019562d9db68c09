//! Panorama-to-panorama resampling, rig rectification and ground-truth
//! disparity conversion.
//!
//! All resamplers work backwards: every destination pixel is unprojected,
//! rotated into the source frame and sampled. Rows are processed in
//! parallel with disjoint writes, so the output does not depend on the
//! number of workers.

use rayon::prelude::*;

use crate::disparity::cylindrical_disparity_from_angular;
use crate::error::{Error, Result};
use crate::geometry::{
    project_to_pixel, unproject_pixel, Mat3, PanoramaGeometry, PixelCoord, Pose, Projection, Vec3,
};
use crate::raster::{DisparityMap, Panorama, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interp {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Interp::Nearest),
            "bilinear" => Ok(Interp::Bilinear),
            other => Err(Error::invalid(format!("unknown interpolation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Edge {
    Wrap,
    Clamp,
    /// Samples outside `[0, n]` are invalid; inside, taps clamp.
    Mask,
}

fn edges(p: Projection) -> (Edge, Edge) {
    match p {
        Projection::Cassini => (Edge::Clamp, Edge::Wrap),
        Projection::Cylindrical => (Edge::Mask, Edge::Wrap),
        Projection::Erp => (Edge::Wrap, Edge::Clamp),
        Projection::Perspective => (Edge::Mask, Edge::Mask),
    }
}

/// Up to four `(index, weight)` taps into a raster of `geometry`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub weight: [f64; 4],
    pub len: usize,
}

const SNAP: f64 = 1e-9;

fn axis_taps(x: f64, n: usize, edge: Edge, interp: Interp) -> Option<([usize; 2], [f64; 2], usize)> {
    let nf = n as f64;
    if !x.is_finite() {
        return None;
    }
    if let Edge::Mask = edge {
        if x < 0.0 || x > nf {
            return None;
        }
    }
    let fix = |k: i64| -> usize {
        match edge {
            Edge::Wrap => k.rem_euclid(n as i64) as usize,
            Edge::Clamp | Edge::Mask => k.clamp(0, n as i64 - 1) as usize,
        }
    };
    match interp {
        Interp::Nearest => Some(([fix(x.floor() as i64), 0], [1.0, 0.0], 1)),
        Interp::Bilinear => {
            let s = x - 0.5;
            let k0 = s.floor();
            let t = s - k0;
            let k0 = k0 as i64;
            // Snap rounding noise so exact pixel centers sample one tap.
            if t < SNAP {
                Some(([fix(k0), 0], [1.0, 0.0], 1))
            } else if t > 1.0 - SNAP {
                Some(([fix(k0 + 1), 0], [1.0, 0.0], 1))
            } else {
                Some(([fix(k0), fix(k0 + 1)], [1.0 - t, t], 2))
            }
        }
    }
}

pub(crate) fn sample_taps(g: &PanoramaGeometry, px: PixelCoord, interp: Interp) -> Option<Taps> {
    let (eu, ev) = edges(g.projection);
    let (cols, cw, nc) = axis_taps(px.u, g.width, eu, interp)?;
    let (rows, rw, nr) = axis_taps(px.v, g.height, ev, interp)?;
    let mut taps = Taps {
        idx: [0; 4],
        weight: [0.0; 4],
        len: 0,
    };
    for r in 0..nr {
        for c in 0..nc {
            taps.idx[taps.len] = rows[r] * g.width + cols[c];
            taps.weight[taps.len] = rw[r] * cw[c];
            taps.len += 1;
        }
    }
    Some(taps)
}

/// Samples a single-channel map; any invalid contributing tap invalidates
/// the sample.
pub(crate) fn sample_map(map: &ScalarMap, px: PixelCoord, interp: Interp) -> Option<f64> {
    let taps = sample_taps(&map.geometry, px, interp)?;
    let mut acc = 0.0;
    for k in 0..taps.len {
        let i = taps.idx[k];
        if !map.valid[i] {
            return None;
        }
        acc += taps.weight[k] * map.values[i] as f64;
    }
    Some(acc)
}

/// Resamples `src` onto `dst_geom`. `rotation` maps destination-frame
/// directions into the source frame. Destination pixels whose source
/// position is outside the source field of view are masked.
pub fn reproject_panorama(
    src: &Panorama,
    dst_geom: &PanoramaGeometry,
    rotation: &Mat3,
    interp: Interp,
) -> Panorama {
    let channels = src.channels;
    let width = dst_geom.width;
    let mut data = vec![0.0f32; dst_geom.len() * channels];
    let mut mask = vec![false; dst_geom.len()];

    data.par_chunks_mut(width * channels)
        .zip(mask.par_chunks_mut(width))
        .enumerate()
        .for_each(|(row, (out, ok))| {
            let mut acc = [0.0f64; 3];
            for col in 0..width {
                let ray = unproject_pixel(PixelCoord::center(row, col), dst_geom);
                let Ok(px) = project_to_pixel(&(rotation * ray), &src.geometry) else {
                    continue;
                };
                let Some(taps) = sample_taps(&src.geometry, px, interp) else {
                    continue;
                };
                if (0..taps.len).any(|k| !src.is_valid(taps.idx[k])) {
                    continue;
                }
                acc[..channels].fill(0.0);
                for k in 0..taps.len {
                    let base = taps.idx[k] * channels;
                    for c in 0..channels {
                        acc[c] += taps.weight[k] * src.data[base + c] as f64;
                    }
                }
                for c in 0..channels {
                    out[col * channels + c] = acc[c] as f32;
                }
                ok[col] = true;
            }
        });

    Panorama {
        geometry: *dst_geom,
        channels,
        data,
        mask: Some(mask),
    }
}

/// A stereo pair resampled so that the baseline is the shared x-axis and
/// epipolar curves are image rows.
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub left: Panorama,
    pub right: Panorama,
    pub baseline: f64,
    /// World pose of the rectified left frame.
    pub pose_left: Pose,
}

impl RectifiedPair {
    pub fn new(left: Panorama, right: Panorama, baseline: f64, pose_left: Pose) -> Result<Self> {
        if left.geometry != right.geometry {
            return Err(Error::shape("left and right panoramas differ in geometry"));
        }
        if left.channels != right.channels {
            return Err(Error::shape("left and right panoramas differ in channel count"));
        }
        if !(baseline > 0.0) {
            return Err(Error::domain(format!("baseline must be positive, got {baseline}")));
        }
        Ok(Self {
            left,
            right,
            baseline,
            pose_left,
        })
    }

    pub fn geometry(&self) -> &PanoramaGeometry {
        &self.left.geometry
    }

    /// The right camera sits at `-baseline` along the rectified x-axis.
    pub fn pose_right(&self) -> Pose {
        let x_axis: Vec3 = self.pose_left.rotation.column(0).into();
        Pose {
            rotation: self.pose_left.rotation,
            translation: self.pose_left.translation - self.baseline * x_axis,
        }
    }
}

/// World orientation of the rectified frame for cameras `a` (left) and `b`
/// (right), and the baseline length.
///
/// The x-axis points from the right camera center to the left one, which
/// makes `u_left - u_right` nonnegative for points in front of the rig.
/// The z-axis is the left camera's optical axis made orthogonal to x.
pub fn rectified_frame(cam_a: &Pose, cam_b: &Pose) -> Result<(Mat3, f64)> {
    let offset = cam_a.center() - cam_b.center();
    let baseline = offset.norm();
    if !(baseline > 1e-12) || !baseline.is_finite() {
        return Err(Error::domain("camera centers coincide; baseline is zero"));
    }
    let x = offset / baseline;
    let orthogonal = |d: Vec3| {
        let z = d - d.dot(&x) * x;
        let n = z.norm();
        (n > 1e-6).then(|| z / n)
    };
    let z = orthogonal(cam_a.rotation.column(2).into())
        .or_else(|| orthogonal(Vec3::y()))
        .or_else(|| orthogonal(Vec3::z()))
        .expect("one of two orthogonal axes is not parallel to the baseline");
    let y = z.cross(&x);
    Ok((Mat3::from_columns(&[x, y, z]), baseline))
}

/// Resamples both panoramas into the rectified cylindrical frame of the
/// pair. `pano_a` becomes the left image.
pub fn rectify_pair(
    cam_a: &Pose,
    cam_b: &Pose,
    pano_a: &Panorama,
    pano_b: &Panorama,
    out_geom: &PanoramaGeometry,
) -> Result<RectifiedPair> {
    if out_geom.projection != Projection::Cylindrical {
        return Err(Error::invalid("rectified panoramas must be cylindrical"));
    }
    let (rect, baseline) = rectified_frame(cam_a, cam_b)?;
    let rot_a = cam_a.rotation.transpose() * rect;
    let rot_b = cam_b.rotation.transpose() * rect;
    let left = reproject_panorama(pano_a, out_geom, &rot_a, Interp::Bilinear);
    let right = reproject_panorama(pano_b, out_geom, &rot_b, Interp::Bilinear);
    RectifiedPair::new(
        left,
        right,
        baseline,
        Pose {
            rotation: rect,
            translation: cam_a.center(),
        },
    )
}

/// Converts Cassini angular disparity (radians, rectified left frame) into
/// cylindrical pixel disparity on `out_geom`. Source pixels are looked up
/// by nearest neighbour along the shared epipolar row; zero disparity
/// (infinite depth) is masked.
pub fn convert_gt_disparity(
    gt_angular: &DisparityMap,
    baseline: f64,
    out_geom: &PanoramaGeometry,
) -> Result<DisparityMap> {
    if gt_angular.geometry.projection != Projection::Cassini {
        return Err(Error::invalid("angular ground truth must be a Cassini map"));
    }
    if out_geom.projection != Projection::Cylindrical {
        return Err(Error::invalid("converted disparity must be cylindrical"));
    }
    if !(baseline > 0.0) {
        return Err(Error::domain(format!("baseline must be positive, got {baseline}")));
    }
    let src = &gt_angular.geometry;
    let radius = out_geom.radius();
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
                let Ok(px) = project_to_pixel(&ray, src) else {
                    continue;
                };
                let Some(taps) = sample_taps(src, px, Interp::Nearest) else {
                    continue;
                };
                let idx = taps.idx[0];
                if !gt_angular.valid[idx] {
                    continue;
                }
                let d_ang = gt_angular.values[idx] as f64;
                if !(d_ang > 0.0) {
                    continue;
                }
                let src_col = idx % src.width;
                let phi = (src_col as f64 + 0.5) * std::f64::consts::PI / src.width as f64
                    - std::f64::consts::FRAC_PI_2;
                if let Some(d) = cylindrical_disparity_from_angular(d_ang, phi, baseline, radius) {
                    vals[col] = d as f32;
                    ok[col] = true;
                }
            }
        });
    ScalarMap::new(*out_geom, values, valid)
}
