//! Multi-camera depth estimation: rectify every camera pair, match, convert
//! to Cassini depth, align to the reference camera and fuse.

use std::f64::consts::FRAC_PI_4;

use crate::disparity::{align_depth_and_confidence, cylindrical_confidence_to_cassini, cylindrical_disparity_to_cassini_depth, Splat};
use crate::error::{Error, Result};
use crate::fusion::{enumerate_pairs, fuse_depths};
use crate::geometry::{Mat3, PanoramaGeometry, Pose, Projection};
use crate::metrics::{depth_metrics, DepthReport};
use crate::raster::{DepthMap, Panorama, ScalarMap};
use crate::resample::{rectify_pair, reproject_panorama, Interp};
use crate::stereo::{match_pair, MatchParams};

#[derive(Debug, Clone)]
pub struct PipelineParams {
    /// Cylindrical geometry of the rectified pairs.
    pub rectified: PanoramaGeometry,
    /// Cassini geometry of the fused reference depth.
    pub output: PanoramaGeometry,
    pub matching: MatchParams,
    pub splat: Splat,
    /// Rectified pixels whose ray is farther than this angle (radians) from
    /// the plane perpendicular to the baseline are dropped before fusion.
    pub max_elevation: f64,
    /// Also resample the fused depth into this ERP geometry.
    pub erp: Option<PanoramaGeometry>,
}

impl PipelineParams {
    /// Geometries matching the angular resolution of the input panoramas:
    /// the 360° axis keeps its pixel count and the 180° axis keeps its own.
    /// Matching uses [`MatchParams::smoothed`].
    pub fn for_input(g: &PanoramaGeometry) -> Result<Self> {
        let (half, full) = match g.projection {
            Projection::Erp => (g.height, g.width),
            Projection::Cassini | Projection::Cylindrical => (g.width, g.height),
            Projection::Perspective => {
                return Err(Error::invalid("pipeline inputs must be omnidirectional"))
            }
        };
        Ok(Self {
            rectified: PanoramaGeometry::new(Projection::Cylindrical, half, full)?,
            output: PanoramaGeometry::new(Projection::Cassini, half, full)?,
            matching: MatchParams::smoothed(),
            splat: Splat::Footprint { scale: 1.0 },
            max_elevation: FRAC_PI_4,
            erp: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub left: usize,
    pub right: usize,
    pub baseline: f64,
    /// Valid pixels of the pair's depth after alignment to the reference.
    pub aligned_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fused: DepthMap,
    pub erp: Option<DepthMap>,
    pub pairs: Vec<PairSummary>,
    pub report: Option<DepthReport>,
}

/// Invalidates pixels of a cylindrical map whose elevation `atan(x / ρ)`
/// exceeds `max` in magnitude.
pub fn crop_elevation(map: &mut ScalarMap, max: f64) {
    let g = map.geometry;
    let limit = max.tan() * g.radius();
    for (k, v) in map.valid.iter_mut().enumerate() {
        let u = (k % g.width) as f64 + 0.5;
        if (g.width as f64 / 2.0 - u).abs() > limit {
            *v = false;
        }
    }
}

/// Resamples a Cassini depth map to ERP with nearest-neighbour lookups.
pub fn cassini_depth_to_erp(depth: &DepthMap, erp: &PanoramaGeometry) -> Result<DepthMap> {
    if depth.geometry.projection != Projection::Cassini || erp.projection != Projection::Erp {
        return Err(Error::invalid("expected Cassini input and ERP output"));
    }
    reproject_panorama(&depth.to_panorama(), erp, &Mat3::identity(), Interp::Nearest).to_map()
}

/// Runs the full pipeline. `panoramas[k]` is seen by the camera at
/// `poses[k]`; `gt`, if given, is the reference camera's Cassini depth.
pub fn run_pipeline(
    poses: &[Pose],
    panoramas: &[Panorama],
    reference: usize,
    params: &PipelineParams,
    gt: Option<&DepthMap>,
) -> Result<PipelineOutput> {
    let m = poses.len();
    if m < 3 {
        return Err(Error::invalid(format!("the pipeline needs at least three cameras, got {m}")));
    }
    if panoramas.len() != m {
        return Err(Error::shape(format!("{m} cameras but {} panoramas", panoramas.len())));
    }
    if reference >= m {
        return Err(Error::invalid(format!("reference camera {reference} out of range")));
    }
    let ref_pose = &poses[reference];
    let mut aligned = Vec::new();
    let mut pairs = Vec::new();
    for (a, b) in enumerate_pairs(m)? {
        let tag = |e: Error| match e {
            Error::Domain(s) => Error::Domain(format!("pair ({a},{b}): {s}")),
            Error::Shape(s) => Error::Shape(format!("pair ({a},{b}): {s}")),
            Error::InvalidArgument(s) => Error::InvalidArgument(format!("pair ({a},{b}): {s}")),
            other => other,
        };
        let pair = rectify_pair(&poses[a], &poses[b], &panoramas[a], &panoramas[b], &params.rectified).map_err(tag)?;
        let (mut disp, conf) = match_pair(&pair, &params.matching).map_err(tag)?;
        crop_elevation(&mut disp, params.max_elevation);
        let depth = cylindrical_disparity_to_cassini_depth(&disp, pair.baseline, &params.output).map_err(tag)?;
        let conf = cylindrical_confidence_to_cassini(&conf, &params.output).map_err(tag)?;
        let (d, c) = align_depth_and_confidence(&depth, &conf, &pair.pose_left, ref_pose, params.splat).map_err(tag)?;
        pairs.push(PairSummary {
            left: a,
            right: b,
            baseline: pair.baseline,
            aligned_pixels: d.valid_count(),
        });
        aligned.push((d, c));
    }
    let fused = fuse_depths(&aligned)?;
    let erp = params.erp.as_ref().map(|g| cassini_depth_to_erp(&fused, g)).transpose()?;
    let report = gt.map(|g| depth_metrics(&fused, g, None)).transpose()?;
    Ok(PipelineOutput {
        fused,
        erp,
        pairs,
        report,
    })
}
