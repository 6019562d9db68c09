//! Coordinate math for spherical, cylindrical and perspective panoramas.
//!
//! Frame convention: the x-axis is the cylinder axis (the stereo baseline
//! after rectification), z points forward and y completes a right-handed
//! frame. Spherical elevation `phi` is measured from the yOz plane toward
//! +x; azimuth `theta` is measured in the yOz plane from +z toward +y.
//!
//! Pixel convention: pixel `(row i, col j)` has its center at continuous
//! coordinates `(u, v) = (j + 0.5, i + 0.5)`, so an image covers
//! `[0, W) x [0, H)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `R^T R = I` and `det R = 1` for poses.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta - TAU * ((theta + PI) / TAU).floor();
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub rho: f64,
    pub phi: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylindricalCoord {
    pub rho: f64,
    pub theta: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Continuous coordinate of the center of pixel `(row, col)`.
    pub fn center(row: usize, col: usize) -> Self {
        Self {
            u: col as f64 + 0.5,
            v: row as f64 + 0.5,
        }
    }
}

pub fn spherical_to_cartesian(c: SphericalCoord) -> Vec3 {
    let (sp, cp) = c.phi.sin_cos();
    let (st, ct) = c.theta.sin_cos();
    Vec3::new(c.rho * sp, c.rho * cp * st, c.rho * cp * ct)
}

/// Inverse of [`spherical_to_cartesian`]. On the poles (`y = z = 0`) the
/// azimuth is undefined and is set to 0.
pub fn cartesian_to_spherical(p: &Vec3) -> Result<SphericalCoord> {
    let rho = p.norm();
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::domain(format!(
            "spherical coordinates undefined at ({}, {}, {})",
            p.x, p.y, p.z
        )));
    }
    let axial = p.y.hypot(p.z);
    let phi = p.x.atan2(axial);
    let theta = if axial == 0.0 {
        0.0
    } else {
        normalize_angle(p.y.atan2(p.z))
    };
    Ok(SphericalCoord { rho, phi, theta })
}

pub fn cylindrical_to_cartesian(c: CylindricalCoord) -> Vec3 {
    let (st, ct) = c.theta.sin_cos();
    Vec3::new(c.x, c.rho * st, c.rho * ct)
}

pub fn cartesian_to_cylindrical(p: &Vec3) -> Result<CylindricalCoord> {
    let rho = p.y.hypot(p.z);
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::domain(format!(
            "cylindrical azimuth undefined on the x-axis at ({}, {}, {})",
            p.x, p.y, p.z
        )));
    }
    Ok(CylindricalCoord {
        rho,
        theta: normalize_angle(p.y.atan2(p.z)),
        x: p.x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    /// Transverse equirectangular: `u` spans elevation, `v` spans azimuth.
    Cassini,
    /// Equirectangular with longitude horizontal and latitude vertical.
    Erp,
    /// Cylinder around the x-axis, perspective along the axis.
    Cylindrical,
    /// Pinhole looking down +z with focal length `H / 2pi`.
    Perspective,
}

impl Projection {
    pub fn name(self) -> &'static str {
        match self {
            Projection::Cassini => "cassini",
            Projection::Erp => "erp",
            Projection::Cylindrical => "cylindrical",
            Projection::Perspective => "perspective",
        }
    }

    /// Whether the horizontal image axis is a closed 360 degree loop.
    pub fn wraps_horizontally(self) -> bool {
        matches!(self, Projection::Erp)
    }

    /// Whether the vertical image axis is a closed 360 degree loop.
    pub fn wraps_vertically(self) -> bool {
        matches!(self, Projection::Cassini | Projection::Cylindrical)
    }
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cassini" => Ok(Projection::Cassini),
            "erp" | "equirectangular" => Ok(Projection::Erp),
            "cylindrical" | "cylinder" => Ok(Projection::Cylindrical),
            "perspective" | "pinhole" => Ok(Projection::Perspective),
            other => Err(Error::invalid(format!("unknown projection '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PanoramaGeometry {
    pub projection: Projection,
    pub width: usize,
    pub height: usize,
}

impl PanoramaGeometry {
    pub fn new(projection: Projection, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "panorama dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            projection,
            width,
            height,
        })
    }

    pub fn cassini(width: usize, height: usize) -> Self {
        Self::new(Projection::Cassini, width, height).expect("positive dimensions")
    }

    pub fn cylindrical(width: usize, height: usize) -> Self {
        Self::new(Projection::Cylindrical, width, height).expect("positive dimensions")
    }

    pub fn erp(width: usize, height: usize) -> Self {
        Self::new(Projection::Erp, width, height).expect("positive dimensions")
    }

    pub fn with_projection(self, projection: Projection) -> Self {
        Self { projection, ..self }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Focal length in pixels. For the 360 degree axis this is the radius
    /// of the unrolled circle.
    pub fn radius(&self) -> f64 {
        match self.projection {
            Projection::Erp => self.width as f64 / TAU,
            _ => self.height as f64 / TAU,
        }
    }

    pub fn project(&self, p: &Vec3) -> Result<PixelCoord> {
        project_to_pixel(p, self)
    }

    pub fn unproject(&self, px: PixelCoord) -> Vec3 {
        unproject_pixel(px, self)
    }
}

/// Maps a point in the camera frame to continuous pixel coordinates.
pub fn project_to_pixel(p: &Vec3, g: &PanoramaGeometry) -> Result<PixelCoord> {
    let w = g.width as f64;
    let h = g.height as f64;
    match g.projection {
        Projection::Cassini => {
            let s = cartesian_to_spherical(p)?;
            Ok(PixelCoord {
                u: (s.phi + FRAC_PI_2) * w / PI,
                v: (s.theta + PI) * h / TAU,
            })
        }
        Projection::Cylindrical => {
            let c = cartesian_to_cylindrical(p)?;
            let r = g.radius();
            Ok(PixelCoord {
                u: -(c.x / c.rho) * r + w / 2.0,
                v: (c.theta + PI) * h / TAU,
            })
        }
        Projection::Erp => {
            // Cassini of the axis-swapped point, with the image transposed.
            let s = cartesian_to_spherical(&erp_axis_swap(p))?;
            Ok(PixelCoord {
                u: (s.theta + PI) * w / TAU,
                v: (s.phi + FRAC_PI_2) * h / PI,
            })
        }
        Projection::Perspective => {
            if !(p.z > 0.0) {
                return Err(Error::domain(format!(
                    "point behind the pinhole camera (z = {})",
                    p.z
                )));
            }
            let r = g.radius();
            Ok(PixelCoord {
                u: -p.x / p.z * r + w / 2.0,
                v: p.y / p.z * r + h / 2.0,
            })
        }
    }
}

/// Unit ray through a continuous pixel coordinate.
pub fn unproject_pixel(px: PixelCoord, g: &PanoramaGeometry) -> Vec3 {
    let w = g.width as f64;
    let h = g.height as f64;
    match g.projection {
        Projection::Cassini => spherical_to_cartesian(SphericalCoord {
            rho: 1.0,
            phi: px.u * PI / w - FRAC_PI_2,
            theta: px.v * TAU / h - PI,
        }),
        Projection::Cylindrical => {
            let theta = px.v * TAU / h - PI;
            let (st, ct) = theta.sin_cos();
            Vec3::new((w / 2.0 - px.u) / g.radius(), st, ct).normalize()
        }
        Projection::Erp => {
            let q = spherical_to_cartesian(SphericalCoord {
                rho: 1.0,
                phi: px.v * PI / h - FRAC_PI_2,
                theta: px.u * TAU / w - PI,
            });
            erp_axis_swap_inverse(&q)
        }
        Projection::Perspective => {
            let r = g.radius();
            Vec3::new((w / 2.0 - px.u) / r, (px.v - h / 2.0) / r, 1.0).normalize()
        }
    }
}

// ERP latitude runs along -y and longitude grows toward -x, so that the
// ERP image is the Cassini image of a re-labelled frame.
fn erp_axis_swap(p: &Vec3) -> Vec3 {
    Vec3::new(-p.y, -p.x, p.z)
}

fn erp_axis_swap_inverse(q: &Vec3) -> Vec3 {
    Vec3::new(-q.y, -q.x, q.z)
}

/// Horizontal field of view in radians. For cylindrical and perspective
/// images this is `2 atan((W/2) / R)`.
pub fn horizontal_fov(g: &PanoramaGeometry) -> f64 {
    match g.projection {
        Projection::Cylindrical | Projection::Perspective => {
            2.0 * ((g.width as f64 / 2.0) / g.radius()).atan()
        }
        Projection::Cassini => PI,
        Projection::Erp => TAU,
    }
}

/// Pixels per meter of a small object at distance `rho` and azimuth
/// `theta`, horizontally and vertically.
pub fn local_scale_factors(g: &PanoramaGeometry, theta: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!("distance must be positive, got {rho}")));
    }
    let f = g.radius();
    match g.projection {
        Projection::Cassini | Projection::Erp => {
            let c = theta.cos();
            if c <= 1e-12 {
                return Err(Error::domain(format!(
                    "horizontal scale is unbounded at theta = {theta}"
                )));
            }
            Ok((f / (rho * c), f / rho))
        }
        Projection::Cylindrical | Projection::Perspective => Ok((f / rho, f / rho)),
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::domain("pose translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// `self * other`: first applies `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }
}

pub fn compose_pose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert_pose(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(pose: &Pose, p: &Vec3) -> Vec3 {
    pose.transform_point(p)
}

pub fn check_rotation(r: &Mat3) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::domain("rotation has non-finite entries"));
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        return Err(Error::domain(format!(
            "rotation is not orthonormal (max |R^T R - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::domain(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Rotation about the x-axis that increases the azimuth of every point by
/// `angle`.
pub fn rotation_about_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c)
}

pub fn rotation_about_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rotation_about_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Roll about z, then pitch about x, then yaw about y (angles in radians).
pub fn rotation_from_roll_pitch_yaw(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    rotation_about_y(yaw) * rotation_about_x(pitch) * rotation_about_z(roll)
}
