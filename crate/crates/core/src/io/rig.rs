//! Camera rig description in JSON.
//!
//! ```json
//! {
//!   "version": 1,
//!   "layout": "square",
//!   "reference": "cam0",
//!   "geometry": { "projection": "erp", "width": 1024, "height": 512 },
//!   "cameras": [
//!     { "id": "cam0", "rotation": { "quaternion": [1, 0, 0, 0] },
//!       "translation": [-0.5, 0, -0.5], "image": "cam0.png" }
//!   ]
//! }
//! ```
//!
//! Rotations are camera-to-world, either a `[w, x, y, z]` unit quaternion
//! or a row-major 3x3 `matrix`. Translations are camera centers in meters.
//! Image paths are relative to the rig file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, PanoramaGeometry, Pose, Vec3};

pub const RIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationSpec {
    Quaternion([f64; 4]),
    Matrix([[f64; 3]; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    pub rotation: RotationSpec,
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub version: u32,
    pub layout: String,
    pub reference: String,
    pub geometry: PanoramaGeometry,
    pub cameras: Vec<CameraConfig>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column.saturating_sub(1)) as u64
}

impl CameraConfig {
    pub fn pose(&self) -> Result<Pose> {
        let t = Vec3::from(self.translation);
        match self.rotation {
            RotationSpec::Quaternion([w, x, y, z]) => {
                let q = Quaternion::new(w, x, y, z);
                if !((q.norm() - 1.0).abs() <= 1e-6) {
                    return Err(Error::domain(format!(
                        "camera '{}': quaternion norm {} is not 1",
                        self.id,
                        q.norm()
                    )));
                }
                Pose::new(*UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix(), t)
            }
            RotationSpec::Matrix(m) => {
                let r = Mat3::from_fn(|i, j| m[i][j]);
                Pose::new(r, t).map_err(|e| Error::domain(format!("camera '{}': {e}", self.id)))
            }
        }
    }
}

impl RigConfig {
    /// Parses and validates. Syntax errors carry the byte offset of the
    /// offending token.
    pub fn parse(text: &str) -> Result<Self> {
        let rig: RigConfig = serde_json::from_str(text)
            .map_err(|e| Error::format(byte_offset(text, e.line(), e.column()), e.to_string()))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RIG_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "rig schema version {} is not supported (expected {RIG_SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.cameras.len() < 3 {
            return Err(Error::invalid(format!(
                "a rig needs at least three cameras, got {}",
                self.cameras.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.cameras {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(format!("duplicate camera id '{}'", c.id)));
            }
            c.pose()?;
        }
        self.reference_index()?;
        PanoramaGeometry::new(self.geometry.projection, self.geometry.width, self.geometry.height)?;
        Ok(())
    }

    pub fn camera_index(&self, id: &str) -> Result<usize> {
        self.cameras
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("no camera with id '{id}'")))
    }

    pub fn reference_index(&self) -> Result<usize> {
        self.camera_index(&self.reference)
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.cameras.iter().map(CameraConfig::pose).collect()
    }

    /// Image path of camera `k` resolved against `base`, the rig file's
    /// directory.
    pub fn image_path(&self, k: usize, base: &Path) -> Result<PathBuf> {
        let c = &self.cameras[k];
        c.image
            .as_ref()
            .map(|p| base.join(p))
            .ok_or_else(|| Error::invalid(format!("camera '{}' has no image", c.id)))
    }
}
