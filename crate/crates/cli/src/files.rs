//! Loading and saving rasters by file extension, and geometry inference
//! for float maps, which do not record a projection.

use std::path::Path;

use omnistereo_core::geometry::{PanoramaGeometry, Pose, Projection};
use omnistereo_core::io::{
    decode_png, encode_png, map_from_pfm, panorama_from_pfm, pfm_from_map, pfm_from_panorama, read_pfm,
    write_pfm, CameraConfig, PngDepth, RigConfig, RotationSpec,
};
use omnistereo_core::raster::{Panorama, ScalarMap};
use omnistereo_core::{Error, Result};
use serde_json::Value;

use crate::ProjectionArg;

pub fn projection(p: ProjectionArg) -> Projection {
    match p {
        ProjectionArg::Cassini => Projection::Cassini,
        ProjectionArg::Erp => Projection::Erp,
        ProjectionArg::Cylindrical => Projection::Cylindrical,
    }
}

/// `explicit` wins. Otherwise a 2:1 image is ERP and a 1:2 image gets
/// `tall`, since Cassini and cylindrical panoramas share that shape.
pub fn infer_geometry(
    width: usize,
    height: usize,
    explicit: Option<Projection>,
    tall: Projection,
) -> Result<PanoramaGeometry> {
    let p = match explicit {
        Some(p) => p,
        None if width == 2 * height => Projection::Erp,
        None if height == 2 * width => tall,
        None => {
            return Err(Error::InvalidArgument(format!(
                "cannot tell the projection of a {width}x{height} image; pass it explicitly"
            )))
        }
    };
    PanoramaGeometry::new(p, width, height)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn load_panorama(path: &Path, explicit: Option<Projection>, tall: Projection) -> Result<Panorama> {
    if is_png(path) {
        let img = decode_png(&std::fs::read(path)?)?;
        let g = infer_geometry(img.width, img.height, explicit, tall)?;
        Panorama::new(g, img.channels, img.data)
    } else {
        let p = read_pfm(path)?;
        let g = infer_geometry(p.width, p.height, explicit, tall)?;
        panorama_from_pfm(&p, g)
    }
}

/// PNG output is 16-bit over `[0, 1]` when the valid samples fit, else over
/// their own range.
pub fn save_panorama(path: &Path, img: &Panorama) -> Result<()> {
    if is_png(path) {
        let c = img.channels;
        let mut data = img.data.clone();
        if let Some(mask) = &img.mask {
            for (k, ok) in mask.iter().enumerate() {
                if !ok {
                    data[k * c..(k + 1) * c].fill(f32::NAN);
                }
            }
        }
        let (lo, hi) = data
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0f64, 1.0f64), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
        std::fs::write(path, encode_png(&data, img.width(), img.height(), c, PngDepth::Sixteen, (lo, hi))?)?;
        Ok(())
    } else {
        write_pfm(path, &pfm_from_panorama(img)?)
    }
}

pub fn load_map(path: &Path, explicit: Option<Projection>, tall: Projection) -> Result<ScalarMap> {
    let p = read_pfm(path)?;
    let g = infer_geometry(p.width, p.height, explicit, tall)?;
    map_from_pfm(&p, g)
}

pub fn save_map(path: &Path, map: &ScalarMap) -> Result<()> {
    write_pfm(path, &pfm_from_map(map))
}

/// Pose from `x,y,z`, `x,y,z,qw,qx,qy,qz`, `rig.json#camera-id`, or a
/// JSON file holding `rotation` and `translation` like a rig camera.
pub fn parse_pose(arg: &str) -> Result<Pose> {
    if let Some((file, id)) = arg.rsplit_once(".json#") {
        let rig = RigConfig::load(format!("{file}.json"))?;
        return rig.cameras[rig.camera_index(id)?].pose();
    }
    if arg.ends_with(".json") {
        let text = std::fs::read_to_string(arg)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{arg}: {e}"),
        })?;
        let field = |k: &str| {
            v.get(k)
                .cloned()
                .ok_or_else(|| Error::Format { offset: 0, message: format!("{arg}: missing '{k}'") })
        };
        let bad = |e: serde_json::Error| Error::Format {
            offset: 0,
            message: format!("{arg}: {e}"),
        };
        let cam = CameraConfig {
            id: arg.to_string(),
            rotation: serde_json::from_value::<RotationSpec>(field("rotation")?).map_err(bad)?,
            translation: serde_json::from_value(field("translation")?).map_err(bad)?,
            image: None,
        };
        return cam.pose();
    }
    let nums: Vec<f64> = arg
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("pose '{arg}' is not a list of numbers")))?;
    let rotation = match nums.len() {
        3 => RotationSpec::Quaternion([1.0, 0.0, 0.0, 0.0]),
        7 => RotationSpec::Quaternion([nums[3], nums[4], nums[5], nums[6]]),
        n => return Err(Error::InvalidArgument(format!("pose needs 3 or 7 numbers, got {n}"))),
    };
    CameraConfig {
        id: "pose".into(),
        rotation,
        translation: [nums[0], nums[1], nums[2]],
        image: None,
    }
    .pose()
}

/// JSON object for a pose in the form [`parse_pose`] reads back.
pub fn pose_json(pose: &Pose) -> Value {
    let r = pose.rotation;
    let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| r[(i, j)]).collect()).collect();
    serde_json::json!({
        "rotation": { "matrix": rows },
        "translation": [pose.translation.x, pose.translation.y, pose.translation.z],
    })
}
