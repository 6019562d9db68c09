use std::fmt::Write as _;
use std::path::Path;

use omnistereo_core::attention::{brute_force_axial_attention, circular_axial_attention, AttentionParams};
use omnistereo_core::disparity::{
    align_depth_and_confidence, align_depth_to_reference, cylindrical_confidence_to_cassini,
    cylindrical_disparity_to_cassini_depth, spherical_depth_map, Splat,
};
use omnistereo_core::fusion::fuse_depths;
use omnistereo_core::geometry::{rotation_from_roll_pitch_yaw, Mat3, PanoramaGeometry, Projection};
use omnistereo_core::io::{
    colorize, encode_png, encode_rgb8, features_from_pfm, pfm_from_features, read_attention_params, read_pfm,
    valid_range, write_attention_params, write_pfm, CameraConfig, PngDepth, RigConfig, RotationSpec,
    RIG_SCHEMA_VERSION,
};
use omnistereo_core::metrics::{central_band_mask, depth_metrics, disparity_metrics, MetricReport};
use omnistereo_core::pipeline::{crop_elevation, run_pipeline, PipelineParams};
use omnistereo_core::raster::{Panorama, ScalarMap};
use omnistereo_core::resample::{convert_gt_disparity, rectify_pair, reproject_panorama, Interp, RectifiedPair};
use omnistereo_core::scene::{square_rig, triangle_rig, Scene};
use omnistereo_core::stereo::{match_pair as run_match, CostKind, MatchParams, FEATURE_CHANNELS};
use omnistereo_core::{Error, Result};

use crate::files::{infer_geometry, load_map, load_panorama, parse_pose, pose_json, projection, save_map, save_panorama};
use crate::*;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `(half, full)`: pixel counts along the 180 and 360 degree axes.
fn extents(g: &PanoramaGeometry) -> Result<(usize, usize)> {
    match g.projection {
        Projection::Erp => Ok((g.height, g.width)),
        Projection::Cassini | Projection::Cylindrical => Ok((g.width, g.height)),
        Projection::Perspective => Err(usage("perspective images are not panoramas")),
    }
}

fn same_extent_as(g: &PanoramaGeometry, target: Projection) -> Result<PanoramaGeometry> {
    let (half, full) = extents(g)?;
    match target {
        Projection::Erp => PanoramaGeometry::new(target, full, half),
        _ => PanoramaGeometry::new(target, half, full),
    }
}

pub fn convert(a: &ConvertArgs) -> Result<()> {
    let img = load_panorama(&a.input, a.from.map(projection), Projection::Cassini)?;
    let out_geom = same_extent_as(&img.geometry, projection(a.to))?;
    let rot = match a.rot.as_deref() {
        Some([r, p, y]) => rotation_from_roll_pitch_yaw(*r, *p, *y),
        Some(_) => return Err(usage("--rot takes three angles")),
        None => Mat3::identity(),
    };
    let interp = match a.interp {
        InterpArg::Nearest => Interp::Nearest,
        InterpArg::Bilinear => Interp::Bilinear,
    };
    save_panorama(&a.out, &reproject_panorama(&img, &out_geom, &rot, interp))
}

pub fn rectify(a: &RectifyArgs) -> Result<()> {
    if a.pair.len() != 2 {
        return Err(usage("--pair takes two camera ids"));
    }
    let rig = RigConfig::load(&a.rig)?;
    let base = a.rig.parent().unwrap_or(Path::new("."));
    let (ia, ib) = (rig.camera_index(&a.pair[0])?, rig.camera_index(&a.pair[1])?);
    if ia == ib {
        return Err(usage("a pair needs two different cameras"));
    }
    let poses = rig.poses()?;
    let load = |k: usize| load_panorama(&rig.image_path(k, base)?, Some(rig.geometry.projection), Projection::Cassini);
    let params = PipelineParams::for_input(&rig.geometry)?;
    let pair = rectify_pair(&poses[ia], &poses[ib], &load(ia)?, &load(ib)?, &params.rectified)?;
    create_dir(&a.out_dir)?;
    save_panorama(&a.out_dir.join("left.pfm"), &pair.left)?;
    save_panorama(&a.out_dir.join("right.pfm"), &pair.right)?;
    let mut info = pose_json(&pair.pose_left);
    info["left"] = a.pair[0].clone().into();
    info["right"] = a.pair[1].clone().into();
    info["baseline"] = pair.baseline.into();
    std::fs::write(a.out_dir.join("pair.json"), serde_json::to_string_pretty(&info).expect("plain JSON"))?;
    Ok(())
}

pub fn gt_convert(a: &GtConvertArgs) -> Result<()> {
    let gt = load_map(&a.gt, Some(Projection::Cassini), Projection::Cassini)?;
    let out = gt.geometry.with_projection(Projection::Cylindrical);
    save_map(&a.out, &convert_gt_disparity(&gt, a.baseline, &out)?)
}

fn match_params(a: &MatchArgs) -> Result<MatchParams> {
    let mut p = if a.smooth { MatchParams::smoothed() } else { MatchParams::default() };
    p.max_disparity = a.max_disp;
    p.cost = match a.cost {
        CostArg::Census => CostKind::Census(a.window),
        CostArg::Sad => CostKind::Sad(a.window),
    };
    p.aggregation = (a.aggregation > 1).then_some(a.aggregation);
    if a.attn == Toggle::On {
        p.attention = Some(match &a.attn_params {
            Some(path) => read_attention_params(path)?,
            None => AttentionParams::zeros(FEATURE_CHANNELS, 1, 3, true)?,
        });
    } else if a.attn_params.is_some() {
        return Err(usage("--attn-params needs --attn on"));
    }
    Ok(p)
}

pub fn match_pair(a: &MatchArgs) -> Result<()> {
    let left = load_panorama(&a.left, None, Projection::Cylindrical)?;
    let right = load_panorama(&a.right, Some(left.geometry.projection), Projection::Cylindrical)?;
    if left.geometry.projection != Projection::Cylindrical {
        return Err(usage("matching needs rectified cylindrical images (height twice the width)"));
    }
    let pair = RectifiedPair::new(left, right, a.baseline, Default::default())?;
    let (disp, conf) = run_match(&pair, &match_params(a)?)?;
    create_dir(&a.out_dir)?;
    save_map(&a.out_dir.join("disp.pfm"), &disp)?;
    save_map(&a.out_dir.join("conf.pfm"), &conf)
}

pub fn to_depth(a: &ToDepthArgs) -> Result<()> {
    match a.projection {
        DepthModel::Cylindrical => {
            let mut disp = load_map(&a.disp, Some(Projection::Cylindrical), Projection::Cylindrical)?;
            if let Some(deg) = a.max_elevation {
                crop_elevation(&mut disp, deg.to_radians());
            }
            let out = disp.geometry.with_projection(Projection::Cassini);
            save_map(&a.out, &cylindrical_disparity_to_cassini_depth(&disp, a.baseline, &out)?)?;
            if let (Some(cin), Some(cout)) = (&a.conf, &a.conf_out) {
                let conf = load_map(cin, Some(Projection::Cylindrical), Projection::Cylindrical)?;
                save_map(cout, &cylindrical_confidence_to_cassini(&conf, &out)?)?;
            }
            Ok(())
        }
        DepthModel::Spherical => {
            if a.conf.is_some() || a.max_elevation.is_some() {
                return Err(usage("--conf and --max-elevation apply to cylindrical disparity only"));
            }
            let disp = load_map(&a.disp, Some(Projection::Cassini), Projection::Cassini)?;
            save_map(&a.out, &spherical_depth_map(&disp, a.baseline)?)
        }
    }
}

pub fn reproject_depth(a: &ReprojectArgs) -> Result<()> {
    let depth = load_map(&a.depth, Some(Projection::Cassini), Projection::Cassini)?;
    let (src, dst) = (parse_pose(&a.src_pose)?, parse_pose(&a.ref_pose)?);
    let splat = if a.splat > 0.0 {
        Splat::Footprint { scale: a.splat }
    } else if a.splat == 0.0 {
        Splat::Point
    } else {
        return Err(usage("--splat must be nonnegative"));
    };
    match (&a.conf, &a.conf_out) {
        (Some(cin), Some(cout)) => {
            let conf = load_map(cin, Some(Projection::Cassini), Projection::Cassini)?;
            let (d, c) = align_depth_and_confidence(&depth, &conf, &src, &dst, splat)?;
            save_map(&a.out, &d)?;
            save_map(cout, &c)
        }
        _ => save_map(&a.out, &align_depth_to_reference(&depth, &src, &dst, splat)?),
    }
}

pub fn fuse(a: &FuseArgs) -> Result<()> {
    if a.inputs.len() % 2 != 0 {
        return Err(usage("--inputs takes depth,confidence pairs"));
    }
    let load = |p: &Path| load_map(p, Some(Projection::Cassini), Projection::Cassini);
    let views = a
        .inputs
        .chunks_exact(2)
        .map(|pair| Ok((load(&pair[0])?, load(&pair[1])?)))
        .collect::<Result<Vec<_>>>()?;
    save_map(&a.out, &fuse_depths(&views)?)
}

fn format_number(v: f64) -> String {
    serde_json::Number::from_f64(v).map_or_else(|| "null".into(), |n| n.to_string())
}

fn format_entry(key: &str, v: f64) -> String {
    if matches!(key, "count" | "excluded") {
        format!("{}", v as u64)
    } else {
        format_number(v)
    }
}

/// `key value` lines, or a JSON object with keys in the same fixed order.
pub fn render_report(r: &MetricReport, json: bool) -> String {
    let entries = r.entries();
    let mut out = String::new();
    if json {
        out.push_str(&format!("{{\"kind\": \"{}\"", r.kind()));
        for (k, v) in &entries {
            let _ = write!(out, ", \"{k}\": {}", format_entry(k, *v));
        }
        out.push_str("}\n");
    } else {
        let _ = writeln!(out, "kind {}", r.kind());
        for (k, v) in &entries {
            let _ = writeln!(out, "{k} {}", format_entry(k, *v));
        }
    }
    out
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let pred = load_map(&a.pred, Some(Projection::Cassini), Projection::Cassini)?;
    let gt = load_map(&a.gt, Some(Projection::Cassini), Projection::Cassini)?;
    let mut mask: Option<Vec<bool>> = match &a.mask {
        Some(p) => {
            let m = read_pfm(p)?;
            if (m.width, m.height, m.channels) != (gt.width(), gt.height(), 1) {
                return Err(Error::Shape("mask and ground truth differ in size".into()));
            }
            Some(m.data.iter().map(|v| v.is_finite() && *v != 0.0).collect())
        }
        None => None,
    };
    if a.band {
        let band = central_band_mask(&gt.geometry);
        mask = Some(match mask {
            Some(m) => m.iter().zip(&band).map(|(a, b)| *a && *b).collect(),
            None => band,
        });
    }
    let report = match a.kind {
        MetricKind::Depth => MetricReport::Depth(depth_metrics(&pred, &gt, mask.as_deref())?),
        MetricKind::Disparity => MetricReport::Disparity(disparity_metrics(&pred, &gt, mask.as_deref())?),
    };
    print!("{}", render_report(&report, a.json));
    Ok(())
}

pub fn attn(a: &AttnArgs) -> Result<()> {
    let params = read_attention_params(&a.params)?;
    let x = features_from_pfm(&read_pfm(&a.tensor)?, params.d_in)?;
    let y = circular_axial_attention(&x, &params)?;
    write_pfm(&a.out, &pfm_from_features(&y))?;
    if a.oracle {
        let reference = brute_force_axial_attention(&x, &params)?;
        let diff = y.data.iter().zip(&reference.data).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        println!("max_abs_diff {}", format_number(diff));
    }
    Ok(())
}

pub fn attn_params(a: &AttnParamsArgs) -> Result<()> {
    let residual = !a.no_residual;
    let p = if a.scale == 0.0 {
        AttentionParams::zeros(a.channels, a.heads, a.span, residual)?
    } else {
        AttentionParams::random(a.channels, a.heads, a.span, residual, a.scale, a.seed)?
    };
    write_attention_params(&a.out, &p)
}

pub fn viz(a: &VizArgs) -> Result<()> {
    let p = read_pfm(&a.input)?;
    if p.channels != 1 {
        return Err(Error::Shape("only single-channel maps can be colormapped".into()));
    }
    let g = infer_geometry(p.width, p.height, Some(Projection::Cassini), Projection::Cassini)?;
    let map = ScalarMap::from_finite(g, p.data)?;
    let auto = valid_range(&map).unwrap_or((0.0, 1.0));
    let (lo, hi) = (a.min.unwrap_or(auto.0), a.max.unwrap_or(auto.1));
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let bytes = match a.cmap {
        Colormap::Turbo => encode_rgb8(&colorize(&map, Some((lo, hi))), p.width, p.height)?,
        Colormap::Gray => {
            let data: Vec<f32> = map
                .values
                .iter()
                .zip(&map.valid)
                .map(|(&v, &ok)| if ok { v } else { f32::NAN })
                .collect();
            encode_png(&data, p.width, p.height, 1, PngDepth::Eight, (lo, hi))?
        }
    };
    std::fs::write(&a.out, bytes)?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    if a.width < 8 || a.width % 2 != 0 {
        return Err(usage("--width must be even and at least 8"));
    }
    let scene = Scene::demo();
    let (poses, layout) = match a.layout {
        Layout::Square => (square_rig(), "square"),
        Layout::Triangle => (triangle_rig(), "triangle"),
    };
    let g = PanoramaGeometry::erp(a.width, a.width / 2);
    create_dir(&a.out_dir)?;
    let mut cameras = Vec::new();
    for (k, pose) in poses.iter().enumerate() {
        let name = format!("cam{k}.pfm");
        save_panorama(&a.out_dir.join(&name), &scene.render(pose, &g, a.samples))?;
        let r = pose.rotation;
        cameras.push(CameraConfig {
            id: format!("cam{k}"),
            rotation: RotationSpec::Matrix([
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ]),
            translation: pose.translation.into(),
            image: Some(name),
        });
    }
    let rig = RigConfig {
        version: RIG_SCHEMA_VERSION,
        layout: layout.into(),
        reference: "cam0".into(),
        geometry: g,
        cameras,
    };
    std::fs::write(a.out_dir.join("rig.json"), rig.to_json())?;
    let out = PipelineParams::for_input(&g)?.output;
    save_map(&a.out_dir.join("gt_depth.pfm"), &scene.depth_map(&poses[0], &out))
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let rig = RigConfig::load(&a.rig)?;
    let base = a.rig.parent().unwrap_or(Path::new("."));
    let poses = rig.poses()?;
    let panoramas = (0..poses.len())
        .map(|k| {
            let img = load_panorama(&rig.image_path(k, base)?, Some(rig.geometry.projection), Projection::Cassini)?;
            if img.geometry != rig.geometry {
                return Err(Error::Shape(format!(
                    "camera '{}' image is {}x{}, the rig says {}x{}",
                    rig.cameras[k].id,
                    img.width(),
                    img.height(),
                    rig.geometry.width,
                    rig.geometry.height
                )));
            }
            Ok(img)
        })
        .collect::<Result<Vec<Panorama>>>()?;
    let mut params = PipelineParams::for_input(&rig.geometry)?;
    if !(a.max_elevation > 0.0 && a.max_elevation <= 90.0) {
        return Err(usage("--max-elevation must be in (0, 90] degrees"));
    }
    params.max_elevation = a.max_elevation.to_radians();
    if a.erp_out.is_some() {
        params.erp = Some(same_extent_as(&params.output, Projection::Erp)?);
    }
    let gt = a
        .gt
        .as_ref()
        .map(|p| load_map(p, Some(Projection::Cassini), Projection::Cassini))
        .transpose()?;
    let out = run_pipeline(&poses, &panoramas, rig.reference_index()?, &params, gt.as_ref())?;
    save_map(&a.out, &out.fused)?;
    if let (Some(path), Some(erp)) = (&a.erp_out, &out.erp) {
        save_map(path, erp)?;
    }
    if let Some(r) = out.report {
        print!("{}", render_report(&MetricReport::Depth(r), a.json));
    }
    Ok(())
}
