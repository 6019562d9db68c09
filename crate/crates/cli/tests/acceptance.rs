//! Acceptance checks, one PASS/FAIL line each. Run with
//! `cargo test --test acceptance`; the process exits nonzero if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::UnitQuaternion;
use omnistereo_core::attention::{
    attention_parameter_gradients, brute_force_axial_attention, circular_axial_attention,
    circular_axial_attention_with_stats, global_self_attention, AttentionParams, FeatureMap,
};
use omnistereo_core::disparity::{
    depth_from_disparity_cylindrical, depth_from_left_elevation, euclidean_from_cylindrical,
};
use omnistereo_core::fusion::{enumerate_pairs, fuse_depths};
use omnistereo_core::geometry::{
    cartesian_to_cylindrical, cartesian_to_spherical, cylindrical_to_cartesian, project_to_pixel,
    rotation_about_x, spherical_to_cartesian, unproject_pixel, PanoramaGeometry, PixelCoord, Pose,
    Projection, Vec3,
};
use omnistereo_core::io::{pfm_from_features, pfm_from_map, write_pfm};
use omnistereo_core::metrics::{depth_metrics, disparity_metrics};
use omnistereo_core::pipeline::{run_pipeline, PipelineParams};
use omnistereo_core::raster::{Panorama, ScalarMap};
use omnistereo_core::resample::{rectified_frame, reproject_panorama, Interp, RectifiedPair};
use omnistereo_core::scene::{square_rig, Scene, Shape};
use omnistereo_core::stereo::{
    aggregate_costs, build_cost_volume, confidence_map, default_max_disparity, match_pair,
    regress_disparity, softmax_probabilities, CostKind, MatchParams, ProbabilityVolume,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let q = UnitQuaternion::from_euler_angles(
        rng.gen_range(-PI..PI),
        rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
        rng.gen_range(-PI..PI),
    );
    let t = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    Pose::from_quaternion(q, t)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

// Cylindrical pixel disparity of random points seen by random camera
// pairs, inverted back to distance, and the angular route to the same.
fn geometric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = PanoramaGeometry::cylindrical(512, 1024);
    let (mut worst_cyl, mut worst_sph) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < 100_000 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let Ok((rect, baseline)) = rectified_frame(&a, &b) else { continue };
        if baseline < 0.05 {
            continue;
        }
        let p = a.center() + random_unit(&mut rng) * rng.gen_range(0.5..50.0);
        let truth = (p - a.center()).norm();
        let ql = rect.transpose() * (p - a.center());
        let qr = rect.transpose() * (p - b.center());
        let (Ok(pl), Ok(pr)) = (project_to_pixel(&ql, &g), project_to_pixel(&qr, &g)) else { continue };
        // Only points inside the left image's field of view.
        if !(0.0..=g.width as f64).contains(&pl.u) {
            continue;
        }
        let d = pl.u - pr.u;
        let rho = depth_from_disparity_cylindrical(d, baseline, &g).map_err(|e| e.to_string())?;
        let dist = euclidean_from_cylindrical(rho, pl.u, &g);
        worst_cyl = worst_cyl.max((dist - truth).abs() / truth);

        let (sl, sr) = (
            cartesian_to_spherical(&ql).map_err(|e| e.to_string())?,
            cartesian_to_spherical(&qr).map_err(|e| e.to_string())?,
        );
        let sph = depth_from_left_elevation(sl.phi, sr.phi - sl.phi, baseline).map_err(|e| e.to_string())?;
        worst_sph = worst_sph.max((sph - dist).abs() / dist);
        n += 1;
    }
    let t = start.elapsed();
    ensure(worst_cyl <= 1e-9, || format!("cylindrical path relative error {worst_cyl:.3e}"))?;
    ensure(worst_sph <= 1e-9, || format!("spherical vs cylindrical relative gap {worst_sph:.3e}"))?;
    within(t, 10.0, "oracle")?;
    Ok(format!(
        "1e5 points, cylindrical err {worst_cyl:.2e}, spherical gap {worst_sph:.2e}, {:.2} s",
        t.as_secs_f64()
    ))
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 1_000_000 {
        let p = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        // Both charts are singular on the x-axis.
        if p.y.hypot(p.z) < 1e-3 {
            continue;
        }
        let s = cartesian_to_spherical(&p).map_err(|e| e.to_string())?;
        let p1 = spherical_to_cartesian(s);
        let c = cartesian_to_cylindrical(&p1).map_err(|e| e.to_string())?;
        let p2 = cylindrical_to_cartesian(c);
        let s2 = cartesian_to_spherical(&p2).map_err(|e| e.to_string())?;
        let p3 = spherical_to_cartesian(s2);
        let norm = p.norm();
        for q in [p1, p2, p3] {
            worst = worst.max((q - p).norm() / norm);
        }
        n += 1;
    }
    ensure(worst <= 1e-12, || format!("coordinate round trip relative error {worst:.3e}"))?;

    let geoms = [
        PanoramaGeometry::cassini(512, 1024),
        PanoramaGeometry::cylindrical(512, 1024),
        PanoramaGeometry::erp(1024, 512),
        PanoramaGeometry::new(Projection::Perspective, 640, 480).map_err(|e| e.to_string())?,
    ];
    let mut worst_px = 0.0f64;
    for g in &geoms {
        let (w, h) = (g.width as f64, g.height as f64);
        for _ in 0..100_000 {
            // A one-pixel margin keeps clear of the poles and the seam.
            let px = PixelCoord::new(rng.gen_range(1.0..w - 1.0), rng.gen_range(1.0..h - 1.0));
            let back = project_to_pixel(&unproject_pixel(px, g), g).map_err(|e| e.to_string())?;
            worst_px = worst_px.max((back.u - px.u).abs().max((back.v - px.v).abs()));
        }
    }
    ensure(worst_px <= 1e-9, || format!("pixel round trip error {worst_px:.3e} px"))?;
    Ok(format!("coordinates {worst:.2e} relative over 1e6, pixels {worst_px:.2e} px"))
}

fn resampling() -> Outcome {
    let cas = PanoramaGeometry::cassini(512, 1024);
    let cyl = PanoramaGeometry::cylindrical(512, 1024);
    let f = |r: &Vec3| (0.5 + 0.3 * r.x + 0.15 * r.y + 0.05 * r.z) as f32;
    let src = Panorama::from_fn(cas, 1, |i, j, _| f(&unproject_pixel(PixelCoord::center(i, j), &cas)));
    let eye = nalgebra::Matrix3::identity();
    let there = reproject_panorama(&src, &cyl, &eye, Interp::Bilinear);
    let back = reproject_panorama(&there, &cas, &eye, Interp::Bilinear);
    // Interior band: a little inside the cylinder's field of view.
    let band = 55f64.to_radians();
    let (mut worst, mut n) = (0.0f64, 0);
    for i in 0..cas.height {
        for j in 0..cas.width {
            let r = unproject_pixel(PixelCoord::center(i, j), &cas);
            if r.x.atan2(r.y.hypot(r.z)).abs() > band {
                continue;
            }
            let k = i * cas.width + j;
            ensure(back.is_valid(k), || format!("band pixel ({i},{j}) lost in the round trip"))?;
            worst = worst.max((back.data[k] - src.data[k]).abs() as f64);
            n += 1;
        }
    }
    ensure(worst <= 2.0 / 255.0, || format!("round trip error {worst:.4} > 2/255"))?;

    // Rotating about x by whole rows is a circular row shift; the rotation
    // raises the source azimuth, so output row i reads source row i + k.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = PanoramaGeometry::cassini(64, 128);
    let img = Panorama::from_fn(g, 1, |_, _, _| rng.gen::<f32>());
    for k in [1usize, 5, 37, 127] {
        let angle = 2.0 * PI * k as f64 / g.height as f64;
        let out = reproject_panorama(&img, &g, &rotation_about_x(angle), Interp::Nearest);
        for i in 0..g.height {
            let si = (i + k) % g.height;
            for j in 0..g.width {
                let (a, b) = (out.data[i * g.width + j], img.data[si * g.width + j]);
                ensure(a.to_bits() == b.to_bits() && out.is_valid(i * g.width + j), || {
                    format!("shift {k}: pixel ({i},{j}) is {a}, expected {b}")
                })?;
            }
        }
    }
    Ok(format!("Cassini-cylinder-Cassini max err {worst:.2e} over {n} px; row shifts bitwise"))
}

fn random_features(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(h, w, d, (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn max_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn loss(x: &FeatureMap, p: &AttentionParams, up: &FeatureMap) -> f64 {
    let y = circular_axial_attention(x, p).expect("forward");
    y.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
}

fn attention() -> Outcome {
    let start = Instant::now();
    let e = |e: omnistereo_core::Error| e.to_string();

    let mut brute = 0.0f64;
    for heads in [1, 2] {
        for residual in [false, true] {
            let x = random_features(4, 2, 2, 10 + heads as u64);
            let p = AttentionParams::random(2, heads, 3, residual, 0.8, 20 + heads as u64).map_err(e)?;
            let fast = circular_axial_attention(&x, &p).map_err(e)?;
            let slow = brute_force_axial_attention(&x, &p).map_err(e)?;
            brute = brute.max(max_diff(&fast, &slow));
        }
    }
    ensure(brute <= 1e-12, || format!("brute-force gap {brute:.3e}"))?;

    let x = random_features(16, 3, 4, 30);
    let p = AttentionParams::random(4, 2, 5, true, 0.5, 31).map_err(e)?;
    let y = circular_axial_attention(&x, &p).map_err(e)?;
    for k in [1, 7, 15] {
        let rolled = circular_axial_attention(&x.roll_rows(k), &p).map_err(e)?;
        let expect = y.roll_rows(k);
        ensure(rolled.data.iter().zip(&expect.data).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("rolling by {k} rows is not equivariant bitwise")
        })?;
    }

    // Central differences over every parameter and input entry.
    let x = random_features(6, 2, 4, 40);
    let up = random_features(6, 2, 4, 41);
    let mut worst_grad = 0.0f64;
    for (residual, span) in [(true, 3), (false, 4)] {
        let p = AttentionParams::random(4, 2, span, residual, 0.5, 42).map_err(e)?;
        let grads = attention_parameter_gradients(&x, &p, &up).map_err(e)?;
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for t in 0..10 {
            for idx in 0..p.tensors()[t].len() {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                plus.tensors_mut()[t][idx] += h;
                minus.tensors_mut()[t][idx] -= h;
                let num = (loss(&x, &plus, &up) - loss(&x, &minus, &up)) / (2.0 * h);
                worst_grad = worst_grad.max(rel(grads.params.tensors()[t][idx], num));
            }
        }
        for idx in 0..x.data.len() {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus.data[idx] += h;
            minus.data[idx] -= h;
            let num = (loss(&plus, &p, &up) - loss(&minus, &p, &up)) / (2.0 * h);
            worst_grad = worst_grad.max(rel(grads.input.data[idx], num));
        }
    }
    ensure(worst_grad <= 1e-4, || format!("gradient relative error {worst_grad:.3e}"))?;

    let x = random_features(64, 4, 8, 50);
    let spans = [4usize, 8, 16, 32];
    let mut counts = Vec::new();
    for &m in &spans {
        let p = AttentionParams::random(8, 2, m, true, 0.3, 51).map_err(e)?;
        counts.push(circular_axial_attention_with_stats(&x, &p).map_err(e)?.1.multiplies as f64);
    }
    let xs: Vec<f64> = spans.iter().map(|&m| m as f64).collect();
    let r2 = r_squared(&xs, &counts);
    ensure(r2 >= 0.999, || format!("multiply count R^2 {r2:.6} over {counts:?}"))?;

    let mut global = 0.0f64;
    for h in [7usize, 8] {
        let x = random_features(h, 1, 4, 60 + h as u64);
        let mut p = AttentionParams::random(4, 2, h, false, 0.6, 61).map_err(e)?;
        for t in [&mut p.r_q, &mut p.r_k, &mut p.r_v] {
            t.fill(0.0);
        }
        let a = circular_axial_attention(&x, &p).map_err(e)?;
        let b = global_self_attention(&x, &p).map_err(e)?;
        global = global.max(max_diff(&a, &b));
    }
    ensure(global <= 1e-12, || format!("full-span vs global attention gap {global:.3e}"))?;
    let t = start.elapsed();
    within(t, 30.0, "attention checks")?;
    Ok(format!(
        "brute {brute:.1e}, grad {worst_grad:.1e}, R^2 {r2:.6}, global {global:.1e}, {:.2} s",
        t.as_secs_f64()
    ))
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (my + slope * (a - mx))).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn shift_pair(shift: usize) -> RectifiedPair {
    let g = PanoramaGeometry::cylindrical(256, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let wide: Vec<f32> = (0..g.height * (g.width + shift)).map(|_| rng.gen()).collect();
    let crop = |off: usize| {
        Panorama::from_fn(g, 1, |i, j, _| wide[i * (g.width + shift) + j + off])
    };
    RectifiedPair::new(crop(0), crop(shift), 1.0, Pose::identity()).expect("pair")
}

fn matcher() -> Outcome {
    let e = |e: omnistereo_core::Error| e.to_string();
    let pair = shift_pair(7);
    let g = *pair.geometry();
    let params = MatchParams { max_disparity: Some(24), ..MatchParams::default() };
    let (disp, _) = match_pair(&pair, &params).map_err(e)?;
    let margin = params.support_radius() + 7;
    let (mut sum, mut n, mut total) = (0.0, 0usize, 0usize);
    for i in 0..g.height {
        for j in margin..g.width - margin {
            total += 1;
            if let Some(d) = disp.get(i, j) {
                sum += (d as f64 - 7.0).abs();
                n += 1;
            }
        }
    }
    let shift_mae = sum / n.max(1) as f64;
    ensure(n * 10 >= total * 9, || format!("only {n} of {total} interior pixels matched"))?;
    ensure(shift_mae < 0.25, || format!("7-px shift MAE {shift_mae:.4}"))?;

    // Raw census codes of local extrema are all zeros or all ones and tie
    // with any other extremum, so the raw argmin is checked on SAD and the
    // census argmin after aggregation.
    let argmin_is_7 = |cv: &omnistereo_core::stereo::CostVolume| {
        (0..g.height).all(|i| {
            (margin..g.width - margin).all(|j| {
                let c = cv.costs_at(i, j);
                c.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|m| m.0) == Some(7)
            })
        })
    };
    let sad = build_cost_volume(&pair, 24, CostKind::Sad(5)).map_err(e)?;
    ensure(argmin_is_7(&sad), || "SAD argmin is not 7 everywhere inside".into())?;
    let cv = build_cost_volume(&pair, 24, CostKind::Census(7)).map_err(e)?;
    let agg = aggregate_costs(&cv, 5).map_err(e)?;
    ensure(argmin_is_7(&agg), || "aggregated census argmin is not 7 everywhere inside".into())?;
    let pv = softmax_probabilities(&agg, 1.0).map_err(e)?;
    let worst_sum = pv
        .probs
        .chunks_exact(24)
        .map(|row| (row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst_sum <= 1e-6, || format!("probability row sum off by {worst_sum:.3e}"))?;

    let plane_mae = plane_scene()?;
    confidence_examples()?;
    Ok(format!(
        "shift MAE {shift_mae:.4} px ({n}/{total} px), plane MAE {plane_mae:.4} px, row sums {worst_sum:.1e}"
    ))
}

// A textured wall rendered straight into a cylindrical pair.
fn plane_scene() -> Result<f64, String> {
    let g = PanoramaGeometry::cylindrical(256, 512);
    let baseline = 0.4;
    let scene = Scene {
        shapes: vec![Shape::Plane { normal: Vec3::z(), offset: 2.0 }],
        seed: 9,
        frequency: 6.0,
    };
    let left = Pose::identity();
    let right = Pose::from_translation(Vec3::new(-baseline, 0.0, 0.0));
    let pair = RectifiedPair::new(scene.render(&left, &g, 3), scene.render(&right, &g, 3), baseline, left)
        .map_err(|e| e.to_string())?;
    let (disp, _) = match_pair(&pair, &MatchParams::smoothed()).map_err(|e| e.to_string())?;
    let (mut sum, mut n, mut seen) = (0.0, 0usize, 0usize);
    for i in 0..g.height {
        for j in 0..g.width {
            let Some(p) = scene.hit_point(&left, &g, i, j) else { continue };
            let truth = baseline * g.radius() / p.y.hypot(p.z);
            // Hypotheses the matcher can represent, with its window inside.
            if truth > (default_max_disparity(&g) - 2) as f64 || j < 8 || j + 8 > g.width {
                continue;
            }
            seen += 1;
            if let Some(d) = disp.get(i, j) {
                sum += (d as f64 - truth).abs();
                n += 1;
            }
        }
    }
    let mae = sum / n.max(1) as f64;
    ensure(n * 2 >= seen, || format!("plane: only {n} of {seen} visible pixels matched"))?;
    ensure(mae < 0.5, || format!("plane MAE {mae:.4} px"))?;
    Ok(mae)
}

fn confidence_examples() -> Result<(), String> {
    let one = |p: Vec<f32>| {
        ProbabilityVolume::new(PanoramaGeometry::cylindrical(1, 1), p.len(), p).expect("volume")
    };
    let mut hot = vec![0.0; 8];
    hot[5] = 1.0;
    let cases = [
        (one(hot), 5.0f32, 1.0f32),
        (one(vec![0.25; 4]), 1.5, 0.75),
        (one(vec![0.0, 0.0, 0.0, 0.0, 0.1, 0.8, 0.1]), 5.0, 1.0),
    ];
    for (pv, want_d, want_c) in cases {
        let d = regress_disparity(&pv);
        let c = confidence_map(&pv, &d).map_err(|e| e.to_string())?;
        ensure(d.values[0] == want_d && c.values[0] == want_c, || {
            format!("expected ({want_d}, {want_c}), got ({}, {})", d.values[0], c.values[0])
        })?;
    }
    Ok(())
}

fn pipeline() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let scene = Scene::demo();
        let poses = square_rig();
        let erp = PanoramaGeometry::erp(512, 256);
        let panos: Vec<Panorama> = poses.iter().map(|p| scene.render(p, &erp, 3)).collect();
        let params = PipelineParams::for_input(&erp).map_err(|e| e.to_string())?;
        let gt = scene.depth_map(&poses[0], &params.output);
        let start = Instant::now();
        let out = run_pipeline(&poses, &panos, 0, &params, Some(&gt)).map_err(|e| e.to_string())?;
        let t = start.elapsed();
        let report = out.report.ok_or("no report")?;
        ensure(report.abs_rel < 0.02, || format!("AbsRel {:.4}", report.abs_rel))?;
        let holes = unexplained_holes(&scene, &poses, &params, &gt, &out.fused);
        ensure(holes == 0, || format!("{holes} holes where every pair should see the surface"))?;
        within(t, 120.0, "single-threaded pipeline")?;
        Ok(format!(
            "AbsRel {:.4} over {} px, 0 unexplained holes, {:.1} s on one thread",
            report.abs_rel,
            report.count,
            t.as_secs_f64()
        ))
    })
}

/// Holes the visibility oracle cannot explain. A reference pixel is
/// covered when some pair sees its surface point from both cameras with
/// the point inside the left image's usable window: clear of the
/// elevation crop and the side borders by the matcher's support radius,
/// and within the disparity range. A hole counts only when its whole
/// support neighbourhood is covered and lies on one smooth surface (no
/// depth jump above 5%), since matching windows straddling an occlusion
/// edge fail by construction.
fn unexplained_holes(
    scene: &Scene,
    poses: &[Pose],
    params: &PipelineParams,
    gt: &ScalarMap,
    fused: &ScalarMap,
) -> usize {
    let og = params.output;
    let cg = params.rectified;
    let radius = params.matching.support_radius() as i64;
    let margin = (radius + 1) as f64;
    let max_d = params.matching.max_disparity.unwrap_or_else(|| default_max_disparity(&cg)) as f64;
    let frames: Vec<_> = enumerate_pairs(poses.len())
        .expect("pairs")
        .into_iter()
        .map(|(a, b)| (a, b, rectified_frame(&poses[a], &poses[b]).expect("frame").0))
        .collect();
    let half = cg.width as f64 / 2.0;
    let covered: Vec<bool> = (0..og.len())
        .map(|k| {
            let Some(p) = scene.hit_point(&poses[0], &og, k / og.width, k % og.width) else {
                return false;
            };
            frames.iter().any(|&(a, b, rot)| {
                let (ca, cb) = (poses[a].center(), poses[b].center());
                if !scene.visible(&ca, &p) || !scene.visible(&cb, &p) {
                    return false;
                }
                let (ql, qr) = (rot.transpose() * (p - ca), rot.transpose() * (p - cb));
                let rho = ql.y.hypot(ql.z);
                if (ql.x / rho).atan().abs() > params.max_elevation - margin / cg.radius() {
                    return false;
                }
                let ul = half - ql.x / rho * cg.radius();
                let ur = half - qr.x / rho * cg.radius();
                ul >= margin && ul <= cg.width as f64 - margin && ur >= margin && ul - ur <= max_d - 2.0
            })
        })
        .collect();
    let (w, h) = (og.width as i64, og.height as i64);
    (0..og.len())
        .filter(|&k| !fused.valid[k] && covered[k])
        .filter(|&k| {
            let (i, j) = ((k / og.width) as i64, (k % og.width) as i64);
            (-radius..=radius).all(|di| {
                (-radius..=radius).all(|dj| {
                    let jj = j + dj;
                    if jj < 0 || jj >= w {
                        return true;
                    }
                    let kk = ((i + di).rem_euclid(h) * w + jj) as usize;
                    let ratio = gt.values[kk] / gt.values[k];
                    covered[kk] && (0.95..=1.05).contains(&ratio)
                })
            })
        })
        .count()
}

fn map1(v: &[f32]) -> ScalarMap {
    ScalarMap::dense(PanoramaGeometry::cassini(v.len(), 1), v.to_vec()).expect("map")
}

fn metrics() -> Outcome {
    let e = |e: omnistereo_core::Error| e.to_string();
    let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a == 0.0 && b == 0.0);
    let mut bad = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if !same(got, want) {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };

    let pairs = enumerate_pairs(4).map_err(e)?;
    expect("pairs(4)", pairs.len() as f64, 6.0);
    expect("pairs(3)", enumerate_pairs(3).map_err(e)?.len() as f64, 3.0);
    expect("pairs(2)", enumerate_pairs(2).map_err(e)?.len() as f64, 1.0);
    ensure(pairs == vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], || format!("pair order {pairs:?}"))?;

    let d1 = map1(&[1.5, 2.5, 7.0]);
    let c1 = map1(&[0.3, 1.0, 0.0]);
    let single = fuse_depths(&[(d1.clone(), c1)]).map_err(e)?;
    ensure(single.values == d1.values && single.valid == d1.valid, || "single view changed".into())?;
    let f = fuse_depths(&[(map1(&[1.0]), map1(&[1.0])), (map1(&[3.0]), map1(&[1.0]))]).map_err(e)?;
    expect("fuse plain", f.values[0] as f64, 2.0);
    let f = fuse_depths(&[(map1(&[1.0]), map1(&[0.9])), (map1(&[3.0]), map1(&[0.1]))]).map_err(e)?;
    expect("fuse weighted", f.values[0] as f64, 1.2f32 as f64);

    let gt = map1(&[10.0; 8]);
    let r = disparity_metrics(&gt, &gt, None).map_err(e)?;
    for (k, v) in [r.mae, r.rmse, r.px1, r.px3, r.px5, r.d1].iter().enumerate() {
        expect(&format!("disp identical #{k}"), *v, 0.0);
    }
    let r = disparity_metrics(&map1(&[11.0; 8]), &gt, None).map_err(e)?;
    expect("disp +1 mae", r.mae, 1.0);
    expect("disp +1 rmse", r.rmse, 1.0);
    expect("disp +1 px1", r.px1, 0.0);
    expect("disp +1 d1", r.d1, 0.0);
    let r = disparity_metrics(&map1(&[5.0, 10.0]), &map1(&[1.0, 10.0]), None).map_err(e)?;
    expect("disp mixed mae", r.mae, 2.0);
    expect("disp mixed px3", r.px3, 50.0);
    expect("disp mixed d1", r.d1, 50.0);

    let r = depth_metrics(&gt, &gt, None).map_err(e)?;
    expect("depth identical abs_rel", r.abs_rel, 0.0);
    expect("depth identical silog", r.silog, 0.0);
    expect("depth identical delta1", r.delta1, 100.0);
    let r = depth_metrics(&map1(&[11.0; 8]), &gt, None).map_err(e)?;
    expect("depth +10% abs_rel", r.abs_rel, 0.1);
    expect("depth +10% delta1", r.delta1, 100.0);
    expect("depth +10% silog", r.silog, 0.0);
    let r = depth_metrics(&map1(&[20.0; 8]), &gt, None).map_err(e)?;
    expect("depth x2 delta1", r.delta1, 0.0);
    expect("depth x2 delta2", r.delta2, 0.0);
    expect("depth x2 delta3", r.delta3, 0.0);
    ensure(bad.is_empty(), || bad.join("; "))?;

    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for t in 0..1000 {
        let n = rng.gen_range(1..64);
        let scale: f32 = rng.gen_range(0.1..20.0);
        let gt: Vec<f32> = (0..n).map(|_| rng.gen_range(0.01..1.0) * scale).collect();
        let pred: Vec<f32> = gt.iter().map(|g| g * rng.gen_range(0.2..3.0) + rng.gen_range(0.0..0.5)).collect();
        let (p, g) = (map1(&pred), map1(&gt));
        let d = disparity_metrics(&p, &g, None).map_err(e)?;
        let z = depth_metrics(&p, &g, None).map_err(e)?;
        ensure(d.mae <= d.rmse && z.mae <= z.rmse, || format!("case {t}: MAE above RMSE"))?;
        ensure(d.px1 >= d.px3 && d.px3 >= d.px5, || format!("case {t}: outlier rates not ordered"))?;
        ensure(z.delta1 <= z.delta2 && z.delta2 <= z.delta3, || format!("case {t}: deltas not ordered"))?;
    }
    Ok("fusion, disparity and depth examples exact; invariants hold on 1e3 random pairs".into())
}

fn run_cli(args: &[String], threads: usize, cwd: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_omnistereo"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .current_dir(cwd)
        .env_remove("OMNISTEREO_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim())
    })?;
    Ok(out.stdout)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let commands: Vec<Vec<String>> = vec![
        s(&["synth", "--out-dir", "synth", "--width", "64", "--samples", "2"]),
        s(&["convert", "--in", "synth/cam0.pfm", "--to", "cassini", "--rot", "0.1,-0.2,0.3", "--out", "conv.pfm"]),
        s(&["convert", "--in", "synth/cam1.pfm", "--to", "cylindrical", "--interp", "nearest", "--out", "conv.png"]),
        s(&["rectify", "--rig", "synth/rig.json", "--pair", "cam0,cam1", "--out-dir", "rect"]),
        s(&["gt-convert", "--gt", "angular.pfm", "--baseline", "1.0", "--out", "gt_cyl.pfm"]),
        s(&["match", "--left", "rect/left.pfm", "--right", "rect/right.pfm", "--baseline", "1.0", "--smooth", "--out-dir", "m"]),
        s(&["attn-params", "--out", "params.bin", "--channels", "4", "--heads", "2", "--span", "3", "--seed", "5", "--scale", "0.3"]),
        s(&["match", "--left", "rect/left.pfm", "--right", "rect/right.pfm", "--baseline", "1.0", "--attn", "on", "--attn-params", "params.bin", "--out-dir", "ma"]),
        s(&["to-depth", "--disp", "m/disp.pfm", "--baseline", "1.0", "--projection", "cylindrical", "--max-elevation", "45", "--conf", "m/conf.pfm", "--conf-out", "conf_cas.pfm", "--out", "depth.pfm"]),
        s(&["to-depth", "--disp", "angular.pfm", "--baseline", "1.0", "--projection", "spherical", "--out", "depth_sph.pfm"]),
        s(&["reproject-depth", "--depth", "depth.pfm", "--conf", "conf_cas.pfm", "--src-pose", "rect/pair.json", "--ref-pose", "synth/rig.json#cam0", "--out", "aligned.pfm", "--conf-out", "aligned_conf.pfm"]),
        s(&["fuse", "--inputs", "aligned.pfm,aligned_conf.pfm,aligned.pfm,aligned_conf.pfm", "--out", "fused.pfm"]),
        s(&["eval", "--pred", "fused.pfm", "--gt", "synth/gt_depth.pfm", "--json"]),
        s(&["attn", "--tensor", "features.pfm", "--params", "params.bin", "--out", "attn.pfm", "--oracle"]),
        s(&["viz", "--in", "fused.pfm", "--out", "fused.png"]),
        s(&["pipeline", "--rig", "synth/rig.json", "--out", "pipe.pfm", "--erp-out", "pipe_erp.pfm", "--gt", "synth/gt_depth.pfm", "--json"]),
    ];
    let counts = [1usize, 4, 16];
    let mut stdouts = Vec::new();
    for &t in &counts {
        let dir = root.path().join(format!("t{t}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let angular = ScalarMap::from_fn(PanoramaGeometry::cassini(32, 64), |i, j| {
            Some(0.05 + 0.001 * ((i * 7 + j * 3) % 11) as f32)
        });
        write_pfm(dir.join("angular.pfm"), &pfm_from_map(&angular)).map_err(|e| e.to_string())?;
        write_pfm(dir.join("features.pfm"), &pfm_from_features(&random_features(12, 3, 4, 90)))
            .map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        for c in &commands {
            out.push(run_cli(c, t, &dir)?);
        }
        stdouts.push(out);
    }
    let base = root.path().join("t1");
    let files = files_under(&base);
    for (n, &t) in counts.iter().enumerate().skip(1) {
        let dir = root.path().join(format!("t{t}"));
        ensure(files_under(&dir) == files, || format!("{t} threads wrote a different file set"))?;
        for f in &files {
            let same = std::fs::read(base.join(f)).ok() == std::fs::read(dir.join(f)).ok();
            ensure(same, || format!("{} differs between 1 and {t} threads", f.display()))?;
        }
        for (k, c) in commands.iter().enumerate() {
            ensure(stdouts[n][k] == stdouts[0][k], || format!("stdout of {} differs at {t} threads", c[0]))?;
        }
    }
    Ok(format!("{} invocations, {} files identical across 1, 4 and 16 threads", commands.len(), files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometric end-to-end oracle", geometric_oracle),
        ("projection round trips", round_trips),
        ("resampling", resampling),
        ("circular attention", attention),
        ("stereo matcher", matcher),
        ("pipeline on the analytic scene", pipeline),
        ("metrics", metrics),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
