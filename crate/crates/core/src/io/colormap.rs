//! Turbo colormap for previews.

use crate::raster::ScalarMap;

/// Polynomial fit of the turbo colormap at `t` in `[0, 1]`.
pub fn turbo(t: f64) -> [u8; 3] {
    let x = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let poly = |c: [f64; 6]| {
        let v = c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * (c[4] + x * c[5]))));
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    [
        poly([0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943]),
        poly([0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604]),
        poly([0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973]),
    ]
}

/// RGB bytes for `map` with `range` spread over the colormap. Invalid
/// pixels are black. Without a range the valid minimum and maximum are used.
pub fn colorize(map: &ScalarMap, range: Option<(f64, f64)>) -> Vec<u8> {
    let (lo, hi) = range.unwrap_or_else(|| valid_range(map).unwrap_or((0.0, 1.0)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    map.values
        .iter()
        .zip(&map.valid)
        .flat_map(|(&v, &ok)| {
            if ok && v.is_finite() {
                turbo((v as f64 - lo) / span)
            } else {
                [0, 0, 0]
            }
        })
        .collect()
}

/// Smallest and largest finite valid value.
pub fn valid_range(map: &ScalarMap) -> Option<(f64, f64)> {
    map.values
        .iter()
        .zip(&map.valid)
        .filter(|(v, &ok)| ok && v.is_finite())
        .fold(None, |acc, (&v, _)| {
            let v = v as f64;
            Some(acc.map_or((v, v), |(lo, hi): (f64, f64)| (lo.min(v), hi.max(v))))
        })
}
