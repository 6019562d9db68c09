//! Portable float maps. Rows are stored bottom to top; a negative scale
//! marks little-endian samples.

use std::path::Path;

use crate::attention::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::PanoramaGeometry;
use crate::raster::{Panorama, ScalarMap};

/// Decoded float image with rows top to bottom and channels interleaved.
#[derive(Debug, Clone)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// 1 (`Pf`) or 3 (`PF`).
    pub channels: usize,
    pub little_endian: bool,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("float maps have 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{width}x{height}x{channels} float map cannot hold {} samples",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            little_endian: true,
            data,
        })
    }

    /// Sample-wise bit equality, so NaN payloads compare too.
    pub fn bits_eq(&self, other: &Pfm) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &str)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("missing {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start as u64, format!("{what} is not ASCII")))?;
        Ok((start, s))
    }

    fn dimension(&mut self, what: &str) -> Result<usize> {
        let (at, s) = self.token(what)?;
        match s.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(at as u64, format!("{what} must be a positive integer, got '{s}'"))),
        }
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"Pf") => 1,
        Some(b"PF") => 3,
        _ => return Err(Error::format(0, "expected 'Pf' or 'PF' magic")),
    };
    cur.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(2, "expected whitespace after magic"));
    }
    let width = cur.dimension("width")?;
    let height = cur.dimension("height")?;
    let (at, s) = cur.token("scale")?;
    let scale: f64 = s
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite() && *v != 0.0)
        .ok_or_else(|| Error::format(at as u64, format!("scale must be a nonzero number, got '{s}'")))?;
    // Exactly one whitespace byte separates the header from the samples.
    if !bytes.get(cur.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(cur.pos as u64, "header ends without a separator"));
    }
    let start = cur.pos + 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::format(at as u64, "dimensions overflow"))?;
    let need = n * 4;
    let body = &bytes[start..];
    if body.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: {need} sample bytes expected, {} present", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format((start + need) as u64, "unexpected bytes after the samples"));
    }
    let little_endian = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0.0f32; n];
    for (r, chunk) in body.chunks_exact(row * 4).enumerate() {
        let dst = &mut data[(height - 1 - r) * row..(height - r) * row];
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let raw = [b[0], b[1], b[2], b[3]];
            *d = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    Ok(Pfm {
        width,
        height,
        channels,
        little_endian,
        data,
    })
}

pub fn encode_pfm(p: &Pfm) -> Vec<u8> {
    let magic = if p.channels == 3 { "PF" } else { "Pf" };
    let scale = if p.little_endian { "-1.0" } else { "1.0" };
    let mut out = format!("{magic}\n{} {}\n{scale}\n", p.width, p.height).into_bytes();
    out.reserve(p.data.len() * 4);
    let row = p.width * p.channels;
    for r in (0..p.height).rev() {
        for v in &p.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&if p.little_endian { v.to_le_bytes() } else { v.to_be_bytes() });
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn write_pfm(path: impl AsRef<Path>, p: &Pfm) -> Result<()> {
    std::fs::write(path, encode_pfm(p))?;
    Ok(())
}

/// Single-channel map with invalid pixels written as `+inf`.
pub fn pfm_from_map(map: &ScalarMap) -> Pfm {
    Pfm {
        width: map.width(),
        height: map.height(),
        channels: 1,
        little_endian: true,
        data: map.to_file_values(),
    }
}

/// Non-finite samples become invalid pixels.
pub fn map_from_pfm(p: &Pfm, geometry: PanoramaGeometry) -> Result<ScalarMap> {
    if p.channels != 1 {
        return Err(Error::shape("expected a single-channel float map"));
    }
    check_dims(p, &geometry)?;
    ScalarMap::from_finite(geometry, p.data.clone())
}

pub fn pfm_from_panorama(img: &Panorama) -> Result<Pfm> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::shape(format!("cannot store {} channels in a float map", img.channels)));
    }
    let c = img.channels;
    let mut data = img.data.clone();
    if let Some(mask) = &img.mask {
        for (k, ok) in mask.iter().enumerate() {
            if !ok {
                data[k * c..(k + 1) * c].fill(f32::INFINITY);
            }
        }
    }
    Pfm::new(img.width(), img.height(), c, data)
}

/// Pixels with any non-finite channel are masked.
pub fn panorama_from_pfm(p: &Pfm, geometry: PanoramaGeometry) -> Result<Panorama> {
    check_dims(p, &geometry)?;
    let mask: Vec<bool> = p
        .data
        .chunks_exact(p.channels)
        .map(|px| px.iter().all(|v| v.is_finite()))
        .collect();
    let img = Panorama::new(geometry, p.channels, p.data.clone())?;
    if mask.iter().all(|&m| m) {
        Ok(img)
    } else {
        img.with_mask(mask)
    }
}

/// Feature maps are stored as one row per image row with the `d` channels
/// of each pixel side by side, so the file is `w * d` samples wide.
pub fn pfm_from_features(x: &FeatureMap) -> Pfm {
    Pfm {
        width: x.w * x.d,
        height: x.h,
        channels: 1,
        little_endian: true,
        data: x.data.iter().map(|&v| v as f32).collect(),
    }
}

pub fn features_from_pfm(p: &Pfm, channels: usize) -> Result<FeatureMap> {
    if p.channels != 1 || channels == 0 || p.width % channels != 0 {
        return Err(Error::shape(format!(
            "a {}-wide float map does not split into {channels}-channel pixels",
            p.width
        )));
    }
    FeatureMap::new(p.height, p.width / channels, channels, p.data.iter().map(|&v| v as f64).collect())
}

fn check_dims(p: &Pfm, g: &PanoramaGeometry) -> Result<()> {
    if (p.width, p.height) != (g.width, g.height) {
        return Err(Error::shape(format!(
            "float map is {}x{}, expected {}x{}",
            p.width, p.height, g.width, g.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Pfm {
        let data = vec![0.0, -1.5, f32::NAN, f32::INFINITY, 1e-38, 3.25];
        Pfm::new(3, 2, 1, data).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = sample();
        assert!(decode_pfm(&encode_pfm(&p)).unwrap().bits_eq(&p));
    }

    #[test]
    fn both_byte_orders_decode_to_the_same_values() {
        let mut big = sample();
        big.little_endian = false;
        let bytes = encode_pfm(&big);
        assert!(bytes.starts_with(b"Pf\n3 2\n1.0\n"));
        let back = decode_pfm(&bytes).unwrap();
        assert!(!back.little_endian);
        assert!(back.bits_eq(&sample()));
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let p = Pfm::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&p);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let err = |b: &[u8]| match decode_pfm(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected a format error, got {other:?}"),
        };
        assert_eq!(err(b"P6\n1 1\n-1\n"), 0);
        assert_eq!(err(b"Pf\nx 1\n-1\n"), 3);
        assert_eq!(err(b"Pf\n1 1\n0\n"), 7);
        let mut truncated = encode_pfm(&sample());
        truncated.truncate(truncated.len() - 3);
        assert_eq!(err(&truncated), truncated.len() as u64);
    }

    #[test]
    fn maps_keep_validity_through_infinity() {
        let g = PanoramaGeometry::cassini(2, 1);
        let map = ScalarMap::new(g, vec![4.0, 5.0], vec![true, false]).unwrap();
        let back = map_from_pfm(&decode_pfm(&encode_pfm(&pfm_from_map(&map))).unwrap(), g).unwrap();
        assert_eq!(back.valid, vec![true, false]);
        assert_eq!(back.values[0], 4.0);
    }
}
