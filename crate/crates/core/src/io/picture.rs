//! 8- and 16-bit PNG. Float samples are quantized linearly between a
//! minimum and maximum that travel along in `tEXt` chunks.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};

const MIN_KEY: &str = "omnistereo:min";
const MAX_KEY: &str = "omnistereo:max";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

impl PngDepth {
    fn max_code(self) -> f64 {
        match self {
            PngDepth::Eight => 255.0,
            PngDepth::Sixteen => 65535.0,
        }
    }
}

/// Decoded image with alpha dropped. `data` is scaled back into `range`
/// when the file records one, otherwise into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct PngImage {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub depth: PngDepth,
    pub range: Option<(f64, f64)>,
    pub data: Vec<f32>,
}

fn png_err(e: impl std::fmt::Display) -> Error {
    // The decoder does not expose a position.
    Error::format(0, format!("png: {e}"))
}

/// Quantizes `data` (1 or 3 interleaved channels) to `depth`, mapping
/// `range.0` to code 0 and `range.1` to the largest code. Non-finite
/// samples become 0.
pub fn encode_png(
    data: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    depth: PngDepth,
    range: (f64, f64),
) -> Result<Vec<u8>> {
    let color = match channels {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        _ => return Err(Error::invalid(format!("png output takes 1 or 3 channels, got {channels}"))),
    };
    if data.len() != width * height * channels || width == 0 || height == 0 {
        return Err(Error::shape("png sample count does not match its dimensions"));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("png range must satisfy min < max, got [{lo}, {hi}]")));
    }
    let top = depth.max_code();
    let code = |v: f32| -> u16 {
        if !v.is_finite() {
            return 0;
        }
        ((v as f64 - lo) / (hi - lo) * top).round().clamp(0.0, top) as u16
    };
    let bytes: Vec<u8> = match depth {
        PngDepth::Eight => data.iter().map(|&v| code(v) as u8).collect(),
        PngDepth::Sixteen => data.iter().flat_map(|&v| code(v).to_be_bytes()).collect(),
    };
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(match depth {
            PngDepth::Eight => BitDepth::Eight,
            PngDepth::Sixteen => BitDepth::Sixteen,
        });
        enc.add_text_chunk(MIN_KEY.into(), format!("{lo:?}")).map_err(png_err)?;
        enc.add_text_chunk(MAX_KEY.into(), format!("{hi:?}")).map_err(png_err)?;
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&bytes).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// 8-bit RGB without a value range, for previews.
pub fn encode_rgb8(rgb: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 || width == 0 || height == 0 {
        return Err(Error::shape("rgb byte count does not match its dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(rgb).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<PngImage> {
    let mut dec = Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let text = &reader.info().uncompressed_latin1_text;
    let find = |key: &str| -> Option<f64> {
        text.iter().find(|t| t.keyword == key).and_then(|t| t.text.trim().parse().ok())
    };
    let range = match (find(MIN_KEY), find(MAX_KEY)) {
        (Some(lo), Some(hi)) if hi > lo => Some((lo, hi)),
        _ => None,
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(0, "png: image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let (width, height) = (info.width as usize, info.height as usize);
    let (stored, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::format(0, "png: palette was not expanded")),
    };
    let (depth, codes): (PngDepth, Vec<u16>) = match info.bit_depth {
        BitDepth::Sixteen => (
            PngDepth::Sixteen,
            buf.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect(),
        ),
        BitDepth::Eight => (PngDepth::Eight, buf.iter().map(|&b| b as u16).collect()),
        other => return Err(Error::format(0, format!("png: unsupported bit depth {other:?}"))),
    };
    let (lo, hi) = range.unwrap_or((0.0, 1.0));
    let top = depth.max_code();
    let row = width * stored;
    let mut data = Vec::with_capacity(width * height * keep);
    for r in codes.chunks_exact(row).take(height) {
        for px in r.chunks_exact(stored) {
            for &c in &px[..keep] {
                data.push((lo + c as f64 / top * (hi - lo)) as f32);
            }
        }
    }
    Ok(PngImage {
        width,
        height,
        channels: keep,
        depth,
        range,
        data,
    })
}

pub fn read_png(path: impl AsRef<Path>) -> Result<PngImage> {
    decode_png(&std::fs::read(path)?)
}
