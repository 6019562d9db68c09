//! Image buffers tagged with their panorama geometry.

use crate::error::{Error, Result};
use crate::geometry::PanoramaGeometry;

/// Row-major `H x W x C` float image with an optional validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub geometry: PanoramaGeometry,
    pub channels: usize,
    pub data: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

impl Panorama {
    pub fn new(geometry: PanoramaGeometry, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "panoramas have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != geometry.len() * channels {
            return Err(Error::shape(format!(
                "{}x{}x{} panorama needs {} samples, got {}",
                geometry.height,
                geometry.width,
                channels,
                geometry.len() * channels,
                data.len()
            )));
        }
        Ok(Self {
            geometry,
            channels,
            data,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.geometry.len() {
            return Err(Error::shape(format!(
                "mask has {} entries for {} pixels",
                mask.len(),
                self.geometry.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn from_fn(
        geometry: PanoramaGeometry,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(geometry.len() * channels);
        for i in 0..geometry.height {
            for j in 0..geometry.width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self {
            geometry,
            channels,
            data,
            mask: None,
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[idx])
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.geometry.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Single-channel luminance (Rec. 601 weights for RGB input).
    pub fn luminance(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn to_map(&self) -> Result<ScalarMap> {
        if self.channels != 1 {
            return Err(Error::shape("only single-channel panoramas convert to maps"));
        }
        let valid = match &self.mask {
            Some(m) => m.clone(),
            None => vec![true; self.geometry.len()],
        };
        Ok(ScalarMap {
            geometry: self.geometry,
            values: self.data.clone(),
            valid,
        })
    }
}

/// Single-channel float raster with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub geometry: PanoramaGeometry,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

/// Disparity in pixels (cylindrical) or radians (spherical).
pub type DisparityMap = ScalarMap;
/// Euclidean distance from the camera center, in meters.
pub type DepthMap = ScalarMap;
/// Per-pixel reliability in `[0, 1]`.
pub type ConfidenceMap = ScalarMap;

impl ScalarMap {
    pub fn new(geometry: PanoramaGeometry, values: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != geometry.len() || valid.len() != geometry.len() {
            return Err(Error::shape(format!(
                "{}x{} map needs {} values and mask entries, got {} and {}",
                geometry.height,
                geometry.width,
                geometry.len(),
                values.len(),
                valid.len()
            )));
        }
        Ok(Self {
            geometry,
            values,
            valid,
        })
    }

    /// All pixels valid.
    pub fn dense(geometry: PanoramaGeometry, values: Vec<f32>) -> Result<Self> {
        let n = values.len();
        Self::new(geometry, values, vec![true; n])
    }

    /// Pixels are valid exactly where the value is finite.
    pub fn from_finite(geometry: PanoramaGeometry, values: Vec<f32>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Self::new(geometry, values, valid)
    }

    pub fn invalid(geometry: PanoramaGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
            valid: vec![false; geometry.len()],
        }
    }

    pub fn from_fn(geometry: PanoramaGeometry, mut f: impl FnMut(usize, usize) -> Option<f32>) -> Self {
        let mut values = Vec::with_capacity(geometry.len());
        let mut valid = Vec::with_capacity(geometry.len());
        for i in 0..geometry.height {
            for j in 0..geometry.width {
                match f(i, j) {
                    Some(v) => {
                        values.push(v);
                        valid.push(true);
                    }
                    None => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self {
            geometry,
            values,
            valid,
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let idx = row * self.geometry.width + col;
        self.valid[idx].then(|| self.values[idx])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Values with invalid pixels replaced by `+inf`, the usual marker for
    /// unknown disparity in float map files.
    pub fn to_file_values(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok || !v.is_finite() { v } else { f32::INFINITY })
            .collect()
    }

    pub fn to_panorama(&self) -> Panorama {
        Panorama {
            geometry: self.geometry,
            channels: 1,
            data: self.values.clone(),
            mask: Some(self.valid.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panorama_shape_checked() {
        let g = PanoramaGeometry::cassini(4, 2);
        assert!(Panorama::new(g, 1, vec![0.0; 8]).is_ok());
        assert!(Panorama::new(g, 3, vec![0.0; 8]).is_err());
        assert!(Panorama::new(g, 2, vec![0.0; 16]).is_err());
        let p = Panorama::new(g, 1, vec![0.0; 8]).unwrap();
        assert!(p.with_mask(vec![true; 3]).is_err());
    }

    #[test]
    fn invalid_pixels_become_infinite_in_files() {
        let g = PanoramaGeometry::cassini(2, 1);
        let m = ScalarMap::new(g, vec![1.0, 2.0], vec![true, false]).unwrap();
        assert_eq!(m.to_file_values(), vec![1.0, f32::INFINITY]);
        let back = ScalarMap::from_finite(g, m.to_file_values()).unwrap();
        assert_eq!(back.valid, vec![true, false]);
    }
}
