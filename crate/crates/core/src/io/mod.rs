//! File formats: float maps, PNG imagery, rig configuration, attention
//! parameters and colormapped previews.

mod colormap;
mod params;
mod pfm;
mod picture;
mod rig;

pub use colormap::{colorize, turbo, valid_range};
pub use params::{
    decode_attention_params, encode_attention_params, read_attention_params, write_attention_params,
    PARAMS_VERSION,
};
pub use pfm::{
    decode_pfm, encode_pfm, features_from_pfm, map_from_pfm, panorama_from_pfm, pfm_from_features, pfm_from_map,
    pfm_from_panorama, read_pfm, write_pfm, Pfm,
};
pub use picture::{decode_png, encode_png, encode_rgb8, read_png, PngDepth, PngImage};
pub use rig::{CameraConfig, RigConfig, RotationSpec, RIG_SCHEMA_VERSION};
