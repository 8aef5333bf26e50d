//! File formats and configuration: pixmaps, dataset manifests and run
//! configuration files.

pub mod config;
pub mod image;
pub mod manifest;

pub use config::{RunConfig, CONFIG_ENV};
pub use image::{decode_image, decode_pgm, decode_ppm, encode_ppm, write_ppm, ImageBuffer};
pub use manifest::{parse_manifest, write_manifest, ManifestRow};
