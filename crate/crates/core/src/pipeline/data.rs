//! Loading manifest rows into model inputs.

use std::path::Path;

use log::warn;

use crate::backbone::{load_feature_file, BackboneKind, FeatureMap};
use crate::error::{IqtError, Result};
use crate::io::{decode_image, parse_manifest, ImageBuffer, ManifestRow};
use crate::model::ModelConfig;

/// One reference/distorted pair, either as pixels or as precomputed
/// backbone features when the model reads feature files.
#[derive(Clone, Debug, PartialEq)]
pub enum PairData {
    Images {
        reference: ImageBuffer,
        distorted: ImageBuffer,
    },
    Features {
        reference: FeatureMap,
        distorted: FeatureMap,
    },
}

/// A loaded pair with its subjective score.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pair: PairData,
    pub mos: f64,
}

/// Loads a pair in the form `config` consumes, checking sizes.
pub fn load_pair(config: &ModelConfig, ref_path: &Path, dist_path: &Path) -> Result<PairData> {
    match config.backbone.kind {
        BackboneKind::ToyCnn => {
            let reference = decode_image(ref_path)?;
            let distorted = decode_image(dist_path)?;
            check_images(config, &reference, &distorted)?;
            Ok(PairData::Images { reference, distorted })
        }
        BackboneKind::FeatureFile => {
            let reference = load_feature_file(ref_path)?;
            let distorted = load_feature_file(dist_path)?;
            let (gh, gw) = config.grid()?;
            let expected = [gh, gw, config.backbone.channels()];
            for f in [&reference, &distorted] {
                let got = [f.height(), f.width(), f.channels()];
                if got != expected {
                    return Err(IqtError::shape("feature file", &got, &expected));
                }
            }
            Ok(PairData::Features { reference, distorted })
        }
    }
}

pub(crate) fn check_images(config: &ModelConfig, reference: &ImageBuffer, distorted: &ImageBuffer) -> Result<()> {
    let dims = |i: &ImageBuffer| [i.height(), i.width()];
    if dims(reference) != dims(distorted) {
        return Err(IqtError::shape("image pair", &dims(reference), &dims(distorted)));
    }
    let p = config.patch_size;
    if reference.height() < p || reference.width() < p {
        return Err(IqtError::Size {
            height: reference.height(),
            width: reference.width(),
            min_height: p,
            min_width: p,
        });
    }
    Ok(())
}

/// Loads every usable row; failures are logged and skipped. Errors only
/// when nothing could be loaded.
pub fn load_samples(config: &ModelConfig, rows: &[ManifestRow]) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        match load_pair(config, &row.ref_path, &row.dist_path) {
            Ok(pair) => out.push(Sample { pair, mos: row.mos }),
            Err(e) => warn!("skipping manifest row {}: {e}", i + 1),
        }
    }
    if out.is_empty() {
        return Err(IqtError::Contract(format!(
            "none of the {} manifest rows could be loaded",
            rows.len()
        )));
    }
    Ok(out)
}

pub fn load_manifest_samples(config: &ModelConfig, manifest: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let rows = parse_manifest(manifest)?;
    load_samples(config, &rows)
}

/// Min-max range of the scores; a single distinct value gives a zero-width range.
pub fn mos_range(samples: &[Sample]) -> (f64, f64) {
    samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.mos), hi.max(s.mos))
    })
}

/// Maps `mos` into `[0, 1]`; a degenerate range maps everything to 0.5.
pub fn normalize_mos(mos: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    if hi > lo {
        (mos - lo) / (hi - lo)
    } else {
        0.5
    }
}
