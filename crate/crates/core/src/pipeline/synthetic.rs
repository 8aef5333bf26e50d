//! A small generated dataset with a known monotone distortion ladder.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{IqtError, Result};
use crate::io::{write_manifest, write_ppm, ImageBuffer, ManifestRow};
use crate::pipeline::data::{PairData, Sample};

pub const LADDER_LEVELS: usize = 8;

/// Noise standard deviation at ladder level `k`.
pub fn ladder_sigma(k: usize) -> f32 {
    0.03 * k as f32
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Smooth colour ramps with a checker overlay, already on the 8-bit grid.
pub fn synthetic_reference(size: usize) -> ImageBuffer {
    let s = size as f32;
    ImageBuffer::from_fn(size, size, |y, x, c| {
        let ramp = match c {
            0 => x as f32 / s,
            1 => y as f32 / s,
            _ => 1.0 - (x + y) as f32 / (2.0 * s),
        };
        let checker = if (x / 4 + y / 4) % 2 == 0 { 0.15 } else { -0.15 };
        quantize(0.2 + 0.6 * ramp + checker)
    })
}

/// Eight pairs sharing one reference, distorted by Gaussian noise of
/// growing strength. MOS falls from 8 at level 0 to 1 at level 7.
pub fn synthetic_ladder(size: usize, seed: u64) -> Vec<Sample> {
    let reference = synthetic_reference(size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..LADDER_LEVELS)
        .map(|k| {
            let noise = Normal::new(0.0f32, ladder_sigma(k)).expect("non-negative sigma");
            let data = reference
                .data()
                .iter()
                .map(|&v| quantize(v + noise.sample(&mut rng)))
                .collect();
            let distorted = ImageBuffer::new(size, size, data).expect("same extents as reference");
            Sample {
                pair: PairData::Images {
                    reference: reference.clone(),
                    distorted,
                },
                mos: (LADDER_LEVELS - k) as f64,
            }
        })
        .collect()
}

/// Writes the ladder as PPM files plus `manifest.csv` under `dir` and
/// returns the manifest path.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, size: usize, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| IqtError::io(dir, e))?;
    let mut rows = Vec::new();
    for (k, sample) in synthetic_ladder(size, seed).iter().enumerate() {
        let PairData::Images { reference, distorted } = &sample.pair else {
            unreachable!("ladder samples are images")
        };
        let ref_name = "ref.ppm";
        let dist_name = format!("dist_{k}.ppm");
        if k == 0 {
            write_ppm(dir.join(ref_name), reference)?;
        }
        write_ppm(dir.join(&dist_name), distorted)?;
        rows.push(ManifestRow {
            ref_path: ref_name.into(),
            dist_path: dist_name.into(),
            mos: sample.mos,
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{decode_image, parse_manifest};

    #[test]
    fn ladder_is_monotone() {
        let ladder = synthetic_ladder(32, 0);
        assert_eq!(ladder.len(), 8);
        let mut prev_err = -1.0;
        for (k, s) in ladder.iter().enumerate() {
            let PairData::Images { reference, distorted } = &s.pair else { panic!() };
            let err: f32 = reference
                .data()
                .iter()
                .zip(distorted.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!(err > prev_err, "level {k}");
            prev_err = err;
            assert_eq!(s.mos, (8 - k) as f64);
        }
    }

    #[test]
    fn written_dataset_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_synthetic_dataset(dir.path(), 32, 5).unwrap();
        let rows = parse_manifest(&manifest).unwrap();
        let ladder = synthetic_ladder(32, 5);
        assert_eq!(rows.len(), ladder.len());
        for (row, s) in rows.iter().zip(&ladder) {
            let PairData::Images { reference, distorted } = &s.pair else { panic!() };
            assert_eq!(&decode_image(&row.ref_path).unwrap(), reference);
            assert_eq!(&decode_image(&row.dist_path).unwrap(), distorted);
            assert_eq!(row.mos, s.mos);
        }
    }
}
