//! Whole-image scoring by averaging over a patch plan.

use rayon::prelude::*;

use crate::error::Result;
use crate::io::ImageBuffer;
use crate::model::{IqtModel, StreamFeatures};
use crate::pipeline::data::{check_images, PairData};
use crate::pipeline::patches::plan_patches;

/// Pairwise (cascade) summation in index order; the result does not
/// depend on how work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Per-patch scores in plan order.
pub fn patch_scores(reference: &ImageBuffer, distorted: &ImageBuffer, model: &IqtModel<f32>) -> Result<Vec<f64>> {
    check_images(&model.config, reference, distorted)?;
    let p = model.config.patch_size;
    let plan = plan_patches(reference.height(), reference.width(), p)?;
    let positions: Vec<(usize, usize)> = plan.positions().collect();
    positions
        .par_iter()
        .map(|&(top, left)| {
            let r = reference.crop(top, left, p, p)?;
            let d = distorted.crop(top, left, p, p)?;
            model.forward_score(&r, &d)
        })
        .collect()
}

/// Mean patch score of a full image pair.
pub fn score_pair(reference: &ImageBuffer, distorted: &ImageBuffer, model: &IqtModel<f32>) -> Result<f64> {
    Ok(pairwise_mean(&patch_scores(reference, distorted, model)?))
}

/// Scores a loaded pair; feature inputs cover exactly one patch.
pub fn score_pair_data(pair: &PairData, model: &IqtModel<f32>) -> Result<f64> {
    match pair {
        PairData::Images { reference, distorted } => score_pair(reference, distorted, model),
        PairData::Features { reference, distorted } => {
            let feats = StreamFeatures::from_maps(reference.clone(), distorted.clone())?;
            model.score_features(&feats)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn image(h: usize, w: usize, salt: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, |y, x, c| ((y * 5 + x * 3 + c + salt) % 11) as f32 / 10.0)
    }

    #[test]
    fn single_patch_equals_forward_score() {
        let m = IqtModel::init(Preset::Tiny.config(), 4).unwrap();
        let (r, d) = (image(32, 32, 0), image(32, 32, 2));
        let s = score_pair(&r, &d, &m).unwrap();
        assert_eq!(s.to_bits(), m.forward_score(&r, &d).unwrap().to_bits());
    }

    #[test]
    fn overlapping_plan_is_manual_average() {
        let m = IqtModel::init(Preset::Tiny.config(), 4).unwrap();
        let (r, d) = (image(40, 72, 0), image(40, 72, 7));
        let mut manual = Vec::new();
        for top in [0, 8] {
            for left in [0, 20, 40] {
                let rc = r.crop(top, left, 32, 32).unwrap();
                let dc = d.crop(top, left, 32, 32).unwrap();
                manual.push(m.forward_score(&rc, &dc).unwrap());
            }
        }
        let got = score_pair(&r, &d, &m).unwrap();
        let want = manual.iter().sum::<f64>() / 6.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn mismatched_or_small_images_rejected() {
        let m = IqtModel::init(Preset::Tiny.config(), 4).unwrap();
        assert!(score_pair(&image(32, 32, 0), &image(40, 32, 0), &m).is_err());
        assert!(score_pair(&image(24, 32, 0), &image(24, 32, 0), &m).is_err());
    }

    #[test]
    fn equal_scores_average_to_themselves() {
        assert_eq!(pairwise_mean(&[0.375; 7]), 0.375);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0, 5.0]), 15.0);
    }
}
