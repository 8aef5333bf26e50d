//! Paired geometric augmentation: an optional horizontal flip followed by
//! a rotation by a multiple of 90°, applied identically to both images.

use rand::Rng;

use crate::backbone::FeatureMap;
use crate::error::Result;
use crate::io::ImageBuffer;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    /// Clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentFlags {
    pub flip: bool,
    pub rotate: bool,
}

impl AugmentFlags {
    pub const ALL: AugmentFlags = AugmentFlags {
        flip: true,
        rotate: true,
    };
    pub const NONE: AugmentFlags = AugmentFlags {
        flip: false,
        rotate: false,
    };
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: false,
        quarter_turns: 0,
    };

    /// Flip with probability 1/2, rotation uniform over the four right angles.
    pub fn sample(flags: AugmentFlags, rng: &mut impl Rng) -> Self {
        let flip = flags.flip && rng.random_bool(0.5);
        let quarter_turns = if flags.rotate { rng.random_range(0..4u8) } else { 0 };
        Augmentation { flip, quarter_turns }
    }

    /// Source cell `(y, x)` that lands at `(oy, ox)` in the output.
    fn source(&self, h: usize, w: usize, oy: usize, ox: usize) -> (usize, usize) {
        // undo the rotation first, it was applied last
        let (mut y, mut x) = (oy, ox);
        let (mut ch, mut cw) = if self.quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
        for _ in 0..self.quarter_turns % 4 {
            // a clockwise turn sends input (y, x) on cw×ch to (x, cw−1−y)
            let (py, px) = (cw - 1 - x, y);
            (y, x) = (py, px);
            (ch, cw) = (cw, ch);
        }
        debug_assert_eq!((ch, cw), (h, w));
        if self.flip {
            x = w - 1 - x;
        }
        (y, x)
    }

    /// Transforms an `h × w × c` row-major grid; returns the new extents.
    pub fn apply_grid(&self, h: usize, w: usize, c: usize, data: &[f32]) -> (usize, usize, Vec<f32>) {
        let (oh, ow) = if self.quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = Vec::with_capacity(data.len());
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = self.source(h, w, oy, ox);
                out.extend_from_slice(&data[(y * w + x) * c..(y * w + x + 1) * c]);
            }
        }
        (oh, ow, out)
    }

    pub fn apply_image(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let (h, w, data) = self.apply_grid(img.height(), img.width(), 3, img.data());
        ImageBuffer::new(h, w, data)
    }

    pub fn apply_features(&self, f: &FeatureMap) -> Result<FeatureMap> {
        let (h, w, data) = self.apply_grid(f.height(), f.width(), f.channels(), f.data());
        FeatureMap::new(h, w, f.channels(), data)
    }
}

/// Samples one transform and applies it to both images.
pub fn augment_pair(
    reference: &ImageBuffer,
    distorted: &ImageBuffer,
    flags: AugmentFlags,
    rng: &mut impl Rng,
) -> Result<(ImageBuffer, ImageBuffer, Augmentation)> {
    let aug = Augmentation::sample(flags, rng);
    Ok((aug.apply_image(reference)?, aug.apply_image(distorted)?, aug))
}
