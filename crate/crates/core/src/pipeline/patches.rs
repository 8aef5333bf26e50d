use crate::error::{IqtError, Result};

/// Minimal set of `patch × patch` windows covering an image, spread
/// evenly so the first sits at 0 and the last is flush with the edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub patch_size: usize,
    /// Top offsets.
    pub rows: Vec<usize>,
    /// Left offsets.
    pub cols: Vec<usize>,
}

impl PatchPlan {
    pub fn count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// `(top, left)` corners in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .flat_map(move |&r| self.cols.iter().map(move |&c| (r, c)))
    }
}

/// `n = ⌈dim / patch⌉` offsets at `round(i·(dim − patch)/(n − 1))`.
pub fn axis_offsets(dim: usize, patch: usize) -> Vec<usize> {
    let n = dim.div_ceil(patch);
    if n <= 1 {
        return vec![0];
    }
    let span = dim - patch;
    let den = n - 1;
    // round half up in integers
    (0..n).map(|i| (2 * i * span + den) / (2 * den)).collect()
}

pub fn plan_patches(image_h: usize, image_w: usize, patch_size: usize) -> Result<PatchPlan> {
    if patch_size == 0 {
        return Err(IqtError::Contract("patch size must be positive".into()));
    }
    if image_h < patch_size || image_w < patch_size {
        return Err(IqtError::Size {
            height: image_h,
            width: image_w,
            min_height: patch_size,
            min_width: patch_size,
        });
    }
    Ok(PatchPlan {
        patch_size,
        rows: axis_offsets(image_h, patch_size),
        cols: axis_offsets(image_w, patch_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_cases() {
        let p = plan_patches(256, 256, 256).unwrap();
        assert_eq!((p.count(), p.rows.clone(), p.cols.clone()), (1, vec![0], vec![0]));
        let p = plan_patches(512, 512, 256).unwrap();
        assert_eq!((p.count(), p.rows.clone()), (4, vec![0, 256]));
        let p = plan_patches(500, 500, 256).unwrap();
        assert_eq!((p.count(), p.rows.clone(), p.cols.clone()), (4, vec![0, 244], vec![0, 244]));
        let p = plan_patches(300, 600, 256).unwrap();
        assert_eq!(p.cols, vec![0, 172, 344]);
        assert_eq!(p.positions().count(), 6);
    }

    #[test]
    fn small_image_rejected() {
        assert!(matches!(plan_patches(255, 300, 256), Err(IqtError::Size { .. })));
        assert!(plan_patches(300, 300, 0).is_err());
    }

    proptest! {
        #[test]
        fn offsets_cover_axis(dim in 1usize..2000, patch in 1usize..300) {
            prop_assume!(dim >= patch);
            let offs = axis_offsets(dim, patch);
            prop_assert_eq!(offs.len(), dim.div_ceil(patch));
            prop_assert_eq!(offs[0], 0);
            prop_assert_eq!(*offs.last().unwrap() + patch, dim);
            for w in offs.windows(2) {
                prop_assert!(w[0] < w[1] && w[1] <= w[0] + patch);
            }
        }
    }
}
