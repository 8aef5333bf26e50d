//! Attention heat maps: average the attention each spatial token receives
//! over every captured head, layer and block, then resize to image size.

use std::fs;
use std::path::Path;

use crate::error::{IqtError, Result};
use crate::io::image::encode_pgm;
use crate::transformer::AttentionRecord;

/// Values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_gray(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes an 8-bit binary graymap.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_pgm(self.height, self.width, &self.to_gray())?;
        fs::write(path, bytes).map_err(|e| IqtError::io(path, e))
    }
}

/// Mean attention received by each of the `grid_h × grid_w` spatial
/// tokens. The quality token is excluded both as a query row and as a
/// key column.
pub fn received_attention(records: &[AttentionRecord], grid_h: usize, grid_w: usize) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(IqtError::Contract("no attention records to export".into()));
    }
    let n = grid_h * grid_w;
    let mut acc = vec![0.0f64; n];
    for rec in records {
        let (rows, cols) = rec.weights.dims2()?;
        if rows != n + 1 || cols != n + 1 {
            return Err(IqtError::shape("export_attention", rec.weights.shape(), &[n + 1, n + 1]));
        }
        let w = rec.weights.data();
        for (j, a) in acc.iter_mut().enumerate() {
            let col: f64 = (1..=n).map(|i| w[i * cols + j + 1]).sum();
            *a += col / n as f64;
        }
    }
    let k = records.len() as f64;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sample = |len_in: usize, len_out: usize, i: usize| {
        let pos = ((i as f64 + 0.5) * len_in as f64 / len_out as f64 - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(len_in - 1);
        let i1 = (i0 + 1).min(len_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = sample(h, out_h, y);
        for x in 0..out_w {
            let (x0, x1, fx) = sample(w, out_w, x);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

pub fn export_attention(
    records: &[AttentionRecord],
    grid_h: usize,
    grid_w: usize,
    image_h: usize,
    image_w: usize,
) -> Result<HeatMap> {
    if image_h == 0 || image_w == 0 {
        return Err(IqtError::Contract("heat map size must be positive".into()));
    }
    let grid = received_attention(records, grid_h, grid_w)?;
    let mut values = resize_bilinear(&grid, grid_h, grid_w, image_h, image_w);
    min_max_normalize(&mut values);
    Ok(HeatMap {
        height: image_h,
        width: image_w,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::transformer::AttentionStage;

    fn record(weights: Vec<f64>, n1: usize) -> AttentionRecord {
        AttentionRecord {
            stage: AttentionStage::Encoder,
            layer: 0,
            head: 0,
            weights: Tensor::new(vec![n1, n1], weights).unwrap(),
        }
    }

    #[test]
    fn uniform_attention_is_flat_zero_map() {
        let n1 = 5;
        let rec = record(vec![1.0 / n1 as f64; n1 * n1], n1);
        let hm = export_attention(&[rec.clone(), rec], 2, 2, 7, 9).unwrap();
        assert_eq!((hm.height, hm.width), (7, 9));
        assert!(hm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dominant_token_is_single_hot_cell() {
        // 3×3 grid, every row attends to token at cell (1, 2)
        let (n, hot) = (9, 3 + 2);
        let mut w = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..=n {
            w[i * (n + 1) + hot + 1] = 1.0;
        }
        let hm = export_attention(&[record(w, n + 1)], 3, 3, 3, 3).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let expected = if (y, x) == (1, 2) { 1.0 } else { 0.0 };
                assert_eq!(hm.get(y, x), expected);
            }
        }
    }

    #[test]
    fn quality_token_is_ignored() {
        // all attention mass on the quality column: spatial tokens receive nothing
        let n1 = 5;
        let mut w = vec![0.0; n1 * n1];
        for i in 0..n1 {
            w[i * n1] = 1.0;
        }
        let grid = received_attention(&[record(w, n1)], 2, 2).unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_or_misshaped_records_rejected() {
        assert!(export_attention(&[], 2, 2, 4, 4).is_err());
        let rec = record(vec![0.25; 16], 4);
        assert!(export_attention(&[rec], 2, 2, 4, 4).is_err());
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let src: Vec<f64> = (0..6).map(f64::from).collect();
        assert_eq!(resize_bilinear(&src, 2, 3, 2, 3), src);
        let up = resize_bilinear(&[4.0; 4], 2, 2, 5, 7);
        assert!(up.iter().all(|&v| v == 4.0));
        let up = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn pgm_output() {
        let dir = tempfile::tempdir().unwrap();
        let hm = HeatMap {
            height: 1,
            width: 3,
            values: vec![0.0, 0.5, 1.0],
        };
        let path = dir.path().join("a.pgm");
        hm.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n3 1\n255\n\x00\x80\xff");
    }
}
