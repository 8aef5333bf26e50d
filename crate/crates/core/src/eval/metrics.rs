//! Rank and linear correlation coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{IqtError, Result};

fn check_pair(name: &str, x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(IqtError::Metric(format!(
            "{name}: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(IqtError::Metric(format!(
            "{name}: needs at least {min_len} values, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(IqtError::Metric(format!("{name}: non-finite input")));
    }
    Ok(())
}

/// Sample Pearson correlation. Constant input is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("pearson", x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(IqtError::Metric("pearson: constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on fractional ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("srcc", x, y, 3)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y)).map_err(|_| IqtError::Metric("srcc: constant input".into()))
}

/// Kendall's tau-b.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("krcc", x, y, 3)?;
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite") as i64;
            let dy = y[i].partial_cmp(&y[j]).expect("finite") as i64;
            if dx == 0 {
                ties_x += 1;
            }
            if dy == 0 {
                ties_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = ((pairs - ties_x) as f64 * (pairs - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(IqtError::Metric("krcc: constant input".into()));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// Coefficients `[a0, a1, a2, a3]` of `mos ≈ Σ aᵢ zⁱ` with `z = (pred − μ)/σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicFit {
    pub mean: f64,
    pub scale: f64,
    pub coeffs: [f64; 4],
}

impl CubicFit {
    pub fn eval(&self, pred: f64) -> f64 {
        let z = (pred - self.mean) / self.scale;
        self.coeffs[0] + z * (self.coeffs[1] + z * (self.coeffs[2] + z * self.coeffs[3]))
    }
}

/// Least-squares cubic from predictions to MOS on standardized inputs.
pub fn fit_cubic(pred: &[f64], mos: &[f64]) -> Result<CubicFit> {
    check_pair("plcc", pred, mos, 5)?;
    let n = pred.len();
    let mean = pred.iter().sum::<f64>() / n as f64;
    let var = pred.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Err(IqtError::Metric("plcc: predictions are constant, cubic fit is singular".into()));
    }
    let scale = var.sqrt();
    let design = DMatrix::from_fn(n, 4, |i, k| ((pred[i] - mean) / scale).powi(k as i32));
    let target = DVector::from_column_slice(mos);
    let svd = design.svd(true, true);
    let sol = svd
        .solve(&target, 1e-12)
        .map_err(|e| IqtError::Metric(format!("plcc: least-squares solve failed: {e}")))?;
    Ok(CubicFit {
        mean,
        scale,
        coeffs: [sol[0], sol[1], sol[2], sol[3]],
    })
}

/// Pearson correlation after mapping predictions onto MOS with a cubic.
pub fn plcc_poly3(pred: &[f64], mos: &[f64]) -> Result<f64> {
    let fit = fit_cubic(pred, mos)?;
    let fitted: Vec<f64> = pred.iter().map(|&p| fit.eval(p)).collect();
    pearson(&fitted, mos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn srcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((srcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((srcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        let exp: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((srcc(&x, &exp).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn krcc_examples() {
        assert_eq!(krcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(krcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((krcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(krcc(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).is_err());
        assert!(srcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(krcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(plcc_poly3(&[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).is_err());
        assert!(plcc_poly3(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn plcc_on_cubic_and_negated_data() {
        let pred: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 3.0).collect();
        let cubic: Vec<f64> = pred.iter().map(|p| 0.5 * p * p * p - p * p + 2.0 * p - 7.0).collect();
        assert!((plcc_poly3(&pred, &cubic).unwrap() - 1.0).abs() < 1e-9);
        let neg: Vec<f64> = pred.iter().map(|p| -p).collect();
        assert!((plcc_poly3(&pred, &neg).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plcc_on_independent_noise_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pred: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mos: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        assert!(plcc_poly3(&pred, &mos).unwrap().abs() < 0.1);
    }

    proptest! {
        #[test]
        fn rank_metrics_ignore_monotone_maps(xs in proptest::collection::vec(-5.0f64..5.0, 3..20),
                                             ys in proptest::collection::vec(-5.0f64..5.0, 20),
                                             a in 0.1f64..10.0, b in -3.0f64..3.0) {
            let ys = &ys[..xs.len()];
            if let (Ok(s), Ok(k)) = (srcc(&xs, ys), krcc(&xs, ys)) {
                let xs2: Vec<f64> = xs.iter().map(|v| v.exp()).collect();
                let ys2: Vec<f64> = ys.iter().map(|v| a * v + b).collect();
                prop_assert!((srcc(&xs2, &ys2).unwrap() - s).abs() < 1e-12);
                prop_assert!((krcc(&xs2, &ys2).unwrap() - k).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&s) && (-1.0..=1.0).contains(&k));
            }
        }

        #[test]
        fn plcc_is_affine_invariant_in_pred(pred in proptest::collection::vec(-5.0f64..5.0, 8..30),
                                            mos in proptest::collection::vec(0.0f64..10.0, 30),
                                            a in 0.2f64..20.0, b in -100.0f64..100.0) {
            let mos = &mos[..pred.len()];
            if let Ok(p) = plcc_poly3(&pred, mos) {
                let moved: Vec<f64> = pred.iter().map(|v| a * v + b).collect();
                prop_assert!((plcc_poly3(&moved, mos).unwrap() - p).abs() < 1e-9);
            }
        }
    }
}
