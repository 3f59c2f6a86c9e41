//! Image and depth error metrics.

use serde::{Deserialize, Serialize};

/// PSNR in dB for values in `[0, 1]`; identical inputs give infinity.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = (a.len() * 3).max(1) as f64;
    let mse: f64 = a.iter().zip(b).flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).powi(2))).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthErrors {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage of pixels whose absolute error exceeds the threshold.
    pub outlier_pct: f64,
    pub count: usize,
}

/// Errors over pixels where both depths are finite and positive.
pub fn depth_errors(pred: &[f64], truth: &[f64], outlier_threshold: f64) -> DepthErrors {
    let mut n = 0usize;
    let (mut abs, mut sq, mut out) = (0.0, 0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if !(p.is_finite() && t.is_finite() && *t > 0.0) {
            continue;
        }
        let e = (p - t).abs();
        abs += e;
        sq += e * e;
        if e > outlier_threshold {
            out += 1;
        }
        n += 1;
    }
    let d = n.max(1) as f64;
    DepthErrors { mae: abs / d, rmse: (sq / d).sqrt(), outlier_pct: 100.0 * out as f64 / d, count: n }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![[0.5, 0.25, 1.0]; 10];
        assert!(psnr(&a, &a).is_infinite());
        let b: Vec<[f64; 3]> = a.iter().map(|c| c.map(|v| v - 1.0 / 255.0)).collect();
        assert!((psnr(&a, &b) - 20.0 * 255f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn depth_error_values() {
        let e = depth_errors(&[1.0, 2.0, 5.0, 1.0], &[1.5, 2.0, 3.0, f64::INFINITY], 1.0);
        assert_eq!(e.count, 3);
        assert!((e.mae - 2.5 / 3.0).abs() < 1e-15);
        assert!((e.rmse - (4.25f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((e.outlier_pct - 100.0 / 3.0).abs() < 1e-12);
    }
}
