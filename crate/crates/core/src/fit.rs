//! Least-squares line fits and the log transforms used for decay rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("line fit needs 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateSeries("all abscissae equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    if !slope.is_finite() || !intercept.is_finite() {
        return Err(Error::Numeric("non-finite line fit".into()));
    }
    Ok(LineFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Fit of `ln|y|` against `t`; a decay `A e^{-r t}` gives `slope = -r`.
/// Zero entries are skipped.
pub fn log_linear_fit(t: &[f64], y: &[f64]) -> Result<LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(_, v)| v.abs() > 0.0 && v.is_finite())
        .map(|(a, v)| (*a, v.abs().ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

/// Fit of `ln|y|` against `ln t`; a power law `t^p` gives `slope = p`.
pub fn log_log_fit(t: &[f64], y: &[f64]) -> Result<LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(a, v)| **a > 0.0 && v.abs() > 0.0 && v.is_finite())
        .map(|(a, v)| (a.ln(), v.abs().ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than 2 values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_transforms() {
        let t: Vec<f64> = (1..50).map(|i| i as f64).collect();
        let e: Vec<f64> = t.iter().map(|v| 2.0 * (-0.3 * v).exp()).collect();
        assert!((log_linear_fit(&t, &e).unwrap().slope + 0.3).abs() < 1e-12);
        let p: Vec<f64> = t.iter().map(|v| 5.0 / v).collect();
        assert!((log_log_fit(&t, &p).unwrap().slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(linear_fit(&[1.0], &[2.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(linear_fit(&[1.0, 2.0], &[2.0]).is_err());
        assert_eq!(sample_sd(&[4.0, 4.0, 4.0]), 0.0);
    }
}
