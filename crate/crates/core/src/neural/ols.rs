//! Simple linear regression with a two-sided t-test on the slope.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OlsError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("xs and ys differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("all x values are equal")]
    DegenerateX,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<OlsFit, OlsError> {
    if xs.len() != ys.len() {
        return Err(OlsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(OlsError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(OlsError::DegenerateX);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = nf - 2.0;
    let std_err = (ssr / dof / sxx).sqrt();
    let (t_stat, p_value) = if std_err > 0.0 {
        let t = slope / std_err;
        let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    } else if slope == 0.0 {
        (0.0, 1.0)
    } else {
        (slope.signum() * f64::INFINITY, 0.0)
    };
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ssr / syy };
    Ok(OlsFit {
        slope,
        intercept,
        std_err,
        t_stat,
        p_value,
        r_squared,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let f = ols_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert_eq!(f.p_value, 0.0);
    }

    #[test]
    fn constant_ys() {
        let f = ols_fit(&[1.0, 2.0, 3.0, 4.0], &[5.0; 4]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.p_value, 1.0);
    }

    #[test]
    fn degenerate() {
        assert_eq!(ols_fit(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(OlsError::DegenerateX));
        assert_eq!(ols_fit(&[1.0, 2.0], &[1.0, 2.0]), Err(OlsError::TooFewPoints(2)));
    }

    /// Solves the 2x2 normal equations (X^T X) b = X^T y by Cramer's rule.
    fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        let intercept = (sy * sxx - sx * sxy) / det;
        let slope = (n * sxy - sx * sy) / det;
        (slope, intercept)
    }

    #[test]
    fn noisy_slope_recovered() {
        let mut r = crate::rng::seeded(42);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let xs: Vec<f64> = (0..50).map(|_| r.random::<f64>() * 20.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.9 - 0.01 * x + noise.sample(&mut r)).collect();
        let f = ols_fit(&xs, &ys).unwrap();
        let (slope, intercept) = normal_equations(&xs, &ys);
        assert!((f.slope - slope).abs() < 1e-10);
        assert!((f.intercept - intercept).abs() < 1e-10);
        assert!((f.slope + 0.01).abs() < 0.005);
        assert!(f.p_value < 1e-3);
    }

    #[test]
    fn p_value_matches_known_t() {
        // reference values from scipy.stats.linregress
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [1.1, 1.9, 3.0, 3.9, 5.1];
        let f = ols_fit(&xs, &ys).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.std_err - 0.03651483716701004).abs() < 1e-12);
        assert!((f.p_value - 0.00010685581429954411).abs() < 1e-9);
        assert!(f.r_squared > 0.99);
    }
}
