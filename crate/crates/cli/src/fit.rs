//! Least-squares power laws `y = C x^p` fitted in log-log coordinates.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    /// Standard error of the slope; infinite with two points.
    pub stderr: f64,
    /// 95% Student-t interval for the slope.
    pub ci95: [f64; 2],
}

impl RateFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 2 {
        bail!("need at least two paired points, got {} and {}", x.len(), y.len());
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        bail!("log-log fit needs positive finite data");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        bail!("abscissae coincide");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let points = lx.len();
    let (stderr, ci95) = if points > 2 {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 2.0)?.inverse_cdf(0.975);
        (se, [slope - t * se, slope + t * se])
    } else {
        (f64::INFINITY, [f64::NEG_INFINITY, f64::INFINITY])
    };
    Ok(RateFit {
        slope,
        intercept,
        points,
        stderr,
        ci95,
    })
}
