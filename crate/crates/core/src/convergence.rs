//! Least-squares slopes of error series in log-log scale.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y = intercept + slope·x` by least squares.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid("a line fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Slope of `log(error)` against `log(H)` over at least three points.
pub fn fit_convergence_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(h, e)) = points.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0)) {
        return Err(Error::Invalid(format!("non-positive entry ({h}, {e})")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    fit_line(&x, &y)
}
