//! Summary statistics over Monte Carlo position errors.

use nalgebra::DVector;
use seqloc::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RmseSummary {
    /// `sqrt(mean ||e||²)`.
    pub rmse: f64,
    pub per_axis: Vec<f64>,
    /// Standard error of `rmse`, by the delta method on the mean squared error.
    pub std_error: f64,
    pub samples: usize,
}

pub fn empirical_rmse(errors: &[DVector<f64>]) -> Result<RmseSummary, Error> {
    let first = errors.first().ok_or(Error::EmptyInput("position errors"))?;
    let n = errors.len() as f64;
    let dim = first.len();
    if errors.iter().any(|e| e.len() != dim) {
        return Err(Error::DimensionMismatch("position errors differ in dimension".into()));
    }
    let sq: Vec<f64> = errors.iter().map(|e| e.norm_squared()).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let per_axis = (0..dim)
        .map(|a| (errors.iter().map(|e| e[a] * e[a]).sum::<f64>() / n).sqrt())
        .collect();
    let rmse = mse.sqrt();
    let std_error = if errors.len() > 1 && rmse > 0.0 {
        let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() / (2.0 * rmse)
    } else {
        0.0
    };
    Ok(RmseSummary {
        rmse,
        per_axis,
        std_error,
        samples: errors.len(),
    })
}

/// Empirical CDF as `(value, fraction ≤ value)` at each distinct value.
pub fn error_cdf(errors: &[f64]) -> Result<Vec<(f64, f64)>, Error> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error samples"));
    }
    if errors.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("error samples contain NaN".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    Ok(out)
}
