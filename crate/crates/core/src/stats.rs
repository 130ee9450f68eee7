//! Small Monte Carlo statistics helpers.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error. `se` is `None` for a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanWithSe {
    pub mean: f64,
    pub se: Option<f64>,
    pub n: usize,
}

impl MeanWithSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        });
        Self { mean, se, n }
    }

    /// `|mean − target| <= k · SE`; a missing SE only passes on exact equality.
    pub fn within(&self, target: f64, k: f64) -> bool {
        let dev = (self.mean - target).abs();
        match self.se {
            Some(se) => dev <= k * se,
            None => dev == 0.0,
        }
    }

    pub fn se_or_zero(&self) -> f64 {
        self.se.unwrap_or(0.0)
    }
}

/// `log( (1/n) Σ exp(v_i) )` without overflow.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

/// Normalizes log-weights in place into probabilities and returns the
/// effective sample size `1 / Σ w²`.
pub fn normalize_log_weights(log_w: &[f64], out: &mut [f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(log_w) {
        *o = (l - max).exp();
        total += *o;
    }
    let mut sq = 0.0;
    for o in out.iter_mut() {
        *o /= total;
        sq += *o * *o;
    }
    1.0 / sq
}

// Weighted mean around the first value, so a constant sample is reproduced
// bit-exactly even when the weights sum to one only up to rounding.
fn shifted_mean(weights: &[f64], values: &[f64]) -> f64 {
    let Some(&x0) = values.first() else {
        return f64::NAN;
    };
    x0 + weights.iter().zip(values).map(|(w, v)| w * (v - x0)).sum::<f64>()
}

/// Self-normalized weighted mean of `values` with its delta-method standard
/// error `sqrt(Σ w_i² (φ_i − mean)²)`. Weights must sum to one.
pub fn weighted_mean_se(weights: &[f64], values: &[f64]) -> (f64, f64) {
    let mean = shifted_mean(weights, values);
    let var: f64 = weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * w * (v - mean) * (v - mean))
        .sum();
    (mean, var.sqrt())
}

/// Weighted mean and (biased) weighted variance. Weights must sum to one.
pub fn weighted_moments(weights: &[f64], values: &[f64]) -> (f64, f64) {
    let mean = shifted_mean(weights, values);
    let var: f64 = weights
        .iter()
        .zip(values)
        .map(|(w, v)| w * (v - mean) * (v - mean))
        .sum();
    (mean, var.max(0.0))
}

/// Least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
