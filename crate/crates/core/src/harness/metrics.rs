use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Guard added to `|s|` in the relative error denominator.
pub const ERROR_EPS: f64 = 1e-8;

/// Per-state modified relative error `|s - s_hat| / (|s| + eps)` along a
/// trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `errors[k][i]` is the error of state `i` at step `k`.
    pub errors: Vec<Vec<f64>>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Seconds spent producing the prediction, when measured.
    #[serde(default)]
    pub wall_clock_s: Option<f64>,
}

impl MetricsReport {
    /// Largest error over all states and steps.
    pub fn overall_max(&self) -> f64 {
        self.max.iter().copied().fold(0.0, f64::max)
    }
}

pub fn modified_relative_error(truth: &Trajectory, pred: &Trajectory, eps: f64) -> Result<MetricsReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("error guard must be positive, got {eps}")));
    }
    if truth.len() != pred.len() || truth.state_dim() != pred.state_dim() {
        return Err(Error::Shape(format!(
            "truth is {}x{}, prediction is {}x{}",
            truth.len(),
            truth.state_dim(),
            pred.len(),
            pred.state_dim()
        )));
    }
    let n_s = truth.state_dim();
    let errors: Vec<Vec<f64>> = truth
        .states
        .iter()
        .zip(&pred.states)
        .map(|(s, p)| s.iter().zip(p).map(|(a, b)| (a - b).abs() / (a.abs() + eps)).collect())
        .collect();
    let mut max = vec![0.0f64; n_s];
    let mut mean = vec![0.0; n_s];
    for row in &errors {
        for (i, e) in row.iter().enumerate() {
            // NaN propagates into max so a broken prediction is never hidden.
            max[i] = if e.is_nan() || max[i].is_nan() { f64::NAN } else { max[i].max(*e) };
            mean[i] += e;
        }
    }
    let n = errors.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(MetricsReport {
        errors,
        max,
        mean,
        wall_clock_s: None,
    })
}
