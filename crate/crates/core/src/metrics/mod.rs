//! Matting error metrics: MSE, MAD, SAD, gradient and connectivity errors, and relative improvement.

mod conn;
mod grad;
pub mod published;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::Tensor;

pub use conn::{conn_metric, conn_metric_with, connectivity_levels};
pub use grad::{gaussian_gradient, grad_metric, grad_metric_with, GradKernel};

/// Scale applied to summed errors (SAD, Grad, Conn).
pub const SUM_SCALE: f64 = 1000.0;

/// Conventions behind the gradient and connectivity errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Standard deviation of the derivative-of-Gaussian filters.
    pub grad_sigma: f64,
    /// Spacing of the connectivity thresholds; `1 / conn_step` must be an integer.
    pub conn_step: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { grad_sigma: 1.4, conn_step: 0.1 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_sigma > 0.0) {
            return Err(arg_err!("grad sigma must be positive, got {}", self.grad_sigma));
        }
        connectivity_levels(self.conn_step).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mse: f64,
    pub mad: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
}

impl MetricRow {
    pub const NAMES: [&'static str; 5] = ["MSE", "MAD", "SAD", "Grad", "Conn"];

    pub fn compute(pred: &Tensor<f64>, gt: &Tensor<f64>, cfg: &MetricConfig) -> Result<Self> {
        let (mse, mad, sad) = pixel_metrics(pred, gt)?;
        Ok(MetricRow {
            mse,
            mad,
            sad,
            grad: grad_metric_with(pred, gt, cfg.grad_sigma)?,
            conn: conn_metric_with(pred, gt, cfg.conn_step)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.mse, self.mad, self.sad, self.grad, self.conn]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        MetricRow { mse: v[0], mad: v[1], sad: v[2], grad: v[3], conn: v[4] }
    }

    /// Uniform average; `None` for no rows.
    pub fn mean(rows: &[MetricRow]) -> Option<MetricRow> {
        if rows.is_empty() {
            return None;
        }
        let mut acc = [0.0; 5];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(MetricRow::from_values(acc.map(|a| a / rows.len() as f64)))
    }

    pub fn is_valid(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

pub(crate) fn check_pair(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<(usize, usize)> {
    match (pred.shape(), gt.shape()) {
        (&[h, w], &[gh, gw]) if h == gh && w == gw => Ok((h, w)),
        (p, g) => Err(dim_err!("mattes must share one [H, W] extent, got {p:?} and {g:?}")),
    }
}

/// `(mse, mad, sad)`: mean squared, mean absolute and summed absolute (scaled by 1/1000) error.
pub fn pixel_metrics(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<(f64, f64, f64)> {
    check_pair(pred, gt)?;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let d = p - g;
        sq += d * d;
        abs += d.abs();
    }
    let n = pred.len() as f64;
    Ok((sq / n, abs / n, abs / SUM_SCALE))
}

/// Mean relative reduction of lower-is-better values against a baseline, in percent.
pub fn impro(baseline: &[f64], method: &[f64]) -> Result<f64> {
    if baseline.len() != method.len() {
        return Err(dim_err!("baseline has {} values, method has {}", baseline.len(), method.len()));
    }
    if baseline.is_empty() {
        return Err(arg_err!("impro needs at least one metric"));
    }
    if let Some(b) = baseline.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(arg_err!("baseline values must be positive, got {b}"));
    }
    if method.iter().any(|m| !m.is_finite()) {
        return Err(arg_err!("method values must be finite"));
    }
    let sum: f64 = baseline.iter().zip(method).map(|(b, m)| (b - m) / b).sum();
    Ok(100.0 * sum / baseline.len() as f64)
}
