//! One Euro filtering of per-frame pose parameters.
//!
//! A first-order low-pass filter whose cutoff grows with the filtered speed
//! of the signal: slow motion is smoothed hard, fast motion passes with
//! little lag.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::PoseParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneEuroParams {
    /// Hz.
    pub min_cutoff: f64,
    pub beta: f64,
    /// Hz.
    pub derivative_cutoff: f64,
    /// Hz.
    pub sample_rate: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        OneEuroParams {
            min_cutoff: 1.0,
            beta: 0.5,
            derivative_cutoff: 1.0,
            sample_rate: 30.0,
        }
    }
}

impl OneEuroParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_cutoff", self.min_cutoff),
            ("derivative_cutoff", self.derivative_cutoff),
            ("sample_rate", self.sample_rate),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("smoothing.{} must be positive", name)));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("smoothing.beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Smoothing factor of a first-order low-pass at `cutoff` Hz.
pub fn alpha(cutoff: f64, sample_rate: f64) -> f64 {
    let tau = 1.0 / (2.0 * std::f64::consts::PI * cutoff);
    let te = 1.0 / sample_rate;
    1.0 / (1.0 + tau / te)
}

/// Filters one series. The first sample passes through unchanged.
pub fn one_euro_filter(series: &[f64], params: &OneEuroParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let Some(&first) = series.first() else {
        return out;
    };
    let a_d = alpha(params.derivative_cutoff, params.sample_rate);
    let mut x_hat = first;
    let mut dx_hat = 0.0;
    out.push(first);
    for &x in &series[1..] {
        let dx = (x - x_hat) * params.sample_rate;
        dx_hat = a_d * dx + (1.0 - a_d) * dx_hat;
        let cutoff = params.min_cutoff + params.beta * dx_hat.abs();
        let a = alpha(cutoff, params.sample_rate);
        x_hat = a * x + (1.0 - a) * x_hat;
        out.push(x_hat);
    }
    out
}

/// Filters every pose component independently over the sequence.
pub fn smooth_poses(poses: &[PoseParams], params: &OneEuroParams) -> Result<Vec<PoseParams>> {
    params.validate()?;
    let Some(first) = poses.first() else {
        return Ok(Vec::new());
    };
    let dim = first.body_pose.len();
    if poses.iter().any(|p| p.body_pose.len() != dim) {
        return Err(Error::ModelMismatch("poses have differing body-pose lengths".into()));
    }
    let flat: Vec<Vec<f64>> = poses.iter().map(PoseParams::to_flat).collect();
    let columns: Vec<Vec<f64>> = (0..dim + 6)
        .into_par_iter()
        .map(|c| {
            let series: Vec<f64> = flat.iter().map(|f| f[c]).collect();
            one_euro_filter(&series, params)
        })
        .collect();
    (0..poses.len())
        .map(|i| {
            let row: Vec<f64> = columns.iter().map(|col| col[i]).collect();
            PoseParams::from_flat(&row, dim)
        })
        .collect()
}
