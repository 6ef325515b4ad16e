//! Convergence studies built on [`replicate`](crate::response::replicate): spread of
//! the computed derivative against the segment count `A` and the window `W`, and a
//! parameter sweep comparing the derivative with long-run averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MapSystem, Observable};
use crate::oracle::{long_run_mean, ols};
use crate::response::{
    compute_response, mean_and_std, replicate_seeds, ReplicaFailure, ReplicaRow, ResponseConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxis {
    /// Vary the segment count `A`.
    Segments,
    /// Vary the window half-width `W`.
    Window,
}

impl ScalingAxis {
    pub fn column_name(&self) -> &'static str {
        match self {
            ScalingAxis::Segments => "A",
            ScalingAxis::Window => "W",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub value: usize,
    pub mean: f64,
    pub std: f64,
    pub replicas: Vec<ReplicaRow>,
    pub failures: Vec<ReplicaFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub axis: ScalingAxis,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln std` against `ln value`, when at least two rows have a
    /// positive value and a positive finite std.
    pub loglog_slope: Option<f64>,
}

/// Seeds `base, base + 1, ..`.
pub fn consecutive_seeds(base: u64, reps: usize) -> Vec<u64> {
    (0..reps as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Replicates the response at every value of `axis`, reusing `seeds` for each value.
pub fn scaling_study<S, O>(
    sys: &S,
    obs: &O,
    base: &ResponseConfig,
    axis: ScalingAxis,
    values: &[usize],
    seeds: &[u64],
) -> Result<ScalingStudy>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    if values.is_empty() {
        return Err(Error::config("scaling study needs at least one value"));
    }
    if seeds.len() < 4 {
        return Err(Error::config("scaling study needs at least 4 replicas"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            ScalingAxis::Segments => cfg.segments = value,
            ScalingAxis::Window => cfg.window = value,
        }
        let summary = replicate_seeds(sys, obs, &cfg, seeds)?;
        rows.push(ScalingRow {
            value,
            mean: summary.mean,
            std: summary.std,
            replicas: summary.rows,
            failures: summary.failures,
        });
    }
    let loglog_slope = loglog_slope(
        &rows
            .iter()
            .map(|r| (r.value as f64, r.std))
            .collect::<Vec<_>>(),
    );
    Ok(ScalingStudy {
        axis,
        rows,
        loglog_slope,
    })
}

/// Slope of `ln y` against `ln x` over points with positive `x` and positive finite `y`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && y.is_finite() && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    if xs.len() < 2 {
        return None;
    }
    Some(ols(&xs, &ys).0)
}

/// Settings for the long-run averages in [`gamma_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageConfig {
    pub steps_per_run: usize,
    pub runs_per_gamma: usize,
    pub spinup: usize,
    pub seed: u64,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self {
            steps_per_run: 20_000,
            runs_per_gamma: 4,
            spinup: crate::orbit::DEFAULT_SPINUP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub mean_phi: f64,
    pub std: f64,
    pub derivative: f64,
    /// Value of the least-squares line through all `(gamma, mean_phi)` at `gamma`.
    pub fd_line: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub rows: Vec<SweepRow>,
    pub fd_slope: f64,
    pub fd_intercept: f64,
    pub fd_slope_stderr: f64,
}

/// One response computation and one long-run average per parameter value, plus the
/// least-squares line through the averages. A failing value is kept as a row with
/// `NaN` entries and its error message.
pub fn gamma_sweep<S, O>(
    sys: &S,
    obs: &O,
    base: &ResponseConfig,
    gammas: &[f64],
    avg: &AverageConfig,
) -> Result<GammaSweep>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    if gammas.len() < 2 {
        return Err(Error::config(
            "gamma sweep needs at least 2 parameter values",
        ));
    }
    if gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::config("gamma values must be finite"));
    }
    if gammas.iter().all(|&g| g == gammas[0]) {
        return Err(Error::config(
            "gamma sweep needs at least 2 distinct parameter values",
        ));
    }
    if avg.steps_per_run == 0 || avg.runs_per_gamma == 0 {
        return Err(Error::config(
            "steps_per_run and runs_per_gamma must be positive",
        ));
    }
    base.validate()?;
    let mut rows: Vec<SweepRow> = gammas
        .par_iter()
        .map(|&gamma| {
            let outcome = (|| -> Result<(f64, f64, f64)> {
                let mut cfg = base.clone();
                cfg.gamma = gamma;
                let report = compute_response(sys, obs, &cfg)?;
                let means = (0..avg.runs_per_gamma as u64)
                    .map(|r| {
                        long_run_mean(
                            sys,
                            obs,
                            gamma,
                            avg.steps_per_run,
                            avg.spinup,
                            avg.seed.wrapping_add(r),
                            base.initial_box.as_deref(),
                        )
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (mean_phi, std) = mean_and_std(&means);
                Ok((mean_phi, std, report.data.derivative))
            })();
            match outcome {
                Ok((mean_phi, std, derivative)) => SweepRow {
                    gamma,
                    mean_phi,
                    std,
                    derivative,
                    fd_line: f64::NAN,
                    error: None,
                },
                Err(e) => SweepRow {
                    gamma,
                    mean_phi: f64::NAN,
                    std: f64::NAN,
                    derivative: f64::NAN,
                    fd_line: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| (r.gamma, r.mean_phi))
        .unzip();
    let (fd_slope, fd_intercept, fd_slope_stderr) = if xs.len() >= 2 {
        ols(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    for row in &mut rows {
        if row.error.is_none() {
            row.fd_line = fd_intercept + fd_slope * row.gamma;
        }
    }
    Ok(GammaSweep {
        rows,
        fd_slope,
        fd_intercept,
        fd_slope_stderr,
    })
}
