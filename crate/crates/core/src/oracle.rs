//! Finite-difference ground truth: long-run averages of `Phi` on a grid of parameter
//! values and an ordinary-least-squares slope through them.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::CompensatedSum;
use crate::model::{MapSystem, Observable};
use crate::orbit::{random_initial_state, DEFAULT_SPINUP};
use crate::response::mean_and_std;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdOracleConfig {
    pub gamma_grid: Vec<f64>,
    pub steps_per_run: usize,
    pub runs_per_gamma: usize,
    pub spinup: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial_box: Option<Vec<(f64, f64)>>,
    /// Weight grid points by the inverse variance of their mean instead of equally.
    #[serde(default)]
    pub weighted: bool,
}

impl FdOracleConfig {
    /// `points` evenly spaced values in `[center - half_width, center + half_width]`.
    pub fn centered(center: f64, half_width: f64, points: usize) -> Self {
        let gamma_grid = evenly_spaced(center - half_width, center + half_width, points);
        Self {
            gamma_grid,
            steps_per_run: 20_000,
            runs_per_gamma: 4,
            spinup: DEFAULT_SPINUP,
            seed: 0,
            initial_box: None,
            weighted: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.len() < 3 {
            return Err(Error::config(
                "finite-difference grid needs at least 3 points",
            ));
        }
        if self.gamma_grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("grid values must be finite"));
        }
        if self.gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("grid must be sorted and distinct"));
        }
        if self.steps_per_run == 0 || self.runs_per_gamma == 0 {
            return Err(Error::config(
                "steps_per_run and runs_per_gamma must be positive",
            ));
        }
        Ok(())
    }
}

pub fn evenly_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRow {
    pub gamma: f64,
    pub mean_phi: f64,
    /// Sample std of the per-run means (`NaN` for a single run).
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRegression {
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub rows: Vec<FdRow>,
    /// Grid points dropped because a run blew up.
    pub dropped: Vec<(f64, String)>,
}

impl FdRegression {
    pub fn fitted(&self, gamma: f64) -> f64 {
        self.intercept + self.slope * gamma
    }
}

/// Average of `Phi` over `steps` iterates after `spinup` discarded ones.
pub fn long_run_mean<S, O>(
    sys: &S,
    obs: &O,
    gamma: f64,
    steps: usize,
    spinup: usize,
    seed: u64,
    initial_box: Option<&[(f64, f64)]>,
) -> Result<f64>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    let mut x: DVector<f64> = random_initial_state(sys, initial_box, seed)?;
    let check = |x: &DVector<f64>, step: usize| -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::BlowUp {
                stage: Stage::Oracle,
                step,
            })
        }
    };
    for i in 0..spinup {
        x = sys.step(&x, gamma);
        check(&x, i + 1)?;
    }
    let mut acc = CompensatedSum::new();
    for i in 0..steps {
        acc.add(obs.value(&x));
        x = sys.step(&x, gamma);
        check(&x, spinup + i + 1)?;
    }
    Ok(acc.value() / steps as f64)
}

/// Ordinary least squares `y = intercept + slope x`; returns
/// `(slope, intercept, slope standard error)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, intercept, stderr)
}

/// Weighted least squares `y = intercept + slope x` with weights `w`; returns
/// `(slope, intercept, slope standard error)`. The error is rescaled by the residual
/// variance, so only relative weights matter.
pub fn wls(xs: &[f64], ys: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = xs.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(ys)
            .zip(w)
            .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
            .sum();
        (ssr / (xs.len() as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, intercept, stderr)
}

/// Long-run means on every grid point and the least-squares slope through them.
pub fn fd_regression<S, O>(sys: &S, obs: &O, cfg: &FdOracleConfig) -> Result<FdRegression>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.gamma_grid.len())
        .flat_map(|g| (0..cfg.runs_per_gamma as u64).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            long_run_mean(
                sys,
                obs,
                cfg.gamma_grid[g],
                cfg.steps_per_run,
                cfg.spinup,
                cfg.seed.wrapping_add(r),
                cfg.initial_box.as_deref(),
            )
        })
        .collect();

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (g, &gamma) in cfg.gamma_grid.iter().enumerate() {
        let chunk = &results[g * cfg.runs_per_gamma..(g + 1) * cfg.runs_per_gamma];
        match chunk.iter().find_map(|r| r.as_ref().err()) {
            Some(e) => {
                log::warn!("dropping gamma = {gamma}: {e}");
                dropped.push((gamma, e.to_string()));
            }
            None => {
                let means: Vec<f64> = chunk.iter().map(|r| *r.as_ref().unwrap()).collect();
                let (mean_phi, std) = mean_and_std(&means);
                rows.push(FdRow {
                    gamma,
                    mean_phi,
                    std,
                    runs: means.len(),
                });
            }
        }
    }
    if rows.len() < 3 {
        return Err(Error::Config(format!(
            "only {} grid points survived; at least 3 are needed",
            rows.len()
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_phi).collect();
    let weights: Option<Vec<f64>> = cfg
        .weighted
        .then(|| {
            rows.iter()
                .map(|r| (r.runs as f64) / (r.std * r.std))
                .collect::<Vec<_>>()
        })
        .filter(|w| w.iter().all(|w| w.is_finite() && *w > 0.0));
    if cfg.weighted && weights.is_none() {
        log::warn!("grid-point variances unavailable; falling back to an unweighted fit");
    }
    let (slope, intercept, slope_stderr) = match &weights {
        Some(w) => wls(&xs, &ys, w),
        None => ols(&xs, &ys),
    };
    Ok(FdRegression {
        slope,
        slope_stderr,
        intercept,
        rows,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{ContractingAffine, Coordinate};

    #[test]
    fn ols_on_exact_line() {
        let (s, i, se) = ols(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-15);
        assert!((i - 1.0).abs() < 1e-15);
        assert!(se.abs() < 1e-7);
    }

    #[test]
    fn contracting_affine_slope_is_two() {
        let cfg = FdOracleConfig {
            gamma_grid: vec![0.0, 0.1, 0.2],
            steps_per_run: 200,
            runs_per_gamma: 2,
            spinup: 200,
            seed: 1,
            initial_box: None,
            weighted: false,
        };
        let fit = fd_regression(&ContractingAffine, &Coordinate(0), &cfg).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-8);
        for row in &fit.rows {
            assert!((row.mean_phi - 2.0 * row.gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_weights_match_ols() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.1, 0.9, 2.2, 2.8];
        let a = ols(&xs, &ys);
        let b = wls(&xs, &ys, &[3.0; 4]);
        assert!(
            (a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-14 && (a.2 - b.2).abs() < 1e-14
        );
    }

    #[test]
    fn grid_must_be_sorted_with_three_points() {
        let mut cfg = FdOracleConfig::centered(0.1, 0.04, 9);
        assert!(cfg.validate().is_ok());
        cfg.gamma_grid = vec![0.0, 0.1];
        assert!(cfg.validate().is_err());
        cfg.gamma_grid = vec![0.0, 0.2, 0.1];
        assert!(cfg.validate().is_err());
        cfg.gamma_grid = vec![0.0, 0.1, 0.1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn centered_grid_spans_half_width() {
        let cfg = FdOracleConfig::centered(0.1, 0.04, 9);
        assert_eq!(cfg.gamma_grid.len(), 9);
        assert!((cfg.gamma_grid[0] - 0.06).abs() < 1e-15);
        assert!((cfg.gamma_grid[8] - 0.14).abs() < 1e-15);
    }
}
