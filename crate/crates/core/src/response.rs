//! End-to-end linear response: orbit, tangent sweep, two shadowing solves, the
//! shadowing contribution, the second-order sweep and `derivative = S.C. - U.C.`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{unstable_contribution, CurvatureOptions};
use crate::error::{Error, Result};
use crate::maps::SOLENOID_DEFAULT_GAMMA;
use crate::model::{validate_system, MapSystem, Observable};
use crate::orbit::{generate_orbit, Orbit, OrbitConfig, DEFAULT_SPINUP};
use crate::shadow::{shadowing_contribution, NilssFactorization, ShadowForcing};
use crate::tangent::{diagnostics, run_tangent_sweep, TangentConfig, GROWTH_WARNING};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseConfig {
    pub gamma: f64,
    /// Steps per segment `N`.
    pub segment_steps: usize,
    /// Segment count `A`.
    pub segments: usize,
    /// `psi` half-window `W`.
    pub window: usize,
    pub spinup: usize,
    /// Steps over which tangent solutions are propagated before segment zero; 0 starts
    /// them at step 0.
    #[serde(default = "default_tangent_spinup")]
    pub tangent_spinup: usize,
    pub seed: u64,
    /// Overrides [`MapSystem::unstable_dim`].
    #[serde(default)]
    pub unstable_dim: Option<usize>,
    /// Seed of the random initial tangent basis; derived from `seed` if unset.
    #[serde(default)]
    pub tangent_seed: Option<u64>,
    /// Leading segments dropped from the unstable-contribution average.
    #[serde(default)]
    pub discard_segments: usize,
    /// Keep every per-step tangent state instead of replaying segments.
    #[serde(default)]
    pub store_steps: bool,
    /// Check derivative callbacks against finite differences before running.
    #[serde(default = "default_true")]
    pub validate: bool,
    #[serde(default)]
    pub initial_box: Option<Vec<(f64, f64)>>,
}

fn default_true() -> bool {
    true
}

pub const DEFAULT_TANGENT_SPINUP: usize = 100;

fn default_tangent_spinup() -> usize {
    DEFAULT_TANGENT_SPINUP
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self {
            gamma: SOLENOID_DEFAULT_GAMMA,
            segment_steps: 20,
            segments: 1000,
            window: 10,
            spinup: DEFAULT_SPINUP,
            tangent_spinup: DEFAULT_TANGENT_SPINUP,
            seed: 0,
            unstable_dim: None,
            tangent_seed: None,
            discard_segments: 0,
            store_steps: false,
            validate: true,
            initial_box: None,
        }
    }
}

impl ResponseConfig {
    pub fn orbit_config(&self) -> OrbitConfig {
        OrbitConfig {
            segment_steps: self.segment_steps,
            segments: self.segments,
            window: self.window,
            spinup: self.spinup,
            lead: self.tangent_spinup,
            seed: self.seed,
            gamma: self.gamma,
            initial_box: self.initial_box.clone(),
        }
    }

    pub fn effective_tangent_seed(&self) -> u64 {
        self.tangent_seed.unwrap_or_else(|| {
            self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.orbit_config().validate()?;
        if self.discard_segments >= self.segments {
            return Err(Error::config(format!(
                "discard_segments ({}) must be smaller than the segment count ({})",
                self.discard_segments, self.segments
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    pub trace_term: f64,
    pub max_v_norm: f64,
    pub r_diagonal: Vec<f64>,
    pub c_condition: f64,
}

/// Deterministic part of a report: identical for identical configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportData {
    pub derivative: f64,
    pub sc: f64,
    pub uc: f64,
    pub phi_mean: f64,
    pub unstable_dim: usize,
    pub lyapunov_exponents: Vec<f64>,
    pub shadow_constraint_residual: f64,
    pub shadow_constraint_backward_error: f64,
    pub shadow_lagrange_residual: f64,
    pub shadow_objective: f64,
    pub windowed_constraint_residual: f64,
    pub windowed_constraint_backward_error: f64,
    pub windowed_lagrange_residual: f64,
    pub max_projection_residual: f64,
    pub psi_drift: f64,
    pub warnings: Vec<String>,
    pub per_segment: Vec<SegmentDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub orbit_secs: f64,
    pub tangent_secs: f64,
    pub shadow_secs: f64,
    pub curvature_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub config: ResponseConfig,
    pub data: ReportData,
    pub timing: Timing,
}

impl ResponseReport {
    pub fn derivative(&self) -> f64 {
        self.data.derivative
    }
}

/// Runs the full pipeline.
pub fn compute_response<S, O>(sys: &S, obs: &O, cfg: &ResponseConfig) -> Result<ResponseReport>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    cfg.validate()?;
    let start = Instant::now();
    let orbit = generate_orbit(sys, obs, &cfg.orbit_config())?;
    let orbit_secs = start.elapsed().as_secs_f64();
    if cfg.validate {
        let probes = [
            orbit.state(0).clone(),
            orbit.state((orbit.core_steps() / 2) as isize).clone(),
        ];
        let report = validate_system(sys, &probes, cfg.gamma)?;
        if !report.passed() {
            return Err(Error::Validation(report.failures.join("; ")));
        }
    }
    response_on_orbit(sys, obs, &orbit, cfg, start, orbit_secs)
}

/// Runs everything after orbit generation on a caller-supplied orbit.
pub fn compute_response_on_orbit<S, O>(
    sys: &S,
    obs: &O,
    orbit: &Orbit,
    cfg: &ResponseConfig,
) -> Result<ResponseReport>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    cfg.validate()?;
    response_on_orbit(sys, obs, orbit, cfg, Instant::now(), 0.0)
}

fn response_on_orbit<S, O>(
    sys: &S,
    obs: &O,
    orbit: &Orbit,
    cfg: &ResponseConfig,
    start: Instant,
    orbit_secs: f64,
) -> Result<ResponseReport>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    let unstable_dim = cfg.unstable_dim.unwrap_or_else(|| sys.unstable_dim());
    let mut warnings = Vec::new();

    let t = Instant::now();
    let sweep = run_tangent_sweep(
        sys,
        orbit,
        &TangentConfig {
            unstable_dim,
            seed: cfg.effective_tangent_seed(),
            store_steps: cfg.store_steps,
        },
    )?;
    let diag = diagnostics(&sweep.records, orbit.segment_steps);
    if diag.max_r_diagonal > GROWTH_WARNING {
        warnings.push(format!(
            "largest R diagonal {:.3e} exceeds {GROWTH_WARNING:.0e}; consider fewer steps per segment",
            diag.max_r_diagonal
        ));
    }
    let tangent_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let factor = NilssFactorization::new(&sweep.records)?;
    let plain = factor.solve(&sweep.records, ShadowForcing::Plain);
    let windowed = factor.solve(&sweep.records, ShadowForcing::Windowed);
    let sc = shadowing_contribution(sys, obs, orbit, &sweep.records, &plain)?;
    let shadow_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let uc = unstable_contribution(
        sys,
        orbit,
        &sweep.records,
        &windowed.a,
        &CurvatureOptions {
            discard_segments: cfg.discard_segments,
            initial_r: None,
        },
    )?;
    let curvature_secs = t.elapsed().as_secs_f64();

    let per_segment = (0..sweep.records.len())
        .map(|i| SegmentDiagnostics {
            trace_term: uc.trace_terms[i],
            max_v_norm: sc.max_v_norm[i],
            r_diagonal: diag.r_diagonals[i].clone(),
            c_condition: diag.c_condition[i],
        })
        .collect();
    let data = ReportData {
        derivative: sc.value - uc.value,
        sc: sc.value,
        uc: uc.value,
        phi_mean: orbit.phi_mean,
        unstable_dim,
        lyapunov_exponents: diag.lyapunov_exponents,
        shadow_constraint_residual: plain.constraint_residual,
        shadow_constraint_backward_error: plain.constraint_backward_error,
        shadow_lagrange_residual: plain.lagrange_residual,
        shadow_objective: plain.objective,
        windowed_constraint_residual: windowed.constraint_residual,
        windowed_constraint_backward_error: windowed.constraint_backward_error,
        windowed_lagrange_residual: windowed.lagrange_residual,
        max_projection_residual: uc.max_projection_residual,
        psi_drift: orbit.psi_drift,
        warnings,
        per_segment,
    };
    Ok(ResponseReport {
        config: cfg.clone(),
        data,
        timing: Timing {
            orbit_secs,
            tangent_secs,
            shadow_secs,
            curvature_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub rep: usize,
    pub seed: u64,
    pub sc: f64,
    pub uc: f64,
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator) of the successful replicas.
    pub std: f64,
    pub rows: Vec<ReplicaRow>,
    pub failures: Vec<ReplicaFailure>,
}

impl ReplicateSummary {
    pub fn derivatives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.derivative).collect()
    }
}

/// `reps` replicas with seeds `cfg.seed, cfg.seed + 1, ...`, run in parallel.
pub fn replicate<S, O>(
    sys: &S,
    obs: &O,
    cfg: &ResponseConfig,
    reps: usize,
) -> Result<ReplicateSummary>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    if reps < 2 {
        return Err(Error::config("replicate needs at least 2 replicas"));
    }
    let seeds: Vec<u64> = (0..reps as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    replicate_seeds(sys, obs, cfg, &seeds)
}

/// One replica per seed; a failed replica is reported without stopping the others.
pub fn replicate_seeds<S, O>(
    sys: &S,
    obs: &O,
    cfg: &ResponseConfig,
    seeds: &[u64],
) -> Result<ReplicateSummary>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    if seeds.is_empty() {
        return Err(Error::config("no replica seeds given"));
    }
    cfg.validate()?;
    let outcomes: Vec<(usize, u64, Result<ResponseReport>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(rep, &seed)| {
            let mut c = cfg.clone();
            c.seed = seed;
            c.tangent_seed = None;
            (rep, seed, compute_response(sys, obs, &c))
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, seed, outcome) in outcomes {
        match outcome {
            Ok(report) => rows.push(ReplicaRow {
                rep,
                seed,
                sc: report.data.sc,
                uc: report.data.uc,
                derivative: report.data.derivative,
            }),
            Err(e) => failures.push(ReplicaFailure {
                rep,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let values: Vec<f64> = rows.iter().map(|r| r.derivative).collect();
    let (mean, std) = mean_and_std(&values);
    Ok(ReplicateSummary {
        mean,
        std,
        rows,
        failures,
    })
}

/// Mean and sample standard deviation; `NaN` where undefined.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
