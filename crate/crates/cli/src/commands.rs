use std::path::Path;

use serde::Serialize;

use linresp::maps::system_by_name;
use linresp::model::{validate_observable, validate_system, ValidationReport};
use linresp::oracle::fd_regression;
use linresp::orbit::random_initial_state;
use linresp::response::{replicate_seeds, ReportData, Timing};
use linresp::studies::{gamma_sweep, scaling_study, ScalingAxis};
use linresp::{compute_response, MapSystem, Observable};

use crate::output::{config_hash, emit, json_pretty, num, CsvTable};
use crate::settings::{EffectiveConfig, Settings};
use crate::CliError;

type System = (Box<dyn MapSystem>, Box<dyn Observable>);

fn load(settings: &Settings) -> Result<(String, System), CliError> {
    let name = settings.map_name()?;
    let system = system_by_name(&name).expect("name was checked");
    Ok((name, system))
}

#[derive(Serialize)]
struct RunOutput<'a> {
    config: &'a EffectiveConfig,
    config_sha256: String,
    data: ReportData,
    timing: Timing,
}

pub fn run(settings: &Settings, trace_csv: Option<&Path>) -> Result<(), CliError> {
    let (name, (sys, obs)) = load(settings)?;
    let response = settings.response();
    let out = settings.output.as_deref();
    let single = settings.seeds.is_none() && settings.reps.unwrap_or(1) <= 1;

    if single {
        let cfg = EffectiveConfig::new("run", name, response.clone());
        let report = compute_response(sys.as_ref(), obs.as_ref(), &response)?;
        for w in &report.data.warnings {
            log::warn!("{w}");
        }
        if let Some(path) = trace_csv {
            let u = report.data.unstable_dim;
            let mut header = vec![
                "segment".to_string(),
                "trace_term".into(),
                "max_v_norm".into(),
                "c_condition".into(),
            ];
            header.extend((0..u).map(|i| format!("r_diag_{i}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut t = CsvTable::new(&cfg, &header)?;
            for (i, seg) in report.data.per_segment.iter().enumerate() {
                let mut row = vec![
                    i.to_string(),
                    num(seg.trace_term),
                    num(seg.max_v_norm),
                    num(seg.c_condition),
                ];
                row.extend(seg.r_diagonal.iter().map(|&v| num(v)));
                t.row(row)?;
            }
            emit(&t.finish()?, Some(path))?;
        }
        let output = RunOutput {
            config_sha256: config_hash(&cfg),
            config: &cfg,
            data: report.data,
            timing: report.timing,
        };
        return emit(&json_pretty(&output), out);
    }

    let seeds = settings.replica_seeds(1)?;
    let mut cfg = EffectiveConfig::new("run", name, response.clone());
    cfg.seeds = Some(seeds.clone());
    let summary = replicate_seeds(sys.as_ref(), obs.as_ref(), &response, &seeds)?;
    let mut t = CsvTable::new(&cfg, &["rep", "seed", "sc", "uc", "derivative"])?;
    for r in &summary.rows {
        t.row([
            r.rep.to_string(),
            r.seed.to_string(),
            num(r.sc),
            num(r.uc),
            num(r.derivative),
        ])?;
    }
    t.note("mean", num(summary.mean));
    t.note("std", num(summary.std));
    for f in &summary.failures {
        log::warn!("replica {} (seed {}) failed: {}", f.rep, f.seed, f.error);
        t.note(
            "failed",
            format!("rep {} seed {}: {}", f.rep, f.seed, f.error),
        );
    }
    emit(&t.finish()?, out)?;
    if summary.rows.is_empty() {
        return Err(CliError::AllFailed);
    }
    Ok(())
}

pub fn scaling(settings: &Settings, axis: ScalingAxis) -> Result<(), CliError> {
    let (name, (sys, obs)) = load(settings)?;
    let response = settings.response();
    let seeds = settings.replica_seeds(8)?;
    let values = settings.values.clone().unwrap_or_else(|| match axis {
        ScalingAxis::Segments => vec![125, 250, 500, 1000, 2000],
        ScalingAxis::Window => vec![2, 5, 10, 20, 40],
    });
    let command = match axis {
        ScalingAxis::Segments => "scaling-a",
        ScalingAxis::Window => "scaling-w",
    };
    let mut cfg = EffectiveConfig::new(command, name, response.clone());
    cfg.seeds = Some(seeds.clone());
    cfg.values = Some(values.clone());

    let study = scaling_study(sys.as_ref(), obs.as_ref(), &response, axis, &values, &seeds)?;
    let mut t = CsvTable::new(&cfg, &[axis.column_name(), "mean", "std"])?;
    for row in &study.rows {
        t.row([row.value.to_string(), num(row.mean), num(row.std)])?;
    }
    if let Some(slope) = study.loglog_slope {
        t.note("loglog_slope", num(slope));
    }
    let mut all_failed = true;
    for row in &study.rows {
        all_failed &= row.replicas.is_empty();
        for f in &row.failures {
            log::warn!(
                "{}={} seed {} failed: {}",
                axis.column_name(),
                row.value,
                f.seed,
                f.error
            );
            t.note(
                "failed",
                format!(
                    "{}={} seed {}: {}",
                    axis.column_name(),
                    row.value,
                    f.seed,
                    f.error
                ),
            );
        }
    }
    emit(&t.finish()?, settings.output.as_deref())?;
    if all_failed {
        return Err(CliError::AllFailed);
    }
    Ok(())
}

pub fn sweep(settings: &Settings) -> Result<(), CliError> {
    let (name, (sys, obs)) = load(settings)?;
    let response = settings.response();
    let gammas = settings.sweep_gammas();
    let average = settings.average();
    let mut cfg = EffectiveConfig::new("gamma-sweep", name, response.clone());
    cfg.gammas = Some(gammas.clone());
    cfg.average = Some(average.clone());

    let result = gamma_sweep(sys.as_ref(), obs.as_ref(), &response, &gammas, &average)?;
    let mut t = CsvTable::new(&cfg, &["gamma", "mean_phi", "std", "derivative", "fd_line"])?;
    for row in &result.rows {
        t.row([
            num(row.gamma),
            num(row.mean_phi),
            num(row.std),
            num(row.derivative),
            num(row.fd_line),
        ])?;
    }
    t.note("fd_slope", num(result.fd_slope));
    t.note("fd_slope_stderr", num(result.fd_slope_stderr));
    t.note("fd_intercept", num(result.fd_intercept));
    for row in &result.rows {
        if let Some(e) = &row.error {
            log::warn!("gamma={} failed: {e}", row.gamma);
            t.note("failed", format!("gamma {}: {e}", row.gamma));
        }
    }
    emit(&t.finish()?, settings.output.as_deref())?;
    if result.rows.iter().all(|r| r.error.is_some()) {
        return Err(CliError::AllFailed);
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    config: &'a EffectiveConfig,
    config_sha256: String,
    passed: bool,
    system: ValidationReport,
    observable_gradient: f64,
}

pub fn validate(settings: &Settings) -> Result<(), CliError> {
    let (name, (sys, obs)) = load(settings)?;
    let response = settings.response();
    let probes = settings.probes.unwrap_or(10);
    if probes == 0 {
        return Err(CliError::Config("probes must be at least 1".into()));
    }
    let mut cfg = EffectiveConfig::new("validate", name, response.clone());
    cfg.probes = Some(probes);

    let states = (0..probes as u64)
        .map(|i| random_initial_state(sys.as_ref(), None, response.seed.wrapping_add(i)))
        .collect::<linresp::Result<Vec<_>>>()?;
    let report = validate_system(sys.as_ref(), &states, response.gamma)?;
    let observable_gradient = validate_observable(obs.as_ref(), &states, 1e-6, response.seed)?;
    let passed = report.passed() && observable_gradient <= report.tolerance;
    let output = ValidateOutput {
        config_sha256: config_hash(&cfg),
        config: &cfg,
        passed,
        system: report,
        observable_gradient,
    };
    emit(&json_pretty(&output), settings.output.as_deref())?;
    if !passed {
        return Err(CliError::ValidationFailed);
    }
    Ok(())
}

pub fn oracle(settings: &Settings, with_flr: bool) -> Result<(), CliError> {
    let (name, (sys, obs)) = load(settings)?;
    let response = settings.response();
    let oracle = settings.oracle();
    let mut cfg = EffectiveConfig::new("oracle", name, response.clone());
    cfg.oracle = Some(oracle.clone());

    let fit = fd_regression(sys.as_ref(), obs.as_ref(), &oracle)?;
    let flr = if with_flr {
        Some(
            compute_response(sys.as_ref(), obs.as_ref(), &response)?
                .data
                .derivative,
        )
    } else {
        None
    };
    let mut header = vec!["gamma", "mean_phi", "std", "runs", "fitted"];
    if flr.is_some() {
        header.push("flr_line");
    }
    let mut t = CsvTable::new(&cfg, &header)?;
    let center = response.gamma;
    for row in &fit.rows {
        let mut fields = vec![
            num(row.gamma),
            num(row.mean_phi),
            num(row.std),
            row.runs.to_string(),
            num(fit.fitted(row.gamma)),
        ];
        if let Some(d) = flr {
            // tangent line through the fitted mean at the center parameter
            fields.push(num(fit.fitted(center) + d * (row.gamma - center)));
        }
        t.row(fields)?;
    }
    t.note("slope", num(fit.slope));
    t.note("slope_stderr", num(fit.slope_stderr));
    t.note("intercept", num(fit.intercept));
    if let Some(d) = flr {
        t.note("flr_derivative", num(d));
    }
    for (gamma, e) in &fit.dropped {
        t.note("dropped", format!("gamma {gamma}: {e}"));
    }
    emit(&t.finish()?, settings.output.as_deref())
}
