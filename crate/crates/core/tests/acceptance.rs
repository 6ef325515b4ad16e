//! Exit criteria, one line per criterion. Runs as a plain binary so every line is
//! printed even when an earlier criterion fails.
//!
//!     cargo test --release -p linresp --test acceptance

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use linresp::curvature::{unstable_contribution, CurvatureOptions};
use linresp::maps::{
    ContractingAffine, Coordinate, Cosine, ExpandingCircle, LinearCombination, Solenoid,
};
use linresp::model::{validate_observable, validate_system_with, ValidationOptions};
use linresp::oracle::{fd_regression, FdOracleConfig};
use linresp::orbit::{generate_orbit, random_initial_state};
use linresp::response::replicate_seeds;
use linresp::shadow::{NilssFactorization, ShadowForcing};
use linresp::studies::{consecutive_seeds, scaling_study, ScalingAxis};
use linresp::tangent::{run_tangent_sweep, TangentConfig};
use linresp::{compute_response, MapSystem, ResponseConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn solenoid_defaults() -> ResponseConfig {
    ResponseConfig::default()
}

/// Contracting affine map: derivative 2 to 1e-6 in under a second.
fn analytic_oracle() -> Outcome {
    let cfg = ResponseConfig {
        segments: 50,
        segment_steps: 20,
        unstable_dim: Some(0),
        ..ResponseConfig::default()
    };
    let start = Instant::now();
    let report = compute_response(&ContractingAffine, &Coordinate(0), &cfg).expect("affine run");
    let elapsed = start.elapsed();
    let err = (report.data.derivative - ContractingAffine::analytic_derivative()).abs();
    check(
        err <= 1e-6 && elapsed < Duration::from_secs(1),
        format!(
            "derivative {:.12} |err| {err:.2e} (<= 1e-6), {elapsed:.2?} (< 1 s)",
            report.data.derivative
        ),
    )
}

/// Mean of 8 solenoid replicas against the finite-difference slope, 3 combined
/// standard errors.
fn solenoid_vs_fd() -> Outcome {
    let cfg = solenoid_defaults();
    let flr = replicate_seeds(&Solenoid, &Coordinate(0), &cfg, &consecutive_seeds(0, 8))
        .expect("replicas");
    let fd = fd_regression(
        &Solenoid,
        &Coordinate(0),
        &FdOracleConfig::centered(0.1, 0.04, 9),
    )
    .expect("fd");
    let se = (flr.std.powi(2) / flr.rows.len() as f64 + fd.slope_stderr.powi(2)).sqrt();
    let gap = (flr.mean - fd.slope).abs();
    check(
        flr.failures.is_empty() && gap <= 3.0 * se,
        format!(
            "flr {:.5} (std {:.5}, n {}) fd {:.5} +- {:.5}; gap {gap:.5} <= 3 se = {:.5}",
            flr.mean,
            flr.std,
            flr.rows.len(),
            fd.slope,
            fd.slope_stderr,
            3.0 * se
        ),
    )
}

fn scaling_a() -> Outcome {
    let study = scaling_study(
        &Solenoid,
        &Coordinate(0),
        &solenoid_defaults(),
        ScalingAxis::Segments,
        &[125, 250, 500, 1000, 2000],
        &consecutive_seeds(0, 8),
    )
    .expect("A study");
    let stds: Vec<String> = study
        .rows
        .iter()
        .map(|r| format!("{}:{:.4}", r.value, r.std))
        .collect();
    let slope = study.loglog_slope.unwrap_or(f64::NAN);
    check(
        (-0.7..=-0.3).contains(&slope),
        format!(
            "std [{}] loglog slope {slope:.3} in [-0.7, -0.3]",
            stds.join(" ")
        ),
    )
}

fn scaling_w() -> Outcome {
    let study = scaling_study(
        &Solenoid,
        &Coordinate(0),
        &solenoid_defaults(),
        ScalingAxis::Window,
        &[2, 5, 10, 20, 40],
        &consecutive_seeds(0, 8),
    )
    .expect("W study");
    let stds: Vec<String> = study
        .rows
        .iter()
        .map(|r| format!("{}:{:.4}", r.value, r.std))
        .collect();
    let slope = study.loglog_slope.unwrap_or(f64::NAN);
    let at10 = study
        .rows
        .iter()
        .find(|r| r.value == 10)
        .map_or(f64::NAN, |r| r.std);
    let reference = 0.016;
    let slope_ok = (0.3..=0.7).contains(&slope);
    let level_ok = at10 >= reference / 3.0 && at10 <= reference * 3.0;
    check(
        slope_ok && level_ok,
        format!(
            "std [{}] loglog slope {slope:.3} in [0.3, 0.7]: {}; std(W=10) {at10:.4} within x3 of {reference}: {}",
            stds.join(" "),
            verdict(slope_ok),
            verdict(level_ok)
        ),
    )
}

/// Fully expanding circle map against a long-run finite-difference regression.
fn circle_vs_fd() -> Outcome {
    let start = Instant::now();
    let cfg = ResponseConfig {
        gamma: 0.3,
        ..ResponseConfig::default()
    };
    let flr = replicate_seeds(&ExpandingCircle, &Cosine(0), &cfg, &consecutive_seeds(0, 8))
        .expect("replicas");
    let mut oracle = FdOracleConfig::centered(0.3, 0.1, 9);
    oracle.steps_per_run = 1_000_000;
    let fd = fd_regression(&ExpandingCircle, &Cosine(0), &oracle).expect("fd");
    let elapsed = start.elapsed();
    let se = (flr.std.powi(2) / flr.rows.len() as f64 + fd.slope_stderr.powi(2)).sqrt();
    let gap = (flr.mean - fd.slope).abs();
    check(
        flr.failures.is_empty() && gap <= 3.0 * se && elapsed < Duration::from_secs(60),
        format!(
            "flr {:.5} (std {:.5}) fd {:.5} +- {:.5}; gap {gap:.5} <= 3 sigma = {:.5}; {elapsed:.2?} (< 60 s)",
            flr.mean,
            flr.std,
            fd.slope,
            fd.slope_stderr,
            3.0 * se
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// The deterministic property checks, all on the solenoid at default settings.
fn property_suite() -> Outcome {
    let cfg = solenoid_defaults();
    let orbit = generate_orbit(&Solenoid, &Coordinate(0), &cfg.orbit_config()).expect("orbit");
    let sweep = run_tangent_sweep(
        &Solenoid,
        &orbit,
        &TangentConfig {
            unstable_dim: 2,
            seed: cfg.effective_tangent_seed(),
            store_steps: false,
        },
    )
    .expect("sweep");
    let records = &sweep.records;
    let mut lines = Vec::new();
    let mut all = true;
    let mut item = |ok: bool, text: String| {
        all &= ok;
        lines.push(format!("{}: {text}", verdict(ok)));
    };

    let orth = records
        .iter()
        .map(|r| (r.q.transpose() * &r.q - DMatrix::identity(2, 2)).amax())
        .fold(0.0, f64::max);
    item(orth <= 1e-10, format!("max |Q'Q - I| {orth:.1e} <= 1e-10"));

    let factor = NilssFactorization::new(records).expect("factorization");
    let plain = factor.solve(records, ShadowForcing::Plain);
    let windowed = factor.solve(records, ShadowForcing::Windowed);
    let uc = unstable_contribution(
        &Solenoid,
        &orbit,
        records,
        &windowed.a,
        &CurvatureOptions::default(),
    )
    .expect("uc");
    item(
        uc.max_projection_residual <= 1e-8,
        format!(
            "max |Q'r| after projection {:.1e} <= 1e-8",
            uc.max_projection_residual
        ),
    );

    let residual = plain.constraint_residual.max(windowed.constraint_residual);
    let backward = plain
        .constraint_backward_error
        .max(windowed.constraint_backward_error);
    item(
        residual <= 1e-8,
        format!("NILSS constraint residual {residual:.1e} <= 1e-8 (relative backward error {backward:.1e})"),
    );

    // objective along the constraint manifold after perturbing a_0; short segments keep
    // the chained products of R representable
    let short_cfg = ResponseConfig {
        segment_steps: 5,
        segments: 6,
        ..cfg.clone()
    };
    let short_orbit =
        generate_orbit(&Solenoid, &Coordinate(0), &short_cfg.orbit_config()).expect("short orbit");
    let short_sweep = run_tangent_sweep(
        &Solenoid,
        &short_orbit,
        &TangentConfig {
            unstable_dim: 2,
            seed: 5,
            store_steps: false,
        },
    )
    .expect("short sweep");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut min_increase = f64::INFINITY;
    for _ in 0..20 {
        let short = &short_sweep.records[..];
        let sol = NilssFactorization::new(short)
            .expect("short")
            .solve(short, ShadowForcing::Plain);
        let mut delta = nalgebra::DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        delta *= 1e-3 / delta.norm();
        let mut a = sol.a[0].clone() + delta;
        let mut objective = 2.0 * short[0].d.dot(&a) + a.dot(&(&short[0].c * &a));
        for k in 1..short.len() {
            a = &short[k - 1].r * &a + &short[k - 1].b;
            objective += 2.0 * short[k].d.dot(&a) + a.dot(&(&short[k].c * &a));
        }
        min_increase = min_increase.min((objective - sol.objective) / sol.objective.abs());
    }
    item(
        min_increase >= 0.0,
        format!("objective never decreases under |delta a_0| = 1e-3 (min relative change {min_increase:.1e})"),
    );

    let base = compute_response(&Solenoid, &Coordinate(0), &cfg)
        .expect("base")
        .data
        .derivative;
    let shifted_obs = LinearCombination {
        terms: vec![(1.0, &Coordinate(0))],
        offset: 3.5,
    };
    let shifted = compute_response(&Solenoid, &shifted_obs, &cfg)
        .expect("shifted")
        .data
        .derivative;
    let shift_err = relative(base, shifted);
    item(
        shift_err <= 1e-8,
        format!("Phi + c changes derivative by {shift_err:.1e} <= 1e-8 relative"),
    );

    let d2 = compute_response(&Solenoid, &Cosine(1), &cfg)
        .expect("cos")
        .data
        .derivative;
    let combo = LinearCombination {
        terms: vec![(2.0, &Coordinate(0)), (-0.7, &Cosine(1))],
        offset: 0.0,
    };
    let dc = compute_response(&Solenoid, &combo, &cfg)
        .expect("combo")
        .data
        .derivative;
    let lin_err = relative(dc, 2.0 * base - 0.7 * d2);
    item(
        lin_err <= 1e-8,
        format!("linearity in Phi {lin_err:.1e} <= 1e-8 relative"),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let r0 = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let zero = unstable_contribution(
        &Solenoid,
        &orbit,
        records,
        &windowed.a,
        &CurvatureOptions {
            discard_segments: 10,
            initial_r: None,
        },
    )
    .expect("uc zero");
    let injected = unstable_contribution(
        &Solenoid,
        &orbit,
        records,
        &windowed.a,
        &CurvatureOptions {
            discard_segments: 10,
            initial_r: Some(r0),
        },
    )
    .expect("uc injected");
    let forget = relative(zero.value, injected.value);
    let first_gap = (zero.trace_terms[0] - injected.trace_terms[0]).abs();
    item(
        forget <= 0.01 && first_gap > 0.0,
        format!(
            "U.C. with random r0 vs 0 after 10 discarded segments {forget:.1e} <= 1% (first-segment trace gap {first_gap:.1e})"
        ),
    );

    let mut worst = 0.0f64;
    let systems: [(&dyn MapSystem, f64); 3] = [
        (&Solenoid, 0.1),
        (&ContractingAffine, 0.1),
        (&ExpandingCircle, 0.3),
    ];
    for (k, (sys, gamma)) in systems.into_iter().enumerate() {
        let probes: Vec<_> = (0..100)
            .map(|i| random_initial_state(sys, None, 1000 * k as u64 + i).unwrap())
            .collect();
        let report = validate_system_with(
            sys,
            &probes,
            gamma,
            &ValidationOptions {
                tolerance: 1e-5,
                ..ValidationOptions::default()
            },
        )
        .expect("validation");
        worst = worst.max(report.worst());
    }
    let probes = [nalgebra::DVector::from_vec(vec![0.3, 1.0, 2.0])];
    worst = worst.max(validate_observable(&Coordinate(0), &probes, 1e-6, 0).unwrap());
    worst = worst.max(validate_observable(&Cosine(1), &probes, 1e-6, 0).unwrap());
    item(
        worst <= 1e-5,
        format!("callbacks vs central differences {worst:.1e} <= 1e-5 relative"),
    );

    let mut detail = String::new();
    for l in &lines {
        detail.push_str("\n      ");
        detail.push_str(l);
    }
    check(all, detail)
}

fn determinism() -> Outcome {
    let cfg = ResponseConfig {
        segments: 200,
        seed: 42,
        ..ResponseConfig::default()
    };
    let a = compute_response(&Solenoid, &Coordinate(0), &cfg).expect("first");
    let b = compute_response(&Solenoid, &Coordinate(0), &cfg).expect("second");
    let ja = serde_json::to_string(&a.data).unwrap();
    let jb = serde_json::to_string(&b.data).unwrap();
    check(
        ja == jb,
        format!("data sections of two runs identical ({} bytes)", ja.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 analytic oracle (contracting affine)", analytic_oracle),
        ("2 solenoid vs finite differences", solenoid_vs_fd),
        ("3 A-scaling of the spread", scaling_a),
        ("4 W-scaling of the spread", scaling_w),
        ("5 expanding circle vs finite differences", circle_vs_fd),
        ("6 property suite", property_suite),
        ("7 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        println!(
            "[{}] criterion {name} ({:.1?}): {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            start.elapsed(),
            outcome.detail
        );
        if !outcome.passed {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join("; "));
        std::process::exit(1);
    }
}
