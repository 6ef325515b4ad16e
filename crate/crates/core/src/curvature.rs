//! Second-order segmented sweep and the unstable contribution.
//!
//! Each of the `u` columns of `r` follows
//!
//! ```text
//! r_{n+1,i} = f_* r_{n,i} + (nabla_{v~_n} f_*) e_{n,i} + psi_{n+1} D(delta f)(x_n) e_{n,i}
//! ```
//!
//! with `v~ = v~' + e a~`. At every interface the columns are projected off
//! `span Q_{alpha+1}` and rewritten on the new basis, `r <- (r - Q Q' r) R^{-1}`, and
//! the segment contributes `Tr(R^{-1} Q' r_N)` to the trace average.
//!
//! `e` and `v~'` are regenerated by replaying the first-order recursion from each
//! record's start state in the same pass, so `(e, v~, r)` stay paired step by step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::{column, right_divide_upper, CompensatedSum};
use crate::model::MapSystem;
use crate::orbit::Orbit;
use crate::tangent::{apply_jacobian, propagate, SegmentRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderState {
    /// `M x u`, column `i` paired with column `i` of `e`.
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct CurvatureOptions {
    /// Leading segments excluded from the trace average.
    pub discard_segments: usize,
    /// Initial `r` for segment zero (projected off the initial basis); zero if unset.
    pub initial_r: Option<DMatrix<f64>>,
}

/// Output of one segment of the second-order sweep.
#[derive(Debug, Clone)]
pub struct SegmentTrace {
    pub trace_term: f64,
    /// `|Q' r_perp|_max / |r_N|_max` after the interface projection.
    pub projection_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnstableContribution {
    pub value: f64,
    pub trace_terms: Vec<f64>,
    pub discarded: usize,
    pub max_projection_residual: f64,
}

/// Runs the second-order recursion over segment `record.index` with `at = a~_alpha`.
pub fn sweep_second_order<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    record: &SegmentRecord,
    at: &DVector<f64>,
    input: SecondOrderState,
) -> Result<(SegmentTrace, SecondOrderState)> {
    let n_steps = orbit.segment_steps;
    let gamma = orbit.gamma;
    let base = record.index * n_steps;
    let u = record.start.e.ncols();
    if input.r.shape() != record.start.e.shape() {
        return Err(Error::DimensionMismatch {
            callback: "second-order state",
            expected: u,
            got: input.r.ncols(),
        });
    }

    let mut tangent = record.start.clone();
    let mut r = input.r;
    for n in 0..n_steps {
        let k = base + n;
        let x = orbit.state(k as isize);
        let vt = &tangent.vt_prime + &tangent.e * at;
        let psi = orbit.psi(k as isize + 1);
        let mut next = apply_jacobian(sys, x, gamma, &r);
        for i in 0..u {
            let ei = column(&tangent.e, i);
            let hess = sys.hessian_vector_vector(x, gamma, &vt, &ei);
            let dx = sys.param_vector_jacobian(x, gamma, &ei);
            let mut col = next.column_mut(i);
            col += hess;
            col.axpy(psi, &dx, 1.0);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                stage: Stage::Curvature,
                step: k + 1,
            });
        }
        r = next;
        tangent = propagate(sys, orbit, k as isize, &tangent);
    }
    debug_assert_eq!(
        tangent.e, record.e_end,
        "replay diverged from the tangent sweep"
    );

    let (trace_term, out, projection_residual) = renormalize(&r, &record.q, &record.r);
    Ok((
        SegmentTrace {
            trace_term,
            projection_residual,
        },
        SecondOrderState { r: out },
    ))
}

/// Interface step: returns `Tr(R^{-1} Q' r)`, `(r - Q Q' r) R^{-1}` and the relative
/// size of `Q' (r - Q Q' r)`.
pub fn renormalize(
    r: &DMatrix<f64>,
    q: &DMatrix<f64>,
    rr: &DMatrix<f64>,
) -> (f64, DMatrix<f64>, f64) {
    if r.ncols() == 0 {
        return (0.0, r.clone(), 0.0);
    }
    let qt_r = q.transpose() * r;
    let trace = rr
        .solve_upper_triangular(&qt_r)
        .expect("R has a positive diagonal")
        .trace();
    let r_perp = r - q * &qt_r;
    let scale = r.amax();
    let residual = if scale > 0.0 {
        (q.transpose() * &r_perp).amax() / scale
    } else {
        0.0
    };
    (trace, right_divide_upper(&r_perp, rr), residual)
}

/// `U.C. = (1 / N(A - K)) sum_{alpha >= K} Tr(R^{-1}_{alpha+1} Q'_{alpha+1} r_{alpha,N})`.
pub fn unstable_contribution<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    records: &[SegmentRecord],
    at: &[DVector<f64>],
    opts: &CurvatureOptions,
) -> Result<UnstableContribution> {
    if records.len() != at.len() {
        return Err(Error::config(
            "one coefficient vector per segment is required",
        ));
    }
    if opts.discard_segments >= records.len() {
        return Err(Error::config(format!(
            "cannot discard {} of {} segments",
            opts.discard_segments,
            records.len()
        )));
    }
    let Some(first) = records.first() else {
        return Err(Error::config("no segments"));
    };
    let (m, u) = first.start.e.shape();
    if u == 0 {
        return Ok(UnstableContribution {
            value: 0.0,
            trace_terms: vec![0.0; records.len()],
            discarded: opts.discard_segments,
            max_projection_residual: 0.0,
        });
    }
    let r0 = match &opts.initial_r {
        Some(r0) => {
            if r0.shape() != (m, u) {
                return Err(Error::config(format!(
                    "initial r must be {m} x {u}, got {} x {}",
                    r0.nrows(),
                    r0.ncols()
                )));
            }
            let q0 = &first.start.e;
            r0 - q0 * (q0.transpose() * r0)
        }
        None => DMatrix::zeros(m, u),
    };

    let mut state = SecondOrderState { r: r0 };
    let mut trace_terms = Vec::with_capacity(records.len());
    let mut max_residual = 0.0f64;
    let mut sum = CompensatedSum::new();
    for (alpha, rec) in records.iter().enumerate() {
        let (trace, next) = sweep_second_order(sys, orbit, rec, &at[alpha], state)?;
        max_residual = max_residual.max(trace.projection_residual);
        if alpha >= opts.discard_segments {
            sum.add(trace.trace_term);
        }
        trace_terms.push(trace.trace_term);
        state = next;
    }
    let kept = records.len() - opts.discard_segments;
    Ok(UnstableContribution {
        value: sum.value() / (kept * orbit.segment_steps) as f64,
        trace_terms,
        discarded: opts.discard_segments,
        max_projection_residual: max_residual,
    })
}
