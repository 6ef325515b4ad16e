//! First-order segmented tangent sweep.
//!
//! Propagates `u` homogeneous solutions `e`, the inhomogeneous solution `v'` forced by
//! `X` and `v~'` forced by `psi X`, accumulates the trapezoid-weighted Gram data
//! `C, d, d~` of each segment and renormalizes with a QR factorization at every
//! segment interface.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::{
    column, qr_positive, symmetric_extreme_eigenvalues, trapezoid_weight, CompensatedMatrix,
};
use crate::model::MapSystem;
use crate::orbit::Orbit;

/// Smallest admissible diagonal entry of `R` before the basis counts as collapsed.
pub const MIN_R_DIAGONAL: f64 = 1e-30;

/// Largest `R` diagonal before a warning that segments are too long.
pub const GROWTH_WARNING: f64 = 1e12;

/// Tangent solutions at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    /// `M x u`, columns are the homogeneous solutions.
    pub e: DMatrix<f64>,
    pub v_prime: DVector<f64>,
    pub vt_prime: DVector<f64>,
}

impl TangentState {
    pub fn is_finite(&self) -> bool {
        self.e
            .iter()
            .chain(self.v_prime.iter())
            .chain(self.vt_prime.iter())
            .all(|v| v.is_finite())
    }
}

/// Everything the later stages need from one segment.
#[derive(Debug, Clone)]
pub struct SegmentRecord {
    pub index: usize,
    /// State at step 0 of this segment, used to replay the recursion.
    pub start: TangentState,
    /// Orthonormal factor of `e` at the end of the segment (`Q_{alpha+1}`).
    pub q: DMatrix<f64>,
    /// Upper-triangular factor with positive diagonal (`R_{alpha+1}`).
    pub r: DMatrix<f64>,
    pub b: DVector<f64>,
    pub bt: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub dt: DVector<f64>,
    pub e_end: DMatrix<f64>,
    pub v_end: DVector<f64>,
    pub vt_end: DVector<f64>,
    /// Per-step states `0..=N`, kept only when requested.
    pub steps: Option<Vec<TangentState>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentConfig {
    pub unstable_dim: usize,
    /// Seed for the random initial basis.
    pub seed: u64,
    /// Keep every per-step tangent state in the records.
    pub store_steps: bool,
}

#[derive(Debug, Clone)]
pub struct TangentSweep {
    pub records: Vec<SegmentRecord>,
    pub terminal: TangentState,
}

/// Per-segment diagnostics of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDiagnostics {
    pub r_diagonals: Vec<Vec<f64>>,
    /// Condition number of each `C`.
    pub c_condition: Vec<f64>,
    pub max_r_diagonal: f64,
    pub lyapunov_exponents: Vec<f64>,
}

/// Applies `f_*` at `x` to every column of `m`.
pub fn apply_jacobian<S: MapSystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    gamma: f64,
    m: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.ncols() {
        out.set_column(i, &sys.jacobian_vector(x, gamma, &column(m, i)));
    }
    out
}

/// Advances tangent solutions from global step `k` to `k + 1`.
pub fn propagate<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    k: isize,
    state: &TangentState,
) -> TangentState {
    let x = orbit.state(k);
    let gamma = orbit.gamma;
    let forcing = orbit.forcing(k + 1);
    let psi = orbit.psi(k + 1);
    TangentState {
        e: apply_jacobian(sys, x, gamma, &state.e),
        v_prime: sys.jacobian_vector(x, gamma, &state.v_prime) + forcing,
        vt_prime: sys.jacobian_vector(x, gamma, &state.vt_prime) + forcing * psi,
    }
}

/// Random orthonormal `M x u` basis from a seeded Gaussian matrix.
pub fn initial_basis(m: usize, u: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, u, |_, _| rng.sample::<f64, _>(StandardNormal));
    qr_positive(&g).0
}

/// Runs one segment `alpha` from `input`, returning its record and the renormalized
/// initial state of segment `alpha + 1`.
pub fn sweep_segment<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    alpha: usize,
    input: TangentState,
    store_steps: bool,
) -> Result<(SegmentRecord, TangentState)> {
    let n_steps = orbit.segment_steps;
    let u = input.e.ncols();
    let m = orbit.dim();
    if input.e.nrows() != m || input.v_prime.len() != m || input.vt_prime.len() != m {
        return Err(Error::DimensionMismatch {
            callback: "tangent state",
            expected: m,
            got: input.v_prime.len(),
        });
    }
    if u > m {
        return Err(Error::config(format!(
            "cannot track {u} unstable directions in dimension {m}"
        )));
    }

    let mut c = CompensatedMatrix::zeros(u, u);
    let mut d = CompensatedMatrix::zeros(u, 1);
    let mut dt = CompensatedMatrix::zeros(u, 1);
    let mut steps = store_steps.then(|| Vec::with_capacity(n_steps + 1));
    let start = input.clone();
    let mut state = input;
    let base = (alpha * n_steps) as isize;
    for n in 0..=n_steps {
        let w = trapezoid_weight(n, n_steps);
        let et = state.e.transpose();
        c.add_scaled((&et * &state.e).as_slice(), w);
        d.add_scaled((&et * &state.v_prime).as_slice(), w);
        dt.add_scaled((&et * &state.vt_prime).as_slice(), w);
        if n == n_steps {
            break;
        }
        let next = propagate(sys, orbit, base + n as isize, &state);
        if !next.is_finite() {
            return Err(Error::BlowUp {
                stage: Stage::Tangent,
                step: base as usize + n + 1,
            });
        }
        if let Some(s) = steps.as_mut() {
            s.push(std::mem::replace(&mut state, next));
        } else {
            state = next;
        }
    }

    let (q, r, b, bt, next) = renormalize(&state, alpha)?;
    let TangentState {
        e: e_end,
        v_prime: v_end,
        vt_prime: vt_end,
    } = state.clone();
    if let Some(s) = steps.as_mut() {
        s.push(state);
    }
    let record = SegmentRecord {
        index: alpha,
        start,
        q,
        r,
        b,
        bt,
        c: symmetrize(c.value()),
        d: column(&d.value(), 0),
        dt: column(&dt.value(), 0),
        e_end,
        v_end,
        vt_end,
        steps,
    };
    Ok((record, next))
}

type Renormalized = (
    DMatrix<f64>,
    DMatrix<f64>,
    DVector<f64>,
    DVector<f64>,
    TangentState,
);

/// QR of `e` and projection of `v', v~'` off the new basis.
fn renormalize(state: &TangentState, segment: usize) -> Result<Renormalized> {
    let u = state.e.ncols();
    let (q, r) = qr_positive(&state.e);
    let min_diag = r.diagonal().iter().copied().fold(f64::INFINITY, f64::min);
    if u > 0 && (min_diag.is_nan() || min_diag < MIN_R_DIAGONAL) {
        return Err(Error::DegenerateBasis { segment, min_diag });
    }
    let qt = q.transpose();
    let b = &qt * &state.v_prime;
    let bt = &qt * &state.vt_prime;
    let next = TangentState {
        e: q.clone(),
        v_prime: &state.v_prime - &q * &b,
        vt_prime: &state.vt_prime - &q * &bt,
    };
    Ok((q, r, b, bt, next))
}

/// Propagates `initial`, taken at step `-L`, through the orbit's lead-in to step 0,
/// renormalizing every `N` steps and once more at step 0.
pub fn spin_up_tangent<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    initial: TangentState,
) -> Result<TangentState> {
    let lead = orbit.lead as isize;
    if lead == 0 {
        return Ok(initial);
    }
    let n_steps = orbit.segment_steps as isize;
    let mut state = initial;
    for k in -lead..0 {
        state = propagate(sys, orbit, k, &state);
        if !state.is_finite() {
            return Err(Error::BlowUp {
                stage: Stage::Tangent,
                step: (k + lead + 1) as usize,
            });
        }
        if (k + 1).rem_euclid(n_steps) == 0 {
            state = renormalize(&state, 0)?.4;
        }
    }
    Ok(state)
}

/// Sweeps all `A` segments from a random orthonormal basis and `v' = v~' = 0` placed
/// at the start of the orbit's lead-in.
pub fn run_tangent_sweep<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    cfg: &TangentConfig,
) -> Result<TangentSweep> {
    let m = orbit.dim();
    let initial = TangentState {
        e: initial_basis(m, cfg.unstable_dim, cfg.seed),
        v_prime: DVector::zeros(m),
        vt_prime: DVector::zeros(m),
    };
    let start = spin_up_tangent(sys, orbit, initial)?;
    run_tangent_sweep_from(sys, orbit, start, cfg.store_steps)
}

/// Like [`run_tangent_sweep`] with an explicit state at step 0; the lead-in is not used.
pub fn run_tangent_sweep_from<S: MapSystem + ?Sized>(
    sys: &S,
    orbit: &Orbit,
    initial: TangentState,
    store_steps: bool,
) -> Result<TangentSweep> {
    if initial.e.ncols() > orbit.dim() {
        return Err(Error::config(format!(
            "unstable dimension {} exceeds state dimension {}",
            initial.e.ncols(),
            orbit.dim()
        )));
    }
    let mut records = Vec::with_capacity(orbit.segments);
    let mut state = initial;
    for alpha in 0..orbit.segments {
        let (record, next) = sweep_segment(sys, orbit, alpha, state, store_steps)?;
        records.push(record);
        state = next;
    }
    let sweep = TangentSweep {
        records,
        terminal: state,
    };
    let largest = max_r_diagonal(&sweep.records);
    if largest > GROWTH_WARNING {
        log::warn!(
            "tangent solutions grew by {largest:.2e} within one segment; consider fewer steps per segment"
        );
    }
    Ok(sweep)
}

fn symmetrize(c: DMatrix<f64>) -> DMatrix<f64> {
    (&c + c.transpose()) * 0.5
}

pub fn max_r_diagonal(records: &[SegmentRecord]) -> f64 {
    records
        .iter()
        .flat_map(|r| r.r.diagonal().iter().copied().collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// Lyapunov exponent estimates: the segment-average of `ln R_ii / N`.
pub fn lyapunov_exponents(records: &[SegmentRecord], segment_steps: usize) -> Vec<f64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let u = first.r.nrows();
    (0..u)
        .map(|i| {
            records.iter().map(|rec| rec.r[(i, i)].ln()).sum::<f64>()
                / (records.len() * segment_steps) as f64
        })
        .collect()
}

pub fn diagnostics(records: &[SegmentRecord], segment_steps: usize) -> SweepDiagnostics {
    SweepDiagnostics {
        r_diagonals: records
            .iter()
            .map(|rec| rec.r.diagonal().iter().copied().collect())
            .collect(),
        c_condition: records
            .iter()
            .map(|rec| {
                let (lo, hi) = symmetric_extreme_eigenvalues(&rec.c);
                hi / lo
            })
            .collect(),
        max_r_diagonal: max_r_diagonal(records),
        lyapunov_exponents: lyapunov_exponents(records, segment_steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{ContractingAffine, Coordinate, Solenoid};
    use crate::orbit::{generate_orbit, OrbitConfig};

    fn solenoid_orbit(segments: usize) -> Orbit {
        let cfg = OrbitConfig {
            segment_steps: 20,
            segments,
            window: 3,
            spinup: 100,
            lead: 0,
            seed: 11,
            gamma: 0.1,
            initial_box: None,
        };
        generate_orbit(&Solenoid, &Coordinate(0), &cfg).unwrap()
    }

    #[test]
    fn records_are_orthonormal_with_positive_r() {
        let orbit = solenoid_orbit(30);
        let cfg = TangentConfig {
            unstable_dim: 2,
            seed: 1,
            store_steps: false,
        };
        let sweep = run_tangent_sweep(&Solenoid, &orbit, &cfg).unwrap();
        assert_eq!(sweep.records.len(), 30);
        for rec in &sweep.records {
            let err = (rec.q.transpose() * &rec.q - DMatrix::identity(2, 2)).amax();
            assert!(err < 1e-10);
            assert!(rec.r.diagonal().iter().all(|&v| v > 0.0));
            assert_eq!(rec.r[(1, 0)], 0.0);
            assert!(symmetric_extreme_eigenvalues(&rec.c).0 > 0.0);
            assert!((&rec.q * &rec.r - &rec.e_end).amax() < 1e-9 * rec.e_end.amax());
        }
    }

    #[test]
    fn interface_projection_removes_basis_component() {
        let orbit = solenoid_orbit(5);
        let cfg = TangentConfig {
            unstable_dim: 2,
            seed: 4,
            store_steps: false,
        };
        let sweep = run_tangent_sweep(&Solenoid, &orbit, &cfg).unwrap();
        for pair in sweep.records.windows(2) {
            let next = &pair[1].start;
            assert_eq!(next.e, pair[0].q);
            let scale = pair[0].v_end.norm().max(1.0);
            assert!((pair[0].q.transpose() * &next.v_prime).amax() < 1e-12 * scale);
        }
    }

    #[test]
    fn zero_unstable_dim_leaves_v_unprojected() {
        let cfg = OrbitConfig {
            segment_steps: 4,
            segments: 3,
            window: 0,
            spinup: 10,
            lead: 0,
            seed: 0,
            gamma: 1.0,
            initial_box: None,
        };
        let orbit = generate_orbit(&ContractingAffine, &Coordinate(0), &cfg).unwrap();
        let sweep = run_tangent_sweep(
            &ContractingAffine,
            &orbit,
            &TangentConfig {
                unstable_dim: 0,
                seed: 0,
                store_steps: false,
            },
        )
        .unwrap();
        for rec in &sweep.records {
            assert_eq!(rec.q.shape(), (1, 0));
            assert_eq!(rec.c.shape(), (0, 0));
            assert_eq!(rec.d.len(), 0);
        }
        // v' = sum of 0.5^j over 12 steps from zero
        let expected: f64 = (0..12).map(|j| 0.5f64.powi(j)).sum();
        assert!((sweep.terminal.v_prime[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn renormalization_by_hand() {
        let state = TangentState {
            e: DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]),
            v_prime: DVector::from_vec(vec![1.0, 1.0, 1.0]),
            vt_prime: DVector::zeros(3),
        };
        let (q, r, b, _, next) = renormalize(&state, 0).unwrap();
        assert_eq!(
            q,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        );
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        assert_eq!(b, DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(next.v_prime, DVector::from_vec(vec![0.0, 0.0, 1.0]));
    }

    #[test]
    fn collapsed_basis_is_degenerate() {
        let state = TangentState {
            e: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
            v_prime: DVector::zeros(2),
            vt_prime: DVector::zeros(2),
        };
        assert!(matches!(
            renormalize(&state, 7),
            Err(Error::DegenerateBasis { segment: 7, .. })
        ));
    }

    #[test]
    fn lead_in_carries_forcing_into_segment_zero() {
        let cfg = OrbitConfig {
            segment_steps: 20,
            segments: 2,
            window: 0,
            spinup: 10,
            lead: 40,
            seed: 0,
            gamma: 1.0,
            initial_box: None,
        };
        let orbit = generate_orbit(&ContractingAffine, &Coordinate(0), &cfg).unwrap();
        let tc = TangentConfig {
            unstable_dim: 0,
            seed: 0,
            store_steps: false,
        };
        let sweep = run_tangent_sweep(&ContractingAffine, &orbit, &tc).unwrap();
        let expected: f64 = (0..40).map(|j| 0.5f64.powi(j)).sum();
        assert!((sweep.records[0].start.v_prime[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn stored_steps_satisfy_recursions() {
        let orbit = solenoid_orbit(3);
        let cfg = TangentConfig {
            unstable_dim: 2,
            seed: 9,
            store_steps: true,
        };
        let sweep = run_tangent_sweep(&Solenoid, &orbit, &cfg).unwrap();
        let rec = &sweep.records[1];
        let steps = rec.steps.as_ref().unwrap();
        assert_eq!(steps.len(), 21);
        for n in [0usize, 7, 19] {
            let k = 20 + n;
            let x = orbit.state(k as isize);
            let e_next = apply_jacobian(&Solenoid, x, 0.1, &steps[n].e);
            assert!((e_next - &steps[n + 1].e).amax() <= 1e-12 * steps[n + 1].e.amax());
            let v_next =
                Solenoid.jacobian_vector(x, 0.1, &steps[n].v_prime) + orbit.forcing(k as isize + 1);
            assert!((v_next - &steps[n + 1].v_prime).amax() <= 1e-12 * steps[n + 1].v_prime.amax());
        }
        assert_eq!(steps[20].e, rec.e_end);
    }
}
