//! Non-intrusive shadowing: the segment-coupled least-squares problem
//!
//! ```text
//! min  sum_alpha 2 d_alpha' a_alpha + a_alpha' C_alpha a_alpha
//! s.t. a_alpha = R_alpha a_{alpha-1} + b_alpha,   alpha = 1 .. A-1
//! ```
//!
//! and the shadowing contribution `S.C.` built from `v = v' + e a`.
//!
//! Stationarity gives `a = -C^{-1} (d + B' lambda)`; eliminating `a` leaves the Schur
//! complement `B C^{-1} B' lambda = -(b + B C^{-1} d)`, which is symmetric positive
//! definite and block tridiagonal with `u x u` blocks. It is factored once by block
//! Cholesky and reused for both right-hand sides (`b, d` and `b~, d~`). Chaining the
//! constraint from `a_0` is never used: products of `R` overflow quickly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::{trapezoid_weight, CompensatedSum};
use crate::model::{MapSystem, Observable};
use crate::orbit::Orbit;
use crate::tangent::{propagate, SegmentRecord, TangentState};

/// Which inhomogeneous solution the problem is posed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadowForcing {
    /// `v'` forced by `X`, with data `b, d`.
    Plain,
    /// `v~'` forced by `psi X`, with data `b~, d~`.
    Windowed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowingSolution {
    /// One `u`-vector per segment.
    pub a: Vec<DVector<f64>>,
    /// Multipliers of constraints `1 .. A-1`, stored at `alpha - 1`.
    pub multipliers: Vec<DVector<f64>>,
    /// Largest relative stationarity residual over segments.
    pub lagrange_residual: f64,
    /// Largest `|a_alpha - R_alpha a_{alpha-1} - b_alpha| / (1 + |a_alpha|)`.
    pub constraint_residual: f64,
    /// The same residual relative to the size of the terms it cancels,
    /// `|a_alpha| + |R_alpha| |a_{alpha-1}| + |b_alpha|`. Rounding alone puts it near
    /// machine epsilon, whereas the absolute form grows with `|b|`.
    pub constraint_backward_error: f64,
    pub objective: f64,
}

/// Factored Schur complement of the shadowing problem.
pub struct NilssFactorization {
    u: usize,
    c_chol: Vec<Cholesky<f64, Dyn>>,
    c_inv: Vec<DMatrix<f64>>,
    /// Block Cholesky diagonal factors of constraints `1 .. A-1`.
    diag: Vec<Cholesky<f64, Dyn>>,
    /// `L_{k+1,k}` sub-diagonal factors.
    sub: Vec<DMatrix<f64>>,
}

impl NilssFactorization {
    pub fn new(records: &[SegmentRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::config(
                "shadowing problem needs at least one segment",
            ));
        }
        let u = records[0].c.nrows();
        let mut c_chol = Vec::with_capacity(records.len());
        let mut c_inv = Vec::with_capacity(records.len());
        for rec in records {
            let chol = Cholesky::new(rec.c.clone()).ok_or_else(|| Error::Conditioning {
                stage: Stage::Shadow,
                segment: rec.index,
                detail: "C is not positive definite".into(),
            })?;
            c_inv.push(chol.inverse());
            c_chol.push(chol);
        }

        // constraint k couples a_{k-1} and a_k through R_k = records[k-1].r
        let constraints = records.len() - 1;
        let mut diag: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(constraints);
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(constraints.saturating_sub(1));
        for k in 1..=constraints {
            let r_k = &records[k - 1].r;
            let mut s_kk = &c_inv[k] + r_k * &c_inv[k - 1] * r_k.transpose();
            if k > 1 {
                let l: &DMatrix<f64> = &sub[k - 2];
                s_kk -= l * l.transpose();
            }
            let s_kk = (&s_kk + s_kk.transpose()) * 0.5;
            let chol = Cholesky::new(s_kk).ok_or_else(|| Error::Conditioning {
                stage: Stage::Shadow,
                segment: k,
                detail: "Schur complement block lost positive definiteness".into(),
            })?;
            if k < constraints {
                // S_{k+1,k} = -R_{k+1} C_k^{-1};  L_{k+1,k} = S_{k+1,k} L_kk^{-T}
                let s_next = -(&records[k].r * &c_inv[k]);
                let l = chol
                    .l()
                    .solve_lower_triangular(&s_next.transpose())
                    .expect("Cholesky factor has a positive diagonal")
                    .transpose();
                sub.push(l);
            }
            diag.push(chol);
        }
        Ok(Self {
            u,
            c_chol,
            c_inv,
            diag,
            sub,
        })
    }

    /// Solves the problem for one forcing, followed by a few steps of iterative
    /// refinement on the full KKT residual.
    pub fn solve(&self, records: &[SegmentRecord], forcing: ShadowForcing) -> ShadowingSolution {
        let a_count = records.len();
        let (b, d) = data(records, forcing);
        if self.u == 0 {
            return ShadowingSolution {
                a: vec![DVector::zeros(0); a_count],
                multipliers: vec![DVector::zeros(0); a_count - 1],
                lagrange_residual: 0.0,
                constraint_residual: 0.0,
                constraint_backward_error: 0.0,
                objective: 0.0,
            };
        }
        let p: Vec<DVector<f64>> = d.iter().map(|&di| -di).collect();
        let q: Vec<DVector<f64>> = b[..a_count - 1].iter().map(|&bi| bi.clone()).collect();
        let (mut a, mut lambda) = self.solve_kkt(records, &p, &q);
        for _ in 0..REFINEMENT_STEPS {
            let (rp, rq) = kkt_residual(records, &a, &lambda, &p, &q);
            let (da, dl) = self.solve_kkt(records, &rp, &rq);
            for (x, dx) in a.iter_mut().zip(&da) {
                *x += dx;
            }
            for (x, dx) in lambda.iter_mut().zip(&dl) {
                *x += dx;
            }
        }
        finish(records, forcing, a, lambda)
    }

    /// Solves `C a + B' lambda = p`, `B a = q`, where `(B a)_k = a_k - R_k a_{k-1}`.
    fn solve_kkt(
        &self,
        records: &[SegmentRecord],
        p: &[DVector<f64>],
        q: &[DVector<f64>],
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let a_count = records.len();
        let constraints = a_count - 1;
        let c_inv_p: Vec<DVector<f64>> = (0..a_count).map(|i| &self.c_inv[i] * &p[i]).collect();

        // B C^{-1} B' lambda = B C^{-1} p - q
        let rhs: Vec<DVector<f64>> = (1..=constraints)
            .map(|k| &c_inv_p[k] - &records[k - 1].r * &c_inv_p[k - 1] - &q[k - 1])
            .collect();

        let mut y: Vec<DVector<f64>> = Vec::with_capacity(constraints);
        for k in 0..constraints {
            let mut t = rhs[k].clone();
            if k > 0 {
                t -= &self.sub[k - 1] * &y[k - 1];
            }
            let yk = self.diag[k]
                .l()
                .solve_lower_triangular(&t)
                .expect("Cholesky factor has a positive diagonal");
            y.push(yk);
        }
        let mut lambda = vec![DVector::zeros(self.u); constraints];
        for k in (0..constraints).rev() {
            let mut t = y[k].clone();
            if k + 1 < constraints {
                t -= self.sub[k].transpose() * &lambda[k + 1];
            }
            lambda[k] = self.diag[k]
                .l()
                .tr_solve_lower_triangular(&t)
                .expect("Cholesky factor has a positive diagonal");
        }

        let a = (0..a_count)
            .map(|alpha| {
                let g = multiplier_term(records, &lambda, alpha, self.u);
                self.c_chol[alpha].solve(&(&p[alpha] - g))
            })
            .collect();
        (a, lambda)
    }
}

/// Iterative-refinement steps after the direct solve.
const REFINEMENT_STEPS: usize = 2;

/// `(p - C a - B' lambda, q - B a)`.
fn kkt_residual(
    records: &[SegmentRecord],
    a: &[DVector<f64>],
    lambda: &[DVector<f64>],
    p: &[DVector<f64>],
    q: &[DVector<f64>],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let u = a[0].len();
    let rp = records
        .iter()
        .enumerate()
        .map(|(alpha, rec)| {
            &p[alpha] - &rec.c * &a[alpha] - multiplier_term(records, lambda, alpha, u)
        })
        .collect();
    let rq = (1..records.len())
        .map(|k| &q[k - 1] - &a[k] + &records[k - 1].r * &a[k - 1])
        .collect();
    (rp, rq)
}

/// `(B' lambda)_alpha = lambda_alpha - R_{alpha+1}' lambda_{alpha+1}`.
fn multiplier_term(
    records: &[SegmentRecord],
    lambda: &[DVector<f64>],
    alpha: usize,
    u: usize,
) -> DVector<f64> {
    let mut g = DVector::zeros(u);
    if alpha >= 1 {
        g += &lambda[alpha - 1];
    }
    if alpha < lambda.len() {
        g -= records[alpha].r.transpose() * &lambda[alpha];
    }
    g
}

fn data(
    records: &[SegmentRecord],
    forcing: ShadowForcing,
) -> (Vec<&DVector<f64>>, Vec<&DVector<f64>>) {
    match forcing {
        ShadowForcing::Plain => (
            records.iter().map(|r| &r.b).collect(),
            records.iter().map(|r| &r.d).collect(),
        ),
        ShadowForcing::Windowed => (
            records.iter().map(|r| &r.bt).collect(),
            records.iter().map(|r| &r.dt).collect(),
        ),
    }
}

fn finish(
    records: &[SegmentRecord],
    forcing: ShadowForcing,
    a: Vec<DVector<f64>>,
    lambda: Vec<DVector<f64>>,
) -> ShadowingSolution {
    let u = records[0].c.nrows();
    let (b, d) = data(records, forcing);
    let mut objective = CompensatedSum::new();
    let mut lagrange_residual = 0.0f64;
    let mut constraint_residual = 0.0f64;
    let mut constraint_backward_error = 0.0f64;
    for (alpha, rec) in records.iter().enumerate() {
        let ca = &rec.c * &a[alpha];
        objective.add(2.0 * d[alpha].dot(&a[alpha]) + a[alpha].dot(&ca));
        let g = multiplier_term(records, &lambda, alpha, u);
        let scale = ca.norm() + d[alpha].norm() + g.norm();
        let resid = (&ca + d[alpha] + &g).norm();
        if scale > 0.0 {
            lagrange_residual = lagrange_residual.max(resid / scale);
        }
        if alpha >= 1 {
            let r = &records[alpha - 1].r;
            let c = (&a[alpha] - r * &a[alpha - 1] - b[alpha - 1]).norm();
            constraint_residual = constraint_residual.max(c / (1.0 + a[alpha].norm()));
            let size = a[alpha].norm() + r.norm() * a[alpha - 1].norm() + b[alpha - 1].norm();
            if size > 0.0 {
                constraint_backward_error = constraint_backward_error.max(c / size);
            }
        }
    }
    ShadowingSolution {
        a,
        multipliers: lambda,
        lagrange_residual,
        constraint_residual,
        constraint_backward_error,
        objective: objective.value(),
    }
}

/// Solves the shadowing problem through the block-tridiagonal Schur complement.
pub fn solve_nilss(records: &[SegmentRecord], forcing: ShadowForcing) -> Result<ShadowingSolution> {
    Ok(NilssFactorization::new(records)?.solve(records, forcing))
}

/// Solves the full symmetric KKT system in `(a, lambda)` with a dense LU factorization.
///
/// Independent of the Schur-complement route; intended for small problems and checks.
pub fn solve_nilss_dense(
    records: &[SegmentRecord],
    forcing: ShadowForcing,
) -> Result<ShadowingSolution> {
    if records.is_empty() {
        return Err(Error::config(
            "shadowing problem needs at least one segment",
        ));
    }
    let a_count = records.len();
    let u = records[0].c.nrows();
    if u == 0 {
        return Ok(NilssFactorization::new(records)?.solve(records, forcing));
    }
    let (b, d) = data(records, forcing);
    let na = a_count * u;
    let nl = (a_count - 1) * u;
    let mut kkt = DMatrix::zeros(na + nl, na + nl);
    let mut rhs = DVector::zeros(na + nl);
    for (alpha, rec) in records.iter().enumerate() {
        kkt.view_mut((alpha * u, alpha * u), (u, u))
            .copy_from(&rec.c);
        rhs.rows_mut(alpha * u, u).copy_from(&(-d[alpha]));
    }
    let eye = DMatrix::<f64>::identity(u, u);
    for k in 1..a_count {
        let row = na + (k - 1) * u;
        let r_k = &records[k - 1].r;
        kkt.view_mut((row, k * u), (u, u)).copy_from(&eye);
        kkt.view_mut((row, (k - 1) * u), (u, u)).copy_from(&(-r_k));
        kkt.view_mut((k * u, row), (u, u)).copy_from(&eye);
        kkt.view_mut(((k - 1) * u, row), (u, u))
            .copy_from(&(-r_k.transpose()));
        rhs.rows_mut(row, u).copy_from(b[k - 1]);
    }
    let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Conditioning {
        stage: Stage::Shadow,
        segment: 0,
        detail: "dense KKT matrix is singular".into(),
    })?;
    let a = (0..a_count)
        .map(|i| sol.rows(i * u, u).into_owned())
        .collect();
    let lambda = (0..a_count - 1)
        .map(|k| sol.rows(na + k * u, u).into_owned())
        .collect();
    Ok(finish(records, forcing, a, lambda))
}

/// Shadowing contribution and the size of the reconstructed shadowing direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShadowContribution {
    pub value: f64,
    /// `max_n |v_{alpha,n}|` per segment.
    pub max_v_norm: Vec<f64>,
}

/// `S.C. = (1/AN) sum_alpha sum'_n dPhi(x_{alpha,n}) . v_{alpha,n}` with
/// `v = v' + e a`, replaying each segment from its recorded start unless the record
/// carries stored steps.
pub fn shadowing_contribution<S, O>(
    sys: &S,
    obs: &O,
    orbit: &Orbit,
    records: &[SegmentRecord],
    sol: &ShadowingSolution,
) -> Result<ShadowContribution>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    let n_steps = orbit.segment_steps;
    let mut total = CompensatedSum::new();
    let mut max_v_norm = Vec::with_capacity(records.len());
    for (alpha, rec) in records.iter().enumerate() {
        let coeff = &sol.a[alpha];
        let base = alpha * n_steps;
        let mut seg_max = 0.0f64;
        let mut visit = |n: usize, state: &TangentState| {
            let v = &state.v_prime + &state.e * coeff;
            seg_max = seg_max.max(v.norm());
            let grad = obs.gradient(orbit.state((base + n) as isize));
            total.add(trapezoid_weight(n, n_steps) * grad.dot(&v));
        };
        match &rec.steps {
            Some(steps) => {
                for (n, state) in steps.iter().enumerate() {
                    visit(n, state);
                }
            }
            None => {
                let mut state = rec.start.clone();
                for n in 0..=n_steps {
                    visit(n, &state);
                    if n < n_steps {
                        state = propagate(sys, orbit, (base + n) as isize, &state);
                    }
                }
            }
        }
        if !seg_max.is_finite() {
            return Err(Error::BlowUp {
                stage: Stage::Shadow,
                step: base,
            });
        }
        max_v_norm.push(seg_max);
    }
    Ok(ShadowContribution {
        value: total.value() / (records.len() * n_steps) as f64,
        max_v_norm,
    })
}
