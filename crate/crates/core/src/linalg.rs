//! Small dense linear-algebra helpers shared by the sweeps.

use nalgebra::{DMatrix, DVector};

/// Thin QR factorization `a = q r` with the diagonal of `r` made non-negative.
///
/// `a` is `m x k` with `k <= m`; `q` is `m x k` with orthonormal columns and `r` is
/// `k x k` upper triangular. Zero columns return empty factors.
pub fn qr_positive(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, k) = a.shape();
    assert!(k <= m, "qr_positive needs at least as many rows as columns");
    if k == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(0, 0));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Solves `x r = b` for upper-triangular `r`, i.e. returns `b r^{-1}`.
pub fn right_divide_upper(b: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    if r.nrows() == 0 {
        return DMatrix::zeros(b.nrows(), 0);
    }
    let rt = r.transpose();
    let xt = rt
        .solve_lower_triangular(&b.transpose())
        .expect("triangular factor with zero diagonal");
    xt.transpose()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Element-wise compensated accumulator for a fixed-shape matrix.
#[derive(Debug, Clone)]
pub struct CompensatedMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<CompensatedSum>,
}

impl CompensatedMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![CompensatedSum::new(); rows * cols],
        }
    }

    /// Adds `weight * m`, with `m` given in column-major order.
    pub fn add_scaled(&mut self, m: &[f64], weight: f64) {
        debug_assert_eq!(m.len(), self.rows * self.cols);
        for (cell, &v) in self.cells.iter_mut().zip(m) {
            cell.add(weight * v);
        }
    }

    pub fn value(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(self.rows, self.cols, self.cells.iter().map(|c| c.value()))
    }
}

/// Weight of step `n` of `0..=n_steps` in the trapezoid sum: one half at both ends.
pub fn trapezoid_weight(n: usize, n_steps: usize) -> f64 {
    if n == 0 || n == n_steps {
        0.5
    } else {
        1.0
    }
}

/// Trapezoid sum of a sequence: half weight on the first and last entries.
pub fn trapezoid_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        // a single sample is both end points
        1 => values[0],
        n => {
            let mut acc = CompensatedSum::new();
            for (i, &v) in values.iter().enumerate() {
                acc.add(trapezoid_weight(i, n - 1) * v);
            }
            acc.value()
        }
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::NAN, f64::NAN);
    }
    let eig = m.clone().symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Column `i` of `m` as an owned vector.
pub fn column(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.column(i).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_on_three_points() {
        assert_eq!(trapezoid_sum(&[1.0, 2.0, 3.0]), 4.0);
    }

    #[test]
    fn qr_of_orthogonal_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let (q, r) = qr_positive(&a);
        let q_expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((q - q_expected).norm() < 1e-15);
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-15);
    }

    #[test]
    fn qr_flips_negative_diagonal() {
        let a = DMatrix::from_row_slice(3, 2, &[-1.0, 2.0, 0.5, -3.0, 0.25, 1.0]);
        let (q, r) = qr_positive(&a);
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert!((&q * &r - &a).norm() < 1e-14);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn qr_of_empty() {
        let (q, r) = qr_positive(&DMatrix::zeros(3, 0));
        assert_eq!(q.shape(), (3, 0));
        assert_eq!(r.shape(), (0, 0));
    }

    #[test]
    fn right_divide_by_diagonal_scales_columns() {
        let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let x = right_divide_upper(&b, &r);
        let expected = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.5, 1.0 / 3.0]);
        assert!((x - expected).norm() < 1e-15);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut acc = CompensatedSum::new();
        acc.add(1.0);
        for _ in 0..10 {
            acc.add(1e-16);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-15).abs() < 1e-30);
    }
}
