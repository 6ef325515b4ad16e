//! Dynamical-system and observable interfaces.
//!
//! Every algorithm in this crate reaches the map only through [`MapSystem`], so any
//! smooth map on flat `R^M` (optionally with some coordinates wrapped modulo a period)
//! can be plugged in. Derivatives are supplied in closed form; finite differences are
//! used only by [`validate_system`] to catch mistakes in those closed forms.
//!
//! Tangent vectors and covectors share the plain `DVector<f64>` representation, which
//! is exact for the flat metric. Vectors are never wrapped, only states are.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discrete-time map `x -> f(x; gamma)` together with its analytic derivatives.
///
/// Implementations must be pure: the pipeline calls these from several threads.
pub trait MapSystem: Send + Sync {
    /// State-space dimension `M`.
    fn dim(&self) -> usize;

    /// Number of unstable directions `u` tracked by default.
    fn unstable_dim(&self) -> usize;

    /// Period of each coordinate, `None` for coordinates on the real line.
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None; self.dim()]
    }

    /// Box `[lo, hi)` per coordinate from which initial states are drawn.
    fn initial_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.dim()]
    }

    /// `f(x)`, with periodic coordinates wrapped to `[0, period)`.
    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64>;

    /// `f_* w`: Jacobian of `f` at `x` applied to `w`.
    fn jacobian_vector(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> DVector<f64>;

    /// `(nabla_y f_*) w`: the Hessian of `f` at `x` contracted with `y` and `w`.
    fn hessian_vector_vector(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64>;

    /// `delta f(x) = df/dgamma` at `x`, a vector attached at `f(x)`.
    fn param_vector(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64>;

    /// Directional derivative of `delta f` at `x` along `w`.
    fn param_vector_jacobian(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>)
        -> DVector<f64>;
}

/// A scalar observable `Phi` and its gradient.
pub trait Observable: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl<T: MapSystem + ?Sized> MapSystem for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn unstable_dim(&self) -> usize {
        (**self).unstable_dim()
    }
    fn periods(&self) -> Vec<Option<f64>> {
        (**self).periods()
    }
    fn initial_box(&self) -> Vec<(f64, f64)> {
        (**self).initial_box()
    }
    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        (**self).step(x, gamma)
    }
    fn jacobian_vector(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> DVector<f64> {
        (**self).jacobian_vector(x, gamma, w)
    }
    fn hessian_vector_vector(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        (**self).hessian_vector_vector(x, gamma, y, w)
    }
    fn param_vector(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        (**self).param_vector(x, gamma)
    }
    fn param_vector_jacobian(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        (**self).param_vector_jacobian(x, gamma, w)
    }
}

impl<T: Observable + ?Sized> Observable for &T {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
}

impl<T: MapSystem + ?Sized> MapSystem for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn unstable_dim(&self) -> usize {
        (**self).unstable_dim()
    }
    fn periods(&self) -> Vec<Option<f64>> {
        (**self).periods()
    }
    fn initial_box(&self) -> Vec<(f64, f64)> {
        (**self).initial_box()
    }
    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        (**self).step(x, gamma)
    }
    fn jacobian_vector(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> DVector<f64> {
        (**self).jacobian_vector(x, gamma, w)
    }
    fn hessian_vector_vector(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        (**self).hessian_vector_vector(x, gamma, y, w)
    }
    fn param_vector(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        (**self).param_vector(x, gamma)
    }
    fn param_vector_jacobian(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        (**self).param_vector_jacobian(x, gamma, w)
    }
}

impl<T: Observable + ?Sized> Observable for Box<T> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
}

/// Wraps `x` into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    // rem_euclid can round up to exactly `period` for tiny negative inputs
    if y >= period {
        0.0
    } else {
        y
    }
}

/// Reduces a coordinate difference to the nearest image, `(-period/2, period/2]`.
pub fn nearest_image(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

/// Coordinate-wise difference `a - b` that respects periodic coordinates.
pub fn state_difference(
    a: &DVector<f64>,
    b: &DVector<f64>,
    periods: &[Option<f64>],
) -> DVector<f64> {
    DVector::from_iterator(
        a.len(),
        a.iter()
            .zip(b.iter())
            .zip(periods)
            .map(|((&ai, &bi), p)| match p {
                Some(p) => nearest_image(ai - bi, *p),
                None => ai - bi,
            }),
    )
}

/// Options for [`validate_system_with`].
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Relative discrepancy above which a callback is flagged.
    pub tolerance: f64,
    /// Seed for the random probe directions.
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            tolerance: 1e-4,
            seed: 0x5eed,
        }
    }
}

/// Worst relative discrepancy of each analytic callback against finite differences.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub jacobian_vector: f64,
    pub hessian_vector_vector: f64,
    pub hessian_symmetry: f64,
    pub param_vector: f64,
    pub param_vector_jacobian: f64,
    pub tolerance: f64,
    /// Human-readable description of each failure.
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn worst(&self) -> f64 {
        [
            self.jacobian_vector,
            self.hessian_vector_vector,
            self.hessian_symmetry,
            self.param_vector,
            self.param_vector_jacobian,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Checks the derivative callbacks of `sys` against central finite differences of the
/// next-lower-order callback at every probe state, using default options.
pub fn validate_system<S: MapSystem + ?Sized>(
    sys: &S,
    probes: &[DVector<f64>],
    gamma: f64,
) -> Result<ValidationReport> {
    validate_system_with(sys, probes, gamma, &ValidationOptions::default())
}

pub fn validate_system_with<S: MapSystem + ?Sized>(
    sys: &S,
    probes: &[DVector<f64>],
    gamma: f64,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(Error::config("validation needs at least one probe state"));
    }
    let m = sys.dim();
    let periods = sys.periods();
    if periods.len() != m {
        return Err(Error::DimensionMismatch {
            callback: "periods",
            expected: m,
            got: periods.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.fd_step;
    let mut report = ValidationReport {
        tolerance: opts.tolerance,
        ..Default::default()
    };

    for (k, x) in probes.iter().enumerate() {
        if x.len() != m {
            return Err(Error::DimensionMismatch {
                callback: "probe state",
                expected: m,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("probe state {k} is not finite")));
        }
        let w = random_direction(&mut rng, m);
        let y = random_direction(&mut rng, m);

        let fx = checked(sys.step(x, gamma), "step", m)?;
        if fx.iter().any(|v| !v.is_finite()) {
            report
                .failures
                .push(format!("step blew up at probe {k}: non-finite image"));
            continue;
        }

        // f_* w against (f(x + h w) - f(x - h w)) / 2h
        let jv = checked(sys.jacobian_vector(x, gamma, &w), "jacobian_vector", m)?;
        let fp = sys.step(&(x + &w * h), gamma);
        let fm = sys.step(&(x - &w * h), gamma);
        let fd = state_difference(&fp, &fm, &periods) / (2.0 * h);
        let err = relative_discrepancy(&jv, &fd);
        record(
            &mut report.jacobian_vector,
            err,
            opts.tolerance,
            "jacobian_vector",
            k,
            &mut report.failures,
        );

        // (nabla_y f_*) w against FD of f_* w along y
        let hv = checked(
            sys.hessian_vector_vector(x, gamma, &y, &w),
            "hessian_vector_vector",
            m,
        )?;
        let jp = sys.jacobian_vector(&(x + &y * h), gamma, &w);
        let jm = sys.jacobian_vector(&(x - &y * h), gamma, &w);
        let fd = (jp - jm) / (2.0 * h);
        let err = relative_discrepancy(&hv, &fd);
        record(
            &mut report.hessian_vector_vector,
            err,
            opts.tolerance,
            "hessian_vector_vector",
            k,
            &mut report.failures,
        );

        let hv_swapped = sys.hessian_vector_vector(x, gamma, &w, &y);
        let err = relative_discrepancy(&hv, &hv_swapped);
        record(
            &mut report.hessian_symmetry,
            err,
            opts.tolerance,
            "hessian symmetry",
            k,
            &mut report.failures,
        );

        // delta f against FD in gamma
        let pv = checked(sys.param_vector(x, gamma), "param_vector", m)?;
        let gp = sys.step(x, gamma + h);
        let gm = sys.step(x, gamma - h);
        let fd = state_difference(&gp, &gm, &periods) / (2.0 * h);
        let err = relative_discrepancy(&pv, &fd);
        record(
            &mut report.param_vector,
            err,
            opts.tolerance,
            "param_vector",
            k,
            &mut report.failures,
        );

        // D(delta f) w against FD of delta f along w
        let pj = checked(
            sys.param_vector_jacobian(x, gamma, &w),
            "param_vector_jacobian",
            m,
        )?;
        let pp = sys.param_vector(&(x + &w * h), gamma);
        let pm = sys.param_vector(&(x - &w * h), gamma);
        let fd = (pp - pm) / (2.0 * h);
        let err = relative_discrepancy(&pj, &fd);
        record(
            &mut report.param_vector_jacobian,
            err,
            opts.tolerance,
            "param_vector_jacobian",
            k,
            &mut report.failures,
        );
    }
    Ok(report)
}

/// Worst relative discrepancy of an observable's gradient against central differences.
pub fn validate_observable<O: Observable + ?Sized>(
    obs: &O,
    probes: &[DVector<f64>],
    fd_step: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for x in probes {
        let m = x.len();
        let g = obs.gradient(x);
        if g.len() != m {
            return Err(Error::DimensionMismatch {
                callback: "observable gradient",
                expected: m,
                got: g.len(),
            });
        }
        for _ in 0..2 {
            let w = random_direction(&mut rng, m);
            let analytic = DVector::from_element(1, g.dot(&w));
            let fd =
                (obs.value(&(x + &w * fd_step)) - obs.value(&(x - &w * fd_step))) / (2.0 * fd_step);
            worst = worst.max(relative_discrepancy(
                &analytic,
                &DVector::from_element(1, fd),
            ));
        }
    }
    Ok(worst)
}

/// `|a - b| / max(|a|, |b|)`, with the denominator floored at `1e-6` so that two
/// vanishing vectors compare equal.
pub fn relative_discrepancy(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    if diff == 0.0 {
        return 0.0;
    }
    if !diff.is_finite() {
        return f64::INFINITY;
    }
    diff / a.norm().max(b.norm()).max(1e-6)
}

fn random_direction(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn checked(v: DVector<f64>, callback: &'static str, m: usize) -> Result<DVector<f64>> {
    if v.len() != m {
        return Err(Error::DimensionMismatch {
            callback,
            expected: m,
            got: v.len(),
        });
    }
    Ok(v)
}

fn record(
    slot: &mut f64,
    err: f64,
    tol: f64,
    name: &str,
    probe: usize,
    failures: &mut Vec<String>,
) {
    // NaN compares false everywhere, so fold it in as infinity
    let err = if err.is_nan() { f64::INFINITY } else { err };
    *slot = slot.max(err);
    if err > tol {
        failures.push(format!(
            "{name} at probe {probe}: relative discrepancy {err:.3e} > {tol:.1e}"
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_into_half_open_period() {
        let p = std::f64::consts::TAU;
        assert_eq!(wrap(0.0, p), 0.0);
        assert!((wrap(p + 0.5, p) - 0.5).abs() < 1e-15);
        assert!((wrap(-0.5, p) - (p - 0.5)).abs() < 1e-15);
        assert!(wrap(-1e-300, p) < p);
    }

    #[test]
    fn nearest_image_is_short() {
        let p = std::f64::consts::TAU;
        assert!((nearest_image(p - 0.1, p) + 0.1).abs() < 1e-12);
        assert!((nearest_image(0.2, p) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn discrepancy_of_equal_zero_vectors_is_zero() {
        let z = DVector::zeros(3);
        assert_eq!(relative_discrepancy(&z, &z), 0.0);
    }
}
