//! Built-in systems and observables.
//!
//! * [`Solenoid`]: a three-dimensional solenoid-type map with one contracting
//!   coordinate and two expanding circle coordinates coupled through `gamma`.
//! * [`ContractingAffine`]: `x' = x/2 + gamma`, whose response is known in closed form.
//! * [`ExpandingCircle`]: `x' = 2x + gamma sin x (mod 2 pi)`, fully expanding.

use std::f64::consts::TAU;

use nalgebra::DVector;

use crate::model::{wrap, MapSystem, Observable};

/// Names accepted by [`system_by_name`].
pub const SYSTEM_NAMES: [&str; 3] = ["solenoid", "contracting_affine", "expanding_circle"];

/// Looks up a built-in system and its default observable by name.
pub fn system_by_name(name: &str) -> Option<(Box<dyn MapSystem>, Box<dyn Observable>)> {
    match name {
        "solenoid" => Some((Box::new(Solenoid), Box::new(Coordinate(0)))),
        "contracting_affine" => Some((Box::new(ContractingAffine), Box::new(Coordinate(0)))),
        "expanding_circle" => Some((Box::new(ExpandingCircle), Box::new(Cosine(0)))),
        _ => None,
    }
}

/// Default coupling of the solenoid experiments.
pub const SOLENOID_DEFAULT_GAMMA: f64 = 0.1;

/// ```text
/// x1' = 0.05 x1 + 0.1 cos(8 x2) - 0.1 sin(5 x3)
/// x2' = 2 x2 + gamma (1 + x1) sin(8 x2)   mod 2 pi
/// x3' = 3 x3 + gamma (1 + x1) cos(2 x3)   mod 2 pi
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct Solenoid;

impl MapSystem for Solenoid {
    fn dim(&self) -> usize {
        3
    }

    fn unstable_dim(&self) -> usize {
        2
    }

    fn periods(&self) -> Vec<Option<f64>> {
        vec![None, Some(TAU), Some(TAU)]
    }

    fn initial_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0), (0.0, TAU), (0.0, TAU)]
    }

    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            0.05 * x1 + 0.1 * (8.0 * x2).cos() - 0.1 * (5.0 * x3).sin(),
            wrap(2.0 * x2 + gamma * (1.0 + x1) * (8.0 * x2).sin(), TAU),
            wrap(3.0 * x3 + gamma * (1.0 + x1) * (2.0 * x3).cos(), TAU),
        ])
    }

    fn jacobian_vector(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let (s8, c8) = (8.0 * x2).sin_cos();
        let (s2, c2) = (2.0 * x3).sin_cos();
        let c5 = (5.0 * x3).cos();
        DVector::from_vec(vec![
            0.05 * w[0] - 0.8 * s8 * w[1] - 0.5 * c5 * w[2],
            gamma * s8 * w[0] + (2.0 + 8.0 * gamma * (1.0 + x1) * c8) * w[1],
            gamma * c2 * w[0] + (3.0 - 2.0 * gamma * (1.0 + x1) * s2) * w[2],
        ])
    }

    fn hessian_vector_vector(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let (s8, c8) = (8.0 * x2).sin_cos();
        let (s2, c2) = (2.0 * x3).sin_cos();
        let s5 = (5.0 * x3).sin();
        let cross12 = y[0] * w[1] + y[1] * w[0];
        let cross13 = y[0] * w[2] + y[2] * w[0];
        DVector::from_vec(vec![
            -6.4 * (8.0 * x2).cos() * y[1] * w[1] + 2.5 * s5 * y[2] * w[2],
            8.0 * gamma * c8 * cross12 - 64.0 * gamma * (1.0 + x1) * s8 * y[1] * w[1],
            -2.0 * gamma * s2 * cross13 - 4.0 * gamma * (1.0 + x1) * c2 * y[2] * w[2],
        ])
    }

    fn param_vector(&self, x: &DVector<f64>, _gamma: f64) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            0.0,
            (1.0 + x1) * (8.0 * x2).sin(),
            (1.0 + x1) * (2.0 * x3).cos(),
        ])
    }

    fn param_vector_jacobian(
        &self,
        x: &DVector<f64>,
        _gamma: f64,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let (x1, x2, x3) = (x[0], x[1], x[2]);
        let (s8, c8) = (8.0 * x2).sin_cos();
        let (s2, c2) = (2.0 * x3).sin_cos();
        DVector::from_vec(vec![
            0.0,
            s8 * w[0] + 8.0 * (1.0 + x1) * c8 * w[1],
            c2 * w[0] - 2.0 * (1.0 + x1) * s2 * w[2],
        ])
    }
}

/// `x' = 0.5 x + gamma` on the real line; every orbit converges to `2 gamma`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContractingAffine;

impl ContractingAffine {
    pub const SLOPE: f64 = 0.5;

    /// Long-time average of `Phi(x) = x`.
    pub fn analytic_mean(gamma: f64) -> f64 {
        gamma / (1.0 - Self::SLOPE)
    }

    /// `d/dgamma` of [`Self::analytic_mean`].
    pub fn analytic_derivative() -> f64 {
        1.0 / (1.0 - Self::SLOPE)
    }
}

impl MapSystem for ContractingAffine {
    fn dim(&self) -> usize {
        1
    }

    fn unstable_dim(&self) -> usize {
        0
    }

    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        DVector::from_element(1, Self::SLOPE * x[0] + gamma)
    }

    fn jacobian_vector(&self, _x: &DVector<f64>, _gamma: f64, w: &DVector<f64>) -> DVector<f64> {
        w * Self::SLOPE
    }

    fn hessian_vector_vector(
        &self,
        _x: &DVector<f64>,
        _gamma: f64,
        _y: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn param_vector(&self, _x: &DVector<f64>, _gamma: f64) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }

    fn param_vector_jacobian(
        &self,
        _x: &DVector<f64>,
        _gamma: f64,
        _w: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(1)
    }
}

/// `x' = 2x + gamma sin(x) mod 2 pi`; uniformly expanding for `|gamma| < 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpandingCircle;

impl MapSystem for ExpandingCircle {
    fn dim(&self) -> usize {
        1
    }

    fn unstable_dim(&self) -> usize {
        1
    }

    fn periods(&self) -> Vec<Option<f64>> {
        vec![Some(TAU)]
    }

    fn initial_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, TAU)]
    }

    fn step(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        DVector::from_element(1, wrap(2.0 * x[0] + gamma * x[0].sin(), TAU))
    }

    fn jacobian_vector(&self, x: &DVector<f64>, gamma: f64, w: &DVector<f64>) -> DVector<f64> {
        w * (2.0 + gamma * x[0].cos())
    }

    fn hessian_vector_vector(
        &self,
        x: &DVector<f64>,
        gamma: f64,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::from_element(1, -gamma * x[0].sin() * y[0] * w[0])
    }

    fn param_vector(&self, x: &DVector<f64>, _gamma: f64) -> DVector<f64> {
        DVector::from_element(1, x[0].sin())
    }

    fn param_vector_jacobian(
        &self,
        x: &DVector<f64>,
        _gamma: f64,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        w * x[0].cos()
    }
}

/// `Phi(x) = x[i]`.
#[derive(Debug, Clone, Copy)]
pub struct Coordinate(pub usize);

impl Observable for Coordinate {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x[self.0]
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[self.0] = 1.0;
        g
    }
}

/// `Phi(x) = cos(x[i])`.
#[derive(Debug, Clone, Copy)]
pub struct Cosine(pub usize);

impl Observable for Cosine {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x[self.0].cos()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[self.0] = -x[self.0].sin();
        g
    }
}

/// `Phi(x) = c`.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Observable for Constant {
    fn value(&self, _x: &DVector<f64>) -> f64 {
        self.0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
}

/// `Phi(x) = sum_k c_k Phi_k(x) + offset`.
pub struct LinearCombination<'a> {
    pub terms: Vec<(f64, &'a dyn Observable)>,
    pub offset: f64,
}

impl Observable for LinearCombination<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.terms.iter().map(|(c, o)| c * o.value(x)).sum::<f64>() + self.offset
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for (c, o) in &self.terms {
            g.axpy(*c, &o.gradient(x), 1.0);
        }
        g
    }
}
