//! Trajectory generation and the centered windowed observable sums `psi`.
//!
//! Steps are indexed relative to the first step of segment zero. An optional lead-in
//! of `L` steps precedes segment zero, over which tangent solutions are spun up. The
//! stored orbit covers `x_{-L-W} ..= x_{AN+W}` so every `psi_n`, `n in -L..=AN`, sees a
//! full window.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::linalg::CompensatedSum;
use crate::model::{MapSystem, Observable};

pub const DEFAULT_SPINUP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitConfig {
    /// Steps per segment, `N`.
    pub segment_steps: usize,
    /// Number of segments, `A`.
    pub segments: usize,
    /// Half-width of the `psi` window, `W`.
    pub window: usize,
    /// Iterates discarded before the stored orbit begins.
    pub spinup: usize,
    /// Stored steps before segment zero for spinning up tangent solutions, `L`.
    #[serde(default)]
    pub lead: usize,
    pub seed: u64,
    pub gamma: f64,
    /// Overrides [`MapSystem::initial_box`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_box: Option<Vec<(f64, f64)>>,
}

impl OrbitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_steps == 0 {
            return Err(Error::config("steps per segment N must be at least 1"));
        }
        if self.segments == 0 {
            return Err(Error::config("segment count A must be at least 1"));
        }
        if !self.gamma.is_finite() {
            return Err(Error::config("gamma must be finite"));
        }
        if let Some(b) = &self.initial_box {
            if b.iter()
                .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
            {
                return Err(Error::config(
                    "initial box bounds must be finite with lo <= hi",
                ));
            }
        }
        Ok(())
    }

    /// `A N`.
    pub fn core_steps(&self) -> usize {
        self.segments * self.segment_steps
    }

    /// Total iterates of the map: spin-up, lead-in, the two window extensions and the
    /// core.
    pub fn total_steps(&self) -> usize {
        self.spinup + self.lead + self.window + self.core_steps() + self.window
    }

    pub fn layout(&self) -> OrbitLayout {
        OrbitLayout {
            segment_steps: self.segment_steps,
            segments: self.segments,
            window: self.window,
            lead: self.lead,
        }
    }
}

/// Index bookkeeping of a stored orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitLayout {
    pub segment_steps: usize,
    pub segments: usize,
    pub window: usize,
    pub lead: usize,
}

impl OrbitLayout {
    pub fn core_steps(&self) -> usize {
        self.segments * self.segment_steps
    }

    /// Number of stored states, `L + W + AN + W + 1`.
    pub fn stored_states(&self) -> usize {
        self.lead + 2 * self.window + self.core_steps() + 1
    }
}

#[derive(Debug, Clone)]
pub struct Orbit {
    pub segment_steps: usize,
    pub segments: usize,
    pub window: usize,
    pub lead: usize,
    pub gamma: f64,
    states: Vec<DVector<f64>>,
    phi: Vec<f64>,
    /// Empirical mean of `Phi` over the core steps `0..AN`.
    pub phi_mean: f64,
    psi: Vec<f64>,
    /// `X_k = delta f(x_{k-1})` for `k = 1-L ..= AN`, stored at `k + L - 1`.
    forcing: Vec<DVector<f64>>,
    /// Largest gap between the running-window `psi` and direct summation, observed at
    /// segment boundaries before resetting.
    pub psi_drift: f64,
}

impl Orbit {
    pub fn core_steps(&self) -> usize {
        self.segments * self.segment_steps
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// `x_n` for `n in -L-W ..= AN + W`.
    pub fn state(&self, n: isize) -> &DVector<f64> {
        &self.states[self.offset(n)]
    }

    /// `Phi(x_n)` for `n in -L-W ..= AN + W`.
    pub fn phi(&self, n: isize) -> f64 {
        self.phi[self.offset(n)]
    }

    /// `psi_n` for `n in -L ..= AN`.
    pub fn psi(&self, n: isize) -> f64 {
        self.psi[(n + self.lead as isize) as usize]
    }

    /// `psi_0 ..= psi_AN`.
    pub fn psi_values(&self) -> &[f64] {
        &self.psi[self.lead..]
    }

    /// `X_k`, a vector at `x_k`, for `k in 1-L ..= AN`.
    pub fn forcing(&self, k: isize) -> &DVector<f64> {
        &self.forcing[(k + self.lead as isize - 1) as usize]
    }

    pub fn layout(&self) -> OrbitLayout {
        OrbitLayout {
            segment_steps: self.segment_steps,
            segments: self.segments,
            window: self.window,
            lead: self.lead,
        }
    }

    /// Stored states `x_{-L-W} ..= x_{AN+W}` in order.
    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    fn offset(&self, n: isize) -> usize {
        let i = n + (self.lead + self.window) as isize;
        assert!(
            i >= 0 && (i as usize) < self.states.len(),
            "orbit index {n} outside stored range"
        );
        i as usize
    }

    /// Rebuilds an orbit from stored states `x_{-L-W} ..= x_{AN+W}`.
    pub fn from_states<S, O>(
        sys: &S,
        obs: &O,
        states: Vec<DVector<f64>>,
        layout: OrbitLayout,
        gamma: f64,
    ) -> Result<Orbit>
    where
        S: MapSystem + ?Sized,
        O: Observable + ?Sized,
    {
        let OrbitLayout {
            segment_steps,
            segments,
            window,
            lead,
        } = layout;
        let expected = layout.stored_states();
        if states.len() != expected {
            return Err(Error::config(format!(
                "orbit needs {expected} states, got {}",
                states.len()
            )));
        }
        if segment_steps == 0 || segments == 0 {
            return Err(Error::config("orbit needs N >= 1 and A >= 1"));
        }
        let m = sys.dim();
        if let Some(bad) = states.iter().position(|s| s.len() != m) {
            return Err(Error::DimensionMismatch {
                callback: "stored state",
                expected: m,
                got: states[bad].len(),
            });
        }
        if let Some(bad) = states.iter().position(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::BlowUp {
                stage: Stage::Orbit,
                step: bad,
            });
        }
        let phi: Vec<f64> = states.iter().map(|x| obs.value(x)).collect();
        let core = segment_steps * segments;
        let mut acc = CompensatedSum::new();
        let zero = lead + window;
        for &p in &phi[zero..zero + core] {
            acc.add(p);
        }
        let phi_mean = acc.value() / core as f64;
        let (psi, psi_drift) = windowed_sums(&phi, phi_mean, layout);
        // X_k for k = 1-L ..= AN uses x_{k-1}, stored at k - 1 + L + W
        let forcing = (window..window + lead + core)
            .map(|i| sys.param_vector(&states[i], gamma))
            .collect();
        Ok(Orbit {
            segment_steps,
            segments,
            window,
            lead,
            gamma,
            states,
            phi,
            phi_mean,
            psi,
            forcing,
            psi_drift,
        })
    }

    /// Writes states as CSV, one row per step: `step,x1,..,xM`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(out, "step,{}", header.join(","))?;
        for (i, x) in self.states.iter().enumerate() {
            let n = i as isize - (self.lead + self.window) as isize;
            let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{n},{}", row.join(","))?;
        }
        Ok(())
    }

    /// Writes states as little-endian `f64`, one row of `M` values per step.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        for x in &self.states {
            for v in x.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Reads rows of `dim` little-endian `f64` values written by [`Orbit::write_binary`].
pub fn read_states_binary<R: Read>(mut input: R, dim: usize) -> Result<Vec<DVector<f64>>> {
    if dim == 0 {
        return Err(Error::config("state dimension must be positive"));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let row = 8 * dim;
    if bytes.len() % row != 0 {
        return Err(Error::config(format!(
            "binary orbit of {} bytes is not a whole number of {dim}-dimensional rows",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(row)
        .map(|chunk| {
            DVector::from_iterator(
                dim,
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
            )
        })
        .collect())
}

/// Uniform draw from `bounds` (or the system's initial box) with a seeded generator.
pub fn random_initial_state<S: MapSystem + ?Sized>(
    sys: &S,
    bounds: Option<&[(f64, f64)]>,
    seed: u64,
) -> Result<DVector<f64>> {
    let m = sys.dim();
    let bounds = bounds
        .map(<[_]>::to_vec)
        .unwrap_or_else(|| sys.initial_box());
    if bounds.len() != m {
        return Err(Error::DimensionMismatch {
            callback: "initial box",
            expected: m,
            got: bounds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DVector::from_iterator(
        m,
        bounds.iter().map(|&(lo, hi)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        }),
    ))
}

/// Spins up from a random state in the initial box, then stores the orbit.
pub fn generate_orbit<S, O>(sys: &S, obs: &O, cfg: &OrbitConfig) -> Result<Orbit>
where
    S: MapSystem + ?Sized,
    O: Observable + ?Sized,
{
    cfg.validate()?;
    let m = sys.dim();
    let mut x = random_initial_state(sys, cfg.initial_box.as_deref(), cfg.seed)?;

    let mut step_index = 0usize;
    let mut advance = |x: &DVector<f64>| -> Result<DVector<f64>> {
        step_index += 1;
        let y = sys.step(x, cfg.gamma);
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                callback: "step",
                expected: m,
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                stage: Stage::Orbit,
                step: step_index,
            });
        }
        Ok(y)
    };

    for _ in 0..cfg.spinup {
        x = advance(&x)?;
    }
    let count = cfg.layout().stored_states();
    let mut states = Vec::with_capacity(count);
    states.push(x);
    for i in 1..count {
        let next = advance(&states[i - 1])?;
        states.push(next);
    }
    Orbit::from_states(sys, obs, states, cfg.layout(), cfg.gamma)
}

/// Running-window `psi_n = sum_{m=n-W}^{n+W} (phi_m - mean)` for `n in -L..=AN`,
/// where `phi` is indexed from `-L-W`; entry `i` of the result is `psi_{i-L}`. The
/// running value is replaced by a direct sum at each segment boundary; the largest
/// disagreement seen there is returned.
fn windowed_sums(phi: &[f64], mean: f64, layout: OrbitLayout) -> (Vec<f64>, f64) {
    let window = layout.window;
    let count = layout.lead + layout.core_steps() + 1;
    // window i covers phi[i ..= i + 2W]
    let direct = |i: usize| -> f64 {
        let mut acc = CompensatedSum::new();
        for &p in &phi[i..=i + 2 * window] {
            acc.add(p - mean);
        }
        acc.value()
    };
    let mut psi = Vec::with_capacity(count);
    let mut drift = 0.0f64;
    let mut running = direct(0);
    psi.push(running);
    for i in 1..count {
        running += (phi[i + 2 * window] - mean) - (phi[i - 1] - mean);
        let n = i as isize - layout.lead as isize;
        if n.rem_euclid(layout.segment_steps as isize) == 0 {
            let exact = direct(i);
            drift = drift.max((exact - running).abs());
            running = exact;
        }
        psi.push(running);
    }
    (psi, drift)
}
