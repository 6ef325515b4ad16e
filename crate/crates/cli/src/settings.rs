//! Run settings shared by the config file and the command line.
//!
//! The same struct is parsed from a flat TOML file and from flags; flags win.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use linresp::maps::SYSTEM_NAMES;
use linresp::oracle::{evenly_spaced, FdOracleConfig};
use linresp::orbit::DEFAULT_SPINUP;
use linresp::studies::AverageConfig;
use linresp::ResponseConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Built-in system: solenoid, contracting_affine or expanding_circle.
    #[arg(long)]
    pub map: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Steps per segment.
    #[arg(long = "N")]
    #[serde(rename = "N", alias = "segment_steps")]
    pub n: Option<usize>,
    /// Number of segments.
    #[arg(long = "A")]
    #[serde(rename = "A", alias = "segments")]
    pub a: Option<usize>,
    /// Half-width of the observable window.
    #[arg(long = "W")]
    #[serde(rename = "W", alias = "window")]
    pub w: Option<usize>,
    /// Number of unstable directions tracked; defaults to the map's own.
    #[arg(long = "u")]
    #[serde(alias = "unstable_dim")]
    pub u: Option<usize>,
    #[arg(long)]
    pub spinup: Option<usize>,
    /// Steps over which tangent solutions settle before the first segment.
    #[arg(long)]
    pub tangent_spinup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Explicit replica seeds; overrides `seed` and `reps`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub tangent_seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Leading segments left out of the unstable-contribution average.
    #[arg(long = "K-r")]
    #[serde(rename = "K_r", alias = "discard_segments")]
    pub discard_segments: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub store_steps: Option<bool>,
    /// Finite-difference smoke check of the map before each run.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub validate: Option<bool>,
    /// Values of `A` or `W` for the scaling studies.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<usize>>,
    /// Parameter grid of the sweep and of the oracle.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub oracle_points: Option<usize>,
    #[arg(long)]
    pub oracle_half_width: Option<f64>,
    #[arg(long)]
    pub oracle_steps: Option<usize>,
    #[arg(long)]
    pub oracle_runs: Option<usize>,
    #[arg(long)]
    pub oracle_spinup: Option<usize>,
    #[arg(long)]
    pub oracle_seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle_weighted: Option<bool>,
    /// Number of probe states for `validate`.
    #[arg(long)]
    pub probes: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $over.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `over` replace those in `self`.
    pub fn overlay(self, over: Settings) -> Settings {
        let base = self;
        overlay!(base, over;
            map, gamma, n, a, w, u, spinup, tangent_spinup, seed, seeds, tangent_seed, reps,
            discard_segments, store_steps, validate, values, gammas, oracle_points,
            oracle_half_width, oracle_steps, oracle_runs, oracle_spinup, oracle_seed,
            oracle_weighted, probes, output,
        )
    }

    pub fn map_name(&self) -> Result<String, CliError> {
        let name = self.map.clone().unwrap_or_else(|| "solenoid".to_string());
        if SYSTEM_NAMES.contains(&name.as_str()) {
            Ok(name)
        } else {
            Err(CliError::Config(format!(
                "unknown map '{name}'; expected one of {}",
                SYSTEM_NAMES.join(", ")
            )))
        }
    }

    pub fn response(&self) -> ResponseConfig {
        let d = ResponseConfig::default();
        ResponseConfig {
            gamma: self.gamma.unwrap_or(d.gamma),
            segment_steps: self.n.unwrap_or(d.segment_steps),
            segments: self.a.unwrap_or(d.segments),
            window: self.w.unwrap_or(d.window),
            spinup: self.spinup.unwrap_or(d.spinup),
            tangent_spinup: self.tangent_spinup.unwrap_or(d.tangent_spinup),
            seed: self.seed.unwrap_or(d.seed),
            unstable_dim: self.u,
            tangent_seed: self.tangent_seed,
            discard_segments: self.discard_segments.unwrap_or(d.discard_segments),
            store_steps: self.store_steps.unwrap_or(d.store_steps),
            validate: self.validate.unwrap_or(d.validate),
            initial_box: None,
        }
    }

    /// Replica seeds: the explicit list, else `seed, seed + 1, ..` for `reps` replicas.
    pub fn replica_seeds(&self, default_reps: usize) -> Result<Vec<u64>, CliError> {
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(CliError::Config("seed list is empty".into()));
            }
            return Ok(seeds.clone());
        }
        let reps = self.reps.unwrap_or(default_reps);
        if reps == 0 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        let base = self.seed.unwrap_or(0);
        Ok((0..reps as u64).map(|i| base.wrapping_add(i)).collect())
    }

    /// Oracle grid: the explicit `gammas`, else points centered on `gamma`.
    pub fn oracle(&self) -> FdOracleConfig {
        let center = self.gamma.unwrap_or(ResponseConfig::default().gamma);
        let points = self.oracle_points.unwrap_or(9);
        let half_width = self.oracle_half_width.unwrap_or(0.04);
        let mut cfg = FdOracleConfig::centered(center, half_width, points);
        if let Some(g) = &self.gammas {
            cfg.gamma_grid = g.clone();
        }
        cfg.steps_per_run = self.oracle_steps.unwrap_or(cfg.steps_per_run);
        cfg.runs_per_gamma = self.oracle_runs.unwrap_or(cfg.runs_per_gamma);
        cfg.spinup = self.oracle_spinup.unwrap_or(DEFAULT_SPINUP);
        cfg.seed = self.oracle_seed.or(self.seed).unwrap_or(0);
        cfg.weighted = self.oracle_weighted.unwrap_or(false);
        cfg
    }

    pub fn average(&self) -> AverageConfig {
        let d = AverageConfig::default();
        AverageConfig {
            steps_per_run: self.oracle_steps.unwrap_or(d.steps_per_run),
            runs_per_gamma: self.oracle_runs.unwrap_or(d.runs_per_gamma),
            spinup: self.oracle_spinup.unwrap_or(d.spinup),
            seed: self.oracle_seed.or(self.seed).unwrap_or(d.seed),
        }
    }

    /// Sweep grid, by default 0 to 0.3 in steps of 0.02.
    pub fn sweep_gammas(&self) -> Vec<f64> {
        self.gammas
            .clone()
            .unwrap_or_else(|| evenly_spaced(0.0, 0.3, 16))
    }
}

/// Everything that determines a command's numbers, echoed into its output and hashed.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub command: &'static str,
    pub map: String,
    pub response: ResponseConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<FdOracleConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average: Option<AverageConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
}

impl EffectiveConfig {
    pub fn new(command: &'static str, map: String, response: ResponseConfig) -> Self {
        Self {
            command,
            map,
            response,
            seeds: None,
            values: None,
            oracle: None,
            average: None,
            gammas: None,
            probes: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: Settings =
            toml::from_str("map = \"expanding_circle\"\nA = 50\nW = 3\ngamma = 0.2").unwrap();
        let flags = Settings {
            a: Some(7),
            ..Default::default()
        };
        let s = file.overlay(flags);
        assert_eq!(s.a, Some(7));
        assert_eq!(s.w, Some(3));
        assert_eq!(s.map_name().unwrap(), "expanding_circle");
        assert_eq!(s.response().segments, 7);
        assert_eq!(s.response().gamma, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("segmnets = 5").is_err());
        assert!(toml::from_str::<Settings>("segments = 5\nK_r = 2").is_ok());
    }

    #[test]
    fn unknown_map_is_a_config_error() {
        let s = Settings {
            map: Some("henon".into()),
            ..Default::default()
        };
        assert!(matches!(s.map_name(), Err(CliError::Config(_))));
    }

    #[test]
    fn seeds_default_to_consecutive() {
        let s = Settings {
            seed: Some(10),
            reps: Some(3),
            ..Default::default()
        };
        assert_eq!(s.replica_seeds(8).unwrap(), vec![10, 11, 12]);
        let s = Settings {
            seeds: Some(vec![4, 4]),
            ..s
        };
        assert_eq!(s.replica_seeds(8).unwrap(), vec![4, 4]);
    }
}
