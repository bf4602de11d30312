//! Run configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use normcrit::functionals::Params;
use normcrit::solvers::{PathSpec, Side, SolverOptions, SweepMode};
use normcrit::{GridSpec, NormcritError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Constants,
    Scalar,
    Ground,
    Mp,
    Sweep,
    Asym,
    Probe,
}

/// Limit checked by `asym`; `auto` picks it from the sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    #[default]
    Auto,
    SmallMass,
    LargeMass,
    P3Threshold,
    Bubble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub params: Params,
    /// `(a₁, a₂)`.
    pub masses: (f64, f64),
    pub solver: SolverOptions,
    /// Branch of `scalar`.
    pub side: Side,
    pub path: PathSpec,
    pub mode: SweepMode,
    /// Start each sweep point from the previous one.
    pub warm: bool,
    pub limit: Limit,
    /// Sweep output read by `asym`; defaults to `<output>/sweep.json`.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    /// Sweep workers; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            params: Params { mu1: 1.0, mu2: 1.0, alpha1: 1.0, alpha2: 1.0, beta: 2.0, p: 2.5 },
            masses: (1.0, 1.0),
            solver: SolverOptions::default(),
            side: Side::Plus,
            path: PathSpec::Geometric { a0: 2.0, ratio: 1.0, factor: 0.5, steps: 5 },
            mode: SweepMode::Ground,
            warm: false,
            limit: Limit::Auto,
            input: None,
            output: PathBuf::from("out"),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| NormcritError::Format(format!("{}: {e}", path.display())))
    }

    /// Range checks that do not need a solve.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let (a1, a2) = self.masses;
        if !(a1.is_finite() && a2.is_finite() && a1 >= 0.0 && a2 >= 0.0) {
            return Err(NormcritError::Parameter(format!("masses ({a1}, {a2}) must be nonnegative")));
        }
        let s = &self.solver;
        if !(s.tol > 0.0 && s.step > 0.0 && s.max_iter > 0 && s.seeds > 0) {
            return Err(NormcritError::Parameter("solver tol, step, max_iter and seeds must be positive".into()));
        }
        if let Some(g) = s.grid {
            g.build()?;
        }
        if let PathSpec::Geometric { a0, ratio, factor, .. } = self.path {
            if !(a0 > 0.0 && ratio >= 0.0 && factor > 0.0) {
                return Err(NormcritError::Parameter(format!("path a0 {a0}, ratio {ratio}, factor {factor}")));
            }
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn input_path(&self) -> PathBuf {
        self.input.clone().unwrap_or_else(|| self.output.join("sweep.json"))
    }
}

/// Geometric grid from `N` and `R_max`, with `r_min = 1e-6 R_max` unless given.
pub fn geometric_grid(n: usize, r_max: f64, r_min: Option<f64>) -> GridSpec {
    GridSpec::geometric(n, r_max, r_min.unwrap_or(1e-6 * r_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"command": "mp", "bogus": 3}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"solver": {"tolerance": 1e-6}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"command": "ground", "masses": [0.5, 0.25]}"#).unwrap();
        assert_eq!(cfg.command, Some(Command::Ground));
        assert_eq!(cfg.masses, (0.5, 0.25));
        assert_eq!(cfg.solver, SolverOptions::default());
    }

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig { warm: true, threads: 3, ..Default::default() };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
