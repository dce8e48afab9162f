use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Malformed configuration or flags; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Half-length of the strip in units of the far-field depth.
    pub l_over_d: f64,
    pub nq: usize,
    pub np: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { l_over_d: 30.0, nq: 301, np: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Sup-norm residual target for every Newton solve.
    pub tol: f64,
    pub max_iter: usize,
    /// `verify`: largest h change one Newton step may make on a checkpoint.
    pub replay_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 40, replay_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub ds: f64,
    pub steps: usize,
    /// Stop once a physical margin drops below this fraction of its start.
    pub breach_fraction: f64,
    pub spectra: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self { ds: 4e-4, steps: 40, breach_fraction: 1e-2, spectra: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// ω(p) = Σ omega[k] p^k; empty means irrotational.
    pub omega: Vec<f64>,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub continuation: ContinuationConfig,
    pub output: Option<PathBuf>,
    /// Seed for perturbed initial guesses.
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let cfg: Self = toml::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML floats are written in shortest round-trip form, so this
    /// reproduces every double exactly.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if self.omega.iter().any(|c| !c.is_finite()) {
            return bad("omega coefficients must be finite".into());
        }
        let g = &self.grid;
        if !(g.l_over_d > 0.0 && g.l_over_d.is_finite()) {
            return bad(format!("grid.l_over_d = {} must be positive", g.l_over_d));
        }
        if g.nq < 9 || g.np < 9 {
            return bad(format!("grid needs nq, np >= 9 (got {}, {})", g.nq, g.np));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || !(s.replay_tol > 0.0) {
            return bad("solver tolerances must be positive".into());
        }
        if s.max_iter == 0 {
            return bad("solver.max_iter must be positive".into());
        }
        let c = &self.continuation;
        if !(c.ds > 0.0 && c.ds.is_finite()) {
            return bad(format!("continuation.ds = {} must be positive", c.ds));
        }
        if !(c.breach_fraction > 0.0 && c.breach_fraction < 1.0) {
            return bad(format!("continuation.breach_fraction = {} must lie in (0, 1)", c.breach_fraction));
        }
        Ok(())
    }
}
