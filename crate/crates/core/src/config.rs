use serde::{Deserialize, Serialize};

use crate::conic::SolverSettings;

/// Weights on the contingency slacks, in currency per p.u. of mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    /// Real-power balance slacks.
    pub p: f64,
    /// Reactive-power balance slacks.
    pub q: f64,
    /// Branch rating slacks.
    pub s: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            p: 1000.0,
            q: 1000.0,
            s: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverConfig {
    /// Fraction of ranked contingencies kept, in (0, 1].
    pub filter_level: f64,
    /// Stop once the total mismatch cost falls to this value.
    pub tol_mismatch: f64,
    /// Upper limit on master solves, and so on ledger rows.
    pub max_iterations: usize,
    pub workers: usize,
    pub penalty: PenaltyWeights,
    /// Weight of the contingency term in the master objective.
    pub delta: f64,
    /// Tolerance handed to the conic solver.
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Small cost on total contingency generation. It selects the
    /// loss-minimizing point among equally mismatched ones, which keeps the
    /// contingency relaxations tight and the AGC scale well defined.
    pub loss_weight: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            filter_level: 1.0,
            tol_mismatch: 1e-4,
            max_iterations: 100,
            workers: 1,
            penalty: PenaltyWeights::default(),
            delta: 1.0,
            solver_tol: 1e-8,
            solver_max_iters: 200,
            loss_weight: 1e-2,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("filter level must lie in (0, 1], got {0}")]
    FilterLevel(f64),
    #[error("at least one worker is required")]
    Workers,
    #[error("mismatch tolerance must be nonnegative, got {0}")]
    TolMismatch(f64),
    #[error("penalty weights must be positive")]
    Penalty,
    #[error("solver tolerance must be positive, got {0}")]
    SolverTol(f64),
    #[error("at least one iteration is required")]
    MaxIterations,
    #[error("delta must be nonnegative, got {0}")]
    Delta(f64),
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.filter_level > 0.0 && self.filter_level <= 1.0) {
            return Err(ConfigError::FilterLevel(self.filter_level));
        }
        if self.workers == 0 {
            return Err(ConfigError::Workers);
        }
        if !(self.tol_mismatch >= 0.0) {
            return Err(ConfigError::TolMismatch(self.tol_mismatch));
        }
        let w = self.penalty;
        if !(w.p > 0.0 && w.q > 0.0 && w.s > 0.0) {
            return Err(ConfigError::Penalty);
        }
        if !(self.solver_tol > 0.0) {
            return Err(ConfigError::SolverTol(self.solver_tol));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::MaxIterations);
        }
        if !(self.delta >= 0.0) {
            return Err(ConfigError::Delta(self.delta));
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.solver_tol,
            max_iters: self.solver_max_iters,
        }
    }
}
