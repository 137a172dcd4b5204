//! Projected gradient descent on the same penalized objective.
//!
//! `w <- max(w - eta * (P*(S - Q) + 2 MCP'(w)), 0)`, with the MCP slope at a
//! zero weight taken as `lambda` so a zero weight only leaves the bound when
//! the smooth gradient is below `-2 lambda`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplacian::{laplacian_norm, num_edges};
use crate::objective::{LaplacianState, Mcp, Objective, SampleCovariance};
use crate::report::{SolveReport, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// Armijo backtracking; each iteration starts from twice the last
    /// accepted step, capped at `eta_max`.
    Backtracking,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub step: StepPolicy,
    pub eta_max: f64,
    pub shrink: f64,
    pub c1: f64,
    pub max_backtracks: usize,
    /// Relative Frobenius change of `L` that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            step: StepPolicy::Backtracking,
            eta_max: 1.0,
            shrink: 0.5,
            c1: 1e-4,
            max_backtracks: 60,
            tol: 1e-4,
            max_iter: 5000,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if let StepPolicy::Fixed(eta) = self.step {
            if !(eta > 0.0) {
                return Err(Error::InvalidArgument(format!("fixed step must be > 0, got {eta}")));
            }
        }
        if !(self.eta_max > 0.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("invalid PGD step parameters".into()));
        }
        Ok(())
    }
}

/// Full gradient with the one-sided MCP slope at zero weights.
pub(crate) fn pgd_direction(grad_smooth: &[f64], w: &[f64], mcp: &Mcp) -> Vec<f64> {
    grad_smooth
        .iter()
        .zip(w)
        .map(|(&g, &wk)| {
            let slope = if wk <= 0.0 { mcp.lambda } else { mcp.grad(wk) };
            g + 2.0 * slope
        })
        .collect()
}

fn project_step(w: &[f64], g: &[f64], eta: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(&wk, &gk)| (wk - eta * gk).max(0.0)).collect()
}

/// Outcome of one projected-gradient step.
pub(crate) struct PgdStep {
    pub w: Vec<f64>,
    pub value: f64,
    pub eta: f64,
    pub backtracks: usize,
}

/// One backtracking projected-gradient step from `w` (value `f0`) starting at `eta0`.
pub(crate) fn backtracking_step(
    obj: &Objective<'_>,
    state: &LaplacianState,
    w: &[f64],
    f0: f64,
    eta0: f64,
    cfg: &PgdConfig,
) -> Option<PgdStep> {
    let g = pgd_direction(&obj.grad_smooth(state), w, obj.mcp());
    let mut eta = eta0;
    for backtracks in 0..=cfg.max_backtracks {
        let trial = project_step(w, &g, eta);
        let slope: f64 = g
            .iter()
            .zip(trial.iter().zip(w))
            .map(|(gk, (t, wk))| gk * (t - wk))
            .sum();
        let value = obj.value(&trial);
        if value.is_finite() && value <= f0 + cfg.c1 * slope {
            return Some(PgdStep {
                w: trial,
                value,
                eta,
                backtracks,
            });
        }
        eta *= cfg.shrink;
    }
    None
}

/// Relative Frobenius change `||P(new) - P(old)|| / ||P(new)||`.
pub(crate) fn relative_change(old: &[f64], new: &[f64], p: usize) -> f64 {
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let denom = laplacian_norm(new, p);
    if denom == 0.0 {
        return f64::INFINITY;
    }
    laplacian_norm(&diff, p) / denom
}

/// Projected gradient descent from `w0`.
pub fn pgd_solve_from(
    cov: &SampleCovariance,
    mcp: Mcp,
    cfg: &PgdConfig,
    w0: Vec<f64>,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let p = cov.nodes();
    if w0.len() != num_edges(p) || w0.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument(
            "initial weights must be nonnegative with length p(p-1)/2".into(),
        ));
    }
    let obj = Objective::new(cov, mcp);
    let mut w = w0;
    let mut state = LaplacianState::from_weights(&w, p)
        .map_err(|_| Error::InvalidArgument("initial point is a disconnected graph".into()))?;
    let mut f = obj.smooth_at(&state, &w) + obj.penalty(&w);
    let mut report = SolveReport::new("pgd", f);
    let mut eta = cfg.eta_max;
    let mut termination = Termination::MaxIter;

    for _ in 0..cfg.max_iter {
        let t0 = Instant::now();
        let step = match cfg.step {
            StepPolicy::Backtracking => {
                backtracking_step(&obj, &state, &w, f, (2.0 * eta).min(cfg.eta_max), cfg)
            }
            StepPolicy::Fixed(eta_fixed) => {
                let g = pgd_direction(&obj.grad_smooth(&state), &w, &mcp);
                let trial = project_step(&w, &g, eta_fixed);
                let value = obj.value(&trial);
                value.is_finite().then_some(PgdStep {
                    w: trial,
                    value,
                    eta: eta_fixed,
                    backtracks: 0,
                })
            }
        };
        report.timings.linesearch += t0.elapsed().as_secs_f64();
        let Some(step) = step else {
            termination = Termination::Numerical;
            break;
        };
        let rel = relative_change(&w, &step.w, p);
        eta = step.eta;
        w = step.w;
        f = step.value;
        let t1 = Instant::now();
        state = LaplacianState::from_weights(&w, p)?;
        report.timings.factorize += t1.elapsed().as_secs_f64();
        report.push_iteration(
            f,
            step.eta,
            w.iter().filter(|&&x| x > 0.0).count(),
            step.backtracks,
            rel,
        );
        if rel <= cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }
    report.termination = termination;
    report.kkt_residual = obj.kkt_residual_at(&state, &w);
    report.timings.total = started.elapsed().as_secs_f64();
    Ok((w, report))
}

/// Projected gradient descent from the uniform complete graph.
pub fn pgd_solve(
    cov: &SampleCovariance,
    mcp: Mcp,
    cfg: &PgdConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let p = cov.nodes();
    pgd_solve_from(cov, mcp, cfg, crate::newgle::uniform_point(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn stationary_input_converges_immediately() {
        let p = 4;
        let w0 = crate::newgle::uniform_point(p);
        let st = LaplacianState::from_weights(&w0, p).unwrap();
        let cov = SampleCovariance::new(st.inverse().clone(), 100).unwrap();
        let (w, rep) = pgd_solve_from(&cov, Mcp::new(0.0, 1.01).unwrap(), &PgdConfig::default(), w0.clone()).unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert_eq!(rep.outer_iterations, 1);
        for (a, b) in w.iter().zip(&w0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let cov = SampleCovariance::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.1, 0.2, 0.8, 0.0, -0.1, 0.0, 1.2]),
            10,
        )
        .unwrap();
        let (w, rep) = pgd_solve(&cov, Mcp::new(0.05, 1.01).unwrap(), &PgdConfig::default()).unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!(rep.objective.windows(2).all(|v| v[1] <= v[0]));
    }

    #[test]
    fn rejects_bad_fixed_step() {
        let cfg = PgdConfig {
            step: StepPolicy::Fixed(0.0),
            ..PgdConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
