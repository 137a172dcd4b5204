//! Proximal Newton outer loop.
//!
//! Each outer iteration factorizes `L + J`, selects the free set, solves the
//! Newton model with [`solve_newton`], and takes an Armijo step along the
//! resulting direction. The MCP term enters the model exactly, so the inner
//! solver sees its curvature rather than a linearization.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::{solve_newton, InnerControls, InnerTrace, NewtonModel};
use crate::laplacian::{compute_free_set, edge_pairs, num_edges, FreeSetRule};
use crate::objective::{penalty_vec, LaplacianState, Mcp, Objective, SampleCovariance};
use crate::pgd::{backtracking_step, relative_change, PgdConfig};
use crate::report::{SolveReport, Termination};

/// How the damping weights `eps~` of the Newton model are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EpsPolicy {
    #[default]
    Zero,
    Uniform(f64),
    /// `1 / gamma` on edges whose current weight lies in the concave region
    /// `|w_k| <= gamma * lambda`, zero elsewhere.
    ConcaveRegion,
}

impl EpsPolicy {
    pub fn weights(&self, w: &[f64], mcp: &Mcp) -> Vec<f64> {
        match *self {
            EpsPolicy::Zero => vec![0.0; w.len()],
            EpsPolicy::Uniform(c) => vec![c; w.len()],
            EpsPolicy::ConcaveRegion => w
                .iter()
                .map(|&x| if x.abs() <= mcp.knot() { 1.0 / mcp.gamma } else { 0.0 })
                .collect(),
        }
    }
}

/// Starting point of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Complete graph with every weight `2 / p`.
    Uniform,
    /// `k` backtracking projected-gradient steps from the uniform point.
    WarmPgd(usize),
    /// Up to `k` unpenalized (`lambda = 0`) NewGLE iterations from the
    /// uniform point, stopping early once converged.
    WarmMle(usize),
    Given(Vec<f64>),
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::WarmMle(5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoParams {
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams {
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub eps: EpsPolicy,
    /// Relative Frobenius change of `L` that stops the iteration.
    pub tol: f64,
    pub max_outer: usize,
    pub armijo: ArmijoParams,
    pub inner: InnerControls,
    pub free_set_rule: FreeSetRule,
    pub init: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.0,
            gamma: 1.01,
            eps: EpsPolicy::Zero,
            tol: 1e-4,
            max_outer: 200,
            armijo: ArmijoParams::default(),
            inner: InnerControls::default(),
            free_set_rule: FreeSetRule::Augmented,
            init: InitMode::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        SolverConfig {
            lambda,
            ..SolverConfig::default()
        }
    }

    pub fn mcp(&self) -> Result<Mcp> {
        Mcp::new(self.lambda, self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.mcp()?;
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must be > 1, got {}", self.gamma)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be >= 0".into()));
        }
        if let EpsPolicy::Uniform(c) = self.eps {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument("eps must be >= 0".into()));
            }
        }
        let a = &self.armijo;
        if !(a.c1 > 0.0 && a.c1 < 1.0 && a.shrink > 0.0 && a.shrink < 1.0) {
            return Err(Error::InvalidArgument("invalid Armijo constants".into()));
        }
        Ok(())
    }
}

/// Every weight `2 / p`: the complete graph with `Tr(L) = 2(p - 1)`.
pub fn uniform_point(p: usize) -> Vec<f64> {
    vec![2.0 / p as f64; num_edges(p)]
}

/// Starting weights for a solve.
pub fn initial_point(cov: &SampleCovariance, mcp: Mcp, mode: &InitMode) -> Result<Vec<f64>> {
    warm_start(cov, mcp, mode).map(|(w, _)| w)
}

/// Starting weights and the number of iterations spent finding them.
fn warm_start(cov: &SampleCovariance, mcp: Mcp, mode: &InitMode) -> Result<(Vec<f64>, usize)> {
    let p = cov.nodes();
    match mode {
        InitMode::Uniform => Ok((uniform_point(p), 0)),
        InitMode::WarmMle(0) => Ok((uniform_point(p), 0)),
        InitMode::WarmMle(k) => {
            let cfg = SolverConfig {
                lambda: 0.0,
                gamma: mcp.gamma,
                max_outer: *k,
                init: InitMode::Uniform,
                ..SolverConfig::default()
            };
            let (w, rep) = solve(cov, &cfg)?;
            Ok((w, rep.outer_iterations))
        }
        InitMode::Given(w) => {
            if w.len() != num_edges(p) || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument(
                    "initial weights must be nonnegative with length p(p-1)/2".into(),
                ));
            }
            Ok((w.clone(), 0))
        }
        InitMode::WarmPgd(k) => {
            let obj = Objective::new(cov, mcp);
            let cfg = PgdConfig::default();
            let mut w = uniform_point(p);
            let mut state = LaplacianState::from_weights(&w, p)?;
            let mut f = obj.smooth_at(&state, &w) + obj.penalty(&w);
            let mut eta = cfg.eta_max;
            let mut taken = 0;
            for _ in 0..*k {
                let Some(step) =
                    backtracking_step(&obj, &state, &w, f, (2.0 * eta).min(cfg.eta_max), &cfg)
                else {
                    break;
                };
                eta = step.eta;
                w = step.w;
                f = step.value;
                state = LaplacianState::from_weights(&w, p)?;
                taken += 1;
            }
            Ok((w, taken))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinesearchOutcome {
    /// Accepted step; 0 when backtracking was exhausted.
    pub alpha: f64,
    pub value: f64,
    pub weights: Vec<f64>,
    pub backtracks: usize,
}

/// Armijo backtracking on `F` along `delta`.
///
/// Accepts the largest `alpha` in `{1, shrink, shrink^2, ...}` with
/// `F(w + alpha delta) <= f0 + c1 * alpha * model_decrease`. Singular iterates
/// evaluate to `+inf` and are always rejected.
pub fn armijo_linesearch(
    obj: &Objective<'_>,
    w: &[f64],
    delta: &[f64],
    f0: f64,
    model_decrease: f64,
    params: &ArmijoParams,
) -> LinesearchOutcome {
    if delta.iter().all(|&d| d == 0.0) {
        return LinesearchOutcome {
            alpha: 1.0,
            value: f0,
            weights: w.to_vec(),
            backtracks: 0,
        };
    }
    let mut alpha = 1.0;
    for backtracks in 0..=params.max_backtracks {
        let trial: Vec<f64> = w
            .iter()
            .zip(delta)
            .map(|(&wk, &dk)| (wk + alpha * dk).max(0.0))
            .collect();
        let value = obj.value(&trial);
        if value.is_finite() && value <= f0 + params.c1 * alpha * model_decrease {
            return LinesearchOutcome {
                alpha,
                value,
                weights: trial,
                backtracks,
            };
        }
        alpha *= params.shrink;
    }
    LinesearchOutcome {
        alpha: 0.0,
        value: f0,
        weights: w.to_vec(),
        backtracks: params.max_backtracks,
    }
}

/// One accepted outer iteration, as seen by an observer.
#[derive(Debug)]
pub struct IterationEvent<'a> {
    pub iteration: usize,
    pub w_prev: &'a [f64],
    pub delta: &'a [f64],
    pub alpha: f64,
    pub f_prev: f64,
    pub f_new: f64,
    pub w: &'a [f64],
    pub free_set_size: usize,
    pub inner: &'a InnerTrace,
}

/// Runs the proximal Newton method.
pub fn solve(cov: &SampleCovariance, cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    solve_with_observer(cov, cfg, |_| {})
}

/// [`solve`] with a callback after every outer iteration.
pub fn solve_with_observer<F>(
    cov: &SampleCovariance,
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<(Vec<f64>, SolveReport)>
where
    F: FnMut(&IterationEvent<'_>),
{
    cfg.validate()?;
    let started = Instant::now();
    let mcp = cfg.mcp()?;
    let p = cov.nodes();
    let obj = Objective::new(cov, mcp);
    let pairs = edge_pairs(p);

    let (mut w, warm_iterations) = warm_start(cov, mcp, &cfg.init)?;
    let t0 = Instant::now();
    let mut state = LaplacianState::from_weights(&w, p)
        .map_err(|_| Error::InvalidArgument("initial point is a disconnected graph".into()))?;
    let mut f = obj.smooth_at(&state, &w) + obj.penalty(&w);
    let mut report = SolveReport::new("newgle", f);
    report.warm_start_iterations = warm_iterations;
    report.timings.factorize += t0.elapsed().as_secs_f64();
    let mut termination = Termination::MaxIter;

    for t in 0..cfg.max_outer {
        let t_free = Instant::now();
        let g_lin = obj.grad_smooth(&state);
        let free = compute_free_set(
            state.laplacian(),
            cov.matrix(),
            state.inverse(),
            mcp.lambda,
            cfg.free_set_rule,
        )?;
        report.timings.free_set += t_free.elapsed().as_secs_f64();

        let t_inner = Instant::now();
        let model = NewtonModel {
            q: state.inverse(),
            g_lin,
            w: &w,
            free: &free,
            eps: cfg.eps.weights(&w, &mcp),
            mcp,
            pairs: &pairs,
        };
        let (delta, inner) = solve_newton(&model, &cfg.inner, cfg.inner.budget(t))?;
        report.timings.inner += t_inner.elapsed().as_secs_f64();

        let t_ls = Instant::now();
        let w_full: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let model_decrease = model
            .g_lin
            .iter()
            .zip(&delta)
            .map(|(g, d)| g * d)
            .sum::<f64>()
            + 2.0 * (penalty_vec(&w_full, &mcp) - penalty_vec(&w, &mcp));
        let ls = armijo_linesearch(&obj, &w, &delta, f, model_decrease, &cfg.armijo);
        report.timings.linesearch += t_ls.elapsed().as_secs_f64();
        if ls.alpha == 0.0 {
            log::warn!("outer iteration {t}: Armijo backtracking exhausted");
            termination = Termination::Numerical;
            break;
        }

        let rel = relative_change(&w, &ls.weights, p);
        let t_fact = Instant::now();
        let next = match LaplacianState::from_weights(&ls.weights, p) {
            Ok(s) => s,
            Err(Error::SingularIterate) => {
                termination = Termination::Numerical;
                break;
            }
            Err(e) => return Err(e),
        };
        report.timings.factorize += t_fact.elapsed().as_secs_f64();

        observe(&IterationEvent {
            iteration: t,
            w_prev: &w,
            delta: &delta,
            alpha: ls.alpha,
            f_prev: f,
            f_new: ls.value,
            w: &ls.weights,
            free_set_size: free.len(),
            inner: &inner,
        });
        report.push_iteration(ls.value, ls.alpha, free.len(), inner.iterations, rel);
        log::debug!(
            "outer {t}: F = {:.10e}, alpha = {}, |free| = {}, inner = {}, rel = {rel:.3e}",
            ls.value,
            ls.alpha,
            free.len(),
            inner.iterations
        );
        w = ls.weights;
        f = ls.value;
        state = next;
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
