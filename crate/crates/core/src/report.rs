use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIter,
    /// Linesearch exhausted or a factorization failed; the last accepted
    /// (and best) iterate is returned.
    Numerical,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max-iter",
            Termination::Numerical => "numerical",
        })
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub factorize: f64,
    pub free_set: f64,
    pub inner: f64,
    pub linesearch: f64,
    pub total: f64,
}

/// Per-iteration record of a solve.
///
/// `objective[0]` is the value at the starting point; entry `t + 1` follows
/// outer iteration `t`. The other traces have one entry per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub outer_iterations: usize,
    /// Iterations spent computing the starting point (not in the traces).
    pub warm_start_iterations: usize,
    pub objective: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub free_set_sizes: Vec<usize>,
    /// Inner NLCG iterations (NewGLE) or backtracks (PGD).
    pub inner_iterations: Vec<usize>,
    pub relative_changes: Vec<f64>,
    pub kkt_residual: f64,
    pub termination: Termination,
    pub timings: Timings,
}

impl SolveReport {
    pub(crate) fn new(method: &str, f0: f64) -> Self {
        SolveReport {
            method: method.to_string(),
            outer_iterations: 0,
            warm_start_iterations: 0,
            objective: vec![f0],
            step_sizes: Vec::new(),
            free_set_sizes: Vec::new(),
            inner_iterations: Vec::new(),
            relative_changes: Vec::new(),
            kkt_residual: f64::NAN,
            termination: Termination::MaxIter,
            timings: Timings::default(),
        }
    }

    pub(crate) fn push_iteration(
        &mut self,
        f: f64,
        step: f64,
        free: usize,
        inner: usize,
        rel: f64,
    ) {
        self.outer_iterations += 1;
        self.objective.push(f);
        self.step_sizes.push(step);
        self.free_set_sizes.push(free);
        self.inner_iterations.push(inner);
        self.relative_changes.push(rel);
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective trace starts non-empty")
    }

    /// True when no accepted iteration increased the objective.
    pub fn is_monotone(&self) -> bool {
        self.objective.windows(2).all(|v| v[1] <= v[0])
    }
}
