//! Penalized negative log-likelihood of a Laplacian-constrained GMRF.
//!
//! In weight coordinates the objective is
//!
//! ```text
//! F(w) = Tr(P(w) S) - log det(P(w) + J) + 2 * sum_k MCP(w_k; gamma, lambda)
//! ```
//!
//! with `J = 11^T / p`. The factor 2 counts both `(i, j)` and `(j, i)` of the
//! symmetric matrix penalty. `log det(L + J)` equals the pseudo-determinant of
//! `L` on connected Laplacians, and the factorization fails exactly when the
//! graph is disconnected, which is reported as [`Error::SingularIterate`] and
//! as `+inf` by the objective.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplacian::{apply_p, apply_p_adjoint, num_edges};

/// Minimax concave penalty parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcp {
    pub lambda: f64,
    pub gamma: f64,
}

impl Mcp {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Mcp { lambda, gamma })
    }

    /// Knot of the penalty: the value is flat beyond `gamma * lambda`.
    pub fn knot(&self) -> f64 {
        self.gamma * self.lambda
    }

    pub fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        if a <= self.knot() {
            self.lambda * a - a * a / (2.0 * self.gamma)
        } else {
            0.5 * self.gamma * self.lambda * self.lambda
        }
    }

    /// Derivative away from zero. At `x = 0` the subdifferential is
    /// `[-lambda, lambda]` and 0 is returned.
    pub fn grad(&self, x: f64) -> f64 {
        let a = x.abs();
        if x == 0.0 || a > self.knot() {
            0.0
        } else {
            self.lambda * x.signum() - x / self.gamma
        }
    }
}

/// `sum_k MCP(w_k)`.
pub fn penalty_vec(w: &[f64], mcp: &Mcp) -> f64 {
    w.iter().map(|&x| mcp.value(x)).sum()
}

/// Empirical covariance `S = (1/n) sum x_i x_i^T` with its sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    s: DMatrix<f64>,
    n: usize,
}

impl SampleCovariance {
    /// Validates shape and symmetry (to a relative `1e-10`).
    pub fn new(s: DMatrix<f64>, n: usize) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Dimension(format!(
                "covariance must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least 2 nodes".into()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let scale = s.amax().max(1.0);
        let asym = (&s - s.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(SampleCovariance { s, n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.s.nrows()
    }

    /// Smallest eigenvalue, for the numerical PSD check (`>= -1e-10`).
    pub fn min_eigenvalue(&self) -> f64 {
        self.s.clone().symmetric_eigenvalues().min()
    }
}

/// Factorization of `L + J` at a feasible Laplacian.
#[derive(Clone)]
pub struct LaplacianState {
    l: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    q: DMatrix<f64>,
    logdet: f64,
}

impl std::fmt::Debug for LaplacianState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaplacianState")
            .field("p", &self.l.nrows())
            .field("logdet", &self.logdet)
            .finish()
    }
}

fn shifted(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    l.add_scalar(1.0 / p as f64)
}

/// Cholesky of `L + J` that also rejects numerically singular matrices
/// whose pivots survive only through round-off.
fn shifted_cholesky(l: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let a = shifted(l);
    let scale = a.diagonal().amax();
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let chol = Cholesky::new(a)?;
    let floor = scale * f64::EPSILON * 64.0 * l.nrows() as f64;
    chol.l_dirty()
        .diagonal()
        .iter()
        .all(|d| d * d > floor)
        .then_some(chol)
}

fn cholesky_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `log det(L + J)`, or `None` when `L + J` is not positive definite.
pub fn shifted_logdet(l: &DMatrix<f64>) -> Option<f64> {
    let chol = shifted_cholesky(l)?;
    let ld = cholesky_logdet(&chol);
    ld.is_finite().then_some(ld)
}

impl LaplacianState {
    /// Factorizes `L + J` and forms `Q = (L + J)^{-1}`.
    pub fn factorize(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Dimension("Laplacian must be square".into()));
        }
        let chol = shifted_cholesky(&l).ok_or(Error::SingularIterate)?;
        let logdet = cholesky_logdet(&chol);
        if !logdet.is_finite() {
            return Err(Error::SingularIterate);
        }
        let mut q = chol.inverse();
        // Symmetrize away the round-off of the triangular solves.
        let p = q.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let v = 0.5 * (q[(i, j)] + q[(j, i)]);
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
        Ok(LaplacianState { l, chol, q, logdet })
    }

    pub fn from_weights(w: &[f64], p: usize) -> Result<Self> {
        Self::factorize(apply_p(w, p)?)
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Lower Cholesky factor of `L + J`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn nodes(&self) -> usize {
        self.l.nrows()
    }
}

/// The objective bound to one covariance and penalty.
///
/// `P*(S)` is cached so `Tr(P(w) S) = <w, P*(S)>` costs `O(p^2)`.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    cov: &'a SampleCovariance,
    adj_s: Vec<f64>,
    mcp: Mcp,
}

impl<'a> Objective<'a> {
    pub fn new(cov: &'a SampleCovariance, mcp: Mcp) -> Self {
        let adj_s = apply_p_adjoint(cov.matrix()).expect("covariance is square");
        Objective { cov, adj_s, mcp }
    }

    pub fn nodes(&self) -> usize {
        self.cov.nodes()
    }

    pub fn covariance(&self) -> &SampleCovariance {
        self.cov
    }

    pub fn mcp(&self) -> &Mcp {
        &self.mcp
    }

    /// `Tr(P(w) S)`.
    pub fn trace_term(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.adj_s).map(|(a, b)| a * b).sum()
    }

    /// Smooth part `f(P(w))`; `+inf` when `L + J` is singular.
    pub fn smooth(&self, w: &[f64]) -> f64 {
        let l = match apply_p(w, self.nodes()) {
            Ok(l) => l,
            Err(_) => return f64::INFINITY,
        };
        match shifted_logdet(&l) {
            Some(ld) => self.trace_term(w) - ld,
            None => f64::INFINITY,
        }
    }

    /// Smooth part at an already factorized state.
    pub fn smooth_at(&self, state: &LaplacianState, w: &[f64]) -> f64 {
        self.trace_term(w) - state.logdet()
    }

    pub fn penalty(&self, w: &[f64]) -> f64 {
        2.0 * penalty_vec(w, &self.mcp)
    }

    /// Full objective `F(w)`; `+inf` on singular iterates.
    pub fn value(&self, w: &[f64]) -> f64 {
        let f = self.smooth(w);
        if f.is_finite() {
            f + self.penalty(w)
        } else {
            f64::INFINITY
        }
    }

    /// `P*(S - Q)`, the gradient of `w -> f(P(w))`.
    pub fn grad_smooth(&self, state: &LaplacianState) -> Vec<f64> {
        grad_smooth_w(state, self.cov)
    }

    /// Scaled stationarity violation; see [`kkt_residual`].
    pub fn kkt_residual_at(&self, state: &LaplacianState, w: &[f64]) -> f64 {
        let g = self.grad_smooth(state);
        kkt_from_gradient(w, &g, &self.mcp) / (1.0 + self.cov.matrix().norm())
    }
}

/// `P*(S - Q)` at a factorized state.
pub fn grad_smooth_w(state: &LaplacianState, cov: &SampleCovariance) -> Vec<f64> {
    let s = cov.matrix();
    let q = state.inverse();
    let p = q.nrows();
    let mut out = Vec::with_capacity(num_edges(p));
    for j in 0..p {
        let djj = s[(j, j)] - q[(j, j)];
        for i in (j + 1)..p {
            let dii = s[(i, i)] - q[(i, i)];
            out.push(dii + djj - (s[(i, j)] - q[(i, j)]) - (s[(j, i)] - q[(j, i)]));
        }
    }
    out
}

/// Unscaled infinity norm of the stationarity violation in weight coordinates.
///
/// With `g = grad f + 2 MCP'(w)`: active weights (`w_k > 0`) contribute `|g_k|`;
/// zero weights contribute `max(0, -grad_k f - 2 lambda)`, the amount by which
/// no element of the subdifferential plus a nonnegative bound multiplier can
/// cancel the smooth gradient.
pub(crate) fn kkt_from_gradient(w: &[f64], grad: &[f64], mcp: &Mcp) -> f64 {
    w.iter()
        .zip(grad)
        .map(|(&wk, &gk)| {
            if wk > 0.0 {
                (gk + 2.0 * mcp.grad(wk)).abs()
            } else {
                (-gk - 2.0 * mcp.lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Stationarity residual of `F` at `w`, divided by `1 + ||S||_F`.
///
/// Returns `+inf` when `w` is a singular iterate.
pub fn kkt_residual(w: &[f64], cov: &SampleCovariance, mcp: &Mcp) -> Result<f64> {
    if w.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let state = match LaplacianState::from_weights(w, cov.nodes()) {
        Ok(s) => s,
        Err(Error::SingularIterate) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(Objective::new(cov, *mcp).kkt_residual_at(&state, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplacian::weights_of;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_node() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
    }

    #[test]
    fn factorize_two_node() {
        let st = LaplacianState::factorize(two_node()).unwrap();
        let q = st.inverse();
        assert!((q[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((q[(0, 1)] - 0.25).abs() < 1e-15);
        assert!((q[(1, 1)] - 0.75).abs() < 1e-15);
        assert!((st.logdet() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn factorize_zero_is_singular() {
        for p in 2..6 {
            let r = LaplacianState::factorize(DMatrix::zeros(p, p));
            assert!(matches!(r, Err(Error::SingularIterate)));
        }
    }

    #[test]
    fn inverse_residual_on_random_connected_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 20;
        let mut w = vec![0.0; num_edges(p)];
        // Path backbone keeps the graph connected; sprinkle extra edges.
        for i in 1..p {
            w[crate::laplacian::edge_index0(i, i - 1, p)] = rng.random_range(0.5..2.0);
        }
        for wk in w.iter_mut() {
            if rng.random_bool(0.1) {
                *wk += rng.random_range(0.5..2.0);
            }
        }
        let st = LaplacianState::from_weights(&w, p).unwrap();
        let shifted = st.laplacian().add_scalar(1.0 / p as f64);
        let resid = (st.inverse() * shifted - DMatrix::identity(p, p)).amax();
        assert!(resid < 1e-10, "residual {resid}");
    }

    #[test]
    fn mcp_examples() {
        let m = Mcp::new(1.0, 2.0).unwrap();
        assert_eq!(m.value(0.0), 0.0);
        assert!((m.value(0.5) - 0.4375).abs() < 1e-15);
        assert!((m.value(3.0) - 1.0).abs() < 1e-15);
        assert!((m.grad(0.5) - 0.75).abs() < 1e-15);
        assert_eq!(m.grad(3.0), 0.0);
        assert_eq!(m.grad(0.0), 0.0);
        assert!(m.grad(2.0).abs() < 1e-15);
        assert!(m.grad(-2.0).abs() < 1e-15);
        assert!((m.grad(-0.5) + 0.75).abs() < 1e-15);
        assert!(Mcp::new(-1.0, 2.0).is_err());
        assert!(Mcp::new(1.0, 0.0).is_err());
    }

    #[test]
    fn mcp_continuity_at_knot() {
        let m = Mcp::new(0.7, 1.3).unwrap();
        let knot = m.knot();
        for &h in &[1e-3, 1e-5, 1e-8] {
            for x in [knot - h, knot + h] {
                let diff = (m.value(x) - m.value(knot)).abs();
                assert!(diff <= m.lambda * h + h * h / (2.0 * m.gamma) + 1e-15);
            }
        }
    }

    #[test]
    fn penalty_vec_examples() {
        let m = Mcp::new(1.0, 2.0).unwrap();
        assert_eq!(penalty_vec(&[0.0; 4], &m), 0.0);
        assert!((penalty_vec(&[0.5, 3.0], &m) - 1.4375).abs() < 1e-15);
        let w = [0.1, 1.7, 0.0, 4.0];
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        assert_eq!(penalty_vec(&w, &m), penalty_vec(&neg, &m));
    }

    #[test]
    fn objective_two_node() {
        let cov = SampleCovariance::new(DMatrix::identity(2, 2), 1).unwrap();
        let obj = Objective::new(&cov, Mcp::new(0.0, 1.01).unwrap());
        let f = obj.value(&[1.0]);
        assert!((f - (2.0 - 2f64.ln())).abs() < 1e-14);
        assert!((f - 1.3069).abs() < 1e-4);
        assert_eq!(obj.value(&[0.0]), f64::INFINITY);
    }

    #[test]
    fn gradient_two_node() {
        let cov = SampleCovariance::new(DMatrix::identity(2, 2), 1).unwrap();
        let st = LaplacianState::factorize(two_node()).unwrap();
        let g = grad_smooth_w(&st, &cov);
        assert!((g[0] - 1.0).abs() < 1e-15);
        let cov_q = SampleCovariance::new(st.inverse().clone(), 1).unwrap();
        assert!(grad_smooth_w(&st, &cov_q)[0].abs() < 1e-15);
    }

    #[test]
    fn kkt_zero_at_stationary_instance() {
        let st = LaplacianState::factorize(two_node()).unwrap();
        let cov = SampleCovariance::new(st.inverse().clone(), 1).unwrap();
        let m = Mcp::new(0.0, 1.01).unwrap();
        let w = weights_of(&two_node()).unwrap();
        assert!(kkt_residual(&w, &cov, &m).unwrap() < 1e-15);
        assert!(kkt_residual(&[-1.0], &cov, &m).is_err());
    }

    #[test]
    fn kkt_ignores_inactive_zero_edges() {
        // Add an isolated-pair edge slot with zero weight and a small gradient:
        // extending a path graph by a zero edge cannot raise the residual
        // when the smooth gradient there is above -2 lambda.
        let w = [0.0, 0.0, 0.0];
        let g = [0.1, -0.05, 0.3];
        let m = Mcp::new(0.1, 1.01).unwrap();
        assert_eq!(kkt_from_gradient(&w, &g, &m), 0.0);
        let g_bad = [0.1, -0.5, 0.3];
        assert!((kkt_from_gradient(&w, &g_bad, &m) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn covariance_validation() {
        assert!(SampleCovariance::new(DMatrix::zeros(2, 3), 1).is_err());
        let mut s = DMatrix::identity(3, 3);
        s[(0, 1)] = 0.5;
        assert!(SampleCovariance::new(s, 1).is_err());
        assert!(SampleCovariance::new(DMatrix::identity(1, 1), 1).is_err());
    }
}
