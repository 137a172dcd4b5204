//! Inner solver for the vector-parameterized Newton subproblem
//!
//! ```text
//! min_delta  f_N(delta) = <g, delta> + 1/2 <P(delta), Q P(delta) Q>
//!                         + ||eps ⊙ delta||^2 + 2 sum_k MCP(w_k + delta_k)
//! s.t.       delta >= -w,   delta_k = 0 outside the free set
//! ```
//!
//! where `g = P*(S - Q)`. It is solved with projected nonlinear conjugate
//! gradients (Dai-Yuan beta), preconditioned by the exact diagonal of the
//! quadratic term's Hessian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplacian::{apply_p, FreeSet};
use crate::objective::Mcp;

/// Floor applied to preconditioner entries before dividing.
pub const PRECOND_FLOOR: f64 = 1e-12;
/// DY denominators at or below this magnitude give `beta = 0`.
pub const DY_DENOM_GUARD: f64 = 1e-16;

/// The quadratic-plus-MCP model at one outer iterate.
#[derive(Debug, Clone)]
pub struct NewtonModel<'a> {
    /// `Q = (L + J)^{-1}` at the current iterate.
    pub q: &'a DMatrix<f64>,
    /// Linear term `P*(S - Q)`.
    pub g_lin: Vec<f64>,
    /// Current weights.
    pub w: &'a [f64],
    pub free: &'a FreeSet,
    /// Per-edge damping `eps~`, all entries `>= 0`.
    pub eps: Vec<f64>,
    pub mcp: Mcp,
    /// 0-based `(i, j)` pair of every edge index.
    pub pairs: &'a [(usize, usize)],
}

impl<'a> NewtonModel<'a> {
    pub fn nodes(&self) -> usize {
        self.q.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn check(&self, delta: &[f64]) -> Result<()> {
        let m = self.dim();
        if delta.len() != m || self.g_lin.len() != m || self.eps.len() != m || self.pairs.len() != m
        {
            return Err(Error::Dimension(format!(
                "Newton model vectors must all have length {m}"
            )));
        }
        Ok(())
    }

    /// `[P*(Q P(delta) Q)]_k` for each `k` in `out`, using only the support of `delta`.
    ///
    /// With `G = Q P(delta)` assembled column-wise from `q_a - q_b`, the entry
    /// for `(i, j)` is `M_ii + M_jj - 2 M_ij` where `M_ij = <q_i, G^T e_j>`.
    fn hess_vec(&self, support: &[(usize, f64)], out: &[usize]) -> Vec<f64> {
        let p = self.nodes();
        if support.is_empty() {
            return vec![0.0; out.len()];
        }
        let q = self.q;
        // Dense products win once the support is a sizable share of p^2.
        let g = if 12 * support.len() >= p * p {
            let mut d = DMatrix::<f64>::zeros(p, p);
            for &(l, v) in support {
                let (a, b) = self.pairs[l];
                d[(a, b)] -= v;
                d[(b, a)] -= v;
                d[(a, a)] += v;
                d[(b, b)] += v;
            }
            q * d
        } else {
            let mut g = DMatrix::<f64>::zeros(p, p);
            let mut diff = vec![0.0; p];
            for &(l, d) in support {
                let (a, b) = self.pairs[l];
                let qa = q.column(a);
                let qb = q.column(b);
                for r in 0..p {
                    diff[r] = d * (qa[r] - qb[r]);
                }
                {
                    let mut ga = g.column_mut(a);
                    for r in 0..p {
                        ga[r] += diff[r];
                    }
                }
                let mut gb = g.column_mut(b);
                for r in 0..p {
                    gb[r] -= diff[r];
                }
            }
            g
        };
        let pick = |m_entry: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            let mut diag = vec![f64::NAN; p];
            out.iter()
                .map(|&k| {
                    let (i, j) = self.pairs[k];
                    for t in [i, j] {
                        if diag[t].is_nan() {
                            diag[t] = m_entry(t, t);
                        }
                    }
                    diag[i] + diag[j] - 2.0 * m_entry(i, j)
                })
                .collect()
        };
        if 8 * out.len() >= p * p {
            let m = &g * q;
            pick(&|i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
        } else {
            // C = G^T = P(delta) Q; M = Q C.
            let c = g.transpose();
            pick(&|i, j| q.column(i).dot(&c.column(j)))
        }
    }

    fn support(&self, delta: &[f64]) -> Vec<(usize, f64)> {
        self.free
            .members()
            .iter()
            .filter(|&&k| delta[k] != 0.0)
            .map(|&k| (k, delta[k]))
            .collect()
    }

    /// Derivative of `MCP` at `x = w_k + delta_k`, using the right derivative
    /// `lambda` at zero (the only feasible direction there).
    fn mcp_slope(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.mcp.lambda
        } else {
            self.mcp.grad(x)
        }
    }

    /// Value of the model with the quadratic term supplied as `h_delta` over `idx`.
    fn value_with(&self, delta: &[f64], idx: &[usize], h_delta: &[f64]) -> f64 {
        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut damp = 0.0;
        for (&k, &hk) in idx.iter().zip(h_delta) {
            let d = delta[k];
            lin += self.g_lin[k] * d;
            quad += d * hk;
            damp += (self.eps[k] * d).powi(2);
        }
        let pen: f64 = self
            .w
            .iter()
            .zip(delta)
            .map(|(&wk, &dk)| self.mcp.value(wk + dk))
            .sum();
        lin + 0.5 * quad + damp + 2.0 * pen
    }

    fn grad_with(&self, delta: &[f64], idx: &[usize], h_delta: &[f64]) -> Vec<f64> {
        idx.iter()
            .zip(h_delta)
            .map(|(&k, &hk)| {
                let d = delta[k];
                self.g_lin[k]
                    + hk
                    + 2.0 * self.eps[k] * self.eps[k] * d
                    + 2.0 * self.mcp_slope(self.w[k] + d)
            })
            .collect()
    }

    /// Value, gradient and `H delta` on the free coordinates.
    fn value_grad_free(&self, delta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let idx = self.free.members();
        let h = self.hess_vec(&self.support(delta), idx);
        (
            self.value_with(delta, idx, &h),
            self.grad_with(delta, idx, &h),
            h,
        )
    }

    /// `H v` on the free coordinates for `v` given over the free coordinates.
    fn hess_free(&self, v: &[f64]) -> Vec<f64> {
        let idx = self.free.members();
        let supp: Vec<(usize, f64)> = idx
            .iter()
            .zip(v)
            .filter(|(_, &x)| x != 0.0)
            .map(|(&k, &x)| (k, x))
            .collect();
        self.hess_vec(&supp, idx)
    }
}

/// `f_N(delta)` for a full-length `delta`; coordinates outside the free set
/// contribute through all terms.
pub fn eval_fn(delta: &[f64], model: &NewtonModel<'_>) -> Result<f64> {
    model.check(delta)?;
    let supp: Vec<(usize, f64)> = delta
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(k, &d)| (k, d))
        .collect();
    let idx: Vec<usize> = supp.iter().map(|&(k, _)| k).collect();
    let h = model.hess_vec(&supp, &idx);
    Ok(model.value_with(delta, &idx, &h))
}

/// `grad f_N = P*(S - Q + Q P(delta) Q) + 2 eps^2 ⊙ delta + 2 MCP'(w + delta)`
/// over every coordinate. At `w_k + delta_k = 0` the MCP slope is `lambda`.
pub fn grad_fn(delta: &[f64], model: &NewtonModel<'_>) -> Result<Vec<f64>> {
    model.check(delta)?;
    let supp: Vec<(usize, f64)> = delta
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(k, &d)| (k, d))
        .collect();
    let all: Vec<usize> = (0..model.dim()).collect();
    let h = model.hess_vec(&supp, &all);
    Ok(model.grad_with(delta, &all, &h))
}

/// Dense `P*(Q P(delta) Q)`, `O(p^3)`. Reference for the structured product.
pub fn hess_vec_dense(delta: &[f64], q: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = apply_p(delta, q.nrows())?;
    let m = q * d * q;
    crate::laplacian::apply_p_adjoint(&m)
}

/// Structured `P*(Q P(delta) Q)` over every coordinate.
pub fn hess_vec(delta: &[f64], model: &NewtonModel<'_>) -> Result<Vec<f64>> {
    model.check(delta)?;
    let supp: Vec<(usize, f64)> = delta
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(k, &d)| (k, d))
        .collect();
    let all: Vec<usize> = (0..model.dim()).collect();
    Ok(model.hess_vec(&supp, &all))
}

/// Diagonal Hessian preconditioner `(Q_ii + Q_jj - 2 Q_ij)^2 + eps_k^2`,
/// floored at [`PRECOND_FLOOR`].
pub fn precond(model: &NewtonModel<'_>) -> Vec<f64> {
    let q = model.q;
    model
        .pairs
        .iter()
        .zip(&model.eps)
        .map(|(&(i, j), &e)| {
            let r = q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)];
            (r * r + e * e).max(PRECOND_FLOOR)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dai-Yuan coefficient `max(0, |g|^2 / ((g - g_prev)^T d_prev))`.
pub fn dy_beta(g: &[f64], g_prev: &[f64], d_prev: &[f64]) -> f64 {
    let num = dot(g, g);
    let den: f64 = g
        .iter()
        .zip(g_prev)
        .zip(d_prev)
        .map(|((a, b), d)| (a - b) * d)
        .sum();
    if !den.is_finite() || den.abs() <= DY_DENOM_GUARD {
        return 0.0;
    }
    let beta = num / den;
    if beta.is_finite() {
        beta.max(0.0)
    } else {
        0.0
    }
}

/// Controls for [`solve_newton`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct InnerControls {
    /// Iteration budget at the first outer iteration.
    pub max_iter: usize,
    /// Extra iterations granted per outer iteration.
    pub growth: usize,
    /// Stop once the projected-gradient infinity norm drops below this
    /// fraction of its initial value.
    pub rel_tol: f64,
    pub ls_shrink: f64,
    pub ls_c1: f64,
    pub ls_max_halvings: usize,
    /// Force `beta = 0` (projected, preconditioned gradient descent).
    pub steepest: bool,
    /// Replace the preconditioner by the identity.
    pub unpreconditioned: bool,
}

impl Default for InnerControls {
    fn default() -> Self {
        InnerControls {
            max_iter: 25,
            growth: 0,
            rel_tol: 0.1,
            ls_shrink: 0.5,
            ls_c1: 1e-4,
            ls_max_halvings: 30,
            steepest: false,
            unpreconditioned: false,
        }
    }
}

impl InnerControls {
    pub fn budget(&self, outer_iter: usize) -> usize {
        self.max_iter + self.growth * outer_iter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerStop {
    /// Projected gradient was zero at `delta = 0`.
    Stationary,
    Converged,
    MaxIter,
    /// Linesearch could not find a decrease.
    LinesearchFailed,
    /// No descent direction remained.
    NoDescent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerTrace {
    pub iterations: usize,
    /// `f_N` at `delta = 0` followed by each accepted iterate.
    pub values: Vec<f64>,
    pub restarts: usize,
    pub stop: InnerStop,
}

fn projected_grad_norm(delta: &[f64], w: &[f64], idx: &[usize], grad: &[f64]) -> f64 {
    idx.iter()
        .zip(grad)
        .map(|(&k, &g)| {
            if delta[k] <= -w[k] && g > 0.0 {
                0.0
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Approximately minimizes `f_N` from `delta = 0` over the free set.
///
/// Every iterate satisfies `delta >= -w` and is zero outside the free set,
/// and `f_N` never increases between accepted iterates.
pub fn solve_newton(
    model: &NewtonModel<'_>,
    ctrl: &InnerControls,
    max_iter: usize,
) -> Result<(Vec<f64>, InnerTrace)> {
    let m = model.dim();
    let mut delta = vec![0.0; m];
    model.check(&delta)?;
    let idx = model.free.members();
    let w = model.w;

    let diag: Vec<f64> = if ctrl.unpreconditioned {
        vec![1.0; idx.len()]
    } else {
        let full = precond(model);
        idx.iter().map(|&k| full[k]).collect()
    };

    let (mut f, mut grad, mut h) = model.value_grad_free(&delta);
    let mut trace = InnerTrace {
        iterations: 0,
        values: vec![f],
        restarts: 0,
        stop: InnerStop::MaxIter,
    };
    if !f.is_finite() {
        return Err(Error::Numerical(format!("f_N(0) is not finite ({f})")));
    }
    let pg0 = projected_grad_norm(&delta, w, idx, &grad);
    if pg0 == 0.0 || idx.is_empty() {
        trace.stop = InnerStop::Stationary;
        return Ok((delta, trace));
    }

    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (preconditioned grad, direction)
    let mut restart = true;
    let mut pinned_prev: Vec<bool> = Vec::new();
    for _ in 0..max_iter {
        // Coordinates held at the bound by the gradient form the current face;
        // CG runs on the remaining ones and restarts whenever the face changes.
        let pinned: Vec<bool> = idx
            .iter()
            .zip(&grad)
            .map(|(&k, &g)| delta[k] <= -w[k] && g > 0.0)
            .collect();
        let pgrad: Vec<f64> = grad
            .iter()
            .zip(&diag)
            .zip(&pinned)
            .map(|((g, d), &pin)| if pin { 0.0 } else { g / d })
            .collect();
        let mut dir: Vec<f64> = pgrad.iter().map(|g| -g).collect();
        let face_changed = pinned != pinned_prev;
        if let (Some((g_prev, d_prev)), false) = (&prev, restart || face_changed || ctrl.steepest) {
            let beta = dy_beta(&pgrad, g_prev, d_prev);
            for (d, dp) in dir.iter_mut().zip(d_prev) {
                *d += beta * dp;
            }
        }
        let pin = |dir: &mut Vec<f64>| {
            for (d, &k) in dir.iter_mut().zip(idx) {
                if delta[k] <= -w[k] && *d < 0.0 {
                    *d = 0.0;
                }
            }
        };
        pin(&mut dir);
        if dot(&grad, &dir) >= 0.0 {
            trace.restarts += 1;
            dir = pgrad.iter().map(|g| -g).collect();
            pin(&mut dir);
            if dot(&grad, &dir) >= 0.0 {
                trace.stop = InnerStop::NoDescent;
                break;
            }
        }
        pinned_prev = pinned;

        // The smooth part is quadratic: H (delta + s) = h + H s, with
        // H s = zeta H dir unless the step was clipped.
        let h_dir = model.hess_free(&dir);
        // Start no further than the minimiser of the quadratic part along dir.
        let curv = dot(&dir, &h_dir);
        let mut zeta = if curv > 0.0 { (-dot(&grad, &dir) / curv).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..=ctrl.ls_max_halvings {
            let mut trial = delta.clone();
            let mut step = vec![0.0; idx.len()];
            let mut clipped = false;
            let mut slope = 0.0;
            for (((&k, &d), &g), st) in idx.iter().zip(&dir).zip(&grad).zip(step.iter_mut()) {
                let raw = delta[k] + zeta * d;
                let v = if raw < -w[k] {
                    clipped = true;
                    -w[k]
                } else {
                    raw
                };
                *st = v - delta[k];
                slope += g * *st;
                trial[k] = v;
            }
            let h_step = if clipped {
                model.hess_free(&step)
            } else {
                h_dir.iter().map(|x| zeta * x).collect()
            };
            let h_trial: Vec<f64> = h.iter().zip(&h_step).map(|(a, b)| a + b).collect();
            let f_trial = model.value_with(&trial, idx, &h_trial);
            if !f_trial.is_nan() && f_trial <= f + ctrl.ls_c1 * slope {
                accepted = Some((trial, f_trial, h_trial, clipped));
                break;
            }
            zeta *= ctrl.ls_shrink;
        }
        let Some((trial, f_trial, h_trial, clipped)) = accepted else {
            trace.stop = InnerStop::LinesearchFailed;
            break;
        };
        if !f_trial.is_finite() {
            return Err(Error::Numerical(format!(
                "f_N became non-finite at inner iteration {}",
                trace.iterations
            )));
        }
        delta = trial;
        h = h_trial;
        f = f_trial;
        grad = model.grad_with(&delta, idx, &h);
        trace.iterations += 1;
        trace.values.push(f);
        prev = Some((pgrad, dir));
        restart = clipped;

        if projected_grad_norm(&delta, w, idx, &grad) <= ctrl.rel_tol * pg0 {
            trace.stop = InnerStop::Converged;
            break;
        }
    }
    Ok((delta, trace))
}
