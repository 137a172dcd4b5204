#![allow(dead_code)]

use lapnewton::laplacian::{edge_index0, num_edges};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected weights: a weighted path plus random extra edges.
pub fn connected_weights(p: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = vec![0.0; num_edges(p)];
    for i in 1..p {
        w[edge_index0(i, i - 1, p)] = rng.random_range(0.5..2.0);
    }
    for wk in w.iter_mut() {
        if rng.random_bool(density) {
            *wk += rng.random_range(0.2..1.5);
        }
    }
    w
}

pub fn random_symmetric(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in j..p {
            let v = rng.random_range(-1.0..1.0);
            y[(i, j)] = v;
            y[(j, i)] = v;
        }
    }
    y
}

/// Covariance with rank p - 1, orthogonal to the ones vector, from `n` random samples.
pub fn random_cov(p: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::<f64>::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    for mut row in x.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let s = x.transpose() * &x / n as f64;
    (&s + s.transpose()) * 0.5
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix through its eigendecomposition.
pub fn pinv_sym(a: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let p = a.nrows();
    let mut out = DMatrix::zeros(p, p);
    for k in 0..p {
        let l = eig.eigenvalues[k];
        if l.abs() > cutoff {
            let u = eig.eigenvectors.column(k);
            out += (u * u.transpose()) / l;
        }
    }
    out
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Checks that `l` is a connected graph Laplacian: PSD with null vector `1`,
/// positive algebraic connectivity and nonpositive off-diagonals.
pub fn laplacian_violation(l: &DMatrix<f64>) -> Option<String> {
    let p = l.nrows();
    let eig = l.clone().symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if ev[0].abs() > 1e-8 {
        return Some(format!("lambda_min = {:e}", ev[0]));
    }
    let ones = nalgebra::DVector::from_element(p, 1.0);
    let rq = (ones.transpose() * l * &ones)[(0, 0)] / p as f64;
    if rq.abs() >= 1e-10 {
        return Some(format!("Rayleigh quotient of ones = {rq:e}"));
    }
    if ev[1] <= 0.0 {
        return Some(format!("lambda_2 = {:e}", ev[1]));
    }
    for j in 0..p {
        for i in 0..p {
            if i != j && l[(i, j)] > 1e-12 {
                return Some(format!("positive off-diagonal {:e} at ({i}, {j})", l[(i, j)]));
            }
        }
    }
    None
}
