mod common;

use lapnewton::laplacian::{
    apply_p, apply_p_adjoint, edge_index, edge_pair, num_edges, project_bound, weights_of,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn adjoint_identity_on_random_pairs() {
    let mut rng = common::rng(11);
    for _ in 0..100 {
        let p = rng.random_range(2..=20);
        let w: Vec<f64> = (0..num_edges(p)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = common::random_symmetric(p, &mut rng);
        let lhs = apply_p(&w, p).unwrap().dot(&y);
        let rhs: f64 = w.iter().zip(apply_p_adjoint(&y).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn index_is_a_bijection_up_to_100() {
    for p in 2..=100 {
        let m = num_edges(p);
        let mut seen = vec![false; m];
        for j in 1..=p {
            for i in (j + 1)..=p {
                let k = edge_index(i, j, p).unwrap();
                assert!(!seen[k - 1]);
                seen[k - 1] = true;
                assert_eq!(edge_pair(k, p).unwrap(), (i, j));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn laplacian_structure() {
    let mut rng = common::rng(3);
    let p = 9;
    let w = common::connected_weights(p, 0.3, &mut rng);
    let l = apply_p(&w, p).unwrap();
    for i in 0..p {
        assert!(l.row(i).sum().abs() < 1e-12);
        for j in 0..p {
            assert_eq!(l[(i, j)], l[(j, i)]);
            if i != j {
                assert!(l[(i, j)] <= 0.0);
            }
        }
    }
    assert_eq!(weights_of(&l).unwrap(), w);
}

#[test]
fn projection_is_nearest_feasible_point() {
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let n = rng.random_range(1..12);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let proj = project_bound(&v, &w).unwrap();
        let dist = |a: &[f64]| -> f64 { a.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum() };
        let d0 = dist(&proj);
        for _ in 0..20 {
            let cand: Vec<f64> = proj
                .iter()
                .zip(&w)
                .map(|(x, wk)| (x + rng.random_range(-0.5..0.5)).max(-wk))
                .collect();
            assert!(dist(&cand) >= d0 - 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn prop_adjointness(p in 2usize..30, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let w: Vec<f64> = (0..num_edges(p)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = common::random_symmetric(p, &mut rng);
        let lhs = apply_p(&w, p).unwrap().dot(&y);
        let rhs: f64 = w.iter().zip(apply_p_adjoint(&y).unwrap()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn prop_projection_feasible_and_idempotent(
        pairs in proptest::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..40)
    ) {
        let (v, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let x = project_bound(&v, &w).unwrap();
        for ((xk, vk), wk) in x.iter().zip(&v).zip(&w) {
            prop_assert!(*xk >= -wk);
            prop_assert!(*xk == vk.max(-wk));
        }
        prop_assert_eq!(project_bound(&x, &w).unwrap(), x);
    }

    #[test]
    fn prop_weights_roundtrip(p in 2usize..15, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let w: Vec<f64> = (0..num_edges(p)).map(|_| rng.random_range(0.0..3.0)).collect();
        prop_assert_eq!(weights_of(&apply_p(&w, p).unwrap()).unwrap(), w);
    }
}
