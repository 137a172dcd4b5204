mod common;

use lapnewton::laplacian::apply_p;
use lapnewton::newgle::{initial_point, solve, solve_with_observer, InitMode, SolverConfig};
use lapnewton::objective::{kkt_residual, Mcp, Objective, SampleCovariance};
use lapnewton::pgd::{pgd_solve, PgdConfig};
use lapnewton::report::{SolveReport, Termination};
use lapnewton::synth::{Dataset, GraphModel, GraphSpec};

fn ba_dataset(p: usize, np_ratio: usize, seed: u64) -> Dataset {
    let spec = GraphSpec::new(GraphModel::BarabasiAlbert { m: 2 }, p, seed);
    Dataset::generate(&spec, np_ratio * p, seed + 1000).unwrap()
}

fn assert_monotone(r: &SolveReport, what: &str) {
    for (t, v) in r.objective.windows(2).enumerate() {
        assert!(v[1] <= v[0], "{what}: F rose at iteration {t}: {} -> {}", v[0], v[1]);
    }
}

#[test]
fn ba_runs_are_monotone_feasible_and_stationary() {
    for seed in 0..4 {
        let data = ba_dataset(50, 2, seed);
        for lambda in [0.05, 0.2] {
            let cfg = SolverConfig::with_lambda(lambda);
            let mut feasible = true;
            let (w, r) = solve_with_observer(&data.cov, &cfg, |ev| {
                feasible &= ev.w.iter().all(|&x| x >= 0.0);
            })
            .unwrap();
            let what = format!("newgle seed {seed} lambda {lambda}");
            assert!(feasible, "{what}: infeasible iterate");
            assert_monotone(&r, &what);
            assert_eq!(r.termination, Termination::Converged, "{what}");
            assert!(r.kkt_residual <= 1e-3, "{what}: kkt {}", r.kkt_residual);
            let l = apply_p(&w, 50).unwrap();
            assert_eq!(common::laplacian_violation(&l), None, "{what}");

            let (wp, rp) = pgd_solve(&data.cov, cfg.mcp().unwrap(), &PgdConfig::default()).unwrap();
            assert!(wp.iter().all(|&x| x >= 0.0));
            assert_monotone(&rp, &format!("pgd seed {seed} lambda {lambda}"));
            assert!(rp.kkt_residual <= 1e-3, "pgd: kkt {}", rp.kkt_residual);
        }
    }
}

#[test]
fn accepted_steps_decrease_f_in_proportion_to_the_step() {
    let data = ba_dataset(50, 2, 7);
    let cfg = SolverConfig::with_lambda(0.1);
    let mut ratios = Vec::new();
    let mut alphas = Vec::new();
    let (_, r) = solve_with_observer(&data.cov, &cfg, |ev| {
        let step: f64 = ev.w.iter().zip(ev.w_prev).map(|(a, b)| (a - b).powi(2)).sum();
        alphas.push(ev.alpha);
        if step > 0.0 {
            ratios.push((ev.f_prev - ev.f_new) / step);
        }
    })
    .unwrap();
    assert_eq!(r.termination, Termination::Converged);
    assert!(!ratios.is_empty());
    let c = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(c > 0.0, "smallest decrease ratio {c}");
    let amin = alphas.iter().copied().fold(1.0, f64::min);
    assert!(amin >= 2f64.powi(-40), "step size {amin}");
}

/// Covariance for which `w0` already minimises the unpenalized objective.
fn stationary_fixture(p: usize, seed: u64) -> (Vec<f64>, SampleCovariance) {
    let mut rng = common::rng(seed);
    let w0 = common::connected_weights(p, 0.4, &mut rng);
    let l0 = apply_p(&w0, p).unwrap();
    let s = common::pinv_sym(&l0, 1e-9);
    let s = (&s + s.transpose()) * 0.5;
    (w0, SampleCovariance::new(s, 10 * p).unwrap())
}

#[test]
fn stationary_input_is_a_fixed_point() {
    let (w0, cov) = stationary_fixture(8, 3);
    let mcp = Mcp::new(0.0, 1.01).unwrap();
    assert!(kkt_residual(&w0, &cov, &mcp).unwrap() <= 1e-10);
    let cfg = SolverConfig {
        init: InitMode::Given(w0.clone()),
        ..SolverConfig::with_lambda(0.0)
    };
    let (w, r) = solve(&cov, &cfg).unwrap();
    assert_eq!(r.outer_iterations, 1);
    assert_eq!(r.termination, Termination::Converged);
    for (a, b) in w.iter().zip(&w0) {
        assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn warm_pgd_start_does_not_raise_f() {
    for seed in 0..5 {
        let data = ba_dataset(30, 3, seed);
        let mcp = Mcp::new(0.1, 1.01).unwrap();
        let obj = Objective::new(&data.cov, mcp);
        let uniform = initial_point(&data.cov, mcp, &InitMode::Uniform).unwrap();
        let warm = initial_point(&data.cov, mcp, &InitMode::WarmPgd(5)).unwrap();
        assert!(obj.value(&warm) <= obj.value(&uniform));
    }
}

#[test]
fn newgle_and_pgd_agree_when_supports_agree() {
    let mut compared = 0;
    // With MCP the two methods often settle in different local minima; the
    // unpenalized problem is convex and always comparable.
    for (seed, lambda, gamma) in [(0, 0.0, 1.01), (1, 0.0, 1.01), (0, 0.1, 1.01), (1, 0.05, 10.0)] {
        let data = ba_dataset(100, 10, seed);
        let cfg = SolverConfig {
            tol: 1e-7,
            gamma,
            ..SolverConfig::with_lambda(lambda)
        };
        let (wn, rn) = solve(&data.cov, &cfg).unwrap();
        let pcfg = PgdConfig {
            tol: 1e-7,
            max_iter: 50_000,
            ..PgdConfig::default()
        };
        let (wp, rp) = pgd_solve(&data.cov, cfg.mcp().unwrap(), &pcfg).unwrap();
        let support = |w: &[f64]| w.iter().map(|&x| x > 1e-5).collect::<Vec<_>>();
        if support(&wn) != support(&wp) {
            continue;
        }
        compared += 1;
        let (fnew, fpgd) = (rn.final_objective(), rp.final_objective());
        assert!(
            (fnew - fpgd).abs() <= 1e-3 * fpgd.abs(),
            "seed {seed}, lambda {lambda}: {fnew} vs {fpgd}"
        );
    }
    assert!(compared > 0, "no instance with matching supports");
}
