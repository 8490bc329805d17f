use icsim_core::algorithms::{
    closed_form_shared_optimum_iterate, run_ce_lsgd, run_local_sgd, CELSGDConfig, ICSchedule, LocalSGDConfig,
};
use icsim_core::diagnostics::{
    aggregate_series, consensus_bound_fourth, consensus_bound_second, ConsensusProbe, NoProbe,
};
use icsim_core::fixedpoint::compute_fixed_point;
use icsim_core::numerics::Vector;
use icsim_core::problems::{
    gaussian_noise_fourth, heterogeneity_report, make_condition_number_instance, make_equal_hessian_instance,
    make_random_quadratic_instance, make_shared_optimum_pair, make_tau_decoupled_pair, random_spectrum_matrix,
    sample_unit_sphere,
};
use icsim_core::streams::stream;

#[test]
fn shared_optimum_pair_follows_its_closed_form() {
    let h = 2.0;
    let x_star = Vector::from_column_slice(&[1.0, -0.5]);
    let inst = make_shared_optimum_pair(h, &x_star).unwrap();
    for &eta in &[0.1 / h, 0.5 / h, 1.0 / h] {
        for &beta in &[0.3, 1.0, 2.0] {
            for &k in &[1, 2, 5, 20] {
                let sched = ICSchedule::new(2, k, 6).unwrap();
                let cfg = LocalSGDConfig::new(eta, beta, sched, Vector::zeros(2));
                let trace = run_local_sgd(&inst, &cfg, 0, NoProbe).unwrap();
                for (r, x) in trace.rounds.iter().enumerate() {
                    let want = closed_form_shared_optimum_iterate(h, eta, beta, k, r as u32, &x_star);
                    assert!((x - want).norm() <= 1e-12, "eta {eta} beta {beta} K {k} r {r}");
                }
            }
        }
    }
}

#[test]
fn noiseless_local_sgd_contracts_to_the_fixed_point() {
    for seed in 0..15 {
        let mut rng = stream(seed, &[5]);
        let (mu, h) = (0.4, 3.0);
        let inst = make_random_quadratic_instance(4, 3, mu, h, 1.0, &mut rng).unwrap();
        for &(eta_h, k) in &[(0.1, 1u32), (0.5, 3), (0.9, 8)] {
            let eta = eta_h / h;
            let x_inf = compute_fixed_point(&inst, eta, k).unwrap().fixed_point.unwrap();
            let x0 = sample_unit_sphere(4, &mut rng) * 2.0;
            let rounds = 12;
            let cfg = LocalSGDConfig::new(eta, 1.0, ICSchedule::new(3, k, rounds).unwrap(), x0.clone());
            let trace = run_local_sgd(&inst, &cfg, seed, NoProbe).unwrap();
            let start = (&x0 - &x_inf).norm();
            for (r, x) in trace.rounds.iter().enumerate() {
                let bound = (1.0 - eta * mu).powi((k as usize * r) as i32) * start + 1e-10;
                assert!((x - &x_inf).norm() <= bound, "seed {seed} eta {eta} K {k} r {r}");
            }
        }
    }
}

#[test]
fn gradient_descent_on_the_condition_number_instance_stays_slow() {
    // Exact floor of the construction for η ≤ 3/H with κ = 12R:
    // HB²/(48R)·(1 − 1/(4R))^{2R}. Larger steps blow up the top eigendirection.
    let (h, b) = (1.0, 1.0);
    for &rounds in &[5u32, 10, 20] {
        let inst = make_condition_number_instance(h, rounds, b).unwrap();
        let x_star = inst.global_optimum().unwrap();
        let floor = h * b * b / (48.0 * rounds as f64) * (1.0 - 0.25 / rounds as f64).powi(2 * rounds as i32);
        let mut best = f64::INFINITY;
        for j in -10..=3 {
            let eta = 2f64.powi(j) / h;
            let cfg = LocalSGDConfig::new(eta, 1.0, ICSchedule::new(1, 1, rounds).unwrap(), Vector::zeros(2));
            let trace = run_local_sgd(&inst, &cfg, 0, NoProbe).unwrap();
            let gap = if trace.diverged {
                f64::INFINITY
            } else {
                inst.objective(trace.last()) - inst.objective(&x_star)
            };
            best = best.min(gap);
        }
        assert!(best >= floor * (1.0 - 1e-12), "R {rounds}: {best} < {floor}");
    }
}

#[test]
fn ce_lsgd_exact_oracle_gradient_norm_falls_with_rounds() {
    let inst = make_tau_decoupled_pair(1.0, 0.5, &Vector::from_column_slice(&[1.0, 1.0, 1.0])).unwrap();
    let best_sq_grad = |rounds: u32| {
        let cfg = CELSGDConfig {
            step: 0.1,
            momentum: 1.0,
            warm_batch: 1,
            local_batch: 1,
            local_steps: 10,
            schedule: ICSchedule::new(2, 10, rounds).unwrap(),
            init: Vector::zeros(3),
        };
        let trace = run_ce_lsgd(&inst, &cfg, 9, NoProbe).unwrap();
        trace
            .candidates
            .iter()
            .map(|x| inst.gradient(x).norm_squared())
            .fold(f64::INFINITY, f64::min)
    };
    let values: Vec<f64> = [4, 8, 16].iter().map(|&r| best_sq_grad(r)).collect();
    // Doubling R must at least halve the best squared gradient, up to a
    // factor 3; the average Hessian is nonsingular so decay is in fact faster.
    for w in values.windows(2) {
        assert!(w[1] < w[0], "{values:?}");
        assert!(w[1] <= 3.0 * w[0] / 2.0, "{values:?}");
    }
}

#[test]
fn consensus_moments_respect_their_uniform_bounds() {
    let d = 3;
    let mut rng = stream(77, &[]);
    let a = random_spectrum_matrix(d, 0.5, 2.0, &mut rng).unwrap();
    let optima: Vec<Vector> = (0..4).map(|_| sample_unit_sphere(d, &mut rng)).collect();
    let sigma2 = 0.5;
    let inst = make_equal_hessian_instance(&a, &optima, sigma2).unwrap();
    let report = heterogeneity_report(&inst);
    let h = report.smoothness_h;
    let zeta = report.zeta_star_max.unwrap();
    let sigma4 = gaussian_noise_fourth(sigma2, d);
    let k = 4;
    let eta = 0.5 / h;
    let trials = 60;
    let mut second = Vec::new();
    let mut fourth = Vec::new();
    for trial in 0..trials {
        let cfg = LocalSGDConfig::new(eta, 1.0, ICSchedule::new(4, k, 5).unwrap(), Vector::zeros(d));
        let mut probe = ConsensusProbe::default();
        run_local_sgd(&inst, &cfg, trial, &mut probe).unwrap();
        second.push(probe.consensus_sq);
        fourth.push(probe.consensus_4th);
    }
    let bound2 = consensus_bound_second(eta, k, h, zeta, sigma2).unwrap();
    let bound4 = consensus_bound_fourth(eta, k, h, zeta, sigma2, sigma4).unwrap();
    for s in aggregate_series(&second) {
        assert!(s.upper(3.0) <= bound2);
    }
    for s in aggregate_series(&fourth) {
        assert!(s.upper(3.0) <= bound4);
    }
}
