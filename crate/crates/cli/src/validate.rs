//! Invariant suites with a machine-readable report.
//!
//! Every check reduces to a nonnegative `worst` value and passes iff
//! `worst <= tolerance`. Fault injection replaces one check's tolerance by
//! `-1`, which no check can meet, to exercise the failure path.

use clap::ValueEnum;
use icsim_core::algorithms::{closed_form_shared_optimum_iterate, run_local_sgd, ICSchedule, LocalSGDConfig};
use icsim_core::diagnostics::{
    aggregate_series, consensus_bound_fourth, consensus_bound_second, mean_se, ConsensusProbe, NoProbe,
};
use icsim_core::fixedpoint::compute_fixed_point;
use icsim_core::online::{
    make_linear_adversary, one_point_estimator, run_nc_ogd, sample_ball, two_point_estimator, AdversaryKind,
    OnlineConfig,
};
use icsim_core::problems::{
    gaussian_noise_fourth, heterogeneity_report, make_condition_number_instance, make_equal_hessian_instance,
    make_offset_highdim_instance, make_random_quadratic_instance, make_shared_optimum_pair, make_tau_decoupled_pair,
    random_spectrum_matrix, sample_unit_sphere, Instance,
};
use icsim_core::streams::{stream, tag};
use icsim_core::Vector;
use serde::Serialize;

use crate::output::parallel_map;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Fixedpoint,
    Consensus,
    Estimators,
    HardInstances,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Fixedpoint => "fixedpoint",
            Suite::Consensus => "consensus",
            Suite::Estimators => "estimators",
            Suite::HardInstances => "hard-instances",
            Suite::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub suite: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

type Outcome = Result<(f64, String), CliError>;

struct Spec {
    suite: Suite,
    name: &'static str,
    tolerance: f64,
    run: fn(u64) -> Outcome,
}

const CHECKS: &[Spec] = &[
    Spec {
        suite: Suite::Fixedpoint,
        name: "fixed-point-matches-noiseless-limit",
        tolerance: 1e-8,
        run: fixed_point_matches_limit,
    },
    Spec {
        suite: Suite::Fixedpoint,
        name: "single-step-fixed-point-is-optimum",
        tolerance: 1e-10,
        run: single_step_fixed_point,
    },
    Spec {
        suite: Suite::Fixedpoint,
        name: "discrepancy-within-bound",
        tolerance: 1e-10,
        run: discrepancy_within_bound,
    },
    Spec {
        suite: Suite::Fixedpoint,
        name: "fixed-point-norm-within-bound",
        tolerance: 1e-10,
        run: norm_within_bound,
    },
    Spec {
        suite: Suite::Consensus,
        name: "consensus-second-moment-bound",
        tolerance: 1.0,
        run: consensus_second,
    },
    Spec {
        suite: Suite::Consensus,
        name: "consensus-fourth-moment-bound",
        tolerance: 1.0,
        run: consensus_fourth,
    },
    Spec {
        suite: Suite::Estimators,
        name: "sphere-samples-have-unit-norm",
        tolerance: 1e-12,
        run: sphere_unit_norm,
    },
    Spec {
        suite: Suite::Estimators,
        name: "two-point-estimator-unbiased",
        tolerance: 4.0,
        run: two_point_unbiased,
    },
    Spec {
        suite: Suite::Estimators,
        name: "one-point-estimator-unbiased",
        tolerance: 4.0,
        run: one_point_unbiased,
    },
    Spec {
        suite: Suite::Estimators,
        name: "two-point-second-moment",
        tolerance: 1.0,
        run: two_point_second_moment,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "shared-optimum-closed-form",
        tolerance: 1e-12,
        run: shared_optimum_closed_form,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "shared-optimum-single-round",
        tolerance: 1e-12,
        run: shared_optimum_single_round,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "offset-instance-optimum-norms",
        tolerance: 1e-10,
        run: offset_instance_norms,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "tau-decoupled-heterogeneity",
        tolerance: 1e-12,
        run: tau_decoupled,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "condition-number-floor",
        tolerance: 1e-12,
        run: condition_number_floor,
    },
    Spec {
        suite: Suite::HardInstances,
        name: "coordinated-adversary-synchronizes",
        tolerance: 0.0,
        run: coordinated_sync,
    },
];

/// Names of every check, in report order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

pub fn run_suite(
    suite: Suite,
    seed: u64,
    workers: usize,
    inject_fault: Option<&str>,
) -> Result<ValidationReport, CliError> {
    if let Some(fault) = inject_fault {
        if !CHECKS.iter().any(|c| c.name == fault) {
            return Err(CliError::Config(format!(
                "unknown check {fault:?}; known checks: {}",
                check_names().join(", ")
            )));
        }
    }
    let selected: Vec<&Spec> = CHECKS
        .iter()
        .filter(|c| suite == Suite::All || c.suite == suite)
        .collect();
    let checks = parallel_map(workers, &selected, |spec| {
        let (worst, detail) = (spec.run)(seed)?;
        let tolerance = if inject_fault == Some(spec.name) {
            -1.0
        } else {
            spec.tolerance
        };
        Ok(Check {
            name: spec.name,
            passed: worst <= tolerance,
            worst,
            tolerance,
            detail,
        })
    })?;
    Ok(ValidationReport {
        suite: suite.name(),
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn quadratic_cases(seed: u64, count: u64) -> Result<Vec<Instance>, CliError> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[tag::INSTANCE, i]);
            let d = 2 + (i % 4) as usize;
            let m = 2 + (i % 3) as usize;
            Ok(make_random_quadratic_instance(d, m, 0.5, 2.0, 1.0, &mut rng)?)
        })
        .collect()
}

fn fixed_point_matches_limit(seed: u64) -> Outcome {
    let mut worst = 0.0_f64;
    let rounds = 3000;
    for inst in quadratic_cases(seed, 6)? {
        let h = inst.smoothness();
        for eta_h in [0.1, 0.5, 0.9] {
            for k in [1, 2, 5] {
                let x_inf = compute_fixed_point(&inst, eta_h / h, k)?.fixed_point.unwrap();
                let sched = ICSchedule::new(inst.num_machines(), k, rounds)?;
                let cfg = LocalSGDConfig::new(eta_h / h, 1.0, sched, Vector::zeros(inst.dim()));
                let trace = run_local_sgd(&inst, &cfg, seed, NoProbe)?;
                worst = worst.max((trace.last() - &x_inf).norm());
            }
        }
    }
    Ok((worst, format!("max distance after {rounds} noiseless rounds")))
}

fn single_step_fixed_point(seed: u64) -> Outcome {
    let mut worst = 0.0_f64;
    for inst in quadratic_cases(seed, 20)? {
        let res = compute_fixed_point(&inst, 0.5 / inst.smoothness(), 1)?;
        worst = worst.max(res.discrepancy.unwrap());
    }
    Ok((worst, "max discrepancy with one local step".into()))
}

fn bound_gap(seed: u64, pick: fn(&icsim_core::fixedpoint::FixedPointResult) -> (f64, f64)) -> Result<f64, CliError> {
    let mut worst = 0.0_f64;
    for inst in quadratic_cases(seed, 10)? {
        let h = inst.smoothness();
        for eta_h in [0.1, 0.5, 0.9] {
            for k in [2, 5, 20] {
                let res = compute_fixed_point(&inst, eta_h / h, k)?;
                let (value, bound) = pick(&res);
                worst = worst.max(value - bound);
            }
        }
    }
    Ok(worst)
}

fn discrepancy_within_bound(seed: u64) -> Outcome {
    let worst = bound_gap(seed, |r| (r.discrepancy.unwrap(), r.discrepancy_bound.unwrap()))?;
    Ok((worst, "max excess of the discrepancy over its bound".into()))
}

fn norm_within_bound(seed: u64) -> Outcome {
    let worst = bound_gap(seed, |r| {
        (r.fixed_point.as_ref().unwrap().norm(), r.norm_bound.unwrap())
    })?;
    Ok((worst, "max excess of the fixed-point norm over its bound".into()))
}

/// Largest ratio of `mean + 3 SE` to its bound over all steps and `K`.
fn consensus_ratio(seed: u64, fourth: bool) -> Outcome {
    let d = 3;
    let mut rng = stream(seed, &[tag::INSTANCE]);
    let a = random_spectrum_matrix(d, 0.5, 2.0, &mut rng)?;
    let optima: Vec<Vector> = (0..4).map(|_| sample_unit_sphere(d, &mut rng)).collect();
    let sigma2 = 0.5;
    let inst = make_equal_hessian_instance(&a, &optima, sigma2)?;
    let report = heterogeneity_report(&inst);
    let (h, zeta) = (report.smoothness_h, report.zeta_star_max.unwrap_or(0.0));
    let mut worst = 0.0_f64;
    for k in [2, 4] {
        let eta = 0.5 / h;
        let bound = if fourth {
            consensus_bound_fourth(eta, k, h, zeta, sigma2, gaussian_noise_fourth(sigma2, d))?
        } else {
            consensus_bound_second(eta, k, h, zeta, sigma2)?
        };
        let mut series = Vec::new();
        for trial in 0..60 {
            let cfg = LocalSGDConfig::new(eta, 1.0, ICSchedule::new(4, k, 4)?, Vector::zeros(d));
            let mut probe = ConsensusProbe::default();
            run_local_sgd(&inst, &cfg, seed.wrapping_add(trial), &mut probe)?;
            series.push(if fourth {
                probe.consensus_4th
            } else {
                probe.consensus_sq
            });
        }
        for s in aggregate_series(&series) {
            worst = worst.max(s.upper(3.0) / bound);
        }
    }
    Ok((worst, "max of (mean + 3 SE) / bound over steps".into()))
}

fn consensus_second(seed: u64) -> Outcome {
    consensus_ratio(seed, false)
}

fn consensus_fourth(seed: u64) -> Outcome {
    consensus_ratio(seed, true)
}

fn sphere_unit_norm(seed: u64) -> Outcome {
    let mut rng = stream(seed, &[tag::DIRECTION]);
    let worst = (0..10_000)
        .map(|i| (sample_unit_sphere(1 + i % 7, &mut rng).norm() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((worst, "max deviation of the norm from 1".into()))
}

/// Largest coordinate z-score between two Monte Carlo vector means.
fn max_z(a: &[Vector], b: Option<&[Vector]>, exact: Option<&Vector>) -> f64 {
    let d = a[0].len();
    (0..d)
        .map(|i| {
            let sa = mean_se(&a.iter().map(|v| v[i]).collect::<Vec<_>>());
            let (mb, seb) = match (b, exact) {
                (Some(b), _) => {
                    let sb = mean_se(&b.iter().map(|v| v[i]).collect::<Vec<_>>());
                    (sb.mean, sb.se)
                }
                (None, Some(x)) => (x[i], 0.0),
                _ => unreachable!(),
            };
            let se = (sa.se * sa.se + seb * seb).sqrt();
            if se > 0.0 {
                (sa.mean - mb).abs() / se
            } else if sa.mean == mb {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn two_point_unbiased(seed: u64) -> Outcome {
    let (d, delta, n) = (4, 0.5, 40_000);
    let a = Vector::from_column_slice(&[1.0, -2.0, 0.5, 0.0]);
    let x = Vector::from_column_slice(&[0.3, 0.1, -0.7, 0.4]);
    let f = |p: &Vector| 0.5 * p.norm_squared() + a.dot(p).sin();
    let grad = |p: &Vector| p + &a * a.dot(p).cos();
    let mut rng = stream(seed, &[tag::DIRECTION, 1]);
    let est: Vec<Vector> = (0..n)
        .map(|_| {
            let u = sample_unit_sphere(d, &mut rng);
            two_point_estimator(f(&(&x + &u * delta)), f(&(&x - &u * delta)), &u, delta, d)
        })
        .collect();
    let mut rng = stream(seed, &[tag::DIRECTION, 2]);
    let oracle: Vec<Vector> = (0..n).map(|_| grad(&(&x + sample_ball(d, delta, &mut rng)))).collect();
    Ok((
        max_z(&est, Some(&oracle), None),
        "max z-score against the smoothed gradient".into(),
    ))
}

fn one_point_unbiased(seed: u64) -> Outcome {
    let (d, delta, n) = (3, 0.8, 100_000);
    let beta = Vector::from_column_slice(&[0.6, -0.3, 0.2]);
    let w = Vector::from_column_slice(&[0.1, 0.2, -0.1]);
    let mut rng = stream(seed, &[tag::DIRECTION, 3]);
    let est: Vec<Vector> = (0..n)
        .map(|_| {
            let u = sample_unit_sphere(d, &mut rng);
            one_point_estimator(beta.dot(&(&w + &u * delta)), &u, delta, d)
        })
        .collect();
    Ok((
        max_z(&est, None, Some(&beta)),
        "max z-score against the loss vector".into(),
    ))
}

fn two_point_second_moment(seed: u64) -> Outcome {
    let (d, delta, g) = (6, 0.3, 2.0);
    let c = Vector::from_column_slice(&[0.5, 0.0, -0.2, 0.1, 0.0, 0.3]);
    let x = Vector::from_column_slice(&[0.1, 0.2, 0.0, -0.3, 0.4, 0.0]);
    let f = |p: &Vector| g * (p - &c).norm();
    let mut rng = stream(seed, &[tag::DIRECTION, 4]);
    let sq: Vec<f64> = (0..40_000)
        .map(|_| {
            let u = sample_unit_sphere(d, &mut rng);
            two_point_estimator(f(&(&x + &u * delta)), f(&(&x - &u * delta)), &u, delta, d).norm_squared()
        })
        .collect();
    let s = mean_se(&sq);
    Ok((
        ((s.mean - 4.0 * s.se) / (d as f64 * g * g)).max(0.0),
        "(mean - 4 SE) / dG^2".into(),
    ))
}

fn shared_optimum_closed_form(_seed: u64) -> Outcome {
    let h = 2.0;
    let x_star = Vector::from_column_slice(&[1.0, -0.5]);
    let inst = make_shared_optimum_pair(h, &x_star)?;
    let mut worst = 0.0_f64;
    for eta_h in [0.1, 0.5, 1.0] {
        for beta in [0.5, 1.0, 2.0] {
            for k in [1, 2, 5] {
                let cfg = LocalSGDConfig::new(eta_h / h, beta, ICSchedule::new(2, k, 6)?, Vector::zeros(2));
                let trace = run_local_sgd(&inst, &cfg, 0, NoProbe)?;
                for (r, x) in trace.rounds.iter().enumerate() {
                    let want = closed_form_shared_optimum_iterate(h, eta_h / h, beta, k, r as u32, &x_star);
                    worst = worst.max((x - want).norm());
                }
            }
        }
    }
    Ok((worst, "max distance between simulated and closed-form iterates".into()))
}

fn shared_optimum_single_round(_seed: u64) -> Outcome {
    let h = 3.0;
    let x_star = Vector::from_column_slice(&[0.7, 2.0]);
    let inst = make_shared_optimum_pair(h, &x_star)?;
    let cfg = LocalSGDConfig::new(1.0 / h, 2.0, ICSchedule::new(2, 4, 1)?, Vector::zeros(2));
    let trace = run_local_sgd(&inst, &cfg, 0, NoProbe)?;
    Ok((
        (trace.last() - &x_star).norm(),
        "distance to the optimum after one round".into(),
    ))
}

fn offset_instance_norms(_seed: u64) -> Outcome {
    let b_bar = 1.5;
    let mut worst = 0.0_f64;
    for m in [2, 4, 8] {
        let inst = make_offset_highdim_instance(m, b_bar)?;
        let x = inst.global_optimum()?;
        worst = worst.max((x.norm() - (m as f64).sqrt() * b_bar / 3.0).abs());
        for machine in inst.machines() {
            let opt = machine
                .optimum()
                .ok_or_else(|| CliError::Validation("machine without optimum".into()))?;
            worst = worst.max((opt.norm() - b_bar).abs());
        }
    }
    Ok((worst, "max deviation of optimum norms from their targets".into()))
}

fn tau_decoupled(_seed: u64) -> Outcome {
    let x_star = Vector::from_column_slice(&[1.0, 1.0, 1.0]);
    let mut worst = 0.0_f64;
    for tau in [0.0, 0.25, 0.5, 1.0] {
        let inst = make_tau_decoupled_pair(1.0, tau, &x_star)?;
        let report = heterogeneity_report(&inst);
        worst = worst
            .max((report.tau - tau).abs())
            .max((report.smoothness_h - 1.0).abs());
    }
    Ok((worst, "max deviation of measured tau and H from their targets".into()))
}

/// Best suboptimality over a 14-point step grid against the exact floor
/// `HB²/(48R)·(1 − 1/(4R))^{2R}` of the construction.
fn condition_number_floor(_seed: u64) -> Outcome {
    let (h, b) = (1.0, 1.0);
    let mut worst = 0.0_f64;
    for rounds in [5u32, 10, 20] {
        let inst = make_condition_number_instance(h, rounds, b)?;
        let f_star = inst.objective(&inst.global_optimum()?);
        let r = rounds as f64;
        let floor = h * b * b / (48.0 * r) * (1.0 - 0.25 / r).powi(2 * rounds as i32);
        let mut best = f64::INFINITY;
        for j in -10..=3 {
            let cfg = LocalSGDConfig::new(2f64.powi(j) / h, 1.0, ICSchedule::new(1, 1, rounds)?, Vector::zeros(2));
            let trace = run_local_sgd(&inst, &cfg, 0, NoProbe)?;
            if !trace.diverged {
                best = best.min(inst.objective(trace.last()) - f_star);
            }
        }
        worst = worst.max(((floor - best) / floor).max(0.0));
    }
    Ok((
        worst,
        "max relative shortfall of the best suboptimality below the floor".into(),
    ))
}

fn coordinated_sync(seed: u64) -> Outcome {
    let m = 3;
    let adv = make_linear_adversary(AdversaryKind::CoordinatedRademacher, 1.0, 4, m, 0.0, seed)?;
    let cfg = OnlineConfig::new(0.1, 1.0, 1.0, ICSchedule::new(m, 5, 10)?)?;
    let trace = run_nc_ogd(&adv, &cfg, seed)?;
    let worst = trace
        .iterates
        .chunks(m)
        .map(|xs| xs.iter().map(|x| (x - &xs[0]).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    Ok((worst, "max spread of machine iterates".into()))
}
