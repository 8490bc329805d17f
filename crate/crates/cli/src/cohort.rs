//! Linear-regression cohort cells and per-trial step-size tuning, shared by
//! the heatmap and communication-complexity sweeps.
//!
//! Each trial draws a fresh geometry, so cell means average over the central
//! direction and the ground truths as well as the covariate means. Random
//! numbers are shared across cells: in trial `i` every cell uses the same
//! central direction, machine `m` draws its ground truth from one stream for
//! every `ζ★` and its covariate mean from one stream for every `τ`, and the
//! oracle noise is the same everywhere. Changing a grid value therefore only
//! moves each point within its cap.

use icsim_core::algorithms::{run_local_sgd, tune_step_size, ICSchedule, LocalSGDConfig, TuneMetric, TuneSample};
use icsim_core::diagnostics::NoProbe;
use icsim_core::problems::{cohort_from_parts, sample_spherical_cap, sample_unit_sphere, CohortParams, Instance};
use icsim_core::streams::{derive_seed, stream, tag};
use icsim_core::Vector;
use serde::{Deserialize, Serialize};

use crate::config::log_grid;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub dim: usize,
    pub machines: usize,
    pub r_star: f64,
    pub mu0: f64,
    pub label_noise: f64,
}

impl Default for CohortSection {
    fn default() -> Self {
        let p = CohortParams::default();
        Self {
            dim: p.dim,
            machines: p.machines,
            r_star: p.r_star,
            mu0: p.mu0,
            label_noise: p.label_noise,
        }
    }
}

impl CohortSection {
    pub fn params(&self, zeta_star: f64, tau: f64) -> CohortParams {
        CohortParams {
            machines: self.machines,
            dim: self.dim,
            r_star: self.r_star,
            zeta_star,
            mu0: self.mu0,
            tau_knob: tau,
            label_noise: self.label_noise,
        }
    }

    /// Checks a `(ζ★, τ)` grid against the cohort's admissible ranges.
    pub fn check_grid(&self, zetas: &[f64], taus: &[f64]) -> Result<(), CliError> {
        if zetas.is_empty() || taus.is_empty() {
            return Err(CliError::Config("grids must be nonempty".into()));
        }
        for &z in zetas {
            for &t in taus {
                if !(0.0..=2.0 * self.r_star).contains(&z) || !(0.0..=2.0 * self.mu0).contains(&t) {
                    return Err(CliError::Config(format!(
                        "grid point (zeta_star {z}, tau {t}) outside [0, 2 r_star] x [0, 2 mu0]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for EtaGrid {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e-1,
            points: 7,
        }
    }
}

impl EtaGrid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(self.min > 0.0 && self.min <= self.max && self.max.is_finite()) || self.points == 0 {
            return Err(CliError::Config(format!(
                "step-size grid needs 0 < min <= max and points >= 1, got {self:?}"
            )));
        }
        Ok(log_grid(self.min, self.max, self.points))
    }
}

/// The cohort instance of trial `trial` in cell `(ζ★, τ)`.
pub fn cell_instance(
    seed: u64,
    cohort: &CohortSection,
    zeta_star: f64,
    tau: f64,
    trial: u64,
) -> Result<Instance, CliError> {
    let params = cohort.params(zeta_star, tau);
    let v0 = sample_unit_sphere(cohort.dim, &mut stream(seed, &[tag::INSTANCE, trial]));
    let cap = |angle: f64, radius: f64, key: &[u64]| -> Result<Vec<Vector>, CliError> {
        (0..cohort.machines as u64)
            .map(|m| {
                let mut rng = stream(seed, &[key, &[m]].concat());
                Ok(sample_spherical_cap(&v0, angle, &mut rng)? * radius)
            })
            .collect()
    };
    let optima = cap(params.optima_half_angle(), cohort.r_star, &[tag::INSTANCE, 1, trial])?;
    let means = cap(params.means_half_angle(), cohort.mu0, &[tag::INSTANCE, 2, trial])?;
    Ok(cohort_from_parts(&optima, &means, cohort.label_noise)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub best_eta: f64,
    /// Tuned metric measured against the mean of the ground truths.
    pub metric: f64,
    /// The same run's metric measured against the global optimum.
    pub global_metric: f64,
}

/// Tunes Local SGD (outer step 1, start at the origin) over `grid` for one
/// trial. Every grid point sees the same oracle noise.
pub fn tune_trial(
    inst: &Instance,
    local_steps: u32,
    rounds: u32,
    grid: &[f64],
    metric: TuneMetric,
    seed: u64,
    trial: u64,
) -> Result<TrialOutcome, CliError> {
    let x_bar = inst
        .mean_of_optima()
        .ok_or_else(|| CliError::Config("cohort machines must have optima".into()))?;
    let x_glob = inst.global_optimum()?;
    let sched = ICSchedule::new(inst.num_machines(), local_steps, rounds)?;
    let base = derive_seed(seed, &[tag::TRIAL, trial]);
    let mut global = Vec::with_capacity(grid.len());
    let res = tune_step_size(
        |eta, s| {
            let cfg = LocalSGDConfig::new(eta, 1.0, sched, Vector::zeros(inst.dim()));
            let trace = run_local_sgd(inst, &cfg, s, NoProbe)?;
            let vs_global = TuneSample::from_trace(&trace, |x| (x - &x_glob).norm());
            global.push((eta, metric.evaluate(&vs_global)));
            Ok(TuneSample::from_trace(&trace, |x| (x - &x_bar).norm()))
        },
        grid,
        metric,
        1,
        base,
    )?;
    let global_metric = global
        .iter()
        .find(|(e, _)| *e == res.best_eta)
        .map(|(_, v)| *v)
        .unwrap_or(f64::NAN);
    Ok(TrialOutcome {
        best_eta: res.best_eta,
        metric: res.best_metric,
        global_metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortSection {
        CohortSection {
            dim: 3,
            machines: 4,
            ..CohortSection::default()
        }
    }

    #[test]
    fn cells_share_draws_where_parameters_agree() {
        let c = small();
        let a = cell_instance(1, &c, 0.5, 2.0, 0).unwrap();
        let b = cell_instance(1, &c, 0.5, 4.0, 0).unwrap();
        let e = cell_instance(1, &c, 1.0, 2.0, 0).unwrap();
        let truths = |i: &Instance| i.machines().iter().map(|m| m.optimum().unwrap()).collect::<Vec<_>>();
        assert_eq!(truths(&a), truths(&b));
        assert_ne!(truths(&a), truths(&e));
        assert_eq!(a.average_hessian(), e.average_hessian());
        assert_ne!(a.average_hessian(), b.average_hessian());
        // Wider caps move each truth farther from the centre, never closer.
        let center = cell_instance(1, &c, 0.0, 2.0, 0).unwrap();
        let centre = truths(&center)[0].clone();
        for (x, y) in truths(&a).iter().zip(truths(&e).iter()) {
            assert!((x - &centre).norm() <= (y - &centre).norm() + 1e-12);
        }
        let again = cell_instance(1, &c, 0.5, 2.0, 1).unwrap();
        assert_ne!(a.average_hessian(), again.average_hessian());
        assert_ne!(truths(&a), truths(&again));
    }

    #[test]
    fn homogeneous_cell_has_a_single_truth() {
        let inst = cell_instance(3, &small(), 0.0, 0.0, 0).unwrap();
        let x = inst.global_optimum().unwrap();
        assert!((x.norm() - 1.0).abs() < 1e-12);
        assert!((inst.mean_of_optima().unwrap() - x).norm() < 1e-12);
    }

    #[test]
    fn grids_are_validated() {
        let c = small();
        assert!(c.check_grid(&[0.0, 2.0], &[0.0, 10.0]).is_ok());
        assert!(c.check_grid(&[2.1], &[0.0]).is_err());
        assert!(c.check_grid(&[0.0], &[]).is_err());
        assert!(EtaGrid {
            min: 0.0,
            ..EtaGrid::default()
        }
        .values()
        .is_err());
        assert_eq!(EtaGrid::default().values().unwrap().len(), 7);
    }

    #[test]
    fn tuning_reports_both_errors_for_the_chosen_step() {
        let c = small();
        let inst = cell_instance(2, &c, 1.0, 3.0, 0).unwrap();
        let grid = EtaGrid::default().values().unwrap();
        let out = tune_trial(&inst, 5, 3, &grid, TuneMetric::FinalError, 2, 0).unwrap();
        assert!(grid.contains(&out.best_eta));
        assert!(out.metric.is_finite() && out.global_metric.is_finite());
        let again = tune_trial(&inst, 5, 3, &grid, TuneMetric::FinalError, 2, 0).unwrap();
        assert_eq!(out, again);
    }
}
