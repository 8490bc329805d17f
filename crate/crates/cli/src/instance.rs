//! Generating hard and random instances as JSON, and inspecting their
//! heterogeneity.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use icsim_core::problems::{
    heterogeneity_report, make_condition_number_instance, make_offset_highdim_instance, make_random_quadratic_instance,
    make_regression_cohort, make_rotated_pair, make_shared_optimum_pair, make_tau_decoupled_pair, CohortParams,
    Instance,
};
use icsim_core::streams::{stream, tag};
use icsim_core::Vector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::config_hash;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InstanceKind {
    SharedOptimumPair,
    TauDecoupledPair,
    RotatedPair,
    ConditionNumber,
    OffsetHighdim,
    RandomQuadratic,
    RegressionCohort,
}

/// What to build. Each kind carries only its own parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSpec {
    SharedOptimumPair {
        h: f64,
        x_star: Vec<f64>,
    },
    TauDecoupledPair {
        h: f64,
        tau: f64,
        x_star: Vec<f64>,
    },
    RotatedPair {
        h: f64,
        alpha: f64,
        x_star: Vec<f64>,
    },
    ConditionNumber {
        h: f64,
        rounds: u32,
        b: f64,
    },
    OffsetHighdim {
        machines: usize,
        b_bar: f64,
    },
    RandomQuadratic {
        dim: usize,
        machines: usize,
        mu: f64,
        h: f64,
        spread: f64,
    },
    RegressionCohort {
        dim: usize,
        machines: usize,
        r_star: f64,
        zeta_star: f64,
        mu0: f64,
        tau: f64,
        label_noise: f64,
    },
}

impl InstanceSpec {
    /// Default parameters for a kind.
    pub fn defaults(kind: InstanceKind) -> Self {
        match kind {
            InstanceKind::SharedOptimumPair => InstanceSpec::SharedOptimumPair {
                h: 1.0,
                x_star: vec![1.0, 1.0],
            },
            InstanceKind::TauDecoupledPair => InstanceSpec::TauDecoupledPair {
                h: 1.0,
                tau: 0.5,
                x_star: vec![1.0, 1.0, 1.0],
            },
            InstanceKind::RotatedPair => InstanceSpec::RotatedPair {
                h: 1.0,
                alpha: 0.5,
                x_star: vec![1.0, 1.0],
            },
            InstanceKind::ConditionNumber => InstanceSpec::ConditionNumber {
                h: 1.0,
                rounds: 10,
                b: 1.0,
            },
            InstanceKind::OffsetHighdim => InstanceSpec::OffsetHighdim {
                machines: 4,
                b_bar: 1.0,
            },
            InstanceKind::RandomQuadratic => InstanceSpec::RandomQuadratic {
                dim: 2,
                machines: 5,
                mu: 1.0,
                h: 6.0,
                spread: 1.0,
            },
            InstanceKind::RegressionCohort => {
                let p = CohortParams::default();
                InstanceSpec::RegressionCohort {
                    dim: p.dim,
                    machines: p.machines,
                    r_star: p.r_star,
                    zeta_star: 1.0,
                    mu0: p.mu0,
                    tau: 2.0,
                    label_noise: p.label_noise,
                }
            }
        }
    }

    /// Builds the instance; random kinds draw from the seed's instance
    /// stream.
    pub fn build(&self, seed: u64) -> Result<Instance, CliError> {
        let v = |xs: &[f64]| Vector::from_column_slice(xs);
        let mut rng = stream(seed, &[tag::INSTANCE]);
        let inst = match self {
            InstanceSpec::SharedOptimumPair { h, x_star } => make_shared_optimum_pair(*h, &v(x_star))?,
            InstanceSpec::TauDecoupledPair { h, tau, x_star } => make_tau_decoupled_pair(*h, *tau, &v(x_star))?,
            InstanceSpec::RotatedPair { h, alpha, x_star } => make_rotated_pair(*h, *alpha, &v(x_star))?,
            InstanceSpec::ConditionNumber { h, rounds, b } => make_condition_number_instance(*h, *rounds, *b)?,
            InstanceSpec::OffsetHighdim { machines, b_bar } => make_offset_highdim_instance(*machines, *b_bar)?,
            InstanceSpec::RandomQuadratic {
                dim,
                machines,
                mu,
                h,
                spread,
            } => make_random_quadratic_instance(*dim, *machines, *mu, *h, *spread, &mut rng)?,
            InstanceSpec::RegressionCohort {
                dim,
                machines,
                r_star,
                zeta_star,
                mu0,
                tau,
                label_noise,
            } => make_regression_cohort(
                &CohortParams {
                    machines: *machines,
                    dim: *dim,
                    r_star: *r_star,
                    zeta_star: *zeta_star,
                    mu0: *mu0,
                    tau_knob: *tau,
                    label_noise: *label_noise,
                },
                &mut rng,
            )?,
        };
        Ok(inst)
    }
}

/// Generated instance JSON plus the sidecar describing how it was made.
pub fn generate(spec: &InstanceSpec, seed: u64) -> Result<(String, Value), CliError> {
    let inst = spec.build(seed)?;
    let resolved = json!({"seed": seed, "spec": spec});
    let meta = json!({
        "experiment": "instance-generate",
        "config": resolved,
        "config_hash": config_hash(&resolved),
    });
    Ok((inst.to_json()?, meta))
}

/// Heterogeneity report of an instance file.
pub fn inspect(path: &Path) -> Result<Value, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let inst = Instance::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let global = inst.global_optimum().ok().map(|x| x.as_slice().to_vec());
    Ok(json!({
        "path": PathBuf::from(path),
        "dim": inst.dim(),
        "machines": inst.num_machines(),
        "kind": inst.kind(),
        "global_optimum": global,
        "heterogeneity": heterogeneity_report(&inst),
    }))
}
