//! Fixed points of noiseless Local SGD and their distance to the optimum
//! across `K`, for step sizes `c/H`, `c/(HK)` and `c/(HK²)`.

use std::path::PathBuf;

use icsim_core::fixedpoint::{compute_fixed_point, convex_fixed_point, FixedPointResult, FixedPointStatus};
use icsim_core::problems::{heterogeneity_report, make_random_quadratic_instance, Instance};
use icsim_core::streams::{stream, tag};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::config_hash;
use crate::output::{num, Report, Table};
use crate::{runtime_fields, CliError};

pub const COLUMNS: &[&str] = &[
    "family",
    "K",
    "eta",
    "discrepancy",
    "log_discrepancy",
    "norm_bound",
    "discrepancy_bound",
    "status",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepFamily {
    /// `η = c/H`.
    COverH,
    /// `η = c/(HK)`.
    COverHk,
    /// `η = c/(HK²)`.
    COverHk2,
}

impl StepFamily {
    pub const ALL: [StepFamily; 3] = [StepFamily::COverH, StepFamily::COverHk, StepFamily::COverHk2];

    pub fn name(self) -> &'static str {
        match self {
            StepFamily::COverH => "c-over-h",
            StepFamily::COverHk => "c-over-hk",
            StepFamily::COverHk2 => "c-over-hk2",
        }
    }

    pub fn step(self, c: f64, h: f64, k: u32) -> f64 {
        let k = k as f64;
        match self {
            StepFamily::COverH => c / h,
            StepFamily::COverHk => c / (h * k),
            StepFamily::COverHk2 => c / (h * k * k),
        }
    }
}

/// Random strongly convex instance used when no instance file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratedInstance {
    pub dim: usize,
    pub machines: usize,
    pub mu: f64,
    pub h: f64,
    /// Scale of the Gaussian machine optima.
    pub spread: f64,
}

impl Default for GeneratedInstance {
    fn default() -> Self {
        Self {
            dim: 2,
            machines: 5,
            mu: 1.0,
            h: 6.0,
            spread: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Instance JSON file; takes precedence over `generate`.
    pub instance: Option<PathBuf>,
    pub generate: GeneratedInstance,
    pub c: f64,
    pub families: Vec<StepFamily>,
    pub local_steps: Vec<u32>,
}

runtime_fields!(FixedPointConfig);

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            instance: None,
            generate: GeneratedInstance::default(),
            c: 0.5,
            families: StepFamily::ALL.to_vec(),
            local_steps: vec![1, 2, 4, 8, 16, 32, 64],
        }
    }
}

impl FixedPointConfig {
    pub fn load_instance(&self) -> Result<Instance, CliError> {
        match &self.instance {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                Instance::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
            None => {
                let g = &self.generate;
                let mut rng = stream(self.seed, &[tag::INSTANCE]);
                Ok(make_random_quadratic_instance(
                    g.dim, g.machines, g.mu, g.h, g.spread, &mut rng,
                )?)
            }
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn status_name(s: &FixedPointStatus) -> &'static str {
    match s {
        FixedPointStatus::Converged => "converged",
        FixedPointStatus::Divergent { .. } => "divergent",
        FixedPointStatus::StationaryAtOrigin => "stationary-at-origin",
    }
}

/// Builds the table for an already loaded instance. Instances without
/// strong convexity use the minimum-norm fixed point and carry no bounds.
pub fn report_for(cfg: &FixedPointConfig, inst: &Instance) -> Result<Report, CliError> {
    if !(cfg.c > 0.0 && cfg.c < 1.0) {
        return Err(CliError::Config(format!("c must lie in (0, 1), got {}", cfg.c)));
    }
    if cfg.families.is_empty() || cfg.local_steps.is_empty() || cfg.local_steps.contains(&0) {
        return Err(CliError::Config("need at least one family and K values >= 1".into()));
    }
    let het = heterogeneity_report(inst);
    let strongly_convex = het.strong_convexity_mu > 0.0;
    let h = het.smoothness_h;
    let mut table = Table::new(COLUMNS);
    let mut results = Vec::new();
    for &family in &cfg.families {
        for &k in &cfg.local_steps {
            let eta = family.step(cfg.c, h, k);
            let res: FixedPointResult = if strongly_convex {
                compute_fixed_point(inst, eta, k)?
            } else {
                convex_fixed_point(inst, eta, k)?
            };
            table.push(vec![
                family.name().to_string(),
                k.to_string(),
                num(eta),
                opt(res.discrepancy),
                opt(res.discrepancy.map(f64::ln)),
                opt(res.norm_bound),
                opt(res.discrepancy_bound),
                status_name(&res.status).to_string(),
            ]);
            let mut entry = res.to_json();
            entry["family"] = json!(family.name());
            results.push(entry);
        }
    }
    let instance_json: Value = serde_json::from_str(&inst.to_json()?).map_err(|e| CliError::Config(e.to_string()))?;
    let config = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let hash = config_hash(&json!({"config": config, "instance": instance_json}));
    let report = json!({
        "config_hash": hash,
        "mode": if strongly_convex { "strongly-convex" } else { "convex" },
        "heterogeneity": het,
        "instance": instance_json,
        "results": results,
    });
    Ok(Report {
        experiment: "fixed-point",
        table,
        config,
        config_hash: hash,
        extras: vec![("report.json", report)],
    })
}

pub fn run(cfg: &FixedPointConfig) -> Result<Report, CliError> {
    report_for(cfg, &cfg.load_instance()?)
}
