//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{parse_config, read_config_value, Overrides, RuntimeFields};
use crate::instance::{InstanceKind, InstanceSpec};
use crate::output::{sidecar_path, write_json, Report};
use crate::validate::{run_suite, Suite};
use crate::{comm_complexity, fixed_point, heatmap, online_regret, runtime_fields, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "icsim",
    version,
    about = "Local-update optimization experiments under intermittent communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; they override the config file.
#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// TOML or JSON config file (`.json` is parsed as JSON).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            out: self.out.clone(),
        }
    }

    fn config_value(&self) -> Result<Option<Value>, CliError> {
        self.config.as_deref().map(read_config_value).transpose()
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tuned final error over a (tau, zeta_star) grid.
    Heatmap(Common),
    /// Rounds to reach a target error as a function of tau.
    CommComplexity(Common),
    /// Fixed-point discrepancy tables across K and step-size families.
    FixedPoint(Common),
    /// Average regret against the horizon for the online runners.
    OnlineRegret(Common),
    /// Run invariant suites and print a JSON report.
    Validate {
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Force the named check to fail.
        #[arg(long, value_name = "CHECK")]
        inject_fault: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate or inspect problem instances.
    Instance {
        #[command(subcommand)]
        action: InstanceAction,
    },
}

#[derive(Debug, Subcommand)]
enum InstanceAction {
    /// Write an instance as JSON, from `--kind` defaults or a spec file.
    Generate {
        #[arg(long, value_enum)]
        kind: Option<InstanceKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the heterogeneity report of an instance file.
    Inspect {
        path: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateConfig {
    seed: u64,
    #[serde(skip_serializing)]
    workers: usize,
    #[serde(skip_serializing)]
    out: Option<PathBuf>,
    suite: Suite,
    inject_fault: Option<String>,
}

runtime_fields!(ValidateConfig);

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            suite: Suite::All,
            inject_fault: None,
        }
    }
}

impl<'de> Deserialize<'de> for Suite {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use clap::ValueEnum;
        let s = String::deserialize(d)?;
        Suite::from_str(&s, false).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateConfig {
    seed: u64,
    #[serde(skip_serializing)]
    workers: usize,
    #[serde(skip_serializing)]
    out: Option<PathBuf>,
    instance: Option<InstanceSpec>,
}

runtime_fields!(GenerateConfig);

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            out: None,
            instance: None,
        }
    }
}

fn load<C>(common: &Common, experiment: &str) -> Result<C, CliError>
where
    C: DeserializeOwned + Default + RuntimeFields,
{
    let mut cfg: C = parse_config(common.config_value()?, experiment)?;
    common.overrides().apply(&mut cfg)?;
    Ok(cfg)
}

fn experiment<C>(common: &Common, name: &str, run: fn(&C) -> Result<Report, CliError>) -> Result<(), CliError>
where
    C: DeserializeOwned + Default + RuntimeFields,
{
    let mut cfg: C = load(common, name)?;
    let report = run(&cfg)?;
    report.emit(cfg.out_mut().as_deref())
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Heatmap(c) => experiment(&c, "heatmap", heatmap::run),
        Command::CommComplexity(c) => experiment(&c, "comm-complexity", comm_complexity::run),
        Command::FixedPoint(c) => experiment(&c, "fixed-point", fixed_point::run),
        Command::OnlineRegret(c) => experiment(&c, "online-regret", online_regret::run),
        Command::Validate {
            suite,
            inject_fault,
            common,
        } => {
            let mut cfg: ValidateConfig = load(&common, "validate")?;
            if let Some(s) = suite {
                cfg.suite = s;
            }
            if inject_fault.is_some() {
                cfg.inject_fault = inject_fault;
            }
            let report = run_suite(cfg.suite, cfg.seed, cfg.workers, cfg.inject_fault.as_deref())?;
            let value = serde_json::to_value(&report).map_err(|e| CliError::Config(e.to_string()))?;
            write_text(cfg.out.as_deref(), &pretty(&value))?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Validation(report.failed().join(", ")))
            }
        }
        Command::Instance {
            action: InstanceAction::Generate { kind, common },
        } => {
            let cfg: GenerateConfig = load(&common, "instance")?;
            let spec = match (kind, cfg.instance) {
                (Some(k), None) => InstanceSpec::defaults(k),
                (None, Some(spec)) => spec,
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(
                        "give either --kind or an instance spec, not both".into(),
                    ))
                }
                (None, None) => {
                    return Err(CliError::Config(
                        "need --kind or a config with an [instance] spec".into(),
                    ))
                }
            };
            let (text, meta) = crate::instance::generate(&spec, cfg.seed)?;
            write_text(cfg.out.as_deref(), &text)?;
            if let Some(path) = &cfg.out {
                write_json(&sidecar_path(path, "meta.json"), &meta)?;
            }
            Ok(())
        }
        Command::Instance {
            action: InstanceAction::Inspect { path, out },
        } => write_text(out.as_deref(), &pretty(&crate::instance::inspect(&path)?)),
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 when validation fails, 2 on usage or config errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_from_env() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["icsim", "no-such-command"]), 2);
        assert_eq!(run(["icsim", "validate", "--suite", "nope"]), 2);
        assert_eq!(run(["icsim", "heatmap", "--workers", "0"]), 2);
        assert_eq!(run(["icsim", "instance", "generate"]), 2);
    }

    #[test]
    fn validate_config_accepts_suite_names() {
        let cfg: ValidateConfig =
            parse_config(Some(serde_json::json!({"suite": "hard-instances"})), "validate").unwrap();
        assert_eq!(cfg.suite, Suite::HardInstances);
    }
}
