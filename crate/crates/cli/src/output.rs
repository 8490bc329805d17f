//! CSV tables, sidecars and the worker pool shared by every experiment.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::CliError;

/// Decimal with 17 significant digits; non-finite values spelled out.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV text with a trailing `config_hash` column.
    pub fn to_csv(&self, hash: &str) -> String {
        let mut s = self.header.join(",");
        s.push_str(",config_hash\n");
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push(',');
            s.push_str(hash);
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    /// A numeric column; unparseable cells become NaN.
    pub fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        Some(
            self.column(name)?
                .into_iter()
                .map(|c| c.parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

/// `<out>.<suffix>`, e.g. `runs.csv` → `runs.csv.meta.json`.
pub fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

/// Everything one command produces.
#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: &'static str,
    pub table: Table,
    pub config: Value,
    pub config_hash: String,
    /// Extra JSON artifacts written next to the CSV as `<out>.<suffix>`.
    pub extras: Vec<(&'static str, Value)>,
}

impl Report {
    pub fn csv(&self) -> String {
        self.table.to_csv(&self.config_hash)
    }

    pub fn meta(&self) -> Value {
        json!({
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "config": self.config,
            "columns": self.table.header,
            "rows": self.table.rows.len(),
        })
    }

    /// Writes the CSV to `out` (plus sidecars), or prints it to stdout.
    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        match out {
            None => {
                print!("{}", self.csv());
                Ok(())
            }
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                fs::write(path, self.csv())?;
                write_json(&sidecar_path(path, "meta.json"), &self.meta())?;
                for (suffix, value) in &self.extras {
                    write_json(&sidecar_path(path, suffix), value)?;
                }
                Ok(())
            }
        }
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Maps `f` over `jobs` on a pool of `workers` threads, keeping input order.
pub fn parallel_map<J, T, F>(workers: usize, jobs: &[J], f: F) -> Result<Vec<T>, CliError>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T, CliError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

/// Most frequent value; ties go to the smallest.
pub fn mode(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NAN, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        if j > best.1 {
            best = (sorted[i], j);
        }
        i += j;
    }
    best.0
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless every value
/// is positive and there are at least two distinct `x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.0), "1.0000000000000000e0");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(f64::NAN), "NaN");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        assert_eq!(t.to_csv("h"), "a,b,config_hash\n1,x,h\n");
        assert_eq!(t.numbers("a").unwrap(), vec![1.0]);
        assert!(t.column("c").is_none());
        assert_eq!(
            sidecar_path(Path::new("d/r.csv"), "meta.json"),
            PathBuf::from("d/r.csv.meta.json")
        );
    }

    #[test]
    fn mode_prefers_the_smaller_value_on_ties() {
        assert_eq!(mode(&[0.1, 0.01, 0.1, 0.01, 1.0]), 0.01);
        assert_eq!(mode(&[3.0, 2.0, 3.0]), 3.0);
        assert!(mode(&[]).is_nan());
    }

    #[test]
    fn slope_of_a_power_law() {
        let xs = [64.0, 128.0, 256.0, 512.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&xs, &[1.0, 0.0, 1.0, 1.0]).is_none());
        assert!(log_log_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn parallel_map_keeps_order_for_any_worker_count() {
        let jobs: Vec<u64> = (0..50).collect();
        let one = parallel_map(1, &jobs, |j| Ok(j * j)).unwrap();
        let four = parallel_map(4, &jobs, |j| Ok(j * j)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[7], 49);
    }
}
