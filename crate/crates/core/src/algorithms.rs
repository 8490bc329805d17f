//! Optimization algorithms under intermittent communication.
//!
//! Time is indexed continuously: step `t = rK + k` is local step `k` of round
//! `r + 1`, and `t = rK` is the communication step closing round `r`. All
//! randomness is drawn from streams keyed by `(seed, purpose, machine,
//! round, …)`, so a run is a pure function of its config and seed.

use rand::Rng;
use serde::Serialize;

use crate::diagnostics::{mean_se, mean_vector, Probe, StepView};
use crate::error::{invalid, Error, Result};
use crate::numerics::{vector_serde, Vector};
use crate::problems::Instance;
use crate::streams::{derive_seed, stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ICSchedule {
    pub machines: usize,
    pub local_steps: u32,
    pub rounds: u32,
}

impl ICSchedule {
    pub fn new(machines: usize, local_steps: u32, rounds: u32) -> Result<Self> {
        if machines == 0 || local_steps == 0 {
            return Err(invalid("schedule needs M >= 1 and K >= 1"));
        }
        Ok(Self {
            machines,
            local_steps,
            rounds,
        })
    }

    /// `T = KR`.
    pub fn horizon(&self) -> u64 {
        self.local_steps as u64 * self.rounds as u64
    }
}

/// Which point a Local SGD run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    #[default]
    LastIterate,
    /// Mean of `x̄_1, …, x̄_R`.
    UniformAverage,
    /// `Σ w_r x̄_r / Σ w_r` over `x̄_1, …, x̄_R`.
    WeightedAverage(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalSGDConfig {
    pub inner_step: f64,
    pub outer_step: f64,
    pub schedule: ICSchedule,
    #[serde(with = "vector_serde")]
    pub init: Vector,
    pub output_mode: OutputMode,
}

impl LocalSGDConfig {
    pub fn new(inner_step: f64, outer_step: f64, schedule: ICSchedule, init: Vector) -> Self {
        Self {
            inner_step,
            outer_step,
            schedule,
            init,
            output_mode: OutputMode::LastIterate,
        }
    }

    fn validate(&self, inst: &Instance) -> Result<()> {
        if !(self.inner_step >= 0.0) || !(self.outer_step >= 0.0) {
            return Err(invalid("step sizes must be nonnegative"));
        }
        check_init(inst, &self.init, self.schedule.machines)?;
        if let OutputMode::WeightedAverage(w) = &self.output_mode {
            if w.len() != self.schedule.rounds as usize {
                return Err(Error::DimensionMismatch {
                    expected: self.schedule.rounds as usize,
                    found: w.len(),
                });
            }
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(invalid("output weights must be nonnegative with positive sum"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CELSGDConfig {
    pub step: f64,
    pub momentum: f64,
    pub warm_batch: usize,
    pub local_batch: usize,
    pub local_steps: u32,
    pub schedule: ICSchedule,
    #[serde(with = "vector_serde")]
    pub init: Vector,
}

impl CELSGDConfig {
    fn validate(&self, inst: &Instance) -> Result<()> {
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(invalid(format!("momentum must lie in (0, 1], got {}", self.momentum)));
        }
        if !(self.step >= 0.0) {
            return Err(invalid("step size must be nonnegative"));
        }
        if self.warm_batch == 0 || self.local_batch == 0 || self.local_steps == 0 {
            return Err(invalid("batch sizes and local steps must be at least 1"));
        }
        check_init(inst, &self.init, self.schedule.machines)
    }
}

fn check_init(inst: &Instance, init: &Vector, machines: usize) -> Result<()> {
    if init.len() != inst.dim() {
        return Err(Error::DimensionMismatch {
            expected: inst.dim(),
            found: init.len(),
        });
    }
    if machines != inst.num_machines() {
        return Err(Error::DimensionMismatch {
            expected: inst.num_machines(),
            found: machines,
        });
    }
    Ok(())
}

/// Result of one run.
#[derive(Clone, Debug, Serialize)]
pub struct RunTrace {
    pub algorithm: &'static str,
    pub seed: u64,
    /// Synchronized iterates `x̄_0, x̄_1, …` (one per completed round).
    #[serde(serialize_with = "serialize_vectors")]
    pub rounds: Vec<Vector>,
    /// CE-LSGD output candidates `w_{r,k}`; empty for other runners.
    #[serde(skip)]
    pub candidates: Vec<Vector>,
    #[serde(with = "vector_serde")]
    pub output: Vector,
    pub diverged: bool,
    pub config: serde_json::Value,
}

fn serialize_vectors<S: serde::Serializer>(vs: &[Vector], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(vs.len()))?;
    for v in vs {
        seq.serialize_element(v.as_slice())?;
    }
    seq.end()
}

impl RunTrace {
    pub fn last(&self) -> &Vector {
        self.rounds.last().expect("a trace always holds x̄_0")
    }

    /// JSON sidecar: algorithm, seed, config echo and outcome flags.
    pub fn sidecar_json(&self) -> String {
        serde_json::json!({
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config": self.config,
            "rounds_completed": self.rounds.len().saturating_sub(1),
            "diverged": self.diverged,
        })
        .to_string()
    }
}

/// Norm beyond which a run counts as diverged.
pub fn divergence_threshold(inst: &Instance, init: &Vector) -> f64 {
    let b = inst
        .global_optimum()
        .ok()
        .or_else(|| inst.mean_of_optima())
        .map(|x| x.norm())
        .unwrap_or(0.0);
    1e12 * (1.0 + init.norm() + b)
}

fn is_diverged(x: &Vector, threshold: f64) -> bool {
    x.iter().any(|v| !v.is_finite()) || x.norm() > threshold
}

fn observe<P: Probe>(probe: &mut P, t: u64, round: u64, k: u32, comm: bool, machines: &[Vector], ghost: &Vector) {
    probe.observe(&StepView {
        t,
        round,
        local_steps: k as u64,
        is_comm_round: comm,
        machines,
        ghost,
    });
}

fn observe_synced<P: Probe>(probe: &mut P, sched: &ICSchedule, r: u32, x: &Vector) {
    if probe.active() {
        let copies = vec![x.clone(); sched.machines];
        let t = r as u64 * sched.local_steps as u64;
        observe(probe, t, r as u64, sched.local_steps, true, &copies, x);
    }
}

fn local_output(cfg: &LocalSGDConfig, rounds: &[Vector]) -> Vector {
    let tail = &rounds[1..];
    match &cfg.output_mode {
        _ if tail.is_empty() => rounds[0].clone(),
        OutputMode::LastIterate => rounds.last().unwrap().clone(),
        OutputMode::UniformAverage => mean_vector(tail),
        OutputMode::WeightedAverage(w) => {
            let mut acc = Vector::zeros(rounds[0].len());
            let mut total = 0.0;
            for (x, &wi) in tail.iter().zip(w) {
                acc += x * wi;
                total += wi;
            }
            acc / total
        }
    }
}

/// Local SGD: `K` local SGD steps with step `η` from the last synchronized
/// point, then `x̄_r = x̄_{r−1} + (β/M) Σ_m (x_{r,K}^m − x̄_{r−1})`.
///
/// Machine `m`'s noise in round `r` comes from the stream
/// `(seed, LOCAL_NOISE, m, r)`.
pub fn run_local_sgd<P: Probe>(inst: &Instance, cfg: &LocalSGDConfig, seed: u64, mut probe: P) -> Result<RunTrace> {
    cfg.validate(inst)?;
    let sched = cfg.schedule;
    let threshold = divergence_threshold(inst, &cfg.init);
    let (eta, beta) = (cfg.inner_step, cfg.outer_step);
    let m_count = sched.machines;
    let mut x_bar = cfg.init.clone();
    let mut rounds = vec![x_bar.clone()];
    let mut diverged = false;
    observe_synced(&mut probe, &sched, 0, &x_bar);

    'rounds: for r in 1..=sched.rounds {
        let mut rngs: Vec<_> = (0..m_count)
            .map(|m| stream(seed, &[tag::LOCAL_NOISE, m as u64, r as u64]))
            .collect();
        let mut xs = vec![x_bar.clone(); m_count];
        for k in 1..=sched.local_steps {
            for (m, x) in xs.iter_mut().enumerate() {
                let g = inst.machine(m).stochastic_gradient(x, &mut rngs[m]);
                x.axpy(-eta, &g, 1.0);
            }
            if k < sched.local_steps && probe.active() {
                let ghost = mean_vector(&xs);
                if is_diverged(&ghost, threshold) {
                    diverged = true;
                    break 'rounds;
                }
                let t = (r as u64 - 1) * sched.local_steps as u64 + k as u64;
                observe(&mut probe, t, r as u64 - 1, sched.local_steps, false, &xs, &ghost);
            }
        }
        let mut delta = Vector::zeros(x_bar.len());
        for x in &xs {
            delta += x - &x_bar;
        }
        x_bar.axpy(beta / m_count as f64, &delta, 1.0);
        rounds.push(x_bar.clone());
        if is_diverged(&x_bar, threshold) {
            diverged = true;
            break;
        }
        observe_synced(&mut probe, &sched, r, &x_bar);
    }
    let output = local_output(cfg, &rounds);
    Ok(RunTrace {
        algorithm: "local-sgd",
        seed,
        rounds,
        candidates: Vec::new(),
        output,
        diverged,
        config: serde_json::to_value(cfg)?,
    })
}

/// Mini-batch SGD: `x̄_r = x̄_{r−1} − (β/M) Σ_{m,k} g(x̄_{r−1}; z_{r,k}^m)`.
/// `β` is the only step size; the inner step is ignored. Noise streams are
/// keyed exactly as in [`run_local_sgd`].
pub fn run_minibatch_sgd<P: Probe>(inst: &Instance, cfg: &LocalSGDConfig, seed: u64, mut probe: P) -> Result<RunTrace> {
    cfg.validate(inst)?;
    let sched = cfg.schedule;
    let threshold = divergence_threshold(inst, &cfg.init);
    let m_count = sched.machines;
    let mut x_bar = cfg.init.clone();
    let mut rounds = vec![x_bar.clone()];
    let mut diverged = false;
    observe_synced(&mut probe, &sched, 0, &x_bar);

    for r in 1..=sched.rounds {
        let mut total = Vector::zeros(x_bar.len());
        for m in 0..m_count {
            let mut rng = stream(seed, &[tag::LOCAL_NOISE, m as u64, r as u64]);
            for _ in 0..sched.local_steps {
                total += inst.machine(m).stochastic_gradient(&x_bar, &mut rng);
            }
        }
        if probe.active() {
            let copies = vec![x_bar.clone(); m_count];
            for k in 1..sched.local_steps {
                let t = (r as u64 - 1) * sched.local_steps as u64 + k as u64;
                observe(&mut probe, t, r as u64 - 1, sched.local_steps, false, &copies, &x_bar);
            }
        }
        x_bar.axpy(-cfg.outer_step / m_count as f64, &total, 1.0);
        rounds.push(x_bar.clone());
        if is_diverged(&x_bar, threshold) {
            diverged = true;
            break;
        }
        observe_synced(&mut probe, &sched, r, &x_bar);
    }
    let output = local_output(cfg, &rounds);
    Ok(RunTrace {
        algorithm: "minibatch-sgd",
        seed,
        rounds,
        candidates: Vec::new(),
        output,
        diverged,
        config: serde_json::to_value(cfg)?,
    })
}

/// Plain SGD on machine `machine_index` alone; probes still measure the
/// average objective.
pub fn run_serial_sgd<P: Probe>(
    machine_index: usize,
    inst: &Instance,
    step: f64,
    steps: u64,
    init: &Vector,
    seed: u64,
    mut probe: P,
) -> Result<RunTrace> {
    if machine_index >= inst.num_machines() {
        return Err(invalid(format!(
            "machine index {machine_index} out of range for M = {}",
            inst.num_machines()
        )));
    }
    check_init(inst, init, inst.num_machines())?;
    let threshold = divergence_threshold(inst, init);
    let machine = inst.machine(machine_index);
    let mut rng = stream(seed, &[tag::SERIAL_NOISE, machine_index as u64]);
    let mut x = init.clone();
    let mut rounds = vec![x.clone()];
    let mut diverged = false;
    let emit = |probe: &mut P, t: u64, x: &Vector| {
        if probe.active() {
            observe(probe, t, t, 1, true, std::slice::from_ref(x), x);
        }
    };
    emit(&mut probe, 0, &x);
    for t in 1..=steps {
        let g = machine.stochastic_gradient(&x, &mut rng);
        x.axpy(-step, &g, 1.0);
        rounds.push(x.clone());
        if is_diverged(&x, threshold) {
            diverged = true;
            break;
        }
        emit(&mut probe, t, &x);
    }
    Ok(RunTrace {
        algorithm: "serial-sgd",
        seed,
        output: x,
        rounds,
        candidates: Vec::new(),
        diverged,
        config: serde_json::json!({ "machine": machine_index, "step": step, "steps": steps }),
    })
}

/// Mean over machines of size-`batch` minibatch gradients at `x` and `y`,
/// each machine using one shared batch for both points.
fn paired_server_gradients(
    inst: &Instance,
    x: &Vector,
    y: &Vector,
    batch: usize,
    seed: u64,
    r: u32,
) -> (Vector, Vector) {
    let mut gx = Vector::zeros(x.len());
    let mut gy = Vector::zeros(x.len());
    for (m, machine) in inst.machines().iter().enumerate() {
        let mut rng = stream(seed, &[tag::SERVER_BATCH, r as u64, m as u64]);
        let g = machine.minibatch_multi_point_gradient(&[x, y], batch, &mut rng);
        gx += &g[0];
        gy += &g[1];
    }
    let scale = 1.0 / inst.num_machines() as f64;
    (gx * scale, gy * scale)
}

/// `v_r = ḡ(x_r) + (1−ρ)(v_{r−1} − ḡ(x_{r−1}))` with the paired batch.
#[allow(clippy::too_many_arguments)]
fn momentum_estimate(
    inst: &Instance,
    x: &Vector,
    x_prev: &Vector,
    v_prev: &Vector,
    rho: f64,
    batch: usize,
    seed: u64,
    r: u32,
) -> Vector {
    let (g_cur, g_prev) = paired_server_gradients(inst, x, x_prev, batch, seed, r);
    if rho == 1.0 {
        g_cur
    } else {
        g_cur + (v_prev - g_prev) * (1.0 - rho)
    }
}

fn choose_output(candidates: &[Vector], seed: u64) -> Vector {
    let mut rng = stream(seed, &[tag::OUTPUT_SELECT]);
    candidates[rng.random_range(0..candidates.len())].clone()
}

fn observe_single<P: Probe>(probe: &mut P, r: u32, x: &Vector) {
    if probe.active() {
        observe(probe, r as u64, r as u64, 1, true, std::slice::from_ref(x), x);
    }
}

/// Communication-efficient local SGD with momentum variance reduction.
///
/// Round `r` forms the server estimate `v_r` from paired minibatch gradients
/// at `(x_r, x_{r−1})` (batch `b₀` and `ρ = 1` in round 0, batch `P` and
/// `ρ = β` afterwards), then one uniformly chosen client runs `Q` SARAH-style
/// steps (`Q = 1` in round 0, `P` afterwards) starting from `w_1 = w_0 = x_r`.
/// The output is uniform over every local point `w_{r+1,k}`, `k ∈ [Q]`,
/// including round 0's single point `x_0`.
pub fn run_ce_lsgd<P: Probe>(inst: &Instance, cfg: &CELSGDConfig, seed: u64, mut probe: P) -> Result<RunTrace> {
    cfg.validate(inst)?;
    let threshold = divergence_threshold(inst, &cfg.init);
    let mut x = cfg.init.clone();
    let mut x_prev = x.clone();
    let mut v = Vector::zeros(x.len());
    let mut rounds = vec![x.clone()];
    let mut candidates = Vec::new();
    let mut diverged = false;
    observe_single(&mut probe, 0, &x);

    for r in 0..cfg.schedule.rounds {
        let (rho, q, batch) = if r == 0 {
            (1.0, 1, cfg.warm_batch)
        } else {
            (cfg.momentum, cfg.local_steps, cfg.local_steps as usize)
        };
        v = momentum_estimate(inst, &x, &x_prev, &v, rho, batch, seed, r);

        let client = stream(seed, &[tag::CLIENT_SELECT, r as u64]).random_range(0..inst.num_machines());
        let machine = inst.machine(client);
        let mut w_prev = x.clone();
        let mut w = x.clone();
        let mut v_local = v.clone();
        for k in 1..=q {
            candidates.push(w.clone());
            let mut rng = stream(seed, &[tag::CLIENT_BATCH, r as u64, k as u64]);
            let g = machine.minibatch_multi_point_gradient(&[&w, &w_prev], cfg.local_batch, &mut rng);
            v_local += &g[0] - &g[1];
            let next = &w - &v_local * cfg.step;
            w_prev = std::mem::replace(&mut w, next);
        }
        x_prev = std::mem::replace(&mut x, w);
        rounds.push(x.clone());
        if is_diverged(&x, threshold) {
            diverged = true;
            break;
        }
        observe_single(&mut probe, r + 1, &x);
    }
    let output = if candidates.is_empty() {
        x.clone()
    } else {
        choose_output(&candidates, seed)
    };
    Ok(RunTrace {
        algorithm: "ce-lsgd",
        seed,
        rounds,
        candidates,
        output,
        diverged,
        config: serde_json::to_value(cfg)?,
    })
}

/// Mini-batch STORM: `x_{r+1} = x_r − η v_r` with the same server estimate
/// as [`run_ce_lsgd`]. Later rounds use batch `P` (the config's
/// `local_steps`); the output is uniform over `x_0, …, x_{R−1}`.
pub fn run_mb_storm<P: Probe>(inst: &Instance, cfg: &CELSGDConfig, seed: u64, mut probe: P) -> Result<RunTrace> {
    cfg.validate(inst)?;
    let threshold = divergence_threshold(inst, &cfg.init);
    let mut x = cfg.init.clone();
    let mut x_prev = x.clone();
    let mut v = Vector::zeros(x.len());
    let mut rounds = vec![x.clone()];
    let mut diverged = false;
    observe_single(&mut probe, 0, &x);

    for r in 0..cfg.schedule.rounds {
        let (rho, batch) = if r == 0 {
            (1.0, cfg.warm_batch)
        } else {
            (cfg.momentum, cfg.local_steps as usize)
        };
        v = momentum_estimate(inst, &x, &x_prev, &v, rho, batch, seed, r);
        let next = &x - &v * cfg.step;
        x_prev = std::mem::replace(&mut x, next);
        rounds.push(x.clone());
        if is_diverged(&x, threshold) {
            diverged = true;
            break;
        }
        observe_single(&mut probe, r + 1, &x);
    }
    let candidates: Vec<Vector> = rounds[..rounds.len() - 1].to_vec();
    let output = if candidates.is_empty() {
        x.clone()
    } else {
        choose_output(&candidates, seed)
    };
    Ok(RunTrace {
        algorithm: "mb-storm",
        seed,
        rounds,
        candidates,
        output,
        diverged,
        config: serde_json::to_value(cfg)?,
    })
}

/// Noiseless Local SGD iterate on the shared-optimum pair from `x̄_0 = 0`:
/// `x̄_R = x★(1 − (1 − (β/2)(1 − (1−ηH)^K))^R)`.
pub fn closed_form_shared_optimum_iterate(h: f64, eta: f64, beta: f64, k: u32, r: u32, x_star: &Vector) -> Vector {
    let per_round = 1.0 - 0.5 * beta * (1.0 - (1.0 - eta * h).powi(k as i32));
    x_star * (1.0 - per_round.powi(r as i32))
}

/// What a tuning run reports: a per-round error series and whether it blew
/// up.
#[derive(Clone, Debug)]
pub struct TuneSample {
    pub errors: Vec<f64>,
    pub diverged: bool,
}

impl TuneSample {
    pub fn from_trace(trace: &RunTrace, error: impl Fn(&Vector) -> f64) -> Self {
        Self {
            errors: trace.rounds.iter().map(error).collect(),
            diverged: trace.diverged,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneMetric {
    /// Error after the last round.
    FinalError,
    /// First round index whose error is at most `target`; `max_rounds + 1`
    /// when never reached.
    RoundsToTarget { target: f64, max_rounds: u32 },
}

impl TuneMetric {
    pub fn evaluate(&self, sample: &TuneSample) -> f64 {
        if sample.diverged {
            return f64::INFINITY;
        }
        match *self {
            TuneMetric::FinalError => sample.errors.last().copied().unwrap_or(f64::INFINITY),
            TuneMetric::RoundsToTarget { target, max_rounds } => sample
                .errors
                .iter()
                .take(max_rounds as usize + 1)
                .position(|&e| e <= target)
                .map(|r| r as f64)
                .unwrap_or(max_rounds as f64 + 1.0),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TuneResult {
    pub best_eta: f64,
    pub best_metric: f64,
    /// `(η, averaged metric)` for every grid point, in ascending `η`.
    pub table: Vec<(f64, f64)>,
}

/// Grid search over `η`: every point runs the same `trials` seeds, the
/// averaged metric is minimized, and ties go to the smaller `η`. Runs that
/// diverge count as infinitely bad.
pub fn tune_step_size<F>(
    mut runner: F,
    grid: &[f64],
    metric: TuneMetric,
    trials: usize,
    base_seed: u64,
) -> Result<TuneResult>
where
    F: FnMut(f64, u64) -> Result<TuneSample>,
{
    if grid.is_empty() || trials == 0 {
        return Err(invalid("tuning needs a nonempty grid and at least one trial"));
    }
    let mut etas = grid.to_vec();
    etas.sort_by(f64::total_cmp);
    let mut table = Vec::with_capacity(etas.len());
    for &eta in &etas {
        let mut values = Vec::with_capacity(trials);
        for i in 0..trials {
            let seed = derive_seed(base_seed, &[tag::TRIAL, i as u64]);
            values.push(metric.evaluate(&runner(eta, seed)?));
        }
        let avg = if values.iter().any(|v| v.is_infinite()) {
            f64::INFINITY
        } else {
            mean_se(&values).mean
        };
        table.push((eta, avg));
    }
    let (best_eta, best_metric) =
        table.iter().copied().fold(
            (f64::NAN, f64::INFINITY),
            |best, (e, v)| if v < best.1 { (e, v) } else { best },
        );
    if best_metric.is_infinite() {
        return Err(Error::NoStableStepSize);
    }
    Ok(TuneResult {
        best_eta,
        best_metric,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{NoProbe, TraceProbe};
    use crate::numerics::SymMatrix;
    use crate::problems::{make_shared_optimum_pair, make_tau_decoupled_pair, QuadraticMachine};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn isotropic(h: f64, x: &[f64], sigma: f64) -> Instance {
        let q = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&vec![h; x.len()]), v(x), sigma).unwrap();
        Instance::from_quadratics(vec![q]).unwrap()
    }

    fn local(inst: &Instance, eta: f64, beta: f64, k: u32, r: u32) -> LocalSGDConfig {
        let sched = ICSchedule::new(inst.num_machines(), k, r).unwrap();
        LocalSGDConfig::new(eta, beta, sched, Vector::zeros(inst.dim()))
    }

    #[test]
    fn local_sgd_shared_optimum_one_round() {
        let inst = make_shared_optimum_pair(1.0, &v(&[1.0, 1.0])).unwrap();
        let trace = run_local_sgd(&inst, &local(&inst, 1.0, 1.0, 2, 1), 0, NoProbe).unwrap();
        assert_eq!(trace.output, v(&[0.5, 0.5]));
    }

    #[test]
    fn local_sgd_zero_step_is_stationary() {
        let inst = make_shared_optimum_pair(1.0, &v(&[1.0, 1.0])).unwrap().with_noise(1.0);
        let mut cfg = local(&inst, 0.0, 1.0, 3, 4);
        cfg.init = v(&[0.3, -0.2]);
        let trace = run_local_sgd(&inst, &cfg, 1, NoProbe).unwrap();
        assert!(trace.rounds.iter().all(|x| *x == cfg.init));
    }

    #[test]
    fn local_sgd_exact_step_on_isotropic_quadratic() {
        let inst = isotropic(4.0, &[1.0, -2.0], 0.0);
        let trace = run_local_sgd(&inst, &local(&inst, 0.25, 1.0, 1, 1), 0, NoProbe).unwrap();
        assert!((trace.output - v(&[1.0, -2.0])).norm() < 1e-15);
    }

    #[test]
    fn minibatch_examples() {
        let inst = isotropic(1.0, &[1.0, 1.0], 0.0);
        let trace = run_minibatch_sgd(&inst, &local(&inst, 123.0, 0.25, 2, 1), 0, NoProbe).unwrap();
        assert_eq!(trace.output, v(&[0.5, 0.5]));
        let trace = run_minibatch_sgd(&inst, &local(&inst, 1.0, 0.0, 2, 5), 0, NoProbe).unwrap();
        assert_eq!(trace.output, Vector::zeros(2));
        let inst = isotropic(2.0, &[1.0, 3.0], 0.0);
        let trace = run_minibatch_sgd(&inst, &local(&inst, 1.0, 0.25, 2, 1), 0, NoProbe).unwrap();
        assert!((trace.output - v(&[1.0, 3.0])).norm() < 1e-15);
    }

    #[test]
    fn local_and_minibatch_agree_at_k1() {
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5]))
            .unwrap()
            .with_noise(0.7);
        let eta = 0.3;
        let a = run_local_sgd(&inst, &local(&inst, eta, 1.0, 1, 20), 5, NoProbe).unwrap();
        let b = run_minibatch_sgd(&inst, &local(&inst, 0.0, eta, 1, 20), 5, NoProbe).unwrap();
        for (x, y) in a.rounds.iter().zip(&b.rounds) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn local_sgd_is_deterministic_and_seed_sensitive() {
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5]))
            .unwrap()
            .with_noise(0.7);
        let cfg = local(&inst, 0.1, 1.0, 4, 6);
        let a = run_local_sgd(&inst, &cfg, 9, NoProbe).unwrap();
        let b = run_local_sgd(&inst, &cfg, 9, NoProbe).unwrap();
        let c = run_local_sgd(&inst, &cfg, 10, NoProbe).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_ne!(a.rounds, c.rounds);
    }

    #[test]
    fn probe_sees_every_step_and_zero_consensus_at_communication() {
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5]))
            .unwrap()
            .with_noise(0.3);
        let mut probe = TraceProbe::new(&inst);
        run_local_sgd(&inst, &local(&inst, 0.1, 1.0, 3, 4), 2, &mut probe).unwrap();
        assert_eq!(probe.records.len(), 13);
        for (t, rec) in probe.records.iter().enumerate() {
            assert_eq!(rec.t, t as u64);
            assert_eq!(rec.is_comm_round, t % 3 == 0);
            if rec.is_comm_round {
                assert_eq!(rec.consensus_sq, 0.0);
            } else {
                assert!(rec.consensus_sq > 0.0);
            }
        }
    }

    #[test]
    fn output_modes() {
        let inst = isotropic(1.0, &[1.0], 0.0);
        let mut cfg = local(&inst, 0.5, 1.0, 1, 2);
        cfg.output_mode = OutputMode::UniformAverage;
        let trace = run_local_sgd(&inst, &cfg, 0, NoProbe).unwrap();
        assert!((trace.output[0] - 0.625).abs() < 1e-15);
        cfg.output_mode = OutputMode::WeightedAverage(vec![0.0, 1.0]);
        let trace = run_local_sgd(&inst, &cfg, 0, NoProbe).unwrap();
        assert!((trace.output[0] - 0.75).abs() < 1e-15);
        cfg.output_mode = OutputMode::WeightedAverage(vec![1.0]);
        assert!(run_local_sgd(&inst, &cfg, 0, NoProbe).is_err());
    }

    #[test]
    fn divergence_halts_the_run() {
        let inst = isotropic(1.0, &[1.0], 0.0);
        let trace = run_local_sgd(&inst, &local(&inst, 3.0, 1.0, 1, 1000), 0, NoProbe).unwrap();
        assert!(trace.diverged);
        assert!(trace.rounds.len() < 1001);
    }

    #[test]
    fn serial_sgd_examples() {
        let inst = isotropic(2.0, &[1.0, -1.0], 0.0);
        let mut prev = f64::INFINITY;
        let trace = run_serial_sgd(0, &inst, 0.3, 20, &Vector::zeros(2), 0, NoProbe).unwrap();
        for x in &trace.rounds {
            let f = inst.objective(x);
            assert!(f <= prev);
            prev = f;
        }
        let trace = run_serial_sgd(0, &inst, 0.3, 0, &v(&[4.0, 4.0]), 0, NoProbe).unwrap();
        assert_eq!(trace.output, v(&[4.0, 4.0]));

        let pair = make_shared_optimum_pair(1.0, &v(&[1.0, 1.0])).unwrap();
        let mut probe = TraceProbe::new(&pair);
        run_serial_sgd(0, &pair, 0.5, 50, &Vector::zeros(2), 0, &mut probe).unwrap();
        for rec in &probe.records {
            assert!(rec.func_subopt.unwrap() >= 0.25 - 1e-15);
        }
        assert!(run_serial_sgd(2, &pair, 0.5, 5, &Vector::zeros(2), 0, NoProbe).is_err());
    }

    fn ce_cfg(inst: &Instance, eta: f64, beta: f64, p: u32, r: u32) -> CELSGDConfig {
        CELSGDConfig {
            step: eta,
            momentum: beta,
            warm_batch: 4,
            local_batch: 1,
            local_steps: p,
            schedule: ICSchedule::new(inst.num_machines(), p, r).unwrap(),
            init: Vector::zeros(inst.dim()),
        }
    }

    #[test]
    fn ce_lsgd_hand_trace() {
        let inst = isotropic(1.0, &[1.0], 0.0);
        let trace = run_ce_lsgd(&inst, &ce_cfg(&inst, 0.5, 1.0, 1, 1), 0, NoProbe).unwrap();
        assert_eq!(trace.rounds[1], v(&[0.5]));
        assert_eq!(trace.candidates, vec![v(&[0.0])]);
    }

    #[test]
    fn ce_lsgd_exact_oracle_local_steps_use_the_local_gradient_path() {
        // With σ = 0 and β = 1, v_r = ∇F(x_r); the local correction then
        // tracks ∇F_m̃ differences along the client path.
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5])).unwrap();
        let cfg = ce_cfg(&inst, 0.2, 1.0, 3, 2);
        let trace = run_ce_lsgd(&inst, &cfg, 4, NoProbe).unwrap();
        let x1 = &trace.rounds[1];
        assert!((x1 - &(inst.gradient(&Vector::zeros(3)) * -0.2)).norm() < 1e-15);
        let client = stream(4, &[tag::CLIENT_SELECT, 1]).random_range(0..2);
        let m = inst.machine(client);
        let mut w_prev = x1.clone();
        let mut w = x1.clone();
        let mut vl = inst.gradient(x1);
        for _ in 0..3 {
            vl += m.gradient(&w) - m.gradient(&w_prev);
            let next = &w - &vl * 0.2;
            w_prev = std::mem::replace(&mut w, next);
        }
        assert!((&trace.rounds[2] - w).norm() < 1e-14);
        assert_eq!(trace.candidates.len(), 4);
    }

    #[test]
    fn ce_lsgd_single_local_step_matches_mb_storm() {
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5]))
            .unwrap()
            .with_noise(0.5);
        let cfg = ce_cfg(&inst, 0.2, 0.3, 1, 15);
        let a = run_ce_lsgd(&inst, &cfg, 77, NoProbe).unwrap();
        let b = run_mb_storm(&inst, &cfg, 77, NoProbe).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn mb_storm_exact_oracle_is_gradient_descent() {
        let inst = make_tau_decoupled_pair(1.0, 0.5, &v(&[1.0, -1.0, 0.5])).unwrap();
        let cfg = ce_cfg(&inst, 0.4, 1.0, 1, 6);
        let trace = run_mb_storm(&inst, &cfg, 3, NoProbe).unwrap();
        assert_eq!(trace.rounds.len(), 7);
        let mut x = Vector::zeros(3);
        for r in 1..=6 {
            x = &x - inst.gradient(&x) * 0.4;
            assert!((&x - &trace.rounds[r]).norm() < 1e-14);
        }
    }

    #[test]
    fn closed_form_examples() {
        let xs = v(&[2.0, -1.0]);
        assert!((closed_form_shared_optimum_iterate(1.0, 1.0, 1.0, 7, 3, &xs) - &xs * 0.875).norm() < 1e-15);
        assert!((closed_form_shared_optimum_iterate(2.0, 0.5, 2.0, 3, 1, &xs) - &xs).norm() < 1e-15);
        assert_eq!(
            closed_form_shared_optimum_iterate(1.0, 0.3, 1.0, 2, 0, &xs),
            Vector::zeros(2)
        );
    }

    #[test]
    fn tuning_picks_the_exact_step() {
        let h = 2.0;
        let inst = isotropic(h, &[1.0, 1.0], 0.0);
        let x_star = inst.global_optimum().unwrap();
        let grid = [0.1 / h, 0.5 / h, 1.0 / h, 3.0 / h];
        let runner = |eta: f64, seed: u64| {
            // 3/H doubles the error each round and crosses the divergence
            // threshold well within 60 rounds; 1/H is exact after one.
            let rounds = if eta > 1.0 / h { 60 } else { 10 };
            let trace = run_local_sgd(&inst, &local(&inst, eta, 1.0, 1, rounds), seed, NoProbe)?;
            Ok(TuneSample::from_trace(&trace, |x| (x - &x_star).norm()))
        };
        let res = tune_step_size(runner, &grid, TuneMetric::FinalError, 2, 0).unwrap();
        assert_eq!(res.best_eta, 1.0 / h);
        assert!(res.table[3].1.is_infinite());

        let single = tune_step_size(runner, &[0.2], TuneMetric::FinalError, 1, 0).unwrap();
        assert_eq!(single.best_eta, 0.2);

        let unreachable = TuneMetric::RoundsToTarget {
            target: -1.0,
            max_rounds: 100,
        };
        let res = tune_step_size(runner, &[0.2], unreachable, 1, 0).unwrap();
        assert_eq!(res.best_metric, 101.0);

        assert!(matches!(
            tune_step_size(runner, &[5.0], TuneMetric::FinalError, 1, 0),
            Err(Error::NoStableStepSize)
        ));
    }

    #[test]
    fn ties_go_to_the_smaller_step() {
        let runner = |_: f64, _: u64| {
            Ok(TuneSample {
                errors: vec![1.0],
                diverged: false,
            })
        };
        let res = tune_step_size(runner, &[0.3, 0.1, 0.2], TuneMetric::FinalError, 1, 0).unwrap();
        assert_eq!(res.best_eta, 0.1);
    }

    #[test]
    fn sidecar_echoes_config() {
        let inst = isotropic(1.0, &[1.0], 0.0);
        let trace = run_local_sgd(&inst, &local(&inst, 0.5, 1.0, 2, 3), 42, NoProbe).unwrap();
        let json: serde_json::Value = serde_json::from_str(&trace.sidecar_json()).unwrap();
        assert_eq!(json["seed"], 42);
        assert_eq!(json["config"]["schedule"]["local_steps"], 2);
        assert_eq!(json["config"]["output_mode"], "last-iterate");
    }
}
