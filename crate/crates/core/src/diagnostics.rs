//! Per-step trace quantities, trial aggregation, and the closed-form
//! consensus bounds they are checked against.
//!
//! Notation for a step `t` with machine iterates `x_t^m` and their average
//! `x̄_t`:
//!
//! | field               | value                                   |
//! |---------------------|-----------------------------------------|
//! | `iterate_error_sq`  | `A(t) = ‖x̄_t − x★‖²`                   |
//! | `iterate_error_4th` | `B(t) = ‖x̄_t − x★‖⁴`                   |
//! | `consensus_sq`      | `C(t) = (1/M²) Σ_{m,n} ‖x_t^m − x_t^n‖²` |
//! | `consensus_4th`     | `D(t) = (1/M²) Σ_{m,n} ‖x_t^m − x_t^n‖⁴` |
//! | `func_subopt`       | `E(t) = F(x̄_t) − F★`                   |

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::numerics::Vector;
use crate::problems::{HeterogeneityReport, Instance};

/// `(C, D)`: second and fourth moments of pairwise disagreement, averaged
/// over all ordered pairs including `m = n`.
pub fn consensus_errors(iterates: &[Vector]) -> (f64, f64) {
    let m = iterates.len();
    if m <= 1 {
        return (0.0, 0.0);
    }
    let (mut c, mut d) = (0.0, 0.0);
    for i in 0..m {
        for j in (i + 1)..m {
            let sq = (&iterates[i] - &iterates[j]).norm_squared();
            c += sq;
            d += sq * sq;
        }
    }
    let scale = 2.0 / (m * m) as f64;
    (c * scale, d * scale)
}

/// `(1/M) Σ_m ‖x̄ − x^m‖²`, which Jensen bounds above by `C`.
pub fn consensus_error_to_mean(iterates: &[Vector]) -> f64 {
    if iterates.is_empty() {
        return 0.0;
    }
    let mean = mean_vector(iterates);
    iterates.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / iterates.len() as f64
}

pub fn mean_vector(xs: &[Vector]) -> Vector {
    let mut acc = Vector::zeros(xs[0].len());
    for x in xs {
        acc += x;
    }
    acc / xs.len() as f64
}

/// `(A, B)`: squared and fourth-power distance.
pub fn iterate_errors(x_bar: &Vector, x_star: &Vector) -> (f64, f64) {
    let a = (x_bar - x_star).norm_squared();
    (a, a * a)
}

/// Cached optimum and optimal value of an instance's average objective.
#[derive(Clone, Debug)]
pub struct Reference {
    pub x_star: Option<Vector>,
    pub f_star: Option<f64>,
}

impl Reference {
    pub fn new(inst: &Instance) -> Self {
        let x_star = inst.global_optimum().ok();
        let f_star = x_star.as_ref().map(|x| inst.objective(x));
        Self { x_star, f_star }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveStats {
    /// `F(x) − F★`; `None` without a unique optimum.
    pub func_subopt: Option<f64>,
    pub grad_norm_sq: f64,
}

pub fn objective_stats(inst: &Instance, x: &Vector) -> ObjectiveStats {
    objective_stats_with(inst, &Reference::new(inst), x)
}

pub fn objective_stats_with(inst: &Instance, reference: &Reference, x: &Vector) -> ObjectiveStats {
    let grad = inst.gradient(x);
    // Exact quadratic gap ½(x−x★)ᵀA(x−x★) avoids cancellation in F(x) − F★.
    let func_subopt = reference
        .x_star
        .as_ref()
        .map(|xs| 0.5 * inst.average_hessian().quad_form(&(x - xs)));
    ObjectiveStats {
        func_subopt,
        grad_norm_sq: grad.norm_squared(),
    }
}

/// What a runner exposes to probes at one time step.
pub struct StepView<'a> {
    pub t: u64,
    pub round: u64,
    pub local_steps: u64,
    pub is_comm_round: bool,
    pub machines: &'a [Vector],
    pub ghost: &'a Vector,
}

impl StepView<'_> {
    /// `δ(t) = t − (t mod K)`.
    pub fn delta_t(&self) -> u64 {
        self.t - self.t % self.local_steps.max(1)
    }
}

/// Observer called by runners at every time step.
pub trait Probe {
    /// Runners skip assembling the view when this returns false.
    fn active(&self) -> bool {
        true
    }
    fn observe(&mut self, step: &StepView<'_>);
}

/// Observes nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoProbe;

impl Probe for NoProbe {
    fn active(&self) -> bool {
        false
    }
    fn observe(&mut self, _: &StepView<'_>) {}
}

impl<A: Probe, B: Probe> Probe for (A, B) {
    fn active(&self) -> bool {
        self.0.active() || self.1.active()
    }
    fn observe(&mut self, step: &StepView<'_>) {
        if self.0.active() {
            self.0.observe(step);
        }
        if self.1.active() {
            self.1.observe(step);
        }
    }
}

impl<P: Probe + ?Sized> Probe for &mut P {
    fn active(&self) -> bool {
        (**self).active()
    }
    fn observe(&mut self, step: &StepView<'_>) {
        (**self).observe(step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    pub round: u64,
    pub delta_t: u64,
    pub is_comm_round: bool,
    pub iterate_error_sq: Option<f64>,
    pub iterate_error_4th: Option<f64>,
    pub consensus_sq: f64,
    pub consensus_4th: f64,
    pub func_subopt: Option<f64>,
    pub grad_norm_sq: f64,
}

/// Records the full set of trace quantities at every step.
pub struct TraceProbe<'a> {
    inst: &'a Instance,
    reference: Reference,
    pub records: Vec<TraceRecord>,
}

impl<'a> TraceProbe<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Self {
            inst,
            reference: Reference::new(inst),
            records: Vec::new(),
        }
    }

    /// Measures against an explicit comparator instead of the instance's
    /// global optimum.
    pub fn with_reference(inst: &'a Instance, reference: Reference) -> Self {
        Self {
            inst,
            reference,
            records: Vec::new(),
        }
    }
}

impl Probe for TraceProbe<'_> {
    fn observe(&mut self, step: &StepView<'_>) {
        let (c, d) = if step.is_comm_round {
            (0.0, 0.0)
        } else {
            consensus_errors(step.machines)
        };
        let errors = self.reference.x_star.as_ref().map(|xs| iterate_errors(step.ghost, xs));
        let stats = objective_stats_with(self.inst, &self.reference, step.ghost);
        self.records.push(TraceRecord {
            t: step.t,
            round: step.round,
            delta_t: step.delta_t(),
            is_comm_round: step.is_comm_round,
            iterate_error_sq: errors.map(|e| e.0),
            iterate_error_4th: errors.map(|e| e.1),
            consensus_sq: c,
            consensus_4th: d,
            func_subopt: stats.func_subopt,
            grad_norm_sq: stats.grad_norm_sq,
        });
    }
}

/// Records only the consensus moments, which is all the bound checks need.
#[derive(Default)]
pub struct ConsensusProbe {
    pub consensus_sq: Vec<f64>,
    pub consensus_4th: Vec<f64>,
}

impl Probe for ConsensusProbe {
    fn observe(&mut self, step: &StepView<'_>) {
        let (c, d) = consensus_errors(step.machines);
        self.consensus_sq.push(c);
        self.consensus_4th.push(d);
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Writes the per-step CSV: `t, r, is_comm_round, iterate_error_sq,
/// consensus_error_sq, func_subopt, grad_norm_sq`.
pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "t,r,is_comm_round,iterate_error_sq,consensus_error_sq,func_subopt,grad_norm_sq"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:.16e},{},{:.16e}",
            r.t,
            r.round,
            r.is_comm_round as u8,
            fmt_opt(r.iterate_error_sq),
            r.consensus_sq,
            fmt_opt(r.func_subopt),
            r.grad_norm_sq
        )?;
    }
    Ok(())
}

/// `C(t) ≤ 3K²η²H²ζ² + 6Kσ₂²η²`, valid for `K ≥ 2`, `η ≤ 1/(2H)`.
pub fn consensus_bound_second(eta: f64, k: u32, h: f64, zeta: f64, sigma2: f64) -> Result<f64> {
    check_bound_domain(eta, k, h)?;
    let k = k as f64;
    Ok(3.0 * k * k * eta * eta * h * h * zeta * zeta + 6.0 * k * sigma2 * sigma2 * eta * eta)
}

/// `D(t) ≤ 2620η⁴K⁴H⁴ζ⁴ + 5000η⁴K²σ₂⁴ + 320η⁴σ₄⁴K`, same domain.
pub fn consensus_bound_fourth(eta: f64, k: u32, h: f64, zeta: f64, sigma2: f64, sigma4: f64) -> Result<f64> {
    check_bound_domain(eta, k, h)?;
    let k = k as f64;
    let e4 = eta.powi(4);
    Ok(2620.0 * e4 * k.powi(4) * (h * zeta).powi(4)
        + 5000.0 * e4 * k * k * sigma2.powi(4)
        + 320.0 * e4 * sigma4.powi(4) * k)
}

fn check_bound_domain(eta: f64, k: u32, h: f64) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("consensus bounds need K >= 2, got {k}")));
    }
    if !(eta >= 0.0) || eta * 2.0 * h > 1.0 + 1e-12 {
        return Err(invalid(format!(
            "consensus bounds need 0 <= eta <= 1/(2H), got eta={eta}, H={h}"
        )));
    }
    Ok(())
}

/// Pairwise `H(ζ★_m + ζ★_n) + τ(D + B̄)`; `None` when the report has no
/// first-order fields.
pub fn uniform_zeta_bound(report: &HeterogeneityReport, radius: f64) -> Option<Vec<Vec<f64>>> {
    let per = report.zeta_star_per_machine.as_ref()?;
    let b_bar = report.b_bar?;
    let h = report.smoothness_h;
    let offset = report.tau * (radius + b_bar);
    Some(
        per.iter()
            .map(|zm| per.iter().map(|zn| h * (zm + zn) + offset).collect())
            .collect(),
    )
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, never on how the work producing it was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; zero for a single sample.
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn upper(&self, z: f64) -> f64 {
        self.mean + z * self.se
    }
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            n,
        };
    }
    let mean = pairwise_sum(xs) / n as f64;
    let se = if n > 1 {
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    MeanSe { mean, se, n }
}

/// Column-wise mean and standard error across trials of equal length.
pub fn aggregate_series(trials: &[Vec<f64>]) -> Vec<MeanSe> {
    let len = trials.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col: Vec<f64> = trials.iter().map(|t| t[i]).collect();
            mean_se(&col)
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
