//! Federated online optimization with first-order, one-point and two-point
//! feedback, plus regret accounting against the best fixed point in a ball.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::ICSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::Vector;
use crate::problems::sample_unit_sphere;
use crate::streams::{stream, tag};

/// Euclidean projection onto the ball of the given radius.
pub fn project_ball(x: &Vector, radius: f64) -> Vector {
    let n = x.norm();
    if n <= radius {
        x.clone()
    } else {
        x * (radius / n)
    }
}

/// A point drawn uniformly from the ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vector {
    let u = sample_unit_sphere(d, rng);
    let r: f64 = rng.random();
    u * (radius * r.powf(1.0 / d as f64))
}

/// `(d f / δ) u`.
pub fn one_point_estimator(f_value: f64, u: &Vector, delta: f64, d: usize) -> Vector {
    u * (d as f64 * f_value / delta)
}

/// `d (f₊ − f₋) u / (2δ)`.
pub fn two_point_estimator(f_plus: f64, f_minus: f64, u: &Vector, delta: f64, d: usize) -> Vector {
    u * (d as f64 * (f_plus - f_minus) / (2.0 * delta))
}

/// One machine's cost at one time step.
#[derive(Clone, Debug, PartialEq)]
pub enum Cost {
    /// `⟨β, x⟩`.
    Linear(Vector),
    /// `G (√(‖x − c‖² + ε²) − ε)`, which is `G`-Lipschitz and `(G/ε)`-smooth.
    SmoothDistance { center: Vector, lipschitz: f64, width: f64 },
}

impl Cost {
    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Cost::Linear(beta) => beta.dot(x),
            Cost::SmoothDistance {
                center,
                lipschitz,
                width,
            } => {
                let r2 = (x - center).norm_squared();
                lipschitz * ((r2 + width * width).sqrt() - width)
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Cost::Linear(beta) => beta.clone(),
            Cost::SmoothDistance {
                center,
                lipschitz,
                width,
            } => {
                let diff = x - center;
                let s = (diff.norm_squared() + width * width).sqrt();
                diff * (lipschitz / s)
            }
        }
    }

    pub fn smoothness(&self) -> f64 {
        match self {
            Cost::Linear(_) => 0.0,
            Cost::SmoothDistance { lipschitz, width, .. } => lipschitz / width,
        }
    }

    fn linear(&self) -> Option<&Vector> {
        match self {
            Cost::Linear(beta) => Some(beta),
            _ => None,
        }
    }
}

/// An oblivious environment: the costs at step `t` do not depend on play.
pub trait Adversary {
    fn dim(&self) -> usize;
    fn machines(&self) -> usize;
    /// Costs of every machine at step `t`.
    fn costs(&self, t: u64) -> Vec<Cost>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    /// `β` uniform in `B₂(G)`, independent across machines and steps.
    StochasticIid,
    /// `β = (G/√d)·s` with Rademacher `s`, the same on every machine.
    CoordinatedRademacher,
    /// `β^m = β̄ + Δ^m` with `β̄` uniform in `B₂(G − ζ̂/2)` and centred
    /// offsets of norm at most `ζ̂/2`, so machines differ by at most `ζ̂`.
    HeterogeneityControlled,
}

#[derive(Clone, Debug)]
enum LinearSource {
    Sampled {
        kind: AdversaryKind,
        zeta_hat: f64,
        seed: u64,
    },
    Scripted(Vec<Vec<Vector>>),
}

/// Linear losses `⟨β_t^m, x⟩` with `‖β_t^m‖ ≤ G`.
#[derive(Clone, Debug)]
pub struct LinearAdversary {
    dim: usize,
    machines: usize,
    radius: f64,
    source: LinearSource,
}

pub fn make_linear_adversary(
    kind: AdversaryKind,
    g: f64,
    d: usize,
    machines: usize,
    zeta_hat: f64,
    seed: u64,
) -> Result<LinearAdversary> {
    if d == 0 || machines == 0 {
        return Err(invalid("adversary needs d >= 1 and M >= 1"));
    }
    if !(g >= 0.0 && g.is_finite()) {
        return Err(invalid("gradient bound G must be finite and nonnegative"));
    }
    if !(0.0..=2.0 * g).contains(&zeta_hat) {
        return Err(invalid(format!("heterogeneity {zeta_hat} must lie in [0, 2G]")));
    }
    Ok(LinearAdversary {
        dim: d,
        machines,
        radius: g,
        source: LinearSource::Sampled { kind, zeta_hat, seed },
    })
}

impl LinearAdversary {
    /// A fixed loss sequence, indexed `[t][m]`. Steps past the end repeat
    /// the last entry.
    pub fn scripted(betas: Vec<Vec<Vector>>) -> Result<Self> {
        let first = betas
            .first()
            .ok_or_else(|| invalid("scripted adversary needs a step"))?;
        let machines = first.len();
        let dim = first.first().map(|b| b.len()).unwrap_or(0);
        if machines == 0 || dim == 0 {
            return Err(invalid("scripted adversary needs M >= 1 and d >= 1"));
        }
        for row in &betas {
            if row.len() != machines || row.iter().any(|b| b.len() != dim) {
                return Err(invalid("scripted losses must share M and d"));
            }
        }
        let radius = betas.iter().flatten().map(|b| b.norm()).fold(0.0, f64::max);
        Ok(Self {
            dim,
            machines,
            radius,
            source: LinearSource::Scripted(betas),
        })
    }

    /// The bound `G` on every loss vector.
    pub fn gradient_bound(&self) -> f64 {
        self.radius
    }

    pub fn loss_vectors(&self, t: u64) -> Vec<Vector> {
        let (kind, zeta_hat, seed) = match &self.source {
            LinearSource::Scripted(betas) => {
                let i = (t as usize).min(betas.len() - 1);
                return betas[i].clone();
            }
            LinearSource::Sampled { kind, zeta_hat, seed } => (*kind, *zeta_hat, *seed),
        };
        let (d, m, g) = (self.dim, self.machines, self.radius);
        let mut rng = stream(seed, &[tag::ADVERSARY, t]);
        match kind {
            AdversaryKind::StochasticIid => (0..m).map(|_| sample_ball(d, g, &mut rng)).collect(),
            AdversaryKind::CoordinatedRademacher => {
                let scale = g / (d as f64).sqrt();
                let beta = Vector::from_fn(d, |_, _| if rng.random::<bool>() { scale } else { -scale });
                vec![beta; m]
            }
            AdversaryKind::HeterogeneityControlled => {
                let shared = sample_ball(d, g - zeta_hat / 2.0, &mut rng);
                let raw: Vec<Vector> = (0..m).map(|_| sample_ball(d, 1.0, &mut rng)).collect();
                let centre = raw.iter().fold(Vector::zeros(d), |a, v| a + v) / m as f64;
                let offsets: Vec<Vector> = raw.iter().map(|v| v - &centre).collect();
                let largest = offsets.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let scale = if largest > 0.0 { zeta_hat / 2.0 / largest } else { 0.0 };
                offsets.into_iter().map(|o| &shared + o * scale).collect()
            }
        }
    }
}

impl Adversary for LinearAdversary {
    fn dim(&self) -> usize {
        self.dim
    }

    fn machines(&self) -> usize {
        self.machines
    }

    fn costs(&self, t: u64) -> Vec<Cost> {
        self.loss_vectors(t).into_iter().map(Cost::Linear).collect()
    }
}

/// Smooth distance losses whose centres jitter around per-machine anchors.
#[derive(Clone, Debug)]
pub struct DistanceAdversary {
    anchors: Vec<Vector>,
    jitter: f64,
    lipschitz: f64,
    width: f64,
    seed: u64,
}

impl DistanceAdversary {
    pub fn new(anchors: Vec<Vector>, jitter: f64, lipschitz: f64, width: f64, seed: u64) -> Result<Self> {
        let d = anchors.first().map(|a| a.len()).unwrap_or(0);
        if d == 0 || anchors.iter().any(|a| a.len() != d) {
            return Err(invalid("anchors must be non-empty and share a dimension"));
        }
        if !(lipschitz >= 0.0 && width > 0.0 && jitter >= 0.0) {
            return Err(invalid("distance losses need G >= 0, width > 0 and jitter >= 0"));
        }
        Ok(Self {
            anchors,
            jitter,
            lipschitz,
            width,
            seed,
        })
    }
}

impl Adversary for DistanceAdversary {
    fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    fn machines(&self) -> usize {
        self.anchors.len()
    }

    fn costs(&self, t: u64) -> Vec<Cost> {
        let mut rng = stream(self.seed, &[tag::ADVERSARY, t]);
        let d = self.dim();
        self.anchors
            .iter()
            .map(|a| Cost::SmoothDistance {
                center: a + sample_ball(d, self.jitter, &mut rng),
                lipschitz: self.lipschitz,
                width: self.width,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnlineConfig {
    pub step: f64,
    pub smoothing: f64,
    pub ball_radius: f64,
    pub schedule: ICSchedule,
}

impl OnlineConfig {
    pub fn new(step: f64, smoothing: f64, ball_radius: f64, schedule: ICSchedule) -> Result<Self> {
        let cfg = Self {
            step,
            smoothing,
            ball_radius,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(invalid("step size must be finite and nonnegative"));
        }
        if !(self.smoothing > 0.0 && self.ball_radius > 0.0) {
            return Err(invalid("smoothing and ball radius must be positive"));
        }
        Ok(())
    }
}

/// A zero gradient bound makes every loss constant, so any step works; the
/// tuned formulas then fall back to `G = 1` instead of an infinite step.
fn effective_bound(g: f64) -> f64 {
    if g > 0.0 {
        g
    } else {
        1.0
    }
}

/// `η = B/(G√T)` for first-order OGD.
pub fn tuned_nc_ogd(g: f64, b: f64, schedule: &ICSchedule) -> f64 {
    b / (effective_bound(g) * (schedule.horizon() as f64).sqrt())
}

/// `η` and `δ = B` tuned for one-point feedback on linear losses.
pub fn tuned_fed_posgd(g: f64, b: f64, d: usize, schedule: &ICSchedule, zeta_hat: f64) -> (f64, f64) {
    let g = effective_bound(g);
    let (m, k) = (schedule.machines as f64, schedule.local_steps as f64);
    let d = d as f64;
    let mut factor = 1.0_f64.min(m.sqrt() / (d * b));
    if schedule.local_steps > 1 {
        factor = factor.min(1.0 / ((d * b).sqrt() * k.powf(0.25)));
        if zeta_hat > 0.0 {
            factor = factor.min(g.sqrt() / (zeta_hat * k).sqrt());
        }
    }
    (b / (g * (schedule.horizon() as f64).sqrt()) * factor, b)
}

/// `η` and `δ` tuned for two-point feedback on Lipschitz losses.
pub fn tuned_fed_osgd(g: f64, b: f64, d: usize, schedule: &ICSchedule) -> (f64, f64) {
    let g = effective_bound(g);
    let (m, k, r) = (
        schedule.machines as f64,
        schedule.local_steps as f64,
        schedule.rounds as f64,
    );
    let d = d as f64;
    let mut factor = 1.0_f64.min(m.sqrt() / d.sqrt());
    if schedule.local_steps > 1 {
        factor = factor.min(1.0 / (k.sqrt() * d.powf(0.25)));
    }
    let eta = b / (g * (schedule.horizon() as f64).sqrt()) * factor;
    let delta = b * d.powf(0.25) / r.sqrt() * (1.0 + d.powf(0.25) / (m * k).sqrt());
    (eta, delta)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub t: u64,
    pub machine: usize,
    pub query_index: u8,
    #[serde(with = "crate::numerics::vector_serde")]
    pub point: Vector,
    pub loss: f64,
}

/// Everything an online run played and paid.
#[derive(Clone, Debug)]
pub struct RegretTrace {
    pub algorithm: &'static str,
    pub machines: usize,
    pub horizon: u64,
    /// 1 for first-order and one-point feedback, 2 for two-point feedback.
    pub queries_per_step: usize,
    /// In `(t, machine, query_index)` order.
    pub queries: Vec<QueryRecord>,
    /// `x_t^m` at index `t·M + m`.
    pub iterates: Vec<Vector>,
    /// `f_t^m` at index `t·M + m`.
    pub costs: Vec<Cost>,
    pub x_star: Vector,
    /// `(1/(qMT)) Σ_{t,m,j} f_t^m(w_t^{m,j}) − (1/(MT)) Σ_{t,m} f_t^m(x★)`.
    pub avg_regret: f64,
}

impl RegretTrace {
    fn new(algorithm: &'static str, machines: usize, horizon: u64, queries_per_step: usize, d: usize) -> Self {
        let cap = machines * horizon as usize;
        Self {
            algorithm,
            machines,
            horizon,
            queries_per_step,
            queries: Vec::with_capacity(cap * queries_per_step),
            iterates: Vec::with_capacity(cap),
            costs: Vec::with_capacity(cap),
            x_star: Vector::zeros(d),
            avg_regret: 0.0,
        }
    }

    fn record(&mut self, t: u64, machine: usize, query_index: u8, point: Vector, cost: &Cost) {
        let loss = cost.value(&point);
        self.queries.push(QueryRecord {
            t,
            machine,
            query_index,
            point,
            loss,
        });
    }

    fn finish(mut self, radius: f64) -> Result<Self> {
        let (x_star, regret) = hindsight_regret(&self, radius)?;
        self.x_star = x_star;
        self.avg_regret = regret;
        Ok(self)
    }

    pub fn mean_incurred(&self) -> f64 {
        self.queries.iter().map(|q| q.loss).sum::<f64>() / self.queries.len().max(1) as f64
    }
}

fn check_setup(adv: &impl Adversary, cfg: &OnlineConfig) -> Result<()> {
    cfg.validate()?;
    if adv.machines() != cfg.schedule.machines {
        return Err(Error::DimensionMismatch {
            expected: cfg.schedule.machines,
            found: adv.machines(),
        });
    }
    Ok(())
}

fn direction(seed: u64, t: u64, m: usize, d: usize) -> Vector {
    sample_unit_sphere(d, &mut stream(seed, &[tag::DIRECTION, t, m as u64]))
}

/// Applies one step of the local-update pattern: a plain local step, or the
/// server average of the local steps every `K`-th step.
fn local_or_average(xs: &mut [Vector], updates: Vec<Vector>, t: u64, k: u32) {
    if (t + 1).is_multiple_of(k as u64) {
        let mean = updates.iter().fold(Vector::zeros(xs[0].len()), |a, v| a + v) / updates.len() as f64;
        xs.iter_mut().for_each(|x| *x = mean.clone());
    } else {
        xs.iter_mut().zip(updates).for_each(|(x, u)| *x = u);
    }
}

/// Independent online gradient descent on every machine, never communicating.
pub fn run_nc_ogd(adv: &impl Adversary, cfg: &OnlineConfig, _seed: u64) -> Result<RegretTrace> {
    check_setup(adv, cfg)?;
    let (d, m, horizon) = (adv.dim(), cfg.schedule.machines, cfg.schedule.horizon());
    let mut trace = RegretTrace::new("nc-ogd", m, horizon, 1, d);
    let mut xs = vec![Vector::zeros(d); m];
    for t in 0..horizon {
        let costs = adv.costs(t);
        for (i, (x, cost)) in xs.iter_mut().zip(&costs).enumerate() {
            trace.iterates.push(x.clone());
            trace.record(t, i, 0, x.clone(), cost);
            *x -= cost.gradient(x) * cfg.step;
        }
        trace.costs.extend(costs);
    }
    trace.finish(cfg.ball_radius)
}

/// Local updates with one-point feedback queried around the projected iterate.
/// Updates and averaging happen in the unprojected space.
pub fn run_fed_posgd(adv: &impl Adversary, cfg: &OnlineConfig, seed: u64) -> Result<RegretTrace> {
    check_setup(adv, cfg)?;
    let (d, m, horizon) = (adv.dim(), cfg.schedule.machines, cfg.schedule.horizon());
    let (eta, delta) = (cfg.step, cfg.smoothing);
    let mut trace = RegretTrace::new("fed-posgd", m, horizon, 1, d);
    let mut xs = vec![Vector::zeros(d); m];
    for t in 0..horizon {
        let costs = adv.costs(t);
        let mut updates = Vec::with_capacity(m);
        for (i, (x, cost)) in xs.iter().zip(&costs).enumerate() {
            trace.iterates.push(x.clone());
            let w = project_ball(x, cfg.ball_radius);
            let u = direction(seed, t, i, d);
            let query = &w + &u * delta;
            let f = cost.value(&query);
            trace.record(t, i, 0, query, cost);
            updates.push(x - one_point_estimator(f, &u, delta, d) * eta);
        }
        local_or_average(&mut xs, updates, t, cfg.schedule.local_steps);
        trace.costs.extend(costs);
    }
    trace.finish(cfg.ball_radius)
}

/// Local SGD driven by the two-point estimator.
pub fn run_fed_osgd(adv: &impl Adversary, cfg: &OnlineConfig, seed: u64) -> Result<RegretTrace> {
    check_setup(adv, cfg)?;
    let (d, m, horizon) = (adv.dim(), cfg.schedule.machines, cfg.schedule.horizon());
    let (eta, delta) = (cfg.step, cfg.smoothing);
    let mut trace = RegretTrace::new("fed-osgd", m, horizon, 2, d);
    let mut xs = vec![Vector::zeros(d); m];
    for t in 0..horizon {
        let costs = adv.costs(t);
        let mut updates = Vec::with_capacity(m);
        for (i, (x, cost)) in xs.iter().zip(&costs).enumerate() {
            trace.iterates.push(x.clone());
            let u = direction(seed, t, i, d);
            let plus = x + &u * delta;
            let minus = x - &u * delta;
            let (fp, fm) = (cost.value(&plus), cost.value(&minus));
            trace.record(t, i, 0, plus, cost);
            trace.record(t, i, 1, minus, cost);
            updates.push(x - two_point_estimator(fp, fm, &u, delta, d) * eta);
        }
        local_or_average(&mut xs, updates, t, cfg.schedule.local_steps);
        trace.costs.extend(costs);
    }
    trace.finish(cfg.ball_radius)
}

const HINDSIGHT_TOL: f64 = 1e-8;
const HINDSIGHT_MAX_ITERS: usize = 200_000;

/// The best fixed point in `B₂(radius)` for the recorded costs, and the
/// average regret of the recorded queries against it.
///
/// Linear costs use the closed form `x★ = −B s/‖s‖`. Other costs are
/// minimized by projected gradient descent until the gradient mapping falls
/// below `1e-8`.
pub fn hindsight_regret(trace: &RegretTrace, radius: f64) -> Result<(Vector, f64)> {
    let d = trace.x_star.len();
    let n = trace.costs.len();
    if n == 0 {
        return Ok((Vector::zeros(d), trace.mean_incurred()));
    }
    let linear: Option<Vec<&Vector>> = trace.costs.iter().map(Cost::linear).collect();
    let (x_star, comparator) = match linear {
        Some(betas) => {
            let s = betas.iter().fold(Vector::zeros(d), |a, b| a + *b) / n as f64;
            let norm = s.norm();
            if norm == 0.0 {
                (Vector::zeros(d), 0.0)
            } else {
                (&s * (-radius / norm), -radius * norm)
            }
        }
        None => {
            let x = minimize_in_ball(&trace.costs, d, radius)?;
            let value = trace.costs.iter().map(|c| c.value(&x)).sum::<f64>() / n as f64;
            (x, value)
        }
    };
    Ok((x_star, trace.mean_incurred() - comparator))
}

fn minimize_in_ball(costs: &[Cost], d: usize, radius: f64) -> Result<Vector> {
    let n = costs.len() as f64;
    let smooth = costs.iter().map(Cost::smoothness).fold(0.0, f64::max).max(1e-12);
    let grad = |x: &Vector| costs.iter().fold(Vector::zeros(d), |a, c| a + c.gradient(x)) / n;
    let mut x = Vector::zeros(d);
    for _ in 0..HINDSIGHT_MAX_ITERS {
        let next = project_ball(&(&x - grad(&x) / smooth), radius);
        let mapping = (&x - &next).norm() * smooth;
        x = next;
        if mapping <= HINDSIGHT_TOL {
            return Ok(x);
        }
    }
    Err(invalid(
        "hindsight comparator did not reach the gradient-mapping tolerance",
    ))
}

/// Regret CSV with one row per query. `cum_regret` accumulates
/// `(loss − f_t^m(x★)) / q` so its last value divided by `MT` is the
/// average regret.
pub fn write_regret_csv<W: Write>(trace: &RegretTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,machine,query_index,loss,cum_regret")?;
    let q = trace.queries_per_step as f64;
    let mut cum = 0.0;
    for rec in &trace.queries {
        let cost = &trace.costs[rec.t as usize * trace.machines + rec.machine];
        cum += (rec.loss - cost.value(&trace.x_star)) / q;
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e}",
            rec.t, rec.machine, rec.query_index, rec.loss, cum
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::mean_se;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn cfg(eta: f64, delta: f64, b: f64, m: usize, k: u32, r: u32) -> OnlineConfig {
        OnlineConfig::new(eta, delta, b, ICSchedule::new(m, k, r).unwrap()).unwrap()
    }

    #[test]
    fn estimator_values() {
        assert_eq!(one_point_estimator(1.0, &v(&[1.0, 0.0]), 1.0, 2), v(&[2.0, 0.0]));
        assert_eq!(one_point_estimator(0.0, &v(&[0.6, 0.8]), 0.3, 2), v(&[0.0, 0.0]));
        let beta = v(&[1.0, 0.0]);
        let x = v(&[0.3, -2.0]);
        for (u, want) in [(v(&[1.0, 0.0]), v(&[2.0, 0.0])), (v(&[0.0, 1.0]), v(&[0.0, 0.0]))] {
            for delta in [0.1, 1.0, 7.0] {
                let (fp, fm) = (beta.dot(&(&x + &u * delta)), beta.dot(&(&x - &u * delta)));
                let g = two_point_estimator(fp, fm, &u, delta, 2);
                assert!((g - &want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn tuned_steps_stay_finite_without_gradients() {
        let sched = ICSchedule::new(2, 4, 16).unwrap();
        assert_eq!(tuned_nc_ogd(0.0, 2.0, &sched), tuned_nc_ogd(1.0, 2.0, &sched));
        assert!((tuned_nc_ogd(1.0, 2.0, &sched) - 0.25).abs() < 1e-15);
        assert_eq!(tuned_fed_osgd(0.0, 1.0, 3, &sched), tuned_fed_osgd(1.0, 1.0, 3, &sched));
        let (eta, delta) = tuned_fed_posgd(0.0, 1.0, 3, &sched, 0.0);
        assert!(eta.is_finite() && eta > 0.0 && delta == 1.0);
    }

    #[test]
    fn nc_ogd_hand_trace() {
        let adv = LinearAdversary::scripted(vec![vec![v(&[1.0])]; 2]).unwrap();
        let trace = run_nc_ogd(&adv, &cfg(1.0, 1.0, 1.0, 1, 1, 2), 0).unwrap();
        let played: Vec<f64> = trace.queries.iter().map(|q| q.point[0]).collect();
        assert_eq!(played, vec![0.0, -1.0]);
        assert_eq!(trace.x_star, v(&[-1.0]));
        assert!((trace.avg_regret - 0.5).abs() < 1e-15);
    }

    #[test]
    fn frozen_and_zero_runs() {
        let adv = LinearAdversary::scripted(vec![vec![v(&[1.0, 1.0]), v(&[0.0, 2.0])]]).unwrap();
        let trace = run_nc_ogd(&adv, &cfg(0.0, 1.0, 2.0, 2, 1, 5), 0).unwrap();
        assert!(trace.iterates.iter().all(|x| x.norm() == 0.0));
        // f̄ = ⟨(0.5, 1.5), x⟩, minimized on B₂(2) at value −2‖(0.5,1.5)‖.
        let expected = 2.0 * (0.25f64 + 2.25).sqrt();
        assert!((trace.avg_regret - expected).abs() < 1e-12);

        let zero = make_linear_adversary(AdversaryKind::StochasticIid, 0.0, 3, 2, 0.0, 1).unwrap();
        for trace in [
            run_nc_ogd(&zero, &cfg(0.3, 0.5, 1.0, 2, 3, 4), 9).unwrap(),
            run_fed_posgd(&zero, &cfg(0.3, 0.5, 1.0, 2, 3, 4), 9).unwrap(),
            run_fed_osgd(&zero, &cfg(0.3, 0.5, 1.0, 2, 3, 4), 9).unwrap(),
        ] {
            assert_eq!(trace.avg_regret, 0.0, "{}", trace.algorithm);
            assert!(trace.iterates.iter().all(|x| x.norm() == 0.0));
        }
    }

    #[test]
    fn fed_posgd_queries_sphere_around_origin_on_zero_losses() {
        let zero = make_linear_adversary(AdversaryKind::CoordinatedRademacher, 0.0, 4, 3, 0.0, 2).unwrap();
        let trace = run_fed_posgd(&zero, &cfg(0.5, 0.7, 1.0, 3, 2, 3), 4).unwrap();
        for q in &trace.queries {
            assert!((q.point.norm() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn fed_posgd_matches_hand_recursion() {
        let betas = vec![vec![v(&[2.0, -1.0])], vec![v(&[-0.5, 1.5])], vec![v(&[1.0, 1.0])]];
        let adv = LinearAdversary::scripted(betas.clone()).unwrap();
        let (eta, delta, b, seed) = (0.4, 0.5, 0.8, 11);
        let trace = run_fed_posgd(&adv, &cfg(eta, delta, b, 1, 1, 3), seed).unwrap();

        let mut x = v(&[0.0, 0.0]);
        for (t, row) in betas.iter().enumerate() {
            let n = x.norm();
            let w = if n > b { &x * (b / n) } else { x.clone() };
            let u = sample_unit_sphere(2, &mut stream(seed, &[tag::DIRECTION, t as u64, 0]));
            let q = &w + &u * delta;
            let f = row[0].dot(&q);
            assert!((trace.queries[t].point.clone() - &q).norm() < 1e-12);
            assert!((trace.queries[t].loss - f).abs() < 1e-12);
            assert!((trace.iterates[t].clone() - &x).norm() < 1e-12);
            x = &x - &u * (eta * 2.0 * f / delta);
        }
    }

    #[test]
    fn fed_osgd_first_step() {
        let adv = LinearAdversary::scripted(vec![vec![v(&[1.0, 0.0])]; 2]).unwrap();
        let trace = run_fed_osgd(&adv, &cfg(0.5, 1.0, 1.0, 1, 1, 2), 3).unwrap();
        let u = sample_unit_sphere(2, &mut stream(3, &[tag::DIRECTION, 0, 0]));
        // Pair loss f(δu) + f(−δu) vanishes for linear f at the origin.
        assert!((trace.queries[0].loss + trace.queries[1].loss).abs() < 1e-15);
        let x1 = -(&u * (2.0 * u[0])) * 0.5;
        assert!((trace.iterates[1].clone() - x1).norm() < 1e-12);
    }

    #[test]
    fn fed_osgd_dynamics_ignore_smoothing_on_linear_losses() {
        let adv = make_linear_adversary(AdversaryKind::StochasticIid, 1.0, 3, 2, 0.0, 5).unwrap();
        let a = run_fed_osgd(&adv, &cfg(0.1, 0.01, 1.0, 2, 3, 4), 8).unwrap();
        let b = run_fed_osgd(&adv, &cfg(0.1, 3.0, 1.0, 2, 3, 4), 8).unwrap();
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            assert!((x - y).norm() < 1e-9 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn averaging_synchronizes_machines() {
        let adv = make_linear_adversary(AdversaryKind::CoordinatedRademacher, 1.0, 3, 2, 0.0, 6).unwrap();
        let trace = run_fed_osgd(&adv, &cfg(0.2, 0.5, 1.0, 2, 1, 6), 1).unwrap();
        for t in 0..6 {
            assert_eq!(trace.iterates[2 * t], trace.iterates[2 * t + 1]);
        }
    }

    #[test]
    fn coordinated_adversary_makes_first_order_machines_identical() {
        let adv = make_linear_adversary(AdversaryKind::CoordinatedRademacher, 2.0, 4, 3, 0.0, 7).unwrap();
        let trace = run_nc_ogd(&adv, &cfg(0.1, 1.0, 1.0, 3, 5, 4), 0).unwrap();
        for t in 0..20 {
            let row = &trace.iterates[3 * t..3 * t + 3];
            assert!(row.iter().all(|x| x == &row[0]));
        }
    }

    #[test]
    fn adversary_kinds_respect_bounds() {
        let g = 1.5;
        let rad = make_linear_adversary(AdversaryKind::CoordinatedRademacher, g, 6, 3, 0.0, 1).unwrap();
        for t in 0..50 {
            let bs = rad.loss_vectors(t);
            assert!((bs[0].norm() - g).abs() < 1e-12);
            assert!(bs.iter().all(|b| b == &bs[0]));
        }
        let iid = make_linear_adversary(AdversaryKind::StochasticIid, g, 4, 5, 0.0, 2).unwrap();
        for t in 0..2000 {
            assert!(iid.loss_vectors(t).iter().all(|b| b.norm() <= g + 1e-12));
        }
        let flat = make_linear_adversary(AdversaryKind::HeterogeneityControlled, g, 4, 5, 0.0, 3).unwrap();
        for t in 0..100 {
            let bs = flat.loss_vectors(t);
            assert!(bs.iter().all(|b| b == &bs[0]));
        }
        assert!(make_linear_adversary(AdversaryKind::HeterogeneityControlled, g, 4, 5, 3.5, 3).is_err());
    }

    #[test]
    fn hindsight_examples() {
        let adv = LinearAdversary::scripted(vec![vec![v(&[1.0, 0.0])]; 2]).unwrap();
        let trace = run_nc_ogd(&adv, &cfg(0.0, 1.0, 1.0, 1, 1, 2), 0).unwrap();
        assert_eq!(trace.x_star, v(&[-1.0, 0.0]));
        // Incurred 0, comparator −1.
        assert!((trace.avg_regret - 1.0).abs() < 1e-15);

        let adv = LinearAdversary::scripted(vec![vec![v(&[1.0, 0.0])], vec![v(&[-1.0, 0.0])]]).unwrap();
        let trace = run_nc_ogd(&adv, &cfg(1.0, 1.0, 1.0, 1, 1, 2), 0).unwrap();
        // s = 0: comparator 0, regret equals the incurred average (0 then 1).
        assert!((trace.avg_regret - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonlinear_hindsight_is_certified() {
        let anchors = vec![v(&[0.3, 0.1]), v(&[0.5, -0.2]), v(&[2.0, 2.0])];
        let adv = DistanceAdversary::new(anchors, 0.1, 1.0, 0.5, 4).unwrap();
        let trace = run_fed_osgd(&adv, &cfg(0.05, 0.1, 1.0, 3, 2, 10), 2).unwrap();
        let x = &trace.x_star;
        assert!(x.norm() <= 1.0 + 1e-12);
        let f = |p: &Vector| trace.costs.iter().map(|c| c.value(p)).sum::<f64>();
        let mut rng = stream(0, &[]);
        for _ in 0..200 {
            let p = project_ball(&(x + sample_ball(2, 0.3, &mut rng)), 1.0);
            assert!(f(&p) >= f(x) - 1e-9);
        }
    }

    #[test]
    fn regret_csv_ends_at_average_regret() {
        let adv = make_linear_adversary(AdversaryKind::HeterogeneityControlled, 1.0, 3, 2, 0.5, 5).unwrap();
        let trace = run_fed_osgd(&adv, &cfg(0.1, 0.5, 1.0, 2, 2, 5), 1).unwrap();
        let mut buf = Vec::new();
        write_regret_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,machine,query_index,loss,cum_regret");
        assert_eq!(lines.len(), 1 + 2 * 2 * 10);
        let last: f64 = lines.last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert!((last / 20.0 - trace.avg_regret).abs() < 1e-12);
    }

    #[test]
    fn tuned_parameters() {
        let s = ICSchedule::new(4, 1, 100).unwrap();
        let (eta, delta) = tuned_fed_posgd(1.0, 2.0, 5, &s, 0.3);
        assert_eq!(delta, 2.0);
        assert!((eta - 2.0 / 10.0 * (2.0 / 10.0)).abs() < 1e-15);
        let (eta, delta) = tuned_fed_osgd(1.0, 1.0, 4, &s);
        assert!((eta - 0.1).abs() < 1e-15);
        let r4 = 4f64.powf(0.25);
        assert!((delta - r4 / 10.0 * (1.0 + r4 / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn one_point_estimator_is_unbiased_on_linear_losses() {
        let d = 5;
        let beta = v(&[0.5, -1.0, 0.2, 0.0, 0.7]);
        let w = v(&[0.1, 0.3, -0.4, 0.2, 0.0]);
        let delta = 0.8;
        let mut rng = stream(21, &[]);
        let n = 100_000;
        let draws: Vec<Vector> = (0..n)
            .map(|_| {
                let u = sample_unit_sphere(d, &mut rng);
                one_point_estimator(beta.dot(&(&w + &u * delta)), &u, delta, d)
            })
            .collect();
        for i in 0..d {
            let s = mean_se(&draws.iter().map(|g| g[i]).collect::<Vec<_>>());
            assert!((s.mean - beta[i]).abs() <= 4.0 * s.se, "coord {i}: {s:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fed_posgd_queries_stay_in_double_ball(seed in any::<u64>(), k in 1u32..4) {
            let adv = make_linear_adversary(AdversaryKind::StochasticIid, 1.0, 3, 2, 0.0, seed).unwrap();
            let b = 0.7;
            let trace = run_fed_posgd(&adv, &cfg(0.5, b, b, 2, k, 6), seed).unwrap();
            for q in &trace.queries {
                prop_assert!(q.point.norm() <= 2.0 * b + 1e-12);
            }
        }

        #[test]
        fn controlled_adversary_bounds(seed in any::<u64>(), zeta in 0.0f64..2.0, m in 1usize..6) {
            let g = 1.0;
            let adv = make_linear_adversary(AdversaryKind::HeterogeneityControlled, g, 4, m, zeta, seed).unwrap();
            for t in 0..20 {
                let bs = adv.loss_vectors(t);
                let mean = bs.iter().fold(Vector::zeros(4), |a, b| a + b) / m as f64;
                for b in &bs {
                    prop_assert!(b.norm() <= g + 1e-12);
                    prop_assert!((b - &mean).norm() <= zeta / 2.0 + 1e-12);
                }
            }
        }
    }
}
