//! Fixed points of noiseless Local SGD on quadratics.
//!
//! With `C_m = I − (I − ηA_m)^K` and `C = (1/M) Σ C_m`, each round maps
//! `x ↦ x − β(Cx − c)` where `c = (1/M) Σ C_m x_m★`, so the iterates settle
//! at the solution of `Cx = c` regardless of `β`.

use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::numerics::{
    contraction_power, eigen_extremes, min_norm_solve, solve_spd, MinNormSolution, SymMatrix, Vector, KERNEL_TOL,
};
use crate::problems::{heterogeneity_report, Instance, QuadraticMachine};

#[derive(Clone, Debug, PartialEq)]
pub enum FixedPointStatus {
    Converged,
    /// `Cx = c̃` has no solution; carries `lim_R C x̄_R`, the image part of
    /// `c̃`.
    Divergent {
        limit: Vector,
    },
    /// `c̃ = 0`: iterates never leave the origin.
    StationaryAtOrigin,
}

#[derive(Clone, Debug)]
pub struct FixedPointResult {
    pub eta: f64,
    pub local_steps: u32,
    pub per_machine_c: Vec<SymMatrix>,
    pub aggregate_c: SymMatrix,
    pub fixed_point: Option<Vector>,
    pub status: FixedPointStatus,
    pub global_optimum: Option<Vector>,
    /// `‖x★ − x∞‖`.
    pub discrepancy: Option<f64>,
    pub norm_bound: Option<f64>,
    pub discrepancy_bound: Option<f64>,
}

fn vec_json(v: &Vector) -> Value {
    json!(v.as_slice())
}

impl FixedPointResult {
    pub fn to_json(&self) -> Value {
        let (status, limit) = match &self.status {
            FixedPointStatus::Converged => ("converged", None),
            FixedPointStatus::Divergent { limit } => ("divergent", Some(vec_json(limit))),
            FixedPointStatus::StationaryAtOrigin => ("stationary-at-origin", None),
        };
        json!({
            "eta": self.eta,
            "K": self.local_steps,
            "status": status,
            "divergent_limit": limit,
            "fixed_point": self.fixed_point.as_ref().map(vec_json),
            "global_optimum": self.global_optimum.as_ref().map(vec_json),
            "discrepancy": self.discrepancy,
            "norm_bound": self.norm_bound,
            "discrepancy_bound": self.discrepancy_bound,
            "aggregate_c": self.aggregate_c,
        })
    }
}

fn check_step(inst: &Instance, eta: f64, k: u32) -> Result<f64> {
    let h = inst.smoothness();
    if !(eta > 0.0) || eta * h >= 1.0 {
        return Err(invalid(format!("need 0 < eta < 1/H = {}, got {eta}", 1.0 / h)));
    }
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    Ok(h)
}

/// `(C_m, C)`.
pub fn contraction_matrices(qs: &[QuadraticMachine], eta: f64, k: u32) -> (Vec<SymMatrix>, SymMatrix) {
    let d = qs[0].dim();
    let per: Vec<SymMatrix> = qs
        .iter()
        .map(|q| SymMatrix::identity(d).sub(&contraction_power(q.hessian(), eta, k)))
        .collect();
    let agg = SymMatrix::mean(&per).expect("non-empty");
    (per, agg)
}

/// `x∞ = C⁻¹ (1/M) Σ C_m x_m★` for strongly convex instances, with the
/// measured-constant bounds on `‖x∞‖` and `‖x★ − x∞‖`.
pub fn compute_fixed_point(inst: &Instance, eta: f64, k: u32) -> Result<FixedPointResult> {
    check_step(inst, eta, k)?;
    let report = heterogeneity_report(inst);
    let mu = report.strong_convexity_mu;
    if mu <= 0.0 {
        return Err(Error::NotStronglyConvex(mu));
    }
    let qs = inst.quadratics();
    let (per, agg) = contraction_matrices(&qs, eta, k);
    let mut rhs = Vector::zeros(inst.dim());
    for (c, q) in per.iter().zip(&qs) {
        rhs += c.apply(q.optimum().ok_or(Error::NotStronglyConvex(mu))?);
    }
    rhs /= qs.len() as f64;
    let x_inf = solve_spd(&agg, &rhs)?;
    let x_star = inst.global_optimum()?;
    let (h, tau) = (report.smoothness_h, report.tau);
    let zeta = report.zeta_star.unwrap_or(0.0);
    let b_bar = report.b_bar.unwrap_or(0.0);
    Ok(FixedPointResult {
        eta,
        local_steps: k,
        per_machine_c: per,
        aggregate_c: agg,
        discrepancy: Some((&x_star - &x_inf).norm()),
        fixed_point: Some(x_inf),
        status: FixedPointStatus::Converged,
        global_optimum: Some(x_star),
        norm_bound: Some(fixed_point_norm_bound(mu, h, tau, zeta, b_bar, eta, k)),
        discrepancy_bound: Some(discrepancy_bound(mu, h, tau, zeta, eta, k)),
    })
}

/// `min{ητKκζ★ + B̄, κB̄}` with `κ = H/μ`.
pub fn fixed_point_norm_bound(mu: f64, h: f64, tau: f64, zeta_star: f64, b_bar: f64, eta: f64, k: u32) -> f64 {
    let kappa = h / mu;
    (eta * tau * k as f64 * kappa * zeta_star + b_bar).min(kappa * b_bar)
}

/// Bound on `‖x★ − x∞‖`:
/// `(ζ★τ/μ)·min{[(1−ηH)^K − 1 + ηHK + ημK(1 − (1−ηH)^{K−1})]/[1 − (1−ημ)^K],
///              1 + ημK(1−ημ)^{K−1}/[1 − (1−ημ)^K]}`.
pub fn discrepancy_bound(mu: f64, h: f64, tau: f64, zeta_star: f64, eta: f64, k: u32) -> f64 {
    if tau == 0.0 || zeta_star == 0.0 || k == 1 {
        return 0.0;
    }
    let kf = k as f64;
    let (x, y) = (eta * h, eta * mu);
    // Cancellation-free forms, using 1 − (1−x)^n = x Σ_{i<n} (1−x)^i:
    //   (1−x)^K − 1 + Kx = x² Σ_{i≤K−2} (K−1−i)(1−x)^i.
    let denom = y * geometric_sum(1.0 - y, k);
    let head: f64 = (0..k - 1)
        .map(|i| (kf - 1.0 - i as f64) * (1.0 - x).powi(i as i32))
        .sum();
    let first = (x * x * head + y * kf * x * geometric_sum(1.0 - x, k - 1)) / denom;
    let second = 1.0 + y * kf * (1.0 - y).powi(k as i32 - 1) / denom;
    zeta_star * tau / mu * first.min(second)
}

/// `Σ_{i<n} q^i`.
fn geometric_sum(q: f64, n: u32) -> f64 {
    let mut acc = 0.0;
    let mut p = 1.0;
    for _ in 0..n {
        acc += p;
        p *= q;
    }
    acc
}

/// `c̃_m = −η Σ_{j<K} (I − ηA_m)^j b_m`, equal to `C_m x_m★` whenever a
/// minimizer exists.
fn affine_drift(q: &QuadraticMachine, eta: f64, k: u32) -> Vector {
    let mut term = q.affine().clone();
    let mut acc = Vector::zeros(term.len());
    for _ in 0..k {
        acc += &term;
        term = &term - q.hessian().apply(&term) * eta;
    }
    acc * -eta
}

/// Fixed point for possibly singular or minimizer-free quadratics, started
/// from the origin: the minimum-norm solution of `Cx = c̃` when one exists.
pub fn convex_fixed_point(inst: &Instance, eta: f64, k: u32) -> Result<FixedPointResult> {
    check_step(inst, eta, k)?;
    let qs = inst.quadratics();
    let (per, agg) = contraction_matrices(&qs, eta, k);
    let mut c = Vector::zeros(inst.dim());
    for q in &qs {
        c += affine_drift(q, eta, k);
    }
    c /= qs.len() as f64;
    let global = inst.global_optimum().ok();

    let (status, fixed_point) = if c.iter().all(|&v| v == 0.0) {
        (FixedPointStatus::StationaryAtOrigin, Some(Vector::zeros(inst.dim())))
    } else {
        match min_norm_solve(&agg, &c)? {
            MinNormSolution::Solution(x) => (FixedPointStatus::Converged, Some(x)),
            MinNormSolution::NotInImage(kernel_part) => (
                FixedPointStatus::Divergent {
                    limit: &c - kernel_part,
                },
                None,
            ),
        }
    };
    let discrepancy = match (&global, &fixed_point) {
        (Some(xs), Some(x)) => Some((xs - x).norm()),
        _ => None,
    };
    Ok(FixedPointResult {
        eta,
        local_steps: k,
        per_machine_c: per,
        aggregate_c: agg,
        fixed_point,
        status,
        global_optimum: global,
        discrepancy,
        norm_bound: None,
        discrepancy_bound: None,
    })
}

/// `∩_m ker A_m = {0}`, i.e. the average Hessian is positive definite.
pub fn kernel_intersection_trivial(inst: &Instance) -> bool {
    let (lo, hi) = eigen_extremes(inst.average_hessian());
    hi > 0.0 && lo > KERNEL_TOL * hi
}

#[derive(Clone, Debug)]
pub struct GeometryRow {
    pub local_steps: u32,
    pub fixed_point: Vector,
    pub discrepancy: f64,
    /// Per machine: ascending eigenvalues of `C_m / tr(C_m)`.
    pub weight_profiles: Vec<Vec<f64>>,
}

impl GeometryRow {
    pub fn to_json(&self) -> Value {
        json!({
            "K": self.local_steps,
            "fixed_point": vec_json(&self.fixed_point),
            "discrepancy": self.discrepancy,
            "weight_profiles": self.weight_profiles,
        })
    }
}

/// `x∞(K)` and the normalized geometry of each `C_m` for every `K`.
pub fn geometry_comparison(inst: &Instance, eta: f64, ks: &[u32]) -> Result<Vec<GeometryRow>> {
    ks.iter()
        .map(|&k| {
            let res = compute_fixed_point(inst, eta, k)?;
            let weight_profiles = res
                .per_machine_c
                .iter()
                .map(|c| {
                    let tr = c.trace();
                    c.eigen().values.into_iter().map(|l| l / tr).collect()
                })
                .collect();
            Ok(GeometryRow {
                local_steps: k,
                fixed_point: res.fixed_point.expect("strongly convex"),
                discrepancy: res.discrepancy.expect("strongly convex"),
                weight_profiles,
            })
        })
        .collect()
}
