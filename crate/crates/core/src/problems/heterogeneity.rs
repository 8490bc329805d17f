use serde::Serialize;

use super::Instance;
use crate::numerics::{eigen_extremes, SymMatrix, Vector, KERNEL_TOL};

/// First- and second-order heterogeneity constants of an instance.
///
/// Optimum discrepancies are infima over the machines' solution sets, so for
/// singular Hessians the kernel directions do not count towards them. The
/// first-order fields are `None` when some machine has no minimizer (or, for
/// the `phi` fields, when the average objective has no unique one).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeterogeneityReport {
    pub machines: usize,
    pub zeta_star_pairs: Option<Vec<Vec<f64>>>,
    /// Mean of the pairwise discrepancies over all ordered pairs.
    pub zeta_star: Option<f64>,
    pub zeta_star_max: Option<f64>,
    /// `((1/M²) Σ ζ★_{m,n}⁴)^{1/4}`.
    pub zeta_star_fourth: Option<f64>,
    /// `ζ★_m = (1/M) Σ_n ζ★_{m,n}`.
    pub zeta_star_per_machine: Option<Vec<f64>>,
    pub phi_star_per_machine: Option<Vec<f64>>,
    /// Root mean square of the per-machine values.
    pub phi_star: Option<f64>,
    /// `((1/M) Σ φ★_m⁴)^{1/4}`.
    pub phi_star_fourth: Option<f64>,
    pub tau: f64,
    pub smoothness_h: f64,
    pub strong_convexity_mu: f64,
    /// `H/μ`; `None` when `μ = 0`.
    pub kappa: Option<f64>,
    pub b_bar: Option<f64>,
    pub b: Option<f64>,
    pub third_order_q: f64,
}

/// Orthogonal projector onto the span of the columns of `P₁ + P₂`.
fn span_projector(p1: &SymMatrix, p2: &SymMatrix) -> SymMatrix {
    let sum = p1.add(p2);
    let eig = sum.eigen();
    let d = sum.dim();
    let mut out = SymMatrix::zeros(d);
    for (i, &l) in eig.values.iter().enumerate() {
        if l > 1e-8 {
            out = out.add(&SymMatrix::outer(&eig.vector(i), 1.0));
        }
    }
    out
}

fn fourth_mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    (values.map(|v| v.powi(4)).sum::<f64>() / count as f64).powf(0.25)
}

pub fn heterogeneity_report(inst: &Instance) -> HeterogeneityReport {
    let qs = inst.quadratics();
    let m = qs.len();
    let extremes: Vec<(f64, f64)> = qs.iter().map(|q| eigen_extremes(q.hessian())).collect();
    let smoothness_h = extremes.iter().fold(0.0_f64, |a, e| a.max(e.1.abs()).max(e.0.abs()));
    let mut strong_convexity_mu = extremes.iter().fold(f64::INFINITY, |a, e| a.min(e.0));
    if strong_convexity_mu <= KERNEL_TOL * smoothness_h {
        strong_convexity_mu = 0.0;
    }
    let mut tau = 0.0_f64;
    for i in 0..m {
        for j in (i + 1)..m {
            tau = tau.max(qs[i].hessian().sub(qs[j].hessian()).operator_norm());
        }
    }
    let kappa = (strong_convexity_mu > 0.0).then(|| smoothness_h / strong_convexity_mu);

    let optima: Option<Vec<Vector>> = qs.iter().map(|q| q.optimum().cloned()).collect();
    let kernels: Vec<SymMatrix> = qs.iter().map(|q| q.hessian().kernel_projector()).collect();
    let global = inst.global_optimum().ok();

    let mut report = HeterogeneityReport {
        machines: m,
        zeta_star_pairs: None,
        zeta_star: None,
        zeta_star_max: None,
        zeta_star_fourth: None,
        zeta_star_per_machine: None,
        phi_star_per_machine: None,
        phi_star: None,
        phi_star_fourth: None,
        tau,
        smoothness_h,
        strong_convexity_mu,
        kappa,
        b_bar: None,
        b: global.as_ref().map(|x| x.norm()),
        third_order_q: 0.0,
    };
    let Some(optima) = optima else {
        return report;
    };

    let mut pairs = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let span = span_projector(&kernels[i], &kernels[j]);
            let diff = &optima[i] - &optima[j];
            let z = (&diff - span.apply(&diff)).norm();
            pairs[i][j] = z;
            pairs[j][i] = z;
        }
    }
    let flat = || pairs.iter().flatten().copied();
    report.zeta_star = Some(flat().sum::<f64>() / (m * m) as f64);
    report.zeta_star_max = Some(flat().fold(0.0, f64::max));
    report.zeta_star_fourth = Some(fourth_mean(flat(), m * m));
    report.zeta_star_per_machine = Some(pairs.iter().map(|row| row.iter().sum::<f64>() / m as f64).collect());
    report.b_bar = Some(optima.iter().map(|x| x.norm()).sum::<f64>() / m as f64);
    report.zeta_star_pairs = Some(pairs);

    if let Some(x_star) = global {
        let phis: Vec<f64> = optima
            .iter()
            .zip(&kernels)
            .map(|(x, p)| {
                let diff = x - &x_star;
                (&diff - p.apply(&diff)).norm()
            })
            .collect();
        report.phi_star = Some((phis.iter().map(|p| p * p).sum::<f64>() / m as f64).sqrt());
        report.phi_star_fourth = Some(fourth_mean(phis.iter().copied(), m));
        report.phi_star_per_machine = Some(phis);
    }
    report
}
