//! Structured and random instance generators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::sampling::{sample_spherical_cap, sample_unit_sphere};
use super::{Instance, QuadraticMachine, RegressionMachine};
use crate::error::{invalid, Result};
use crate::numerics::{psd_from_spectrum, SymMatrix, Vector};

fn check_dim(x: &Vector, d: usize, what: &str) -> Result<()> {
    if x.len() != d {
        return Err(invalid(format!("{what} must have dimension {d}, got {}", x.len())));
    }
    Ok(())
}

fn check_positive(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("{what} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Two machines with Hessians `diag(H,0)` and `diag(0,H)` sharing the
/// optimum `x★`.
pub fn make_shared_optimum_pair(h: f64, x_star: &Vector) -> Result<Instance> {
    check_positive(h, "H")?;
    check_dim(x_star, 2, "x★")?;
    let a1 = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&[h, 0.0]), x_star.clone(), 0.0)?;
    let a2 = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&[0.0, h]), x_star.clone(), 0.0)?;
    Instance::from_quadratics(vec![a1, a2])
}

/// Hessians `diag(τ,0,H)` and `diag(0,τ,H)`: `H`-smooth with second-order
/// heterogeneity exactly `τ`.
pub fn make_tau_decoupled_pair(h: f64, tau: f64, x_star: &Vector) -> Result<Instance> {
    check_positive(h, "H")?;
    if !(0.0..=h).contains(&tau) {
        return Err(invalid(format!("tau must lie in [0, H] = [0, {h}], got {tau}")));
    }
    check_dim(x_star, 3, "x★")?;
    let a1 = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&[tau, 0.0, h]), x_star.clone(), 0.0)?;
    let a2 = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&[0.0, tau, h]), x_star.clone(), 0.0)?;
    Instance::from_quadratics(vec![a1, a2])
}

/// Rank-one pair `A₁ = H e₁e₁ᵀ`, `A₂ = H vvᵀ` with `v = (α, √(1−α²))`.
pub fn make_rotated_pair(h: f64, alpha: f64, x_star: &Vector) -> Result<Instance> {
    check_positive(h, "H")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_dim(x_star, 2, "x★")?;
    let v = Vector::from_column_slice(&[alpha, (1.0 - alpha * alpha).sqrt()]);
    let a1 = QuadraticMachine::from_optimum(SymMatrix::from_diagonal(&[h, 0.0]), x_star.clone(), 0.0)?;
    let a2 = QuadraticMachine::from_optimum(SymMatrix::outer(&v, h), x_star.clone(), 0.0)?;
    Instance::from_quadratics(vec![a1, a2])
}

/// Single two-dimensional quadratic with eigenvalues `{H, H/(12R)}` on the
/// standard basis and optimum `−B(e₁+e₂)/√2`.
pub fn make_condition_number_instance(h: f64, rounds: u32, b: f64) -> Result<Instance> {
    check_positive(h, "H")?;
    check_positive(b, "B")?;
    if rounds == 0 {
        return Err(invalid("R must be at least 1"));
    }
    let kappa = 12.0 * rounds as f64;
    let hessian = SymMatrix::from_diagonal(&[h, h / kappa]);
    let c = -b / std::f64::consts::SQRT_2;
    let x_star = Vector::from_column_slice(&[c, c]);
    Instance::from_quadratics(vec![QuadraticMachine::from_optimum(hessian, x_star, 0.0)?])
}

/// `M` machines on `d = M` coordinates. Coordinates `(2p, 2p+1)` are shared
/// by machines `2p` and `2p+1`, which own the blocks
/// `f(x,y) = 2(x+B̄)² + (x+y+B̄)²` and `g(x,y) = (x−B̄)² + (x+y−B̄)²`.
/// Each machine's minimum-norm optimum has norm `B̄`, while the average
/// objective is minimized at `(−B̄/3, B̄/3, …)`.
pub fn make_offset_highdim_instance(m: usize, b_bar: f64) -> Result<Instance> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(invalid(format!("M must be a positive even integer, got {m}")));
    }
    check_positive(b_bar, "B̄")?;
    let d = m;
    let blocks = [([6.0, 2.0, 2.0], -b_bar), ([4.0, 2.0, 2.0], b_bar)];
    let mut machines = Vec::with_capacity(m);
    for idx in 0..m {
        let base = 2 * (idx / 2);
        let ([a, c, e], x0) = blocks[idx % 2];
        let mut h = DMatrix::zeros(d, d);
        h[(base, base)] = a;
        h[(base, base + 1)] = c;
        h[(base + 1, base)] = c;
        h[(base + 1, base + 1)] = e;
        let mut opt = Vector::zeros(d);
        opt[base] = x0;
        machines.push(QuadraticMachine::from_optimum(SymMatrix::new(h)?, opt, 0.0)?);
    }
    Instance::from_quadratics(machines)
}

/// A Haar-distributed orthonormal basis of `R^d`.
pub fn random_orthonormal_basis<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vector> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    (0..d)
        .map(|j| {
            let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            q.column(j).into_owned() * s
        })
        .collect()
}

/// A PSD matrix with a random eigenbasis and eigenvalues drawn uniformly
/// from `[lo, hi]`; the extremes `lo` and `hi` are always attained when
/// `d ≥ 2`.
pub fn random_spectrum_matrix<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Result<SymMatrix> {
    if !(0.0 <= lo && lo <= hi) {
        return Err(invalid(format!("need 0 <= lo <= hi, got [{lo}, {hi}]")));
    }
    let mut spectrum: Vec<f64> = (0..d).map(|_| rng.random_range(lo..=hi)).collect();
    if d >= 2 {
        spectrum[0] = lo;
        spectrum[1] = hi;
    } else if d == 1 {
        spectrum[0] = hi;
    }
    psd_from_spectrum(&spectrum, &random_orthonormal_basis(d, rng))
}

/// Random strongly convex quadratic instance: each Hessian has spectrum in
/// `[mu, h]` and each optimum is Gaussian with scale `spread`.
pub fn make_random_quadratic_instance<R: Rng + ?Sized>(
    d: usize,
    m: usize,
    mu: f64,
    h: f64,
    spread: f64,
    rng: &mut R,
) -> Result<Instance> {
    check_positive(mu, "mu")?;
    if d == 0 || m == 0 {
        return Err(invalid("dimension and machine count must be positive"));
    }
    let machines = (0..m)
        .map(|_| {
            let a = random_spectrum_matrix(d, mu, h, rng)?;
            let x = Vector::from_fn(d, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                spread * z
            });
            QuadraticMachine::from_optimum(a, x, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::from_quadratics(machines)
}

/// Machines sharing the Hessian `A` with the given optima.
pub fn make_equal_hessian_instance(a: &SymMatrix, optima: &[Vector], noise_second: f64) -> Result<Instance> {
    let machines = optima
        .iter()
        .map(|x| QuadraticMachine::from_optimum(a.clone(), x.clone(), noise_second))
        .collect::<Result<Vec<_>>>()?;
    Instance::from_quadratics(machines)
}

/// Parameters of the Gaussian-covariate regression cohort.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CohortParams {
    pub machines: usize,
    pub dim: usize,
    pub r_star: f64,
    pub zeta_star: f64,
    pub mu0: f64,
    pub tau_knob: f64,
    pub label_noise: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            machines: 20,
            dim: 5,
            r_star: 1.0,
            zeta_star: 0.0,
            mu0: 5.0,
            tau_knob: 0.0,
            label_noise: 0.1,
        }
    }
}

impl CohortParams {
    fn validate(&self) -> Result<()> {
        if self.machines == 0 || self.dim == 0 {
            return Err(invalid("cohort needs positive M and d"));
        }
        check_positive(self.r_star, "R★")?;
        check_positive(self.mu0, "μ₀")?;
        if !(0.0..=2.0 * self.r_star).contains(&self.zeta_star) {
            return Err(invalid(format!(
                "zeta_star must lie in [0, 2R★], got {}",
                self.zeta_star
            )));
        }
        if !(0.0..=2.0 * self.mu0).contains(&self.tau_knob) {
            return Err(invalid(format!("tau must lie in [0, 2μ₀], got {}", self.tau_knob)));
        }
        if !(self.label_noise >= 0.0) {
            return Err(invalid("label noise must be nonnegative"));
        }
        Ok(())
    }

    /// Cap half-angle for the ground-truth directions.
    pub fn optima_half_angle(&self) -> f64 {
        (self.zeta_star / (2.0 * self.r_star)).asin()
    }

    /// Cap half-angle for the covariate-mean directions.
    pub fn means_half_angle(&self) -> f64 {
        (self.tau_knob / (2.0 * self.mu0)).asin()
    }
}

/// Ground truths `x_m★ = R★ v_m` with `v_m` uniform in the cap around
/// `center`; pairwise distances never exceed `ζ★`.
pub fn sample_cohort_optima<R: Rng + ?Sized>(
    params: &CohortParams,
    center: &Vector,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    params.validate()?;
    let phi = params.optima_half_angle();
    (0..params.machines)
        .map(|_| Ok(sample_spherical_cap(center, phi, rng)? * params.r_star))
        .collect()
}

/// Covariate means `μ_m = μ₀ u_m` with `u_m` uniform in the cap around
/// `center`; pairwise distances never exceed the τ knob.
pub fn sample_cohort_means<R: Rng + ?Sized>(
    params: &CohortParams,
    center: &Vector,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    params.validate()?;
    let phi = params.means_half_angle();
    (0..params.machines)
        .map(|_| Ok(sample_spherical_cap(center, phi, rng)? * params.mu0))
        .collect()
}

pub fn cohort_from_parts(optima: &[Vector], means: &[Vector], label_noise: f64) -> Result<Instance> {
    if optima.len() != means.len() {
        return Err(crate::error::Error::DimensionMismatch {
            expected: optima.len(),
            found: means.len(),
        });
    }
    let machines = optima
        .iter()
        .zip(means)
        .map(|(x, mu)| RegressionMachine::new(mu.clone(), x.clone(), label_noise))
        .collect::<Result<Vec<_>>>()?;
    Instance::from_regressions(machines)
}

/// Full cohort draw: a shared center direction, ground truths, and means.
pub fn make_regression_cohort<R: Rng + ?Sized>(params: &CohortParams, rng: &mut R) -> Result<Instance> {
    params.validate()?;
    let center = sample_unit_sphere(params.dim, rng);
    let optima = sample_cohort_optima(params, &center, rng)?;
    let means = sample_cohort_means(params, &center, rng)?;
    cohort_from_parts(&optima, &means, params.label_noise)
}
