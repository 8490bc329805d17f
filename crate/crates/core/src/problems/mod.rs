//! Client objectives, their stochastic oracles, and problem instances.
//!
//! Two client kinds are supported. A [`QuadraticMachine`] is
//! `F_m(x) = ½xᵀA_m x + b_mᵀx` with additive isotropic Gaussian gradient
//! noise. A [`RegressionMachine`] is least squares with Gaussian covariates
//! `β ~ N(μ_m, I)` and labels `y = ⟨β, x_m★⟩ + ε`, whose population objective
//! is the quadratic `½(x − x_m★)ᵀ(μ_mμ_mᵀ + I)(x − x_m★) + ½σ²`.

mod generators;
mod heterogeneity;
pub mod sampling;

pub use generators::*;
pub use heterogeneity::{heterogeneity_report, HeterogeneityReport};
pub use sampling::{sample_spherical_cap, sample_unit_sphere};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{min_norm_solve, solve_spd, MinNormSolution, SymMatrix, Vector, KERNEL_TOL};

/// Fourth-moment constant of isotropic Gaussian noise with `E‖ξ‖² = σ₂²`:
/// `E‖ξ‖⁴ = σ₂⁴(1 + 2/d)`.
pub fn gaussian_noise_fourth(sigma2: f64, dim: usize) -> f64 {
    sigma2 * (1.0 + 2.0 / dim as f64).powf(0.25)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticMachine {
    hessian: SymMatrix,
    affine: Vector,
    optimum: Option<Vector>,
    noise_second: f64,
    noise_fourth: f64,
}

impl QuadraticMachine {
    /// `½(x − x★)ᵀA(x − x★)`. For singular `A` the given point is kept as
    /// the representative of the solution set `x★ + ker A`.
    pub fn from_optimum(hessian: SymMatrix, optimum: Vector, noise_second: f64) -> Result<Self> {
        check_len(hessian.dim(), optimum.len())?;
        if optimum.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let affine = -hessian.apply(&optimum);
        let mut q = Self::from_affine(hessian, affine, noise_second)?;
        q.optimum = Some(optimum);
        Ok(q)
    }

    /// Replaces the stored minimizer by another point of the solution set.
    fn set_optimum(&mut self, x: Vector) -> Result<()> {
        check_len(self.dim(), x.len())?;
        let residual = self.gradient(&x).norm();
        if residual > 1e-9 * (1.0 + self.affine.norm()) {
            return Err(invalid(format!(
                "stored optimum is not stationary (residual {residual:e})"
            )));
        }
        self.optimum = Some(x);
        Ok(())
    }

    /// `½xᵀAx + bᵀx`. The optimum is present iff `−b ∈ image(A)`.
    pub fn from_affine(hessian: SymMatrix, affine: Vector, noise_second: f64) -> Result<Self> {
        check_len(hessian.dim(), affine.len())?;
        if affine.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(noise_second >= 0.0) {
            return Err(invalid("noise level must be nonnegative"));
        }
        if !hessian.is_psd() {
            let (lo, _) = crate::numerics::eigen_extremes(&hessian);
            return Err(Error::NotPsd(lo));
        }
        let optimum = if affine.norm() == 0.0 {
            Some(Vector::zeros(affine.len()))
        } else {
            match min_norm_solve(&hessian, &-&affine)? {
                MinNormSolution::Solution(x) => Some(x),
                MinNormSolution::NotInImage(_) => None,
            }
        };
        let noise_fourth = gaussian_noise_fourth(noise_second, hessian.dim());
        Ok(Self {
            hessian,
            affine,
            optimum,
            noise_second,
            noise_fourth,
        })
    }

    pub fn dim(&self) -> usize {
        self.hessian.dim()
    }

    pub fn hessian(&self) -> &SymMatrix {
        &self.hessian
    }

    pub fn affine(&self) -> &Vector {
        &self.affine
    }

    pub fn optimum(&self) -> Option<&Vector> {
        self.optimum.as_ref()
    }

    pub fn noise_second(&self) -> f64 {
        self.noise_second
    }

    pub fn noise_fourth(&self) -> f64 {
        self.noise_fourth
    }

    pub fn with_noise(mut self, noise_second: f64) -> Self {
        self.noise_second = noise_second;
        self.noise_fourth = gaussian_noise_fourth(noise_second, self.dim());
        self
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * self.hessian.quad_form(x) + self.affine.dot(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        self.hessian.apply(x) + &self.affine
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vector> {
        if self.noise_second == 0.0 {
            return None;
        }
        let scale = self.noise_second / (self.dim() as f64).sqrt();
        Some(Vector::from_fn(self.dim(), |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMachine {
    mean: Vector,
    truth: Vector,
    label_noise: f64,
}

impl RegressionMachine {
    pub fn new(mean: Vector, truth: Vector, label_noise: f64) -> Result<Self> {
        check_len(mean.len(), truth.len())?;
        if !(label_noise >= 0.0) {
            return Err(invalid("label noise must be nonnegative"));
        }
        if mean.iter().chain(truth.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            mean,
            truth,
            label_noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn truth(&self) -> &Vector {
        &self.truth
    }

    pub fn label_noise(&self) -> f64 {
        self.label_noise
    }

    /// `μμᵀ + I`.
    pub fn hessian(&self) -> SymMatrix {
        SymMatrix::outer(&self.mean, 1.0).add(&SymMatrix::identity(self.dim()))
    }

    /// Population objective, including the `½σ²` label-noise floor.
    pub fn value(&self, x: &Vector) -> f64 {
        let diff = x - &self.truth;
        0.5 * self.hessian().quad_form(&diff) + 0.5 * self.label_noise * self.label_noise
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let diff = x - &self.truth;
        &diff + &self.mean * self.mean.dot(&diff)
    }

    /// Exact population quadratic (noise-free oracle).
    pub fn population(&self) -> QuadraticMachine {
        QuadraticMachine::from_optimum(self.hessian(), self.truth.clone(), 0.0).expect("μμᵀ + I is positive definite")
    }

    fn sample_datum<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector, f64) {
        let beta = Vector::from_fn(self.dim(), |i, _| {
            let z: f64 = StandardNormal.sample(rng);
            self.mean[i] + z
        });
        let eps = if self.label_noise > 0.0 {
            Normal::new(0.0, self.label_noise).expect("finite noise").sample(rng)
        } else {
            0.0
        };
        (beta, eps)
    }

    fn datum_gradient(&self, beta: &Vector, eps: f64, x: &Vector) -> Vector {
        beta * (beta.dot(x) - beta.dot(&self.truth) - eps)
    }
}

/// One client of a distributed problem.
#[derive(Clone, Debug, PartialEq)]
pub enum Machine {
    Quadratic(QuadraticMachine),
    Regression(RegressionMachine),
}

impl Machine {
    pub fn dim(&self) -> usize {
        match self {
            Machine::Quadratic(q) => q.dim(),
            Machine::Regression(r) => r.dim(),
        }
    }

    pub fn kind(&self) -> MachineKind {
        match self {
            Machine::Quadratic(_) => MachineKind::Quadratic,
            Machine::Regression(_) => MachineKind::Regression,
        }
    }

    pub fn hessian(&self) -> SymMatrix {
        match self {
            Machine::Quadratic(q) => q.hessian().clone(),
            Machine::Regression(r) => r.hessian(),
        }
    }

    pub fn optimum(&self) -> Option<Vector> {
        match self {
            Machine::Quadratic(q) => q.optimum().cloned(),
            Machine::Regression(r) => Some(r.truth().clone()),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Machine::Quadratic(q) => q.value(x),
            Machine::Regression(r) => r.value(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Machine::Quadratic(q) => q.gradient(x),
            Machine::Regression(r) => r.gradient(x),
        }
    }

    /// Population quadratic form of this client.
    pub fn population(&self) -> QuadraticMachine {
        match self {
            Machine::Quadratic(q) => q.clone(),
            Machine::Regression(r) => r.population(),
        }
    }

    /// One call to the stochastic first-order oracle.
    pub fn stochastic_gradient<R: Rng + ?Sized>(&self, x: &Vector, rng: &mut R) -> Vector {
        match self {
            Machine::Quadratic(q) => {
                let g = q.gradient(x);
                match q.noise(rng) {
                    Some(xi) => g + xi,
                    None => g,
                }
            }
            Machine::Regression(r) => {
                let (beta, eps) = r.sample_datum(rng);
                r.datum_gradient(&beta, eps, x)
            }
        }
    }

    /// Gradients at every point for one shared datum.
    pub fn multi_point_gradient<R: Rng + ?Sized>(&self, points: &[&Vector], rng: &mut R) -> Vec<Vector> {
        match self {
            Machine::Quadratic(q) => {
                let xi = q.noise(rng);
                points
                    .iter()
                    .map(|x| match &xi {
                        Some(xi) => q.gradient(x) + xi,
                        None => q.gradient(x),
                    })
                    .collect()
            }
            Machine::Regression(r) => {
                let (beta, eps) = r.sample_datum(rng);
                points.iter().map(|x| r.datum_gradient(&beta, eps, x)).collect()
            }
        }
    }

    /// Average of `batch` shared-datum multi-point gradients.
    pub fn minibatch_multi_point_gradient<R: Rng + ?Sized>(
        &self,
        points: &[&Vector],
        batch: usize,
        rng: &mut R,
    ) -> Vec<Vector> {
        let mut acc: Vec<Vector> = points.iter().map(|x| Vector::zeros(x.len())).collect();
        for _ in 0..batch {
            for (a, g) in acc.iter_mut().zip(self.multi_point_gradient(points, rng)) {
                *a += g;
            }
        }
        let scale = 1.0 / batch.max(1) as f64;
        acc.into_iter().map(|a| a * scale).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineKind {
    Quadratic,
    Regression,
}

/// A distributed problem: minimize the average of the client objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    machines: Vec<Machine>,
    dim: usize,
    kind: MachineKind,
    average_hessian: SymMatrix,
}

impl Instance {
    pub fn new(machines: Vec<Machine>) -> Result<Self> {
        let first = machines
            .first()
            .ok_or_else(|| invalid("an instance needs at least one machine"))?;
        let dim = first.dim();
        let kind = first.kind();
        for m in &machines {
            check_len(dim, m.dim())?;
            if m.kind() != kind {
                return Err(invalid("all machines of an instance must share a kind"));
            }
        }
        let hessians: Vec<SymMatrix> = machines.iter().map(Machine::hessian).collect();
        let average_hessian = SymMatrix::mean(&hessians).expect("non-empty");
        Ok(Self {
            machines,
            dim,
            kind,
            average_hessian,
        })
    }

    pub fn from_quadratics(machines: Vec<QuadraticMachine>) -> Result<Self> {
        Self::new(machines.into_iter().map(Machine::Quadratic).collect())
    }

    /// The same instance with every quadratic machine's gradient noise set
    /// to `noise_second`; regression machines are unchanged.
    pub fn with_noise(&self, noise_second: f64) -> Self {
        let machines = self
            .machines
            .iter()
            .map(|m| match m {
                Machine::Quadratic(q) => Machine::Quadratic(q.clone().with_noise(noise_second)),
                other => other.clone(),
            })
            .collect();
        Self {
            machines,
            ..self.clone()
        }
    }

    pub fn from_regressions(machines: Vec<RegressionMachine>) -> Result<Self> {
        Self::new(machines.into_iter().map(Machine::Regression).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn kind(&self) -> MachineKind {
        self.kind
    }

    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    pub fn machine(&self, m: usize) -> &Machine {
        &self.machines[m]
    }

    pub fn average_hessian(&self) -> &SymMatrix {
        &self.average_hessian
    }

    /// Population quadratics of every machine.
    pub fn quadratics(&self) -> Vec<QuadraticMachine> {
        self.machines.iter().map(Machine::population).collect()
    }

    /// `F(x) = (1/M) Σ F_m(x)`.
    pub fn objective(&self, x: &Vector) -> f64 {
        self.machines.iter().map(|m| m.value(x)).sum::<f64>() / self.num_machines() as f64
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim);
        for m in &self.machines {
            g += m.gradient(x);
        }
        g / self.num_machines() as f64
    }

    /// Mean of the machine optima `(1/M) Σ x_m★`, when all exist.
    pub fn mean_of_optima(&self) -> Option<Vector> {
        let mut acc = Vector::zeros(self.dim);
        for m in &self.machines {
            acc += m.optimum()?;
        }
        Some(acc / self.num_machines() as f64)
    }

    /// Unique minimizer `x★ = A⁻¹ (1/M) Σ (−b_m)` of the average objective.
    pub fn global_optimum(&self) -> Result<Vector> {
        let (lo, hi) = crate::numerics::eigen_extremes(&self.average_hessian);
        if !(hi > 0.0) || lo <= KERNEL_TOL * hi {
            return Err(Error::NoUniqueOptimum);
        }
        let mut rhs = Vector::zeros(self.dim);
        for q in self.quadratics() {
            rhs -= q.affine();
        }
        rhs /= self.num_machines() as f64;
        solve_spd(&self.average_hessian, &rhs).map_err(|_| Error::NoUniqueOptimum)
    }

    /// Largest `λmax(A_m)` over the machines.
    pub fn smoothness(&self) -> f64 {
        self.machines
            .iter()
            .map(|m| crate::numerics::eigen_extremes(&m.hessian()).1)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

// JSON document layout: {kind, d, M, machines: [...]}, matrices row-major.

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    kind: MachineKind,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    machines: Vec<MachineDoc>,
}

#[derive(Serialize, Deserialize)]
struct NoiseDoc {
    second: f64,
    fourth: f64,
}

#[derive(Serialize, Deserialize)]
struct MachineDoc {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    hessian: Option<SymMatrix>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    mean: Option<Vec<f64>>,
    #[serde(default)]
    optimum: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    affine: Option<Vec<f64>>,
    noise: NoiseDoc,
}

fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        let machines = inst
            .machines
            .iter()
            .map(|m| match m {
                Machine::Quadratic(q) => MachineDoc {
                    hessian: Some(q.hessian.clone()),
                    mean: None,
                    optimum: q.optimum.as_ref().map(to_vec),
                    affine: Some(to_vec(&q.affine)),
                    noise: NoiseDoc {
                        second: q.noise_second,
                        fourth: q.noise_fourth,
                    },
                },
                Machine::Regression(r) => MachineDoc {
                    hessian: None,
                    mean: Some(to_vec(&r.mean)),
                    optimum: Some(to_vec(&r.truth)),
                    affine: None,
                    noise: NoiseDoc {
                        second: r.label_noise,
                        fourth: r.label_noise,
                    },
                },
            })
            .collect();
        Self {
            kind: inst.kind,
            d: inst.dim,
            m: inst.num_machines(),
            machines,
        }
    }
}

impl TryFrom<InstanceDoc> for Instance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.machines.len() != doc.m {
            return Err(Error::DimensionMismatch {
                expected: doc.m,
                found: doc.machines.len(),
            });
        }
        let mut machines = Vec::with_capacity(doc.m);
        for md in doc.machines {
            let machine = match doc.kind {
                MachineKind::Quadratic => {
                    let hessian = md.hessian.ok_or_else(|| invalid("quadratic machine needs a hessian"))?;
                    check_len(doc.d, hessian.dim())?;
                    let mut q = match (md.affine, md.optimum) {
                        (Some(b), x) => {
                            let mut q = QuadraticMachine::from_affine(hessian, Vector::from_vec(b), md.noise.second)?;
                            if let Some(x) = x {
                                q.set_optimum(Vector::from_vec(x))?;
                            }
                            q
                        }
                        (None, Some(x)) => {
                            QuadraticMachine::from_optimum(hessian, Vector::from_vec(x), md.noise.second)?
                        }
                        (None, None) => return Err(invalid("quadratic machine needs affine or optimum")),
                    };
                    if md.noise.fourth < md.noise.second {
                        return Err(invalid("fourth-moment noise must dominate the second"));
                    }
                    q.noise_fourth = md.noise.fourth;
                    Machine::Quadratic(q)
                }
                MachineKind::Regression => {
                    let mean = md.mean.ok_or_else(|| invalid("regression machine needs a mean"))?;
                    let truth = md
                        .optimum
                        .ok_or_else(|| invalid("regression machine needs an optimum"))?;
                    check_len(doc.d, mean.len())?;
                    Machine::Regression(RegressionMachine::new(
                        Vector::from_vec(mean),
                        Vector::from_vec(truth),
                        md.noise.second,
                    )?)
                }
            };
            machines.push(machine);
        }
        Instance::new(machines)
    }
}
