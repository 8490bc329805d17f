//! Small dense symmetric linear algebra.
//!
//! Every matrix in this crate is symmetric and tiny (a few hundred rows at
//! most), so a single dense symmetric eigendecomposition backs all of the
//! spectral queries: extreme eigenvalues, kernels, images and min-norm solves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Relative eigenvalue cut below which a direction counts as kernel.
pub const KERNEL_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const ORTHONORMAL_TOL: f64 = 1e-10;

/// A real symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry (relative to the largest entry) and finiteness,
    /// then stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    /// `v vᵀ` scaled by `weight`.
    pub fn outer(v: &Vector, weight: f64) -> Self {
        Self::symmetrized(v * v.transpose() * weight)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.0 * x
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self(&self.0 * s)
    }

    /// Product of two symmetric matrices that are known to commute
    /// (powers and polynomials of one matrix). Re-symmetrizes the result.
    fn commuting_product(&self, other: &SymMatrix) -> SymMatrix {
        Self::symmetrized(&self.0 * &other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Average of a non-empty list of matrices of equal dimension.
    pub fn mean<'a>(mats: impl IntoIterator<Item = &'a SymMatrix>) -> Option<SymMatrix> {
        let mut acc: Option<DMatrix<f64>> = None;
        let mut n = 0usize;
        for m in mats {
            acc = Some(match acc {
                None => m.0.clone(),
                Some(a) => a + &m.0,
            });
            n += 1;
        }
        acc.map(|a| Self(a / n as f64))
    }

    pub fn eigen(&self) -> SymEigen {
        SymEigen::of(self)
    }

    pub fn is_psd(&self) -> bool {
        let (lo, hi) = eigen_extremes(self);
        lo >= -KERNEL_TOL * hi.abs().max(1.0)
    }

    /// Spectral norm, `max(|λmin|, |λmax|)`.
    pub fn operator_norm(&self) -> f64 {
        let (lo, hi) = eigen_extremes(self);
        lo.abs().max(hi.abs())
    }

    /// Orthogonal projector onto the kernel (eigenvalues at or below
    /// `KERNEL_TOL·λmax`).
    pub fn kernel_projector(&self) -> SymMatrix {
        let e = self.eigen();
        let cut = e.kernel_cut();
        let d = self.dim();
        let mut p = DMatrix::zeros(d, d);
        for (i, &lambda) in e.values.iter().enumerate() {
            if lambda <= cut {
                let v = e.vectors.column(i);
                p += v * v.transpose();
            }
        }
        Self::symmetrized(p)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigendecomposition with eigenvalues sorted ascending and matching
/// eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    fn of(a: &SymMatrix) -> Self {
        let d = a.dim();
        if d == 0 {
            return Self {
                values: Vec::new(),
                vectors: DMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(a.0.clone());
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn kernel_cut(&self) -> f64 {
        KERNEL_TOL * self.max_abs()
    }

    pub fn vector(&self, i: usize) -> Vector {
        self.vectors.column(i).into_owned()
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `Σᵢ λᵢ vᵢvᵢᵀ` for an orthonormal basis and nonnegative spectrum.
pub fn psd_from_spectrum(eigenvalues: &[f64], basis: &[Vector]) -> Result<SymMatrix> {
    let d = eigenvalues.len();
    check_dim(d, basis.len())?;
    if let Some(&neg) = eigenvalues.iter().find(|&&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::NegativeEigenvalue(neg));
    }
    let mut worst = 0.0_f64;
    for (i, vi) in basis.iter().enumerate() {
        check_dim(d, vi.len())?;
        for (j, vj) in basis.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((vi.dot(vj) - target).abs());
        }
    }
    if worst > ORTHONORMAL_TOL {
        return Err(Error::NonOrthonormalBasis(worst));
    }
    let mut acc = DMatrix::zeros(d, d);
    for (lambda, v) in eigenvalues.iter().zip(basis) {
        acc += v * v.transpose() * *lambda;
    }
    Ok(SymMatrix::symmetrized(acc))
}

/// `(I − ηA)^K` by repeated squaring.
pub fn contraction_power(a: &SymMatrix, eta: f64, k: u32) -> SymMatrix {
    let d = a.dim();
    let base = SymMatrix::identity(d).sub(&a.scale(eta));
    let mut result = SymMatrix::identity(d);
    let mut square = base;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = result.commuting_product(&square);
        }
        e >>= 1;
        if e > 0 {
            square = square.commuting_product(&square);
        }
    }
    result
}

/// Solves `Cx = b` for symmetric positive definite `C`.
pub fn solve_spd(c: &SymMatrix, b: &Vector) -> Result<Vector> {
    check_dim(c.dim(), b.len())?;
    let (lo, hi) = eigen_extremes(c);
    if !(hi > 0.0) || lo <= KERNEL_TOL * hi {
        return Err(Error::NotPositiveDefinite);
    }
    let chol = c.0.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let mut x = chol.solve(b);
    // One step of iterative refinement.
    let residual = b - &c.0 * &x;
    x += chol.solve(&residual);
    Ok(x)
}

/// Outcome of a minimum-norm solve against a PSD matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum MinNormSolution {
    Solution(Vector),
    /// The right-hand side has a kernel component; carries that component.
    NotInImage(Vector),
}

/// Minimum-norm solution of `Cx = c` for PSD `C`, or the kernel component
/// of `c` when `c` is not in the image of `C`.
pub fn min_norm_solve(c_mat: &SymMatrix, c: &Vector) -> Result<MinNormSolution> {
    check_dim(c_mat.dim(), c.len())?;
    let e = c_mat.eigen();
    let cut = e.kernel_cut();
    let d = c.len();
    let mut x = Vector::zeros(d);
    let mut kernel_part = Vector::zeros(d);
    for (i, &lambda) in e.values.iter().enumerate() {
        let v = e.vectors.column(i);
        let coeff = v.dot(c);
        if lambda > cut {
            x += v * (coeff / lambda);
        } else {
            kernel_part += v * coeff;
        }
    }
    if kernel_part.norm() <= 1e-9 * c.norm() {
        Ok(MinNormSolution::Solution(x))
    } else {
        Ok(MinNormSolution::NotInImage(kernel_part))
    }
}

/// `(λmin, λmax)`.
pub fn eigen_extremes(a: &SymMatrix) -> (f64, f64) {
    let e = a.eigen();
    match (e.values.first(), e.values.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (0.0, 0.0),
    }
}

/// Serde adapter storing a [`Vector`] as a flat array.
pub mod vector_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
