//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here works on square matrices of modest dimension (tens at
//! most), stored row-major. The eigensolver is a cyclic Jacobi iteration
//! specialised to Hermitian matrices, which is plenty accurate and fast at
//! these sizes and keeps the crate dependency-free on the numerics side.

use crate::error::{Error, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    /// Zero matrix of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be >= 1");
        Self { dim, data: vec![ZERO; dim * dim] }
    }

    /// Identity matrix of the given dimension.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Build a matrix entry by entry from a closure `(row, col) -> value`.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Diagonal matrix from real entries.
    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = C64::new(e, 0.0);
        }
        m
    }

    /// Rank-one matrix |u><v|.
    pub fn outer(u: &[C64], v: &[C64]) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::Dimension(format!(
                "outer product of vectors with lengths {} and {}",
                u.len(),
                v.len()
            )));
        }
        Ok(Self::from_fn(u.len(), |r, c| u[r] * v[c].conj()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw entries in row-major order.
    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    fn check_same_dim(&self, other: &Self, what: &str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "{} of {}x{} and {}x{} matrices",
                what, self.dim, self.dim, other.dim, other.dim
            )));
        }
        Ok(())
    }

    /// Sum of two matrices.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other, "sum")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { dim: self.dim, data })
    }

    /// Difference of two matrices.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other, "difference")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { dim: self.dim, data })
    }

    /// Matrix scaled by a complex factor.
    pub fn scaled(&self, factor: C64) -> Self {
        let data = self.data.iter().map(|a| a * factor).collect();
        Self { dim: self.dim, data }
    }

    /// In-place `self += factor * other`.
    pub fn add_assign_scaled(&mut self, other: &Self, factor: C64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// In-place multiplication of every entry by a real factor.
    pub fn scale_mut(&mut self, factor: f64) {
        for a in self.data.iter_mut() {
            *a *= factor;
        }
    }

    /// Set every entry to zero.
    pub fn set_zero(&mut self) {
        self.data.fill(ZERO);
    }

    /// Copy the entries of `other` into `self`.
    pub fn copy_from(&mut self, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        self.data.copy_from_slice(&other.data);
    }

    /// Matrix product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other, "product")?;
        let mut out = Self::zeros(self.dim);
        out.mul_into(self, other);
        Ok(out)
    }

    /// `self = a * b`, reusing the existing allocation.
    pub fn mul_into(&mut self, a: &Self, b: &Self) {
        let d = a.dim;
        debug_assert_eq!(d, b.dim);
        debug_assert_eq!(d, self.dim);
        for r in 0..d {
            for c in 0..d {
                let mut acc = ZERO;
                for k in 0..d {
                    acc += a.data[r * d + k] * b.data[k * d + c];
                }
                self.data[r * d + c] = acc;
            }
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    /// Trace.
    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "applying {0}x{0} matrix to length-{1} vector",
                self.dim,
                v.len()
            )));
        }
        let d = self.dim;
        Ok((0..d)
            .map(|r| (0..d).map(|k| self.data[r * d + k] * v[k]).sum())
            .collect())
    }

    /// Commutator [a, b] = ab - ba.
    pub fn commutator(a: &Self, b: &Self) -> Result<Self> {
        a.mul(b)?.sub(&b.mul(a)?)
    }

    /// Largest absolute entry.
    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Replace `self` with its Hermitian part (self + self^dagger)/2.
    pub fn hermitize(&mut self) {
        let d = self.dim;
        for r in 0..d {
            let z = self.data[r * d + r];
            self.data[r * d + r] = C64::new(z.re, 0.0);
            for c in (r + 1)..d {
                let avg = 0.5 * (self.data[r * d + c] + self.data[c * d + r].conj());
                self.data[r * d + c] = avg;
                self.data[c * d + r] = avg.conj();
            }
        }
    }

    /// Largest deviation |A - A^dagger| over entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        let d = self.dim;
        let mut dev: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    /// True when the matrix equals its conjugate transpose within `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    /// True when Hermitian within `tol` and all eigenvalues are >= -tol.
    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        if !self.is_hermitian(tol) {
            return false;
        }
        match hermitian_eigensystem(self) {
            Ok((eigenvalues, _)) => eigenvalues.iter().all(|&e| e >= -tol),
            Err(_) => false,
        }
    }

    /// True when any entry is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

/// Normalized complex state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    data: Vec<C64>,
}

impl StateVector {
    /// Normalize the given amplitudes into a unit vector.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Domain("state vector must have dimension >= 1".into()));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::Domain(format!(
                "cannot normalize state vector with norm {norm:e}"
            )));
        }
        let data = amplitudes.into_iter().map(|z| z / norm).collect();
        Ok(Self { data })
    }

    /// Basis vector e_index in the given dimension.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Domain(format!(
                "basis index {index} out of range for dimension {dim}"
            )));
        }
        let mut data = vec![ZERO; dim];
        data[index] = ONE;
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.data
    }

    /// Inner product <self|other>.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "inner product of states with dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum())
    }

    /// Projector |self><self|.
    pub fn projector(&self) -> ComplexMatrix {
        ComplexMatrix::outer(&self.data, &self.data).expect("equal lengths")
    }
}

/// Density operator: Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    mat: ComplexMatrix,
}

impl DensityOperator {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const EIGENVALUE_FLOOR: f64 = -1e-8;

    /// Validate a matrix as a density operator.
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        let dev = mat.hermiticity_deviation();
        if dev > Self::HERMITICITY_TOL {
            return Err(Error::NotHermitian { tol: Self::HERMITICITY_TOL, deviation: dev });
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(Error::Domain(format!(
                "density operator trace {tr} differs from 1 beyond {:e}",
                Self::TRACE_TOL
            )));
        }
        let (eigenvalues, _) = hermitian_eigensystem(&mat)?;
        if let Some(&min) = eigenvalues.last() {
            if min < Self::EIGENVALUE_FLOOR {
                return Err(Error::Domain(format!(
                    "density operator has eigenvalue {min:e} below {:e}",
                    Self::EIGENVALUE_FLOOR
                )));
            }
        }
        Ok(Self { mat })
    }

    /// Wrap a matrix that is maintained as a valid state by construction.
    pub(crate) fn from_matrix_unchecked(mat: ComplexMatrix) -> Self {
        Self { mat }
    }

    /// Pure state |psi><psi|.
    pub fn pure(psi: &StateVector) -> Self {
        Self { mat: psi.projector() }
    }

    /// Maximally mixed state 1/d.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { mat: ComplexMatrix::identity(dim).scaled(C64::new(1.0 / dim as f64, 0.0)) }
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    /// Mutable access for integrators that re-establish the state invariants
    /// (Hermitization and trace renormalization) after every write.
    pub(crate) fn matrix_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    /// Expectation value tr(rho * op).
    pub fn expectation(&self, op: &ComplexMatrix) -> Result<C64> {
        self.mat.check_same_dim(op, "expectation value")?;
        let d = self.dim();
        let mut acc = ZERO;
        for r in 0..d {
            for k in 0..d {
                acc += self.mat[(r, k)] * op[(k, r)];
            }
        }
        Ok(acc)
    }

    /// Purity tr(rho^2).
    pub fn purity(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for r in 0..d {
            for k in 0..d {
                acc += (self.mat[(r, k)] * self.mat[(k, r)]).re;
            }
        }
        acc
    }
}

/// Overlap <psi| rho |psi>, clamped to [0, 1].
pub fn fidelity(rho: &DensityOperator, psi: &StateVector) -> Result<f64> {
    if rho.dim() != psi.dim() {
        return Err(Error::Dimension(format!(
            "fidelity of dim-{} state against dim-{} operator",
            psi.dim(),
            rho.dim()
        )));
    }
    let w = rho.matrix().apply(psi.amplitudes())?;
    let f: C64 = psi.amplitudes().iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
    Ok(f.re.clamp(0.0, 1.0))
}

/// Variance <O^dagger O> - |<O>|^2 in the state psi; nonnegative for any O.
pub fn variance(op: &ComplexMatrix, psi: &StateVector) -> Result<f64> {
    if op.dim() != psi.dim() {
        return Err(Error::Dimension(format!(
            "variance of {0}x{0} operator in dim-{1} state",
            op.dim(),
            psi.dim()
        )));
    }
    let w = op.apply(psi.amplitudes())?;
    let norm_sqr: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    let mean: C64 = psi.amplitudes().iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
    Ok((norm_sqr - mean.norm_sqr()).max(0.0))
}

/// Tolerance for accepting a matrix as Hermitian in the eigensolver.
const EIGEN_HERMITICITY_TOL: f64 = 1e-10;

/// Eigenvalues (descending) and orthonormal eigenvectors of a Hermitian matrix.
///
/// Cyclic Jacobi iteration: each sweep visits every off-diagonal pair (p, q)
/// and applies the unitary plane rotation that zeroes that entry. The
/// off-diagonal mass is strictly decreasing, so a handful of sweeps suffices
/// at these dimensions.
pub fn hermitian_eigensystem(op: &ComplexMatrix) -> Result<(Vec<f64>, Vec<StateVector>)> {
    let scale = op.max_abs_entry().max(1.0);
    let dev = op.hermiticity_deviation();
    if dev > EIGEN_HERMITICITY_TOL * scale {
        return Err(Error::NotHermitian { tol: EIGEN_HERMITICITY_TOL * scale, deviation: dev });
    }
    let d = op.dim();
    let mut a = op.clone();
    a.hermitize();
    let mut v = ComplexMatrix::identity(d);

    let off_norm = |m: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                s += m[(p, q)].norm_sqr();
            }
        }
        (2.0 * s).sqrt()
    };

    let tol = 1e-14 * a.frobenius_norm().max(1e-300);
    const MAX_SWEEPS: usize = 60;
    let mut converged = d == 1;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= tol / (d as f64) {
                    continue;
                }
                let phi = apq.arg();
                let tau = (a[(p, p)].re - a[(q, q)].re) / (2.0 * mag);
                let t = if tau == 0.0 {
                    1.0
                } else {
                    tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sc = C64::from_polar(s, -phi);

                // A <- U^dagger A U with U mixing coordinates p and q:
                // column p of U is (c, sc), column q is (-conj(sc), c).
                for i in 0..d {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip + sc * aiq;
                    a[(i, q)] = -sc.conj() * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = c * apj + sc.conj() * aqj;
                    a[(q, j)] = -sc * apj + c * aqj;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

                for i in 0..d {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip + sc * viq;
                    v[(i, q)] = -sc.conj() * vip + c * viq;
                }
            }
        }
    }
    if !converged && off_norm(&a) > tol {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (off-diagonal {:e})",
            off_norm(&a)
        )));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.partial_cmp(&a[(i, i)].re).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let eigenvectors: Vec<StateVector> = order
        .iter()
        .map(|&col| StateVector::new((0..d).map(|r| v[(r, col)]).collect()))
        .collect::<Result<_>>()?;
    Ok((eigenvalues, eigenvectors))
}

/// Largest |eigenvalue| of a Hermitian matrix (its operator norm).
pub fn hermitian_operator_norm(op: &ComplexMatrix) -> Result<f64> {
    let (eigenvalues, _) = hermitian_eigensystem(op)?;
    Ok(eigenvalues
        .iter()
        .map(|e| e.abs())
        .fold(0.0, f64::max))
}

/// Matrix exponential exp(-i * t * h) of a Hermitian generator, via its eigensystem.
pub fn hermitian_propagator(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    let (eigenvalues, eigenvectors) = hermitian_eigensystem(h)?;
    let d = h.dim();
    let mut out = ComplexMatrix::zeros(d);
    for (lambda, vec) in eigenvalues.iter().zip(&eigenvectors) {
        let phase = C64::from_polar(1.0, -lambda * t);
        let amps = vec.amplitudes();
        for r in 0..d {
            for c in 0..d {
                out[(r, c)] += phase * amps[r] * amps[c].conj();
            }
        }
    }
    Ok(out)
}
