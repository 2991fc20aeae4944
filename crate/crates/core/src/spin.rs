//! Collective spin operators on the maximal angular-momentum sector.
//!
//! For N two-level atoms the symmetric sector has total spin l = N/2 and
//! dimension N+1. Basis ordering throughout the crate: index 0 holds m = +l
//! and the index increases as m decreases, so index i corresponds to
//! m = l - i and the bottom state m = -l sits at index N.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_propagator, ComplexMatrix, StateVector, C64};

/// Tolerance for accepting a floating-point value as a half-integer.
const HALF_INTEGER_TOL: f64 = 1e-9;

/// Validate that `x` lies on the half-integer grid and return 2x as integer.
pub fn to_twice_half_integer(x: f64, name: &str) -> Result<i64> {
    let doubled = 2.0 * x;
    let rounded = doubled.round();
    if !doubled.is_finite() || (doubled - rounded).abs() > HALF_INTEGER_TOL {
        return Err(Error::Domain(format!("{name} = {x} is not a half-integer")));
    }
    Ok(rounded as i64)
}

/// Ladder coefficient sqrt((l - m)(l + m + 1)) of the collective lowering
/// operator between adjacent basis states; zero at the top of the ladder.
pub fn ladder_coefficient(l: f64, m: f64) -> Result<f64> {
    let twice_l = to_twice_half_integer(l, "l")?;
    let twice_m = to_twice_half_integer(m, "m")?;
    if twice_l < 0 {
        return Err(Error::Domain(format!("l = {l} must be nonnegative")));
    }
    if (twice_l - twice_m) % 2 != 0 {
        return Err(Error::Domain(format!("m = {m} must differ from l = {l} by an integer")));
    }
    if twice_m.abs() > twice_l {
        return Err(Error::Domain(format!("m = {m} outside [-{l}, {l}]")));
    }
    Ok(((l - m) * (l + m + 1.0)).max(0.0).sqrt())
}

/// Collective spin operators for N atoms in the l = N/2 sector.
#[derive(Debug, Clone)]
pub struct CollectiveSpinSystem {
    n_atoms: usize,
    l: f64,
    jz: ComplexMatrix,
    jplus: ComplexMatrix,
    jminus: ComplexMatrix,
    jx: ComplexMatrix,
    jy: ComplexMatrix,
}

impl CollectiveSpinSystem {
    /// Build the operator set for `n_atoms` >= 1.
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::Domain("a collective spin system needs at least one atom".into()));
        }
        let l = n_atoms as f64 / 2.0;
        let dim = n_atoms + 1;

        let mut jz = ComplexMatrix::zeros(dim);
        for i in 0..dim {
            jz[(i, i)] = C64::new(l - i as f64, 0.0);
        }

        // J- lowers m by one: in this ordering it maps index i to index i+1
        // with amplitude h_{m-1} where m = l - i.
        let mut jminus = ComplexMatrix::zeros(dim);
        for i in 0..(dim - 1) {
            let m = l - i as f64;
            let h = ladder_coefficient(l, m - 1.0)?;
            jminus[(i + 1, i)] = C64::new(h, 0.0);
        }
        let jplus = jminus.adjoint();

        let jx = jplus.add(&jminus)?.scaled(C64::new(0.5, 0.0));
        let jy = jplus.sub(&jminus)?.scaled(C64::new(0.0, -0.5));

        Ok(Self { n_atoms, l, jz, jplus, jminus, jx, jy })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Total spin l = N/2.
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Hilbert-space dimension N+1.
    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn jz(&self) -> &ComplexMatrix {
        &self.jz
    }

    pub fn jplus(&self) -> &ComplexMatrix {
        &self.jplus
    }

    pub fn jminus(&self) -> &ComplexMatrix {
        &self.jminus
    }

    pub fn jx(&self) -> &ComplexMatrix {
        &self.jx
    }

    pub fn jy(&self) -> &ComplexMatrix {
        &self.jy
    }

    /// Basis index of the state with magnetic quantum number m.
    pub fn index_of_m(&self, m: f64) -> Result<usize> {
        let twice_l = to_twice_half_integer(self.l, "l")?;
        let twice_m = to_twice_half_integer(m, "m")?;
        if (twice_l - twice_m) % 2 != 0 || twice_m.abs() > twice_l {
            return Err(Error::Domain(format!(
                "m = {m} is not a level of the l = {} ladder",
                self.l
            )));
        }
        Ok(((twice_l - twice_m) / 2) as usize)
    }

    /// Magnetic quantum number of the given basis index.
    pub fn m_of_index(&self, index: usize) -> f64 {
        self.l - index as f64
    }

    /// Basis state with magnetic quantum number m.
    pub fn dicke_state(&self, m: f64) -> Result<StateVector> {
        StateVector::basis(self.dim(), self.index_of_m(m)?)
    }
}

/// Coherent spin state: the bottom state m = -l rotated by angle theta about
/// the equatorial axis selected by phi, exp(-i theta (sin(phi) Jx - cos(phi) Jy)) |l,-l>.
pub fn coherent_spin_state(n_atoms: usize, theta: f64, phi: f64) -> Result<StateVector> {
    let sys = CollectiveSpinSystem::new(n_atoms)?;
    let mut generator = sys.jx().scaled(C64::new(phi.sin(), 0.0));
    generator.add_assign_scaled(sys.jy(), C64::new(-phi.cos(), 0.0));
    let u = hermitian_propagator(&generator, theta)?;
    let bottom = StateVector::basis(sys.dim(), sys.dim() - 1)?;
    StateVector::new(u.apply(bottom.amplitudes())?)
}
