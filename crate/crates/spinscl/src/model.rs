//! Quantum spin models: a spin quantum number, polynomial Hamiltonians in the
//! spin operators, and their dense Hermitian matrix realization.
//!
//! Basis convention: the Hilbert space of spin `j` has dimension `2j + 1`,
//! and basis index `k = 0, ..., 2j` holds the eigenstate of `Jz` with
//! magnetic quantum number `m = k - j`. Index `0` is the south pole
//! (`m = -j`), index `2j` the north pole (`m = +j`).

use nalgebra::DMatrix;

use crate::algebra;
use crate::{C64, SpinError};

/// Relative tolerance for the Hermiticity check in [`SpinModel::new`].
const HERMITICITY_RTOL: f64 = 1e-10;

/// A spin quantum number `j` together with the value of `hbar`.
///
/// `j` may be any positive integer or half-integer; internally `2j` is kept
/// as an integer so the dimension `2j + 1` is exact. Keeping `hbar` here
/// rather than as a global makes the `hbar -> 0` (equivalently `j -> inf`)
/// scaling limit explicit in user code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spin {
    twice_j: u32,
    hbar: f64,
}

impl Spin {
    /// Build from `j` (validated to be a multiple of 1/2) and `hbar > 0`.
    pub fn new(j: f64, hbar: f64) -> Result<Self, SpinError> {
        let twice = 2.0 * j;
        if !(twice.is_finite() && twice >= 1.0 && (twice - twice.round()).abs() < 1e-9) {
            return Err(SpinError::InvalidSpin(j));
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(SpinError::InvalidHbar(hbar));
        }
        Ok(Self {
            twice_j: twice.round() as u32,
            hbar,
        })
    }

    /// The spin quantum number `j`.
    pub fn j(&self) -> f64 {
        f64::from(self.twice_j) / 2.0
    }

    /// `2j` as an exact integer.
    pub fn twice_j(&self) -> u32 {
        self.twice_j
    }

    /// Planck's constant for this model.
    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Hilbert-space dimension `2j + 1`.
    pub fn dim(&self) -> usize {
        self.twice_j as usize + 1
    }

    /// Magnetic quantum number at basis index `k`, i.e. `m = k - j`.
    pub fn m_at(&self, k: usize) -> f64 {
        k as f64 - self.j()
    }
}

/// One Cartesian spin operator. Products of these make up model terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinOp {
    Jx,
    Jy,
    Jz,
}

/// A Hamiltonian given as a real linear combination of products of spin
/// operators, realized once as a dense Hermitian matrix.
///
/// Each term is `(coefficient, [op1, op2, ...])` and contributes
/// `coefficient * op1 * op2 * ...` to the Hamiltonian. Operator products are
/// not reordered, so non-palindromic products must be symmetrized by the
/// caller (supply both `c * A B` and `c * B A` halves); construction fails
/// if the assembled matrix is not Hermitian.
#[derive(Debug, Clone)]
pub struct SpinModel {
    spin: Spin,
    terms: Vec<(f64, Vec<SpinOp>)>,
    matrix: DMatrix<C64>,
    bandwidth: usize,
}

impl SpinModel {
    /// Assemble the matrix for `terms` and verify Hermiticity.
    pub fn new(spin: Spin, terms: Vec<(f64, Vec<SpinOp>)>) -> Result<Self, SpinError> {
        if terms.is_empty() {
            return Err(SpinError::EmptyModel);
        }
        let dim = spin.dim();
        let mut matrix = DMatrix::<C64>::zeros(dim, dim);
        for (coeff, ops) in &terms {
            let mut term = DMatrix::<C64>::identity(dim, dim);
            for op in ops {
                term = algebra::op_matrix(spin, *op) * term;
            }
            matrix += term.scale(*coeff);
        }

        let scale = matrix.iter().fold(0.0f64, |a, x| a.max(x.norm()));
        let mut asym = 0.0f64;
        for row in 0..dim {
            for col in row..dim {
                asym = asym.max((matrix[(row, col)] - matrix[(col, row)].conj()).norm());
            }
        }
        if asym > HERMITICITY_RTOL * scale.max(1e-300) {
            return Err(SpinError::NotHermitian(asym));
        }
        // Symmetrize exactly so downstream code can rely on H = H^dag to the bit.
        for row in 0..dim {
            matrix[(row, row)].im = 0.0;
            for col in (row + 1)..dim {
                let avg = 0.5 * (matrix[(row, col)] + matrix[(col, row)].conj());
                matrix[(row, col)] = avg;
                matrix[(col, row)] = avg.conj();
            }
        }

        let bandwidth = algebra::bandwidth(&matrix);
        Ok(Self {
            spin,
            terms,
            matrix,
            bandwidth,
        })
    }

    /// Linear Zeeman model `omega * Jz`, the exactly solvable reference case.
    pub fn zeeman(spin: Spin, omega: f64) -> Result<Self, SpinError> {
        Self::new(spin, vec![(omega, vec![SpinOp::Jz])])
    }

    /// Lipkin-Meshkov-Glick model `omega * Jz + alpha * (Jx^2 - Jy^2)`.
    pub fn lipkin(spin: Spin, omega: f64, alpha: f64) -> Result<Self, SpinError> {
        Self::new(
            spin,
            vec![
                (omega, vec![SpinOp::Jz]),
                (alpha, vec![SpinOp::Jx, SpinOp::Jx]),
                (-alpha, vec![SpinOp::Jy, SpinOp::Jy]),
            ],
        )
    }

    /// The spin carried by this model.
    pub fn spin(&self) -> Spin {
        self.spin
    }

    /// The terms this model was built from.
    pub fn terms(&self) -> &[(f64, Vec<SpinOp>)] {
        &self.terms
    }

    /// Dense Hermitian matrix of the Hamiltonian.
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Half-bandwidth of the matrix: the largest `|row - col|` with a
    /// structurally nonzero entry. Spin polynomials of low degree are
    /// narrowly banded, which the hot evaluation paths exploit.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Full eigendecomposition, eigenvalues ascending.
    pub fn eigensystem(&self) -> Result<Eigensystem, SpinError> {
        let (energies, states) = algebra::eigh(&self.matrix)?;
        Ok(Eigensystem { energies, states })
    }
}

/// Result of diagonalizing a model: `energies[i]` belongs to column `i` of
/// `states`, energies ascending.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub energies: Vec<f64>,
    pub states: DMatrix<C64>,
}

impl Eigensystem {
    /// Number of states.
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    /// True when there are no states (never the case for a valid spin).
    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Full spectral span `E_max - E_min`, the natural energy scale for
    /// tolerances.
    pub fn span(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// Indices of all states within `tol` of `energies[i]`, always including
    /// `i` itself. Exactly degenerate multiplets (symmetry doublets, for
    /// example) are only defined as a subspace, so comparisons against a
    /// single eigenvector must average over the group this returns.
    pub fn degenerate_group(&self, i: usize, tol: f64) -> std::ops::Range<usize> {
        let e = self.energies[i];
        let mut lo = i;
        while lo > 0 && (self.energies[lo - 1] - e).abs() <= tol {
            lo -= 1;
        }
        let mut hi = i + 1;
        while hi < self.energies.len() && (self.energies[hi] - e).abs() <= tol {
            hi += 1;
        }
        lo..hi
    }
}
