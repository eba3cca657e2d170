//! Spin-operator matrices and the small amount of linear algebra the rest of
//! the crate needs: dense Hermitian eigendecomposition (cold path) and banded
//! matrix-vector products (hot path).

use nalgebra::DMatrix;

use crate::model::SpinOp;
use crate::{C64, Spin, SpinError};

/// Entries smaller than this times the largest magnitude count as structural
/// zeros when measuring bandwidth.
const BAND_RTOL: f64 = 1e-14;

/// Coefficients `a_k = sqrt((2j - k)(k + 1))` of the dimensionless raising
/// operator: `(J_+ / hbar) |k> = a_k |k+1>` for `k = 0, ..., 2j - 1`.
///
/// The same table serves the lowering side, `(J_- / hbar) |k+1> = a_k |k>`.
pub fn ladder_coeffs(spin: Spin) -> Vec<f64> {
    let twoj = f64::from(spin.twice_j());
    (0..spin.dim() - 1)
        .map(|k| {
            let k = k as f64;
            ((twoj - k) * (k + 1.0)).sqrt()
        })
        .collect()
}

/// Dense matrix of one Cartesian spin operator (carries one power of `hbar`).
pub fn op_matrix(spin: Spin, op: SpinOp) -> DMatrix<C64> {
    let dim = spin.dim();
    let hbar = spin.hbar();
    let a = ladder_coeffs(spin);
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    match op {
        SpinOp::Jz => {
            for k in 0..dim {
                m[(k, k)] = C64::new(hbar * spin.m_at(k), 0.0);
            }
        }
        SpinOp::Jx => {
            // (J+ + J-) / 2
            for k in 0..dim - 1 {
                let v = C64::new(0.5 * hbar * a[k], 0.0);
                m[(k + 1, k)] = v;
                m[(k, k + 1)] = v;
            }
        }
        SpinOp::Jy => {
            // (J+ - J-) / 2i
            for k in 0..dim - 1 {
                let v = C64::new(0.0, -0.5 * hbar * a[k]);
                m[(k + 1, k)] = v;
                m[(k, k + 1)] = -v;
            }
        }
    }
    m
}

/// Commutator `[a, b] = ab - ba`.
pub fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// Half-bandwidth: largest `|row - col|` carrying a non-negligible entry.
pub fn bandwidth(m: &DMatrix<C64>) -> usize {
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.norm()));
    if scale == 0.0 {
        return 0;
    }
    let mut w = 0usize;
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if m[(row, col)].norm() > BAND_RTOL * scale {
                w = w.max(row.abs_diff(col));
            }
        }
    }
    w
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending and a fixed
/// eigenvector gauge (largest component real and positive), so results are
/// reproducible down to the sign.
pub fn eigh(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>), SpinError> {
    let dim = m.nrows();
    let eig = m
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(SpinError::EigenFailed)?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalue is NaN")
            .then(a.cmp(&b))
    });

    let energies: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut states = DMatrix::<C64>::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        // Gauge: rotate the phase so the largest-magnitude component is
        // real and positive; break magnitude ties toward the lowest index.
        let mut kmax = 0usize;
        let mut best = -1.0f64;
        for (k, v) in col.iter().enumerate() {
            let n = v.norm();
            if n > best + 1e-300 && n > best {
                best = n;
                kmax = k;
            }
        }
        let phase = if best > 0.0 {
            col[kmax].conj() / C64::new(best, 0.0)
        } else {
            C64::new(1.0, 0.0)
        };
        for k in 0..dim {
            states[(k, dst)] = col[k] * phase;
        }
    }
    Ok((energies, states))
}

/// Hermitian matrix in lower-diagonal band storage for fast products.
///
/// `diag[d][i] = H[i + d, i]` for `d = 0, ..., w`; the upper triangle is
/// implied by Hermiticity. Spin polynomials of degree `p` have `w <= p`,
/// so applying the band costs `O(dim * p)` instead of `O(dim^2)`.
#[derive(Debug, Clone)]
pub struct BandedHermitian {
    dim: usize,
    diags: Vec<Vec<C64>>,
}

impl BandedHermitian {
    /// Extract band storage from a dense Hermitian matrix.
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let dim = m.nrows();
        let w = bandwidth(m);
        let diags = (0..=w)
            .map(|d| (0..dim - d).map(|i| m[(i + d, i)]).collect())
            .collect();
        Self { dim, diags }
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Half-bandwidth `w`.
    pub fn half_bandwidth(&self) -> usize {
        self.diags.len() - 1
    }

    /// `y = H x`. Panics if slice lengths disagree with `dim`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let d0 = &self.diags[0];
        for i in 0..self.dim {
            y[i] = d0[i] * x[i];
        }
        for d in 1..self.diags.len() {
            let ld = &self.diags[d];
            for i in 0..self.dim - d {
                y[i + d] += ld[i] * x[i];
                y[i] += ld[i].conj() * x[i + d];
            }
        }
    }

    /// `y[lo..=hi] = (H x)[lo..=hi]`; entries outside the window are left
    /// untouched (callers must not read them). The per-element accumulation
    /// order matches [`BandedHermitian::apply`], so computed entries agree
    /// with a full product bit for bit. This is the hot-path variant for
    /// vectors supported on a narrow index range.
    pub fn apply_window(&self, x: &[C64], y: &mut [C64], lo: usize, hi: usize) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        debug_assert!(lo <= hi && hi < self.dim);
        let d0 = &self.diags[0];
        for t in lo..=hi {
            let mut acc = d0[t] * x[t];
            for d in 1..self.diags.len() {
                let ld = &self.diags[d];
                if t >= d {
                    acc += ld[t - d] * x[t - d];
                }
                if t + d < self.dim {
                    acc += ld[t].conj() * x[t + d];
                }
            }
            y[t] = acc;
        }
    }
}

/// Inner product `<a|b>`, conjugate-linear in `a`.
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = C64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin(j: f64) -> Spin {
        Spin::new(j, 1.0).unwrap()
    }

    #[test]
    fn ladder_coeffs_match_closed_form() {
        let s = spin(1.5);
        let a = ladder_coeffs(s);
        // j = 3/2: a_k = sqrt((3 - k)(k + 1))
        let expect = [3.0f64.sqrt(), 2.0, 3.0f64.sqrt()];
        for (got, want) in a.iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn eigh_rotated_zeeman_spectrum() {
        // Jz + Jx is a rotated Jz scaled by sqrt(2): spectrum sqrt(2) * m.
        let s = spin(1.0);
        let h = op_matrix(s, SpinOp::Jz) + op_matrix(s, SpinOp::Jx);
        let (vals, vecs) = eigh(&h).unwrap();
        let want = [-(2.0f64.sqrt()), 0.0, 2.0f64.sqrt()];
        for (got, want) in vals.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
        // Residual ||H v - lambda v|| per column.
        for i in 0..3 {
            let v = vecs.column(i);
            let res = &h * v - v.scale(vals[i]);
            assert!(res.norm() < 1e-12);
        }
    }

    #[test]
    fn banded_apply_matches_dense() {
        let s = spin(4.0);
        let h = op_matrix(s, SpinOp::Jz)
            + op_matrix(s, SpinOp::Jx) * op_matrix(s, SpinOp::Jx).scale(0.3)
            - op_matrix(s, SpinOp::Jy) * op_matrix(s, SpinOp::Jy).scale(0.3);
        let band = BandedHermitian::from_dense(&h);
        assert_eq!(band.half_bandwidth(), 2);
        let x: Vec<C64> = (0..s.dim())
            .map(|k| C64::new(0.3 * k as f64 - 1.0, 0.1 * k as f64))
            .collect();
        let mut y = vec![C64::new(0.0, 0.0); s.dim()];
        band.apply(&x, &mut y);
        let xv = nalgebra::DVector::from_column_slice(&x);
        let dense = &h * xv;
        for k in 0..s.dim() {
            assert!((y[k] - dense[k]).norm() < 1e-12);
        }
    }
}
