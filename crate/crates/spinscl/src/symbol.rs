//! Coherent-state symbols of the Hamiltonian and their derivatives.
//!
//! The classical energy surface is the normalized expectation
//! `H(zeta, conj(zeta)) = <zeta|H|zeta> / <zeta|zeta>` over coherent states.
//! Its holomorphic derivatives follow from operator insertions rather than
//! finite differences: writing `R` for the chart's raising generator
//! (`J+/hbar` in the south chart, `J-/hbar` in the north chart, both of which
//! generate `d/d zeta` of the unnormalized state),
//!
//! ```text
//! dH/dzeta           = <<H R>> - <<H>> <<R>>,
//! d2H/dconj(zeta)dzeta = <<R' H R>> - 2 Re(<<R'>> <<H R>>)
//!                        + 2 H |<<R>>|^2 - H <<R' R>>,
//! ```
//!
//! where `<<.>>` is the normalized expectation and `R'` the adjoint of `R`.
//! Everything reduces to one coherent-state fill, two banded products, one
//! ladder application and five inner products per phase-space point: `O(dim)`
//! per evaluation with no allocation, which is what makes orbit integration
//! at `j ~ 200` cheap.
//!
//! The Solari-Kochetov integrand `A` is kept in the *south* gauge everywhere
//! (matching the gauge of the loop action), so its expression differs between
//! charts; both forms are assembled here and cross-checked in tests.

use crate::algebra::{self, BandedHermitian};
use crate::chart::{Chart, Point};
use crate::coherent::CoherentBuf;
use crate::model::SpinModel;
use crate::{C64, Spin};

/// Symbol data at one phase-space point, chart-local derivatives.
#[derive(Debug, Clone, Copy)]
pub struct SymbolPoint {
    /// Classical energy `H`.
    pub h: f64,
    /// `dH / d zeta` in the point's own chart.
    pub h_d: C64,
    /// `d^2 H / d conj(zeta) d zeta` in the point's own chart (real).
    pub h_dd: f64,
    /// Solari-Kochetov integrand `A` in the south gauge.
    pub a_sk: f64,
}

/// [`SymbolPoint`] extended by the holomorphic-holomorphic second
/// derivative, needed for Newton refinement of critical points.
#[derive(Debug, Clone, Copy)]
pub struct SymbolCurvature {
    pub pt: SymbolPoint,
    /// `d^2 H / d zeta^2` in the point's own chart.
    pub h_hh: C64,
}

/// Reusable evaluator: owns the banded Hamiltonian and all work buffers.
#[derive(Debug, Clone)]
pub struct SymbolEval {
    spin: Spin,
    band: BandedHermitian,
    ladder: Vec<f64>,
    u: CoherentBuf,
    hu: Vec<C64>,
    pu: Vec<C64>,
    hpu: Vec<C64>,
    ppu: Vec<C64>,
}

impl SymbolEval {
    pub fn new(model: &SpinModel) -> Self {
        let spin = model.spin();
        let dim = spin.dim();
        let zero = C64::new(0.0, 0.0);
        Self {
            spin,
            band: BandedHermitian::from_dense(model.matrix()),
            ladder: algebra::ladder_coeffs(spin),
            u: CoherentBuf::new(spin),
            hu: vec![zero; dim],
            pu: vec![zero; dim],
            hpu: vec![zero; dim],
            ppu: vec![zero; dim],
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    /// Classical energy alone (skips the derivative machinery).
    pub fn energy(&mut self, pt: Point) -> f64 {
        self.u.fill(pt);
        let u = self.u.components();
        let (lo, hi) = self.hamiltonian_window();
        self.band.apply_window(u, &mut self.hu, lo, hi);
        let (slo, shi) = self.u.support();
        algebra::cdot(&u[slo..=shi], &self.hu[slo..=shi]).re
    }

    /// Energy, first derivative, mixed second derivative and the
    /// Solari-Kochetov integrand at `pt`.
    pub fn eval(&mut self, pt: Point) -> SymbolPoint {
        let (h, m, x, rr, rhr) = self.insertions(pt);
        let h_d = x - h * m;
        let h_dd = rhr - 2.0 * (m.conj() * x).re + 2.0 * h * m.norm_sqr() - h * rr;
        let a_sk = south_gauge_a(self.spin, pt, h_d, h_dd);
        SymbolPoint { h, h_d, h_dd, a_sk }
    }

    /// [`SymbolEval::eval`] plus the holomorphic second derivative.
    pub fn eval_curvature(&mut self, pt: Point) -> SymbolCurvature {
        let (h, m, x, rr, rhr) = self.insertions(pt);
        let h_d = x - h * m;
        let h_dd = rhr - 2.0 * (m.conj() * x).re + 2.0 * h * m.norm_sqr() - h * rr;
        let a_sk = south_gauge_a(self.spin, pt, h_d, h_dd);

        // Second application of R on top of the cached pu. `ppu` vanishes
        // exactly outside the window where `hu` holds valid entries, so the
        // windowed dots see every nonzero term.
        raise(&self.ladder, pt.chart, &self.pu, &mut self.ppu);
        let u = self.u.components();
        let (lo, hi) = self.hamiltonian_window();
        let e_hrr = algebra::cdot(&self.hu[lo..=hi], &self.ppu[lo..=hi]); // <<H R^2>>
        let rr2 = algebra::cdot(&u[lo..=hi], &self.ppu[lo..=hi]); // <<R^2>>
        let h_hh = e_hrr - x * m - h_d * m - h * (rr2 - m * m);
        SymbolCurvature {
            pt: SymbolPoint { h, h_d, h_dd, a_sk },
            h_hh,
        }
    }

    /// Index window on which `hu` and `hpu` are computed: the coherent
    /// support padded by two, covering the raising shift plus every dot
    /// product taken against them.
    fn hamiltonian_window(&self) -> (usize, usize) {
        let (lo, hi) = self.u.support();
        (lo.saturating_sub(2), (hi + 2).min(self.spin.dim() - 1))
    }

    /// Shared core: fill buffers and return
    /// `(H, <<R>>, <<H R>>, <<R' R>>, <<R' H R>>)`.
    ///
    /// The five inner products share one pass over the buffers. Each
    /// accumulator still sums in index order, so the results match the
    /// separate [`algebra::cdot`] sums bit for bit — only the memory
    /// traffic shrinks, which matters because this is the innermost cost
    /// of every integrator step.
    fn insertions(&mut self, pt: Point) -> (f64, C64, C64, f64, f64) {
        self.u.fill(pt);
        let u = self.u.components();
        let (wlo, whi) = self.hamiltonian_window();
        self.band.apply_window(u, &mut self.hu, wlo, whi);
        raise(&self.ladder, pt.chart, u, &mut self.pu);
        self.band.apply_window(&self.pu, &mut self.hpu, wlo, whi);

        let zero = C64::new(0.0, 0.0);
        let (mut h, mut m, mut x, mut rr, mut rhr) = (zero, zero, zero, zero, zero);
        // Every term carries a factor of `u` (zero outside its support) or
        // `pu` (support at most one index wider), so the sums can skip the
        // zero tails without changing a bit of the result.
        let (lo, hi) = self.u.support();
        let (lo, hi) = (lo.saturating_sub(1), (hi + 1).min(self.spin.dim() - 1));
        for k in lo..=hi {
            let uc = u[k].conj();
            let pc = self.pu[k].conj();
            h += uc * self.hu[k];
            m += uc * self.pu[k];
            // <u|H R|u> = (H u)' (R u) by Hermiticity.
            x += self.hu[k].conj() * self.pu[k];
            rr += pc * self.pu[k];
            rhr += pc * self.hpu[k];
        }
        (h.re, m, x, rr.re, rhr.re)
    }
}

/// Apply the chart's raising generator: `out = R inp`.
/// South: `(J+/hbar) |k> = a_k |k+1>`; north: `(J-/hbar) |k+1> = a_k |k>`.
fn raise(ladder: &[f64], chart: Chart, inp: &[C64], out: &mut [C64]) {
    let dim = inp.len();
    match chart {
        Chart::South => {
            out[0] = C64::new(0.0, 0.0);
            for k in 0..dim - 1 {
                out[k + 1] = ladder[k] * inp[k];
            }
        }
        Chart::North => {
            out[dim - 1] = C64::new(0.0, 0.0);
            for k in 0..dim - 1 {
                out[k] = ladder[k] * inp[k + 1];
            }
        }
    }
}

/// Hamilton's equation of the spin, identical in form in both charts:
/// `d zeta/dt = -(i/hbar) (1 + |zeta|^2)^2 / (2j) * conj(dH/dzeta)`.
pub fn zeta_dot(spin: Spin, zeta: C64, h_d: C64) -> C64 {
    let rho = zeta.norm_sqr();
    let f = (1.0 + rho) * (1.0 + rho) / (2.0 * spin.j() * spin.hbar());
    C64::new(0.0, -f) * h_d.conj()
}

/// Solari-Kochetov integrand in the south gauge, assembled from chart-local
/// derivatives. South:
/// `A = [(1+p)^2 H_dd + (1+p) * 2 Re(zeta H_d)] / 4j`, `p = |zeta|^2`;
/// in the north chart the gauge term changes sign and gains `1/p`:
/// `A = [(1+p)^2 H_dd] / 4j - [(1+p) * 2 Re(zeta H_d)] / (4j p)`.
fn south_gauge_a(spin: Spin, pt: Point, h_d: C64, h_dd: f64) -> f64 {
    let rho = pt.zeta.norm_sqr();
    let fourj = 4.0 * spin.j();
    let gauge = 2.0 * (pt.zeta * h_d).re;
    match pt.chart {
        Chart::South => ((1.0 + rho) * (1.0 + rho) * h_dd + (1.0 + rho) * gauge) / fourj,
        Chart::North => {
            // The 1/rho factor is finite along any orbit; the exact pole is a
            // critical point of every model this crate quantizes, and the
            // clamp below only guards against NaN from a literal zeta = 0.
            let rho_safe = rho.max(1e-300);
            ((1.0 + rho) * (1.0 + rho) * h_dd) / fourj
                - ((1.0 + rho) * gauge) / (fourj * rho_safe)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpinOp;

    const JZ_SPIN: (f64, f64) = (12.0, 0.25);

    fn zeeman() -> SpinModel {
        let spin = Spin::new(JZ_SPIN.0, JZ_SPIN.1).unwrap();
        SpinModel::zeeman(spin, 0.7).unwrap()
    }

    fn points() -> Vec<Point> {
        vec![
            Point::south(C64::new(0.4, -0.2)),
            Point::south(C64::new(-1.1, 0.9)),
            Point::south(C64::new(0.05, 0.0)),
            Point::north(C64::new(0.3, 0.8)),
            Point::north(C64::new(-0.02, 0.01)),
        ]
    }

    #[test]
    fn zeeman_symbol_closed_forms() {
        let model = zeeman();
        let spin = model.spin();
        let (omega, hbar, j) = (0.7, spin.hbar(), spin.j());
        let mut sym = SymbolEval::new(&model);
        for pt in points() {
            let rho = pt.zeta.norm_sqr();
            let got = sym.eval(pt);
            // Energy: hbar*omega*j*(r-1)/(1+r) with r the south |z|^2.
            let r_south = match pt.chart {
                Chart::South => rho,
                Chart::North => 1.0 / rho,
            };
            let want_h = hbar * omega * j * (r_south - 1.0) / (1.0 + r_south);
            assert!(
                (got.h - want_h).abs() < 1e-12 * (hbar * omega * j),
                "h mismatch at {pt:?}"
            );
            // First derivative, chart-local: south 2 hbar w j conj(z)/(1+p)^2,
            // north -(that form) (sign from dz = -dw/w^2 symmetry of h).
            let pref = 2.0 * hbar * omega * j / ((1.0 + rho) * (1.0 + rho));
            let want_d = match pt.chart {
                Chart::South => pt.zeta.conj() * pref,
                Chart::North => -pt.zeta.conj() * pref,
            };
            assert!((got.h_d - want_d).norm() < 1e-12 * (hbar * omega * j));
            // SK integrand is hbar*omega/2 everywhere, in both charts.
            assert!(
                (got.a_sk - 0.5 * hbar * omega).abs() < 1e-11 * hbar * omega,
                "a_sk = {} at {pt:?}",
                got.a_sk
            );
        }
    }

    #[test]
    fn zeeman_velocity_is_rigid_rotation() {
        let model = zeeman();
        let spin = model.spin();
        let mut sym = SymbolEval::new(&model);
        let pt = Point::south(C64::new(0.6, -1.2));
        let sp = sym.eval(pt);
        let zdot = zeta_dot(spin, pt.zeta, sp.h_d);
        let want = C64::new(0.0, -0.7) * pt.zeta; // -i omega z
        assert!((zdot - want).norm() < 1e-12);
    }

    /// Random Hermitian model: symmetrized products of spin operators.
    fn random_model() -> SpinModel {
        use SpinOp::*;
        let spin = Spin::new(5.0, 0.2).unwrap();
        SpinModel::new(
            spin,
            vec![
                (0.9, vec![Jz]),
                (0.35, vec![Jx, Jx]),
                (-0.21, vec![Jy, Jy]),
                (0.17, vec![Jx, Jy, Jz]),
                (0.17, vec![Jz, Jy, Jx]),
                (-0.4, vec![Jx]),
                (0.13, vec![Jz, Jx]),
                (0.13, vec![Jx, Jz]),
            ],
        )
        .unwrap()
    }

    fn fd_step() -> f64 {
        6e-6
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let model = random_model();
        let mut sym = SymbolEval::new(&model);
        for pt in points() {
            let sp = sym.eval(pt);
            let h = fd_step();
            let ex = C64::new(h, 0.0);
            let ey = C64::new(0.0, h);
            let hx = (sym.energy(Point { zeta: pt.zeta + ex, ..pt })
                - sym.energy(Point { zeta: pt.zeta - ex, ..pt }))
                / (2.0 * h);
            let hy = (sym.energy(Point { zeta: pt.zeta + ey, ..pt })
                - sym.energy(Point { zeta: pt.zeta - ey, ..pt }))
                / (2.0 * h);
            // dH/dzeta = (H_x - i H_y)/2 for real H.
            let want = C64::new(hx, -hy) * 0.5;
            let scale = sp.h_d.norm().max(1.0);
            assert!(
                (sp.h_d - want).norm() < 1e-5 * scale,
                "h_d {} vs fd {} at {pt:?}",
                sp.h_d,
                want
            );
        }
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let model = random_model();
        let mut sym = SymbolEval::new(&model);
        for pt in points() {
            let cur = sym.eval_curvature(pt);
            let h = 2e-4; // second differences need a larger step
            let mut e = |dx: f64, dy: f64| {
                sym.energy(Point {
                    zeta: pt.zeta + C64::new(dx, dy),
                    ..pt
                })
            };
            let hxx = (e(h, 0.0) - 2.0 * e(0.0, 0.0) + e(-h, 0.0)) / (h * h);
            let hyy = (e(0.0, h) - 2.0 * e(0.0, 0.0) + e(0.0, -h)) / (h * h);
            let hxy = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
            // H_dd = (H_xx + H_yy)/4; H_hh = (H_xx - H_yy - 2 i H_xy)/4.
            let want_dd = 0.25 * (hxx + hyy);
            let want_hh = C64::new(0.25 * (hxx - hyy), -0.5 * hxy);
            let scale = want_dd.abs().max(want_hh.norm()).max(1.0);
            assert!(
                (cur.pt.h_dd - want_dd).abs() < 2e-5 * scale,
                "h_dd {} vs {}",
                cur.pt.h_dd,
                want_dd
            );
            assert!(
                (cur.h_hh - want_hh).norm() < 2e-5 * scale,
                "h_hh {} vs {}",
                cur.h_hh,
                want_hh
            );
        }
    }

    #[test]
    fn sk_integrand_is_chart_independent() {
        // A is a south-gauge scalar: evaluating the same physical point in
        // either chart must agree. This exercises the full transform.
        let model = random_model();
        let mut sym = SymbolEval::new(&model);
        for pt in points() {
            if pt.zeta.norm_sqr() < 1e-12 {
                continue;
            }
            let a1 = sym.eval(pt).a_sk;
            let a2 = sym.eval(pt.switched()).a_sk;
            let scale = a1.abs().max(1.0);
            assert!(
                (a1 - a2).abs() < 1e-9 * scale,
                "A mismatch across charts: {a1} vs {a2} at {pt:?}"
            );
        }
    }

    #[test]
    fn energy_is_chart_independent() {
        let model = random_model();
        let mut sym = SymbolEval::new(&model);
        for pt in points() {
            if pt.zeta.norm_sqr() < 1e-12 {
                continue;
            }
            let h1 = sym.energy(pt);
            let h2 = sym.energy(pt.switched());
            assert!((h1 - h2).abs() < 1e-11 * h1.abs().max(1.0));
        }
    }

    #[test]
    fn lipkin_symbol_closed_form() {
        // H = w Jz + alpha (Jx^2 - Jy^2) has symbol
        // hbar w j (r-1)/(1+r) + alpha hbar^2 j (2j-1)(z^2 + conj(z)^2)/(1+r)^2,
        // identical in form in the north chart.
        let spin = Spin::new(8.0, 0.125).unwrap();
        let (omega, alpha) = (1.0, 3.0);
        let model = SpinModel::lipkin(spin, omega, alpha).unwrap();
        let mut sym = SymbolEval::new(&model);
        let (hbar, j) = (spin.hbar(), spin.j());
        for pt in points() {
            let rho = pt.zeta.norm_sqr();
            let zz = pt.zeta * pt.zeta;
            let quad = (zz + zz.conj()).re / ((1.0 + rho) * (1.0 + rho));
            let linear = match pt.chart {
                Chart::South => (rho - 1.0) / (1.0 + rho),
                Chart::North => (1.0 - rho) / (1.0 + rho),
            };
            let want = hbar * omega * j * linear
                + alpha * hbar * hbar * j * (2.0 * j - 1.0) * quad;
            let got = sym.energy(pt);
            assert!(
                (got - want).abs() < 1e-11 * want.abs().max(1.0),
                "lipkin symbol {got} vs {want} at {pt:?}"
            );
        }
    }
}
