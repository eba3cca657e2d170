//! Husimi distributions on a canonical-plane grid.
//!
//! The coherent-state density of a stationary state is evaluated two ways on
//! one shared grid:
//!
//! * **exact** — `|<z|psi_n>|^2` from the eigenvector, via the same
//!   coherent-state recurrence the rest of the crate uses;
//! * **semiclassical** — the orbit-based approximation assembled from the
//!   classical symbol: with `E_n`, period `T` and correction slope
//!   `dI_SK/dE` taken from a quantized level,
//!
//!   ```text
//!   value(z) = (sqrt(pi)/j) * (1 + |z|^2) / |zdot|
//!              * 1 / (T + dI_SK/dE)
//!              * exp{ -(E_n - H(z) + A(z))^2 / (2 hbar^2 g |zdot|^2) },
//!   ```
//!
//!   where `g = 2j / (1 + |z|^2)^2` is the coherent-state metric. Everything
//!   that depends on the grid point but not on the level (`H`, `A`, `|zdot|`
//!   and the derived prefactors) is computed once per grid into a
//!   [`SymbolTable`] and shared by all levels.
//!
//! # Geometry
//!
//! The sphere minus the north pole maps onto the open disk
//! `q^2 + p^2 < 4 hbar j` (see [`crate::chart`]). The grid is a cell-centered
//! `n x n` lattice on the bounding square: `coord(i) = (i - n/2 + 0.5) * step`
//! with `step = 2 L / n`, `L = 2 sqrt(hbar j)`. Centering the cells keeps the
//! lattice exactly mirror-symmetric in both axes, puts no point on the
//! boundary circle or at the coordinate origin, and makes the mass sum a
//! midpoint quadrature with cell measure `dq dp / (2 pi hbar)`.
//!
//! Cells outside the open disk, or mapping to `|z| > zmax` (the chart blows
//! up toward the boundary circle), are *masked*: they carry the value zero
//! and are excluded from nothing further — all sums run over the dense grid,
//! where masked entries are exact zeros.
//!
//! # Guard cells
//!
//! The semiclassical value diverges where the classical velocity vanishes
//! (critical points and caustics). Cells with `|zdot|` below a fixed scale
//! `eps_v` are set to zero and counted per table; see
//! [`build_symbol_table`]. No smoothing is attempted.
//!
//! # Normalization and determinism
//!
//! Fields are produced unnormalized. [`normalize_field`] scales a field so
//! its grid mass is 1, recording the mass it found; a field that is already
//! normalized to well within 1e-10 is returned untouched, which makes
//! normalization bitwise idempotent. Every grid reduction uses the fixed
//! row-blocked summation order of [`parallel::sum_rowwise`], and per-cell
//! work is pure, so results are byte-identical across runs and across
//! [`ExecMode`]s.

use crate::chart::{self, Point};
use crate::coherent::CoherentBuf;
use crate::model::{Eigensystem, SpinModel};
use crate::parallel::{self, ExecMode};
use crate::quantize::Level;
use crate::symbol::{self, SymbolEval};
use crate::{C64, Spin, SpinError};

/// Identity of a grid: enough to tell whether two fields are comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStamp {
    pub n: usize,
    pub half_width: f64,
    pub zmax: f64,
    pub spin: Spin,
}

/// Cell-centered square lattice over the canonical disk.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    spin: Spin,
    n: usize,
    half_width: f64,
    step: f64,
    zmax: f64,
    /// South-chart coordinate per cell, row-major `[ip][iq]`; `None` = masked.
    zs: Vec<Option<C64>>,
    unmasked: usize,
}

impl PhaseGrid {
    /// Default lattice resolution per axis.
    pub const DEFAULT_N: usize = 256;
    /// Default north-pole guard: cells with `|z|` beyond this are masked.
    pub const DEFAULT_ZMAX: f64 = 1e6;

    pub fn new(spin: Spin, n: usize, zmax: f64) -> Result<Self, SpinError> {
        if n < 2 {
            return Err(SpinError::InvalidGrid(format!(
                "need at least 2 points per axis, got {n}"
            )));
        }
        if !(zmax > 0.0 && zmax.is_finite()) {
            return Err(SpinError::InvalidGrid(format!(
                "north-pole guard zmax must be positive and finite, got {zmax}"
            )));
        }
        let half_width = chart::plane_radius(spin);
        let step = 2.0 * half_width / n as f64;
        let mut grid = PhaseGrid {
            spin,
            n,
            half_width,
            step,
            zmax,
            zs: vec![None; n * n],
            unmasked: 0,
        };
        for ip in 0..n {
            let p = grid.coord(ip);
            for iq in 0..n {
                let q = grid.coord(iq);
                if let Some(z) = chart::from_plane(spin, q, p) {
                    if z.norm() <= zmax {
                        grid.zs[ip * n + iq] = Some(z);
                        grid.unmasked += 1;
                    }
                }
            }
        }
        if grid.unmasked == 0 {
            return Err(SpinError::InvalidGrid(
                "every cell is masked; grid too coarse or zmax too small".into(),
            ));
        }
        Ok(grid)
    }

    /// The default grid for a spin: `256 x 256`, `zmax = 1e6`.
    pub fn standard(spin: Spin) -> Self {
        Self::new(spin, Self::DEFAULT_N, Self::DEFAULT_ZMAX)
            .expect("default grid parameters are valid")
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total cells, `n * n`.
    pub fn len(&self) -> usize {
        self.zs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zs.is_empty()
    }

    /// Number of unmasked cells.
    pub fn unmasked(&self) -> usize {
        self.unmasked
    }

    /// Lattice coordinate along either axis. Exactly antisymmetric:
    /// `coord(n-1-i) == -coord(i)` to the last bit.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64 + 0.5) * self.step
    }

    /// Flat index of cell `(iq, ip)`, row-major in `ip`.
    pub fn index(&self, iq: usize, ip: usize) -> usize {
        ip * self.n + iq
    }

    /// South-chart coordinate of an unmasked cell.
    pub fn z_at(&self, iq: usize, ip: usize) -> Option<C64> {
        self.zs[self.index(iq, ip)]
    }

    /// Phase-space measure of one cell, `dq dp / (2 pi hbar)`.
    pub fn cell_measure(&self) -> f64 {
        self.step * self.step / (2.0 * std::f64::consts::PI * self.spin.hbar())
    }

    /// Lattice spacing (same along both axes).
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Half-width of the bounding square, `2 sqrt(hbar j)`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn stamp(&self) -> GridStamp {
        GridStamp {
            n: self.n,
            half_width: self.half_width,
            zmax: self.zmax,
            spin: self.spin,
        }
    }
}

/// Which pipeline produced a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Exact,
    Semiclassical,
}

/// A Husimi density sampled on a [`PhaseGrid`].
///
/// `values` is dense row-major `[ip][iq]`; masked and guarded cells hold
/// exact zeros. Fields are unnormalized until passed to [`normalize_field`].
#[derive(Debug, Clone)]
pub struct HusimiField {
    pub kind: FieldKind,
    /// Global (energy-sorted, zero-based) state index.
    pub state: usize,
    /// Energy the field belongs to.
    pub energy: f64,
    pub values: Vec<f64>,
    /// Grid mass found by the first [`normalize_field`] call.
    pub norm_constant: Option<f64>,
    /// Cells zeroed by the velocity guard (semiclassical only).
    pub guard_cells: usize,
    /// Grid this field was sampled on.
    pub stamp: GridStamp,
}

/// Per-cell classical data shared by every semiclassical field on one grid.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    stamp: GridStamp,
    eps_v: f64,
    guard_cells: usize,
    cells: Vec<TableCell>,
}

#[derive(Debug, Clone, Copy, Default)]
struct TableCell {
    /// Unmasked and not velocity-guarded.
    live: bool,
    /// Classical energy `H(z, conj z)`.
    h: f64,
    /// Correction integrand `A(z)`.
    a: f64,
    /// `(sqrt(pi)/j) * (1 + |z|^2) / |zdot|`.
    pref: f64,
    /// `1 / (2 hbar^2 g |zdot|^2)`, the inverse Gaussian variance.
    inv_two_var: f64,
}

impl SymbolTable {
    pub fn stamp(&self) -> GridStamp {
        self.stamp
    }

    /// Velocity scale below which cells are zeroed.
    pub fn eps_v(&self) -> f64 {
        self.eps_v
    }

    /// Number of unmasked cells zeroed by the velocity guard.
    pub fn guard_cells(&self) -> usize {
        self.guard_cells
    }

    /// Classical energy at a cell, if the cell is live.
    pub fn energy_at(&self, iq: usize, ip: usize) -> Option<f64> {
        let c = &self.cells[ip * self.stamp.n + iq];
        c.live.then_some(c.h)
    }
}

/// Evaluate the classical symbol over the grid once.
///
/// `span` is the spectral span `E_max - E_min` of the model; it sets the
/// velocity guard through a reference period `T_ref = 2 pi hbar (2j+1) /
/// span` (the period matching the mean level spacing): cells with
/// `|zdot| < eps_v = 1e-8 * 4 hbar j / T_ref` are marked dead and later
/// zeroed in every field. This pins the guard to the model's own time scale
/// instead of an absolute cutoff.
pub fn build_symbol_table(
    model: &SpinModel,
    grid: &PhaseGrid,
    span: f64,
    mode: ExecMode,
) -> Result<SymbolTable, SpinError> {
    if !(span > 0.0 && span.is_finite()) {
        return Err(SpinError::InvalidGrid(format!(
            "spectral span must be positive and finite, got {span}"
        )));
    }
    let spin = grid.spin();
    if model.spin() != spin {
        return Err(SpinError::GridMismatch(format!(
            "model spin {:?} vs grid spin {:?}",
            model.spin(),
            spin
        )));
    }
    let (j, hbar) = (spin.j(), spin.hbar());
    let t_ref = 2.0 * std::f64::consts::PI * hbar * (2.0 * j + 1.0) / span;
    let eps_v = 1e-8 * 4.0 * hbar * j / t_ref;

    let n = grid.n();
    let mut cells = vec![TableCell::default(); grid.len()];
    let base = SymbolEval::new(model);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    parallel::fill_rows(
        mode,
        &mut cells,
        n,
        || base.clone(),
        |sym, ip, row| {
            for (iq, cell) in row.iter_mut().enumerate() {
                let Some(z) = grid.z_at(iq, ip) else {
                    continue; // masked: stays dead
                };
                let pt = Point::south(z);
                let sp = sym.eval(pt);
                let speed = symbol::zeta_dot(spin, z, sp.h_d).norm();
                if speed < eps_v {
                    continue; // velocity guard: stays dead
                }
                let rho = z.norm_sqr();
                let one_rho = 1.0 + rho;
                *cell = TableCell {
                    live: true,
                    h: sp.h,
                    a: sp.a_sk,
                    pref: sqrt_pi / j * one_rho / speed,
                    inv_two_var: one_rho * one_rho / (4.0 * hbar * hbar * j * speed * speed),
                };
            }
        },
    );

    let live = cells.iter().filter(|c| c.live).count();
    Ok(SymbolTable {
        stamp: grid.stamp(),
        eps_v,
        guard_cells: grid.unmasked() - live,
        cells,
    })
}

/// Semiclassical Husimi field of one quantized level (unnormalized).
///
/// Uses the level's energy, period and correction slope together with the
/// per-cell symbol data in `table`. Fails if `T + dI_SK/dE` is not finite
/// and positive — the density has no meaning there (this happens only for
/// levels whose orbit functionals were never computed, e.g. synthetic
/// extrapolations).
pub fn semiclassical_husimi(
    level: &Level,
    table: &SymbolTable,
    mode: ExecMode,
) -> Result<HusimiField, SpinError> {
    let t_total = level.period + level.sk_phase_slope;
    if !(t_total.is_finite() && t_total > 0.0) {
        return Err(SpinError::MissingFunctionals {
            n: level.n,
            value: t_total,
        });
    }
    let inv_t = 1.0 / t_total;
    let e_n = level.energy;
    let n = table.stamp.n;
    let mut values = vec![0.0; table.cells.len()];
    parallel::fill_rows(
        mode,
        &mut values,
        n,
        || (),
        |_, ip, row| {
            for (iq, v) in row.iter_mut().enumerate() {
                let cell = &table.cells[ip * n + iq];
                if cell.live {
                    let d = e_n - cell.h + cell.a;
                    *v = cell.pref * inv_t * (-d * d * cell.inv_two_var).exp();
                }
            }
        },
    );
    Ok(HusimiField {
        kind: FieldKind::Semiclassical,
        state: level.n,
        energy: e_n,
        values,
        norm_constant: None,
        guard_cells: table.guard_cells,
        stamp: table.stamp,
    })
}

/// Exact Husimi fields `|<z|psi>|^2` for several states at once
/// (unnormalized). Batching shares the per-cell coherent-state fill, which
/// dominates the cost, across all requested states.
pub fn exact_husimi_batch(
    eig: &Eigensystem,
    states: &[usize],
    grid: &PhaseGrid,
    mode: ExecMode,
) -> Result<Vec<HusimiField>, SpinError> {
    let dim = eig.len();
    if let Some(&bad) = states.iter().find(|&&s| s >= dim) {
        return Err(SpinError::StateOutOfRange { state: bad, dim });
    }
    if grid.spin().dim() != dim {
        return Err(SpinError::GridMismatch(format!(
            "eigensystem dimension {dim} vs grid spin dimension {}",
            grid.spin().dim()
        )));
    }
    let n = grid.n();
    let ns = states.len();
    if ns == 0 {
        return Ok(Vec::new());
    }
    // One pass over the grid writes all states: each grid row maps to a
    // buffer row holding `ns` state blocks of `n` values.
    let mut buf = vec![0.0; n * ns * n];
    let psis = eig.states.as_slice(); // column-major, state s at [s*dim..]
    parallel::fill_rows(
        mode,
        &mut buf,
        ns * n,
        || CoherentBuf::new(grid.spin()),
        |coh, ip, row| {
            for iq in 0..n {
                let Some(z) = grid.z_at(iq, ip) else {
                    continue;
                };
                coh.fill(Point::south(z));
                let (lo, hi) = coh.support();
                let u = coh.components();
                for (si, &s) in states.iter().enumerate() {
                    let psi = &psis[s * dim..(s + 1) * dim];
                    let mut amp = C64::new(0.0, 0.0);
                    // The coherent amplitudes are exact zeros outside their
                    // support, so the overlap sum may skip those indices
                    // without changing a bit.
                    for k in lo..=hi {
                        amp += u[k].conj() * psi[k];
                    }
                    row[si * n + iq] = amp.norm_sqr();
                }
            }
        },
    );

    let stamp = grid.stamp();
    Ok(states
        .iter()
        .enumerate()
        .map(|(si, &s)| {
            let mut values = vec![0.0; n * n];
            for ip in 0..n {
                let src = &buf[(ip * ns + si) * n..(ip * ns + si) * n + n];
                values[ip * n..(ip + 1) * n].copy_from_slice(src);
            }
            HusimiField {
                kind: FieldKind::Exact,
                state: s,
                energy: eig.energies[s],
                values,
                norm_constant: None,
                guard_cells: 0,
                stamp,
            }
        })
        .collect())
}

/// Exact Husimi field of one state (unnormalized).
pub fn exact_husimi(
    eig: &Eigensystem,
    state: usize,
    grid: &PhaseGrid,
    mode: ExecMode,
) -> Result<HusimiField, SpinError> {
    Ok(exact_husimi_batch(eig, &[state], grid, mode)?
        .pop()
        .expect("one state requested"))
}

/// Exact Husimi field averaged over the degenerate group of `state`
/// (unnormalized).
///
/// Individual eigenvectors of an exactly or nearly degenerate multiplet are
/// an arbitrary basis of the subspace, so their densities are not
/// individually meaningful; the subspace average is, and it is also the
/// object the branch-symmetric semiclassical field approximates. `tol` is
/// the energy window for [`Eigensystem::degenerate_group`].
pub fn exact_husimi_symmetrized(
    eig: &Eigensystem,
    state: usize,
    tol: f64,
    grid: &PhaseGrid,
    mode: ExecMode,
) -> Result<HusimiField, SpinError> {
    if state >= eig.len() {
        return Err(SpinError::StateOutOfRange {
            state,
            dim: eig.len(),
        });
    }
    let group: Vec<usize> = eig.degenerate_group(state, tol).collect();
    let fields = exact_husimi_batch(eig, &group, grid, mode)?;
    let inv = 1.0 / fields.len() as f64;
    let mut out = fields[0].clone();
    for f in &fields[1..] {
        for (v, w) in out.values.iter_mut().zip(&f.values) {
            *v += w;
        }
    }
    for v in &mut out.values {
        *v *= inv;
    }
    out.state = state;
    out.energy = eig.energies[state];
    Ok(out)
}

/// Tolerance below which a field counts as already normalized and is left
/// bit-for-bit untouched. Half the 1e-10 normalization contract; one
/// normalization pass lands around 1e-13, far inside.
const NORMALIZED_TOL: f64 = 5e-11;

/// Scale `field` so its grid mass `sum(value) * cell_measure` is 1, and
/// record the mass that was found. Idempotent to the bit: a field whose mass
/// is already within [`NORMALIZED_TOL`] of 1 is returned unchanged. Scaling
/// all inputs by a power of two yields the identical normalized output.
pub fn normalize_field(field: &mut HusimiField, grid: &PhaseGrid) -> Result<(), SpinError> {
    if field.stamp != grid.stamp() {
        return Err(SpinError::GridMismatch(format!(
            "field stamp {:?} vs grid stamp {:?}",
            field.stamp,
            grid.stamp()
        )));
    }
    let mass = parallel::sum_rowwise(&field.values, grid.n()) * grid.cell_measure();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(SpinError::AllZeroField);
    }
    if (mass - 1.0).abs() <= NORMALIZED_TOL {
        field.norm_constant.get_or_insert(mass);
        return Ok(());
    }
    let scale = 1.0 / mass;
    for v in &mut field.values {
        *v *= scale;
    }
    field.norm_constant = Some(mass);
    Ok(())
}

/// Distances and overlap between two fields on the same grid.
#[derive(Debug, Clone, Copy)]
pub struct CompareMetrics {
    /// `sum |a - b| * measure`.
    pub l1: f64,
    /// `||a - b||_2 / max(||a||_2, ||b||_2)`; zero when both fields vanish.
    pub l2_rel: f64,
    /// Bhattacharyya overlap `sum sqrt(a b) * measure`; equals 1 exactly
    /// when two normalized fields agree.
    pub overlap: f64,
    /// Cell `(iq, ip)` holding the maximum of `a` (first in row-major order
    /// on ties).
    pub argmax_a: (usize, usize),
    /// Same for `b`.
    pub argmax_b: (usize, usize),
    /// Largest pointwise difference `|a - b|`.
    pub sup_diff: f64,
    /// Cell attaining `sup_diff`.
    pub sup_diff_at: (usize, usize),
}

/// Compare two fields sampled on `grid`. Errors unless both fields carry the
/// grid's stamp. All reductions run in the fixed row-blocked order, so the
/// metrics are deterministic.
pub fn compare_fields(
    grid: &PhaseGrid,
    a: &HusimiField,
    b: &HusimiField,
) -> Result<CompareMetrics, SpinError> {
    let stamp = grid.stamp();
    if a.stamp != stamp || b.stamp != stamp {
        return Err(SpinError::GridMismatch(format!(
            "stamps {:?} and {:?} vs grid {:?}",
            a.stamp, b.stamp, stamp
        )));
    }
    let n = grid.n();
    let measure = grid.cell_measure();

    let (mut l1, mut aa, mut bb, mut dd, mut ov) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut max_a = (f64::NEG_INFINITY, (0, 0));
    let mut max_b = (f64::NEG_INFINITY, (0, 0));
    let mut max_d = (f64::NEG_INFINITY, (0, 0));
    for ip in 0..n {
        let (mut l1r, mut aar, mut bbr, mut ddr, mut ovr) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for iq in 0..n {
            let va = a.values[ip * n + iq];
            let vb = b.values[ip * n + iq];
            let d = va - vb;
            l1r += d.abs();
            aar += va * va;
            bbr += vb * vb;
            ddr += d * d;
            ovr += (va * vb).sqrt();
            if va > max_a.0 {
                max_a = (va, (iq, ip));
            }
            if vb > max_b.0 {
                max_b = (vb, (iq, ip));
            }
            if d.abs() > max_d.0 {
                max_d = (d.abs(), (iq, ip));
            }
        }
        l1 += l1r;
        aa += aar;
        bb += bbr;
        dd += ddr;
        ov += ovr;
    }
    let denom = aa.max(bb).sqrt();
    Ok(CompareMetrics {
        l1: l1 * measure,
        l2_rel: if denom > 0.0 { dd.sqrt() / denom } else { 0.0 },
        overlap: ov * measure,
        argmax_a: max_a.1,
        argmax_b: max_b.1,
        sup_diff: max_d.0,
        sup_diff_at: max_d.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::census::{census, CensusParams};
    use crate::coherent::ln_binomial;
    use crate::model::{Spin, SpinModel};
    use crate::quantize::{quantize, LevelTable, QuantizeParams};

    const J: f64 = 12.0;
    const HBAR: f64 = 0.25;
    const OMEGA: f64 = 0.7;
    const N: usize = 64;

    struct Pipeline {
        model: SpinModel,
        grid: PhaseGrid,
        table: SymbolTable,
        levels: LevelTable,
    }

    fn jz_pipeline() -> Pipeline {
        let spin = Spin::new(J, HBAR).unwrap();
        let model = SpinModel::zeeman(spin, OMEGA).unwrap();
        let cen = census(&model, CensusParams::default()).unwrap();
        let levels = quantize(&model, &cen, QuantizeParams::default()).unwrap();
        let grid = PhaseGrid::new(spin, N, PhaseGrid::DEFAULT_ZMAX).unwrap();
        let table =
            build_symbol_table(&model, &grid, levels.span, ExecMode::Sequential).unwrap();
        Pipeline {
            model,
            grid,
            table,
            levels,
        }
    }

    /// Unnormalized closed form of the rigid-rotor semiclassical density:
    /// `(1+r)/(2 j sqrt(pi r)) * exp{-(j(1-r) + (1+r)(m+1/2))^2 / (4 j r)}`
    /// with `m = n - j`. Valid for any `hbar` and `omega`.
    fn jz_semiclassical_closed(n: usize, r: f64) -> f64 {
        let m = n as f64 - J;
        let num = J * (1.0 - r) + (1.0 + r) * (m + 0.5);
        (1.0 + r) / (2.0 * J * (std::f64::consts::PI * r).sqrt())
            * (-num * num / (4.0 * J * r)).exp()
    }

    /// Unnormalized exact density of the `n`-th rigid-rotor eigenstate:
    /// the binomial law `C(2j, n) r^n / (1+r)^(2j)`.
    fn jz_exact_closed(n: usize, r: f64) -> f64 {
        let twoj = (2.0 * J) as u32;
        (ln_binomial(twoj, n) + n as f64 * r.ln() - 2.0 * J * (1.0 + r).ln()).exp()
    }

    #[test]
    fn jz_semiclassical_matches_closed_form() {
        let pl = jz_pipeline();
        for n in [0usize, 3, 12, 20, 24] {
            let field =
                semiclassical_husimi(&pl.levels.levels[n], &pl.table, ExecMode::Sequential)
                    .unwrap();
            for ip in 0..N {
                for iq in 0..N {
                    let Some(z) = pl.grid.z_at(iq, ip) else {
                        continue;
                    };
                    let r = z.norm_sqr();
                    if r <= 1e-3 {
                        continue;
                    }
                    let want = jz_semiclassical_closed(n, r);
                    let got = field.values[pl.grid.index(iq, ip)];
                    if want < 1e-290 {
                        assert!(got < 1e-284, "tail blowup at r={r}: {got}");
                    } else {
                        assert!(
                            (got - want).abs() <= 1e-6 * want,
                            "state {n} at r={r}: {got} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn jz_exact_matches_binomial() {
        let pl = jz_pipeline();
        let eig = pl.model.eigensystem().unwrap();
        for n in [0usize, 5, 12, 19, 24] {
            let field = exact_husimi(&eig, n, &pl.grid, ExecMode::Sequential).unwrap();
            for ip in 0..N {
                for iq in 0..N {
                    let Some(z) = pl.grid.z_at(iq, ip) else {
                        continue;
                    };
                    let want = jz_exact_closed(n, z.norm_sqr());
                    let got = field.values[pl.grid.index(iq, ip)];
                    if want < 1e-290 {
                        assert!(got < 1e-284);
                    } else {
                        assert!(
                            (got - want).abs() <= 1e-10 * want,
                            "state {n}: {got} vs {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn jz_field_is_rotation_invariant() {
        // The symbol depends on |z| only, so the four mirror cells (exactly
        // equal |z| by lattice symmetry) must carry equal values.
        let pl = jz_pipeline();
        let field =
            semiclassical_husimi(&pl.levels.levels[7], &pl.table, ExecMode::Sequential).unwrap();
        for ip in 0..N / 2 {
            for iq in 0..N / 2 {
                let v = field.values[pl.grid.index(iq, ip)];
                for (mq, mp) in [
                    (N - 1 - iq, ip),
                    (iq, N - 1 - ip),
                    (N - 1 - iq, N - 1 - ip),
                    (ip, iq), // (q,p) -> (p,q) also preserves |z|
                ] {
                    let w = field.values[pl.grid.index(mq, mp)];
                    assert!(
                        (v - w).abs() <= 1e-12 * v.abs().max(1e-300),
                        "asymmetry at ({iq},{ip}) vs ({mq},{mp}): {v} vs {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn jz_peak_sits_on_the_predicted_circle() {
        // The semiclassical maximum lies on the circle where the exponent
        // vanishes: r* = (j + m + 1/2)/(j - m - 1/2), i.e. plane radius
        // L sqrt(r*/(1+r*)).
        let pl = jz_pipeline();
        let n = 10usize;
        let field =
            semiclassical_husimi(&pl.levels.levels[n], &pl.table, ExecMode::Sequential).unwrap();
        let grid = &pl.grid;
        let mut best = (f64::NEG_INFINITY, (0usize, 0usize));
        for ip in 0..N {
            for iq in 0..N {
                let v = field.values[grid.index(iq, ip)];
                if v > best.0 {
                    best = (v, (iq, ip));
                }
            }
        }
        let r_star = (n as f64 + 0.5) / (2.0 * J - n as f64 - 0.5);
        let radius_star = grid.half_width() * (r_star / (1.0 + r_star)).sqrt();
        let (iq, ip) = best.1;
        let radius = (grid.coord(iq).powi(2) + grid.coord(ip).powi(2)).sqrt();
        assert!(
            (radius - radius_star).abs() <= 1.5 * grid.step() * std::f64::consts::SQRT_2,
            "peak at radius {radius} vs predicted {radius_star}"
        );
    }

    #[test]
    fn normalization_contract() {
        let pl = jz_pipeline();
        let mut field =
            semiclassical_husimi(&pl.levels.levels[4], &pl.table, ExecMode::Sequential).unwrap();
        let mut doubled = field.clone();
        for v in &mut doubled.values {
            *v *= 2.0;
        }

        normalize_field(&mut field, &pl.grid).unwrap();
        let mass = parallel::sum_rowwise(&field.values, N) * pl.grid.cell_measure();
        assert!((mass - 1.0).abs() <= 1e-10, "mass after normalize: {mass}");
        assert!(field.norm_constant.is_some());

        // Idempotent to the bit.
        let snapshot: Vec<u64> = field.values.iter().map(|v| v.to_bits()).collect();
        let nc = field.norm_constant;
        normalize_field(&mut field, &pl.grid).unwrap();
        assert!(field
            .values
            .iter()
            .zip(&snapshot)
            .all(|(v, s)| v.to_bits() == *s));
        assert_eq!(field.norm_constant, nc);

        // Scaling by a power of two does not change the normalized result.
        normalize_field(&mut doubled, &pl.grid).unwrap();
        assert!(doubled
            .values
            .iter()
            .zip(&snapshot)
            .all(|(v, s)| v.to_bits() == *s));
    }

    #[test]
    fn all_ones_field_normalizes_to_inverse_measure() {
        let pl = jz_pipeline();
        let grid = &pl.grid;
        let mut values = vec![0.0; grid.len()];
        for ip in 0..N {
            for iq in 0..N {
                if grid.z_at(iq, ip).is_some() {
                    values[grid.index(iq, ip)] = 1.0;
                }
            }
        }
        let mut field = HusimiField {
            kind: FieldKind::Exact,
            state: 0,
            energy: 0.0,
            values,
            norm_constant: None,
            guard_cells: 0,
            stamp: grid.stamp(),
        };
        normalize_field(&mut field, grid).unwrap();
        let want = 1.0 / (grid.unmasked() as f64 * grid.cell_measure());
        for ip in 0..N {
            for iq in 0..N {
                let v = field.values[grid.index(iq, ip)];
                if grid.z_at(iq, ip).is_some() {
                    assert!((v - want).abs() <= 1e-12 * want);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn compare_metrics_basics() {
        let pl = jz_pipeline();
        let eig = pl.model.eigensystem().unwrap();
        let mut a = exact_husimi(&eig, 6, &pl.grid, ExecMode::Sequential).unwrap();
        normalize_field(&mut a, &pl.grid).unwrap();

        let same = compare_fields(&pl.grid, &a, &a).unwrap();
        assert!((same.overlap - 1.0).abs() < 1e-10);
        assert!(same.l1 < 1e-12 && same.l2_rel == 0.0 && same.sup_diff == 0.0);
        assert_eq!(same.argmax_a, same.argmax_b);

        // Disjoint supports overlap exactly zero.
        let mut b = a.clone();
        let half = a.values.len() / 2;
        let mut a2 = a.clone();
        for v in &mut a2.values[half..] {
            *v = 0.0;
        }
        for v in &mut b.values[..half] {
            *v = 0.0;
        }
        let disjoint = compare_fields(&pl.grid, &a2, &b).unwrap();
        assert_eq!(disjoint.overlap, 0.0);
    }

    #[test]
    fn exec_modes_agree_bit_for_bit() {
        let pl = jz_pipeline();
        let table_par =
            build_symbol_table(&pl.model, &pl.grid, pl.levels.span, ExecMode::Parallel).unwrap();
        assert_eq!(table_par.guard_cells(), pl.table.guard_cells());

        let lvl = &pl.levels.levels[9];
        let f_seq = semiclassical_husimi(lvl, &pl.table, ExecMode::Sequential).unwrap();
        let f_par = semiclassical_husimi(lvl, &table_par, ExecMode::Parallel).unwrap();
        assert!(f_seq
            .values
            .iter()
            .zip(&f_par.values)
            .all(|(x, y)| x.to_bits() == y.to_bits()));

        let eig = pl.model.eigensystem().unwrap();
        let e_seq = exact_husimi_batch(&eig, &[2, 11], &pl.grid, ExecMode::Sequential).unwrap();
        let e_par = exact_husimi_batch(&eig, &[2, 11], &pl.grid, ExecMode::Parallel).unwrap();
        for (fs, fp) in e_seq.iter().zip(&e_par) {
            assert!(fs
                .values
                .iter()
                .zip(&fp.values)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn error_paths() {
        let pl = jz_pipeline();
        let eig = pl.model.eigensystem().unwrap();

        assert!(matches!(
            exact_husimi(&eig, 99, &pl.grid, ExecMode::Sequential),
            Err(SpinError::StateOutOfRange { state: 99, .. })
        ));

        let mut level = pl.levels.levels[0].clone();
        level.period = f64::NAN;
        assert!(matches!(
            semiclassical_husimi(&level, &pl.table, ExecMode::Sequential),
            Err(SpinError::MissingFunctionals { .. })
        ));

        // A grid of different resolution must be rejected.
        let other = PhaseGrid::new(pl.grid.spin(), 32, PhaseGrid::DEFAULT_ZMAX).unwrap();
        let field = exact_husimi(&eig, 0, &pl.grid, ExecMode::Sequential).unwrap();
        let mut f2 = field.clone();
        assert!(matches!(
            normalize_field(&mut f2, &other),
            Err(SpinError::GridMismatch(_))
        ));
        let field32 = exact_husimi(&eig, 0, &other, ExecMode::Sequential).unwrap();
        assert!(matches!(
            compare_fields(&pl.grid, &field, &field32),
            Err(SpinError::GridMismatch(_))
        ));

        // An all-dead table produces an all-zero field, which cannot be
        // normalized. A huge span makes the velocity guard swallow the grid.
        let table = build_symbol_table(&pl.model, &pl.grid, 1e30, ExecMode::Sequential).unwrap();
        assert_eq!(table.guard_cells(), pl.grid.unmasked());
        let mut dead =
            semiclassical_husimi(&pl.levels.levels[3], &table, ExecMode::Sequential).unwrap();
        assert!(matches!(
            normalize_field(&mut dead, &pl.grid),
            Err(SpinError::AllZeroField)
        ));

        assert!(matches!(
            PhaseGrid::new(pl.grid.spin(), 1, 1e6),
            Err(SpinError::InvalidGrid(_))
        ));
        assert!(matches!(
            PhaseGrid::new(pl.grid.spin(), 64, -1.0),
            Err(SpinError::InvalidGrid(_))
        ));
        assert!(matches!(
            build_symbol_table(&pl.model, &pl.grid, 0.0, ExecMode::Sequential),
            Err(SpinError::InvalidGrid(_))
        ));
    }

    #[test]
    fn symmetrized_field_averages_the_group() {
        // The rigid rotor has no degeneracies, so the symmetrized field of
        // any state equals its plain field; with a window wide enough to
        // capture a neighbor it must equal the two-state average.
        let pl = jz_pipeline();
        let eig = pl.model.eigensystem().unwrap();
        let plain = exact_husimi(&eig, 8, &pl.grid, ExecMode::Sequential).unwrap();
        let sym = exact_husimi_symmetrized(&eig, 8, 1e-9, &pl.grid, ExecMode::Sequential).unwrap();
        assert!(plain
            .values
            .iter()
            .zip(&sym.values)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
