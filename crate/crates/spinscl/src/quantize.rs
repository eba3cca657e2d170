//! Semiclassical level extraction from the orbit-family census.
//!
//! Along each branch the quantization functional
//!
//! ```text
//! F(E) = | S(E) + I_SK(E) |
//! ```
//!
//! is swept on a uniform energy grid with a loosely-toleranced integrator;
//! every target value `(2k + 1) pi hbar` bracketed by the sweep is then
//! refined with tightly-toleranced orbits under a secant iteration. The
//! sweep also yields the phase-correction slope `dI_SK/dE` by secant, which
//! downstream consumers need.
//!
//! Branch endpoints require care: the lowest and highest rungs of a ladder
//! sit close to (sometimes exactly at) the critical energies bounding the
//! branch, where orbits degenerate and the integrator loses its footing.
//! Level search therefore runs inside a guard band, and rungs falling
//! outside it are recovered by linear extrapolation `dE = dF / F'` from the
//! nearest evaluated endpoint — exact whenever `S` is linear in `E` there,
//! which is the generic elliptic-fixed-point behaviour. Such levels carry
//! honest bookkeeping: the `extrapolated` flag, and the residual of the
//! quantization condition *at the endpoint actually evaluated*, never a
//! fabricated zero.
//!
//! `F` need not be monotone along a branch. When the orbit family sweeps
//! across the pole of the action gauge, the loop action jumps by the sphere
//! holonomy `4 pi hbar j` and `F` folds into a tent: the same rung index
//! then legitimately occurs at two distinct energies (one per flank), and
//! one rung hides at the apex between sweep samples where no segment can
//! bracket it. The scan therefore deduplicates rungs by index *and* energy
//! proximity, chases interior extrema of the sweep with a ternary search,
//! and drops isolated gauge-defect samples (an orbit threading the pole
//! exactly accumulates a spuriously cancelled action).

use crate::census::{Branch, Census, CriticalKind};
use crate::model::SpinModel;
use crate::orbit::{Orbit, OrbitIntegrator, OrbitParams};
use crate::symbol::SymbolEval;
use crate::SpinError;

/// Quality and provenance marks on one level.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevelFlags {
    /// Within the flagging distance of a critical energy, where semiclassical
    /// error is expected to peak.
    pub near_separatrix: bool,
    /// Energy obtained by endpoint extrapolation, not by a converged orbit
    /// at the reported energy.
    pub extrapolated: bool,
    /// The defining orbit only closed to the loose tolerance.
    pub loose_closure: bool,
}

impl LevelFlags {
    pub fn any(&self) -> bool {
        self.near_separatrix || self.extrapolated || self.loose_closure
    }
}

/// One semiclassically quantized level.
#[derive(Debug, Clone, Copy)]
pub struct Level {
    /// Global index after sorting all branches by energy.
    pub n: usize,
    /// Rung index within the branch ladder: `F = (2 n_local + 1) pi hbar`.
    pub n_local: usize,
    /// Index into the census branch list.
    pub branch: usize,
    pub energy: f64,
    /// Loop action of the defining orbit.
    pub action: f64,
    /// Phase correction of the defining orbit.
    pub sk_phase: f64,
    pub period: f64,
    /// Secant estimate of `dI_SK/dE` near this level.
    pub sk_phase_slope: f64,
    /// |F(E) - target|; for extrapolated levels, evaluated at the nearest
    /// endpoint the integrator could reach.
    pub residual: f64,
    pub flags: LevelFlags,
}

/// Sorted levels plus discovery diagnostics.
#[derive(Debug, Clone)]
pub struct LevelTable {
    pub levels: Vec<Level>,
    /// Classical symbol span used for tolerances.
    pub span: f64,
    pub warnings: Vec<String>,
}

impl LevelTable {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.energy).collect()
    }
}

/// Level-search controls.
#[derive(Debug, Clone, Copy)]
pub struct QuantizeParams {
    /// Sweep-orbit relative tolerance.
    pub sweep_rtol: f64,
    /// Refinement-orbit relative tolerance.
    pub refine_rtol: f64,
    /// Sweep samples per estimated rung (capped at `sweep_factor * dim + 1`).
    pub sweep_factor: usize,
    /// Secant iteration cap per level.
    pub refine_iters: usize,
    /// Acceptable |F - target| as a fraction of `pi hbar`.
    pub residual_rtol: f64,
    /// Guard distance from critical energies: fraction of the symbol span …
    pub guard_span_rtol: f64,
    /// … clamped to this fraction of the branch width.
    pub guard_width_frac: f64,
    /// `near_separatrix` flag distance as a fraction of the span.
    pub flag_span_rtol: f64,
    /// Extrapolation reach in units of the guard distance.
    pub extrap_guards: f64,
    /// Ternary-search iteration cap when chasing an interior extremum of
    /// the quantization functional.
    pub extremum_iters: usize,
    /// Same-rung deduplication distance as a fraction of the span: a rung
    /// re-found closer than this to an already-emitted copy is the same
    /// root; farther apart, it is a genuine second level on a folded branch.
    pub dedup_span_rtol: f64,
}

impl Default for QuantizeParams {
    fn default() -> Self {
        Self {
            sweep_rtol: 3e-8,
            refine_rtol: 3e-12,
            sweep_factor: 2,
            refine_iters: 8,
            residual_rtol: 1e-8,
            guard_span_rtol: 1e-3,
            guard_width_frac: 0.05,
            flag_span_rtol: 1e-3,
            extrap_guards: 3.0,
            extremum_iters: 60,
            dedup_span_rtol: 1e-7,
        }
    }
}

/// One sweep sample along a branch.
#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    e: f64,
    /// |S + I_SK|.
    f: f64,
    sk_phase: f64,
}

/// Quantize every branch of the census.
pub fn quantize(
    model: &SpinModel,
    census: &Census,
    params: QuantizeParams,
) -> Result<LevelTable, SpinError> {
    let spin = model.spin();
    let pi_hbar = std::f64::consts::PI * spin.hbar();
    let span = census.span();
    let res_tol = params.residual_rtol * pi_hbar;
    // Hand-off point between the refinement tiers; see `refine_rung`. It
    // must sit far above the loose integrator's noise floor: the tight
    // phase inherits its first secant slope from the loose pair, and a
    // pair squeezed down to the noise floor hands over a garbage slope.
    let pre_gate = 1e-2 * pi_hbar;

    let mut sym = SymbolEval::new(model);
    let mut sweep_integ = OrbitIntegrator::new(
        model,
        OrbitParams {
            ode: crate::ode::OdeParams {
                rtol: params.sweep_rtol,
                atol: params.sweep_rtol * 1e-2,
                ..Default::default()
            },
            ..Default::default()
        },
    );
    // The orbit integrator scales its absolute error floor to each seed,
    // so terminal rungs refined on cap orbits of radius ~sqrt(eps) off a
    // pole still resolve the functional at full relative accuracy.
    let mut tight_integ = OrbitIntegrator::new(
        model,
        OrbitParams {
            ode: crate::ode::OdeParams {
                rtol: params.refine_rtol,
                atol: params.refine_rtol * 1e-2,
                ..Default::default()
            },
            ..Default::default()
        },
    );

    let critical_energies: Vec<f64> = census.criticals.iter().map(|c| c.energy).collect();
    let mut warnings = Vec::new();
    let mut levels: Vec<Level> = Vec::new();

    for (bi, branch) in census.branches.iter().enumerate() {
        let width = branch.e_hi - branch.e_lo;
        let guard = (params.guard_span_rtol * span).min(params.guard_width_frac * width);
        let (a, b) = (branch.e_lo + guard, branch.e_hi - guard);
        if !(a < b) {
            warnings.push(format!(
                "branch {bi} on ({:.6e}, {:.6e}) thinner than its guard band; skipped",
                branch.e_lo, branch.e_hi
            ));
            continue;
        }

        // Size the sweep by the branch's capacity, not the Hilbert
        // dimension: the total variation of F over the domain counts the
        // rungs the branch can hold (monotone pieces telescope, each fold
        // flank adds its own share), so a coarse probe of the variation sets
        // a density of `sweep_factor` samples per rung. A fixed
        // dim-proportional grid wastes orders of magnitude on branches
        // holding a handful of rungs, which dominates the cost at large j.
        let n_cap = params.sweep_factor * spin.dim() + 1;
        let n_coarse = 33.min(n_cap);
        let mut coarse: Vec<(f64, f64)> = Vec::with_capacity(n_coarse);
        for k in 0..n_coarse {
            let e = a + (b - a) * k as f64 / (n_coarse - 1) as f64;
            if let Ok(o) = branch_orbit(&mut sym, &mut sweep_integ, branch, e) {
                coarse.push((e, (o.action + o.sk_phase).abs()));
            }
        }
        // Same isolated gauge-defect filter as the main sweep below.
        if coarse.len() >= 3 {
            let bad: Vec<usize> = (1..coarse.len() - 1)
                .filter(|&i| {
                    let mid = 0.5 * (coarse[i - 1].1 + coarse[i + 1].1);
                    (coarse[i].1 - mid).abs() > pi_hbar
                })
                .collect();
            for &i in bad.iter().rev() {
                coarse.remove(i);
            }
        }
        let n_sweep = if coarse.len() < 2 {
            n_cap
        } else {
            let variation: f64 = coarse.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum();
            let max_rise = coarse
                .windows(2)
                .map(|w| (w[1].1 - w[0].1).abs())
                .fold(0.0f64, f64::max);
            // A fold between coarse samples hides at most one adjacent
            // rise per flank beyond the sampled values.
            let rungs_est = ((variation + 2.0 * max_rise) / (2.0 * pi_hbar)).ceil() as usize;
            // A strictly monotone functional crosses every rung exactly
            // once, so brackets survive any sweep density and the only jobs
            // left for density are slope estimates and fold *detection* —
            // a fold the coarse probe missed still shows up as a hump at
            // ~1.1 samples per rung as long as it spans a few rungs. Folded
            // branches keep the full density for twin bracketing.
            let monotone = coarse.windows(2).all(|w| w[1].1 >= w[0].1)
                || coarse.windows(2).all(|w| w[1].1 <= w[0].1);
            let want = if monotone {
                rungs_est + rungs_est / 10 + 9
            } else {
                params.sweep_factor * rungs_est + 1
            };
            want.max(65).min(n_cap)
        };
        let mut table: Vec<SweepPoint> = Vec::with_capacity(n_sweep);
        for k in 0..n_sweep {
            let e = a + (b - a) * k as f64 / (n_sweep - 1) as f64;
            match branch_orbit(&mut sym, &mut sweep_integ, branch, e) {
                Ok(orbit) => table.push(SweepPoint {
                    e,
                    f: (orbit.action + orbit.sk_phase).abs(),
                    sk_phase: orbit.sk_phase,
                }),
                Err(err) => warnings.push(format!(
                    "branch {bi}: sweep point at E = {e:.9e} failed: {err}"
                )),
            }
        }
        // Drop gauge-defect samples: an orbit threading a chart pole exactly
        // loses the sphere holonomy from its accumulated action, leaving an
        // isolated sample a quantization-scale away from the line through
        // its neighbours. Nearby energies are unaffected, so the defect is
        // always isolated and the midpoint test identifies it.
        if table.len() >= 3 {
            let defective: Vec<usize> = (1..table.len() - 1)
                .filter(|&i| {
                    let mid = 0.5 * (table[i - 1].f + table[i + 1].f);
                    (table[i].f - mid).abs() > pi_hbar
                })
                .collect();
            for &i in defective.iter().rev() {
                warnings.push(format!(
                    "branch {bi}: dropped gauge-defect sample at E = {:.9e} (F = {:.6e})",
                    table[i].e, table[i].f
                ));
                table.remove(i);
            }
        }
        if table.len() < 4 {
            return Err(SpinError::QuantizeFailed {
                n: bi,
                reason: format!(
                    "only {} of {} sweep orbits survived on branch {bi}",
                    table.len(),
                    n_sweep
                ),
            });
        }

        let flag_dist = params.flag_span_rtol * span;
        let mut found = FoundRungs::new(params.dedup_span_rtol * span);

        // Interior rungs: scan sweep segments for bracketed targets. The
        // same-rung check runs on the *refined* energy, because a folded
        // branch carries one rung index at two distinct energies and both
        // must be kept.
        //
        // Consecutive roots on a monotone stretch of the functional predict
        // the next one: extrapolating E(F) linearly through the last two
        // converged roots usually lands inside the acceptance gate, so the
        // refinement settles in a single tight evaluation instead of a
        // loose pre-phase plus several tight steps. The run memory resets
        // whenever the sweep slope changes sign (a fold breaks the
        // extrapolation) or a refinement fails.
        let mut recent: Vec<(f64, f64)> = Vec::new();
        let mut run_sign = 0.0f64;
        for i in 0..table.len() - 1 {
            let (p, q) = (table[i], table[i + 1]);
            let seg_sign = (q.f - p.f).signum();
            if seg_sign != run_sign {
                recent.clear();
                run_sign = seg_sign;
            }
            let (f_lo, f_hi) = (p.f.min(q.f), p.f.max(q.f));
            for k in rungs_between(f_lo, f_hi, pi_hbar) {
                let target = (2 * k + 1) as f64 * pi_hbar;
                let warm = if recent.len() >= 2 {
                    let (e1, t1) = recent[recent.len() - 2];
                    let (e2, t2) = recent[recent.len() - 1];
                    let slope = (t2 - t1) / (e2 - e1);
                    let prop = e2 + (target - t2) / slope;
                    (slope.is_finite() && (prop - p.e) * (prop - q.e) <= 0.0)
                        .then_some((prop, slope))
                } else {
                    None
                };
                match refine_rung(
                    &mut sym,
                    &mut sweep_integ,
                    &mut tight_integ,
                    branch,
                    (p.e, p.f),
                    (q.e, q.f),
                    target,
                    (a, b),
                    res_tol,
                    pre_gate,
                    warm,
                    params.refine_iters,
                ) {
                    Ok((e_star, orbit, residual)) => {
                        recent.push((e_star, target));
                        if recent.len() > 2 {
                            recent.remove(0);
                        }
                        if found.already(k, e_star) {
                            continue;
                        }
                        found.push(k, e_star);
                        levels.push(make_level(
                            k,
                            bi,
                            e_star,
                            &orbit,
                            residual,
                            slope_near(&table, e_star),
                            near_critical(e_star, &critical_energies, flag_dist),
                        ));
                    }
                    Err(err) => {
                        recent.clear();
                        warnings.push(format!(
                            "branch {bi}: rung {k} near E = {:.9e} failed: {err}",
                            0.5 * (p.e + q.e)
                        ));
                    }
                }
            }
        }

        // Interior extrema: when the functional folds, its apex rung sits
        // between sweep samples where no segment brackets it, and rungs just
        // below the apex cross once per flank inside a single segment. A
        // candidate extremum shows up as a sample beating both neighbours;
        // exact ties (symmetric models sample the two flanks identically)
        // count as candidates too. The true extremum overshoots the best
        // sample by at most the adjacent rise — one sample always lands
        // within a grid spacing of the apex — so rungs beyond a small
        // multiple of that rise cannot be reached and the chase is skipped.
        let mut i = 1;
        while i + 1 < table.len() {
            let (fl, fc, fr) = (table[i - 1].f, table[i].f, table[i + 1].f);
            let hump = fc >= fl && fc >= fr && (fc > fl || fc > fr);
            let dip = fc <= fl && fc <= fr && (fc < fl || fc < fr);
            if !hump && !dip {
                i += 1;
                continue;
            }
            let rise = (fc - fl).abs().max((fc - fr).abs());
            let headroom = 4.0 * rise + 4.0 * res_tol;
            let cand: Vec<usize> = if hump {
                rungs_between(fc, fc + headroom, pi_hbar)
            } else {
                rungs_between((fc - headroom).max(0.0), fc, pi_hbar)
            }
            .filter(|&k| {
                let t = (2 * k + 1) as f64 * pi_hbar;
                if hump {
                    t > fc
                } else {
                    t < fc
                }
            })
            .collect();
            if cand.is_empty() {
                i += 1;
                continue;
            }

            let (mut lo, mut hi) = (table[i - 1].e, table[i + 1].e);
            let sgn = if hump { 1.0 } else { -1.0 };
            let mut best: Option<(f64, f64, Orbit)> = None;
            for _ in 0..params.extremum_iters {
                if hi - lo <= 1e-12 * span {
                    break;
                }
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                let r1 = try_f(&mut sym, &mut tight_integ, branch, m1);
                let r2 = try_f(&mut sym, &mut tight_integ, branch, m2);
                if let Some((f1, o1)) = &r1 {
                    if better(&best, *f1, sgn) {
                        best = Some((m1, *f1, o1.clone()));
                    }
                }
                if let Some((f2, o2)) = &r2 {
                    if better(&best, *f2, sgn) {
                        best = Some((m2, *f2, o2.clone()));
                    }
                }
                match (r1, r2) {
                    (Some((f1, _)), Some((f2, _))) => {
                        if sgn * f1 < sgn * f2 {
                            lo = m1;
                        } else {
                            hi = m2;
                        }
                    }
                    // Move away from a failing evaluation.
                    (None, Some(_)) => lo = m1,
                    (Some(_), None) => hi = m2,
                    (None, None) => {
                        lo = m1;
                        hi = m2;
                    }
                }
            }
            let Some((e_x, f_x, orbit_x)) = best else {
                warnings.push(format!(
                    "branch {bi}: extremum chase near E = {:.9e} never closed an orbit",
                    table[i].e
                ));
                i += 1;
                continue;
            };
            // A dip plunging a quantization scale below its flanks is the
            // gauge defect again (the chase stepped onto the through-pole
            // energy), not a feature of the smooth functional.
            if dip && fl.min(fr) - f_x > pi_hbar {
                warnings.push(format!(
                    "branch {bi}: discarded gauge-defect dip at E = {e_x:.9e}"
                ));
                i += 2;
                continue;
            }

            for &k in &cand {
                let target = (2 * k + 1) as f64 * pi_hbar;
                let apex_res = (f_x - target).abs();
                if apex_res <= res_tol {
                    // The extremum itself touches the rung target.
                    if !found.already(k, e_x) {
                        found.push(k, e_x);
                        levels.push(make_level(
                            k,
                            bi,
                            e_x,
                            &orbit_x,
                            apex_res,
                            slope_near(&table, e_x),
                            near_critical(e_x, &critical_energies, flag_dist),
                        ));
                    }
                    continue;
                }
                if (hump && target >= f_x) || (dip && target <= f_x) {
                    continue; // the family never reaches this rung
                }
                // Reached strictly before the extremum: once per flank.
                let flanks = [
                    ((table[i - 1].e, table[i - 1].f), (e_x, f_x)),
                    ((e_x, f_x), (table[i + 1].e, table[i + 1].f)),
                ];
                for (p, q) in flanks {
                    match refine_rung(
                        &mut sym,
                        &mut sweep_integ,
                        &mut tight_integ,
                        branch,
                        p,
                        q,
                        target,
                        (a, b),
                        res_tol,
                        pre_gate,
                        None,
                        params.refine_iters,
                    ) {
                        Ok((e_s, orbit, residual)) => {
                            if found.already(k, e_s) {
                                continue;
                            }
                            found.push(k, e_s);
                            levels.push(make_level(
                                k,
                                bi,
                                e_s,
                                &orbit,
                                residual,
                                slope_near(&table, e_s),
                                near_critical(e_s, &critical_energies, flag_dist),
                            ));
                        }
                        Err(err) => warnings.push(format!(
                            "branch {bi}: rung {k} on extremum flank at E = {e_x:.9e} failed: {err}"
                        )),
                    }
                }
            }
            // Exact flank ties make both straddle samples candidates for the
            // same extremum; the partner is already handled.
            i += 2;
        }

        // Edge rungs: extrapolate past each endpoint within reach. What
        // "reach" means depends on the critical point closing the branch.
        // An elliptic endpoint can hold its terminal rung strictly outside
        // the classical interval: an anisotropic well floors the phase
        // correction at `pi hbar (wa + wb) / (2 sqrt(wa wb)) > pi hbar`, so
        // the lowest target is crossed only by linear continuation below
        // the minimum, at most one rung spacing `2 pi hbar / |F'|` away.
        // Across a saddle, by contrast, the family itself ends and the
        // neighbouring states belong to other branches: extrapolated
        // emissions there would double-count, so they are forbidden.
        for end in [EdgeEnd::Low, EdgeEnd::High] {
            let (pt_end, pt_in) = match end {
                EdgeEnd::Low => (table[0], table[1]),
                EdgeEnd::High => (table[table.len() - 1], table[table.len() - 2]),
            };
            let end_energy = match end {
                EdgeEnd::Low => branch.e_lo,
                EdgeEnd::High => branch.e_hi,
            };
            let saddle_end = census.criticals.iter().any(|c| {
                matches!(c.kind, CriticalKind::Saddle)
                    && (c.energy - end_energy).abs() <= 1e-9 * span
            });
            let slope = (pt_end.f - pt_in.f) / (pt_end.e - pt_in.e);
            if slope == 0.0 || !slope.is_finite() {
                continue;
            }
            let de_sign = match end {
                EdgeEnd::Low => -1.0,
                EdgeEnd::High => 1.0,
            };
            let reach = params.extrap_guards * guard
                + if saddle_end {
                    0.0
                } else {
                    2.0 * pi_hbar / slope.abs()
                };
            // Enumerate rungs whose extrapolated energy leaves the swept
            // domain on this side but stays within reach.
            let f_near = pt_end.f;
            let f_far = pt_end.f + slope * de_sign * reach;
            let (f_lo, f_hi) = (f_near.min(f_far), f_near.max(f_far));
            for k in rungs_between(f_lo, f_hi, pi_hbar) {
                let target = (2 * k + 1) as f64 * pi_hbar;
                let de = (target - pt_end.f) / slope;
                if de * de_sign < 0.0 || de.abs() > reach {
                    continue;
                }
                let e_star = pt_end.e + de;
                // Try a genuine refinement first. The rung may sit at (or,
                // by sweep noise, marginally beyond) the branch edge while
                // the level set still closes at every energy strictly
                // inside — a harmonic ladder puts its terminal rung exactly
                // on the edge — so the trial energy is clamped into the
                // open interval instead of gated on it. Rungs that are
                // truly out of reach (anisotropic well floors) fail the
                // residual gate here and fall back to extrapolation.
                //
                // The clamp margin is physical at a saddle end: the period
                // diverges there, and an orbit pinned machine-close to the
                // saddle would exhaust the step budget before closing. An
                // elliptic end takes the opposite convention — cap orbits
                // stay cheap arbitrarily close to the critical point, and
                // terminal rungs can sit exactly on the edge. The shrunk
                // domain is handed to the refiner so its own proposal
                // clamps cannot creep past the margin either.
                let margin = if saddle_end {
                    1e-7 * span
                } else {
                    f64::EPSILON * span
                };
                let dom = (branch.e_lo + margin, branch.e_hi - margin);
                let refined = if dom.1 > dom.0 {
                    let e_try = e_star.clamp(dom.0, dom.1);
                    match refine_rung(
                        &mut sym,
                        &mut sweep_integ,
                        &mut tight_integ,
                        branch,
                        (pt_in.e, pt_in.f),
                        (pt_end.e, pt_end.f),
                        target,
                        dom,
                        res_tol,
                        pre_gate,
                        Some((e_try, slope)),
                        params.refine_iters,
                    ) {
                        Ok(hit) => Some(hit),
                        Err(err) => {
                            warnings.push(format!(
                                "branch {bi}: edge rung {k} near E = {e_star:.9e} \
                                 fell back to extrapolation: {err}"
                            ));
                            None
                        }
                    }
                } else {
                    None
                };
                match refined {
                    Some((e_ref, orbit, residual)) => {
                        if found.already(k, e_ref) {
                            continue;
                        }
                        found.push(k, e_ref);
                        let mut lvl = make_level(
                            k,
                            bi,
                            e_ref,
                            &orbit,
                            residual,
                            slope_near(&table, e_ref),
                            true, // inside the guard band by construction
                        );
                        lvl.flags.near_separatrix = true;
                        levels.push(lvl);
                    }
                    None => {
                        if saddle_end || found.already(k, e_star) {
                            continue;
                        }
                        // Honest extrapolation: invariants and residual from
                        // the endpoint orbit that actually closed.
                        let end_orbit =
                            match branch_orbit(&mut sym, &mut tight_integ, branch, pt_end.e) {
                                Ok(o) => o,
                                Err(err) => {
                                    warnings.push(format!(
                                        "branch {bi}: endpoint re-evaluation for rung {k} failed: {err}"
                                    ));
                                    continue;
                                }
                            };
                        let residual =
                            ((end_orbit.action + end_orbit.sk_phase).abs() - target).abs();
                        // A real terminal rung misses the endpoint value by
                        // the (small) anisotropy offset; the next rung out
                        // would miss by a full gap. Half a gap separates.
                        if residual >= pi_hbar {
                            continue;
                        }
                        found.push(k, e_star);
                        let mut lvl = make_level(
                            k,
                            bi,
                            e_star,
                            &end_orbit,
                            residual,
                            slope_near(&table, pt_end.e),
                            true,
                        );
                        lvl.energy = e_star;
                        lvl.flags.extrapolated = true;
                        lvl.flags.near_separatrix = true;
                        levels.push(lvl);
                    }
                }
            }
        }
    }

    // Global ordering: energy, then branch, then rung (ties are exact
    // degeneracies; the secondary keys make the order reproducible).
    levels.sort_by(|x, y| {
        (x.energy, x.branch, x.n_local)
            .partial_cmp(&(y.energy, y.branch, y.n_local))
            .unwrap()
    });
    for (n, lvl) in levels.iter_mut().enumerate() {
        lvl.n = n;
    }
    Ok(LevelTable {
        levels,
        span,
        warnings,
    })
}

enum EdgeEnd {
    Low,
    High,
}

/// Rungs already emitted on the current branch. Keyed by rung index *and*
/// energy: a folded functional legitimately carries one rung index at two
/// well-separated energies, so the index alone cannot identify a root,
/// while re-refinements of the same root land within the residual
/// tolerance of each other and must collapse.
struct FoundRungs {
    tol: f64,
    items: Vec<(usize, f64)>,
}

impl FoundRungs {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            items: Vec::new(),
        }
    }

    fn already(&self, k: usize, e: f64) -> bool {
        self.items
            .iter()
            .any(|&(kk, ee)| kk == k && (ee - e).abs() <= self.tol)
    }

    fn push(&mut self, k: usize, e: f64) {
        self.items.push((k, e));
    }
}

/// `F(E)` and its defining orbit at one energy; `None` if no orbit closed.
fn try_f(
    sym: &mut SymbolEval,
    integ: &mut OrbitIntegrator,
    branch: &Branch,
    e: f64,
) -> Option<(f64, Orbit)> {
    branch_orbit(sym, integ, branch, e)
        .ok()
        .map(|o| ((o.action + o.sk_phase).abs(), o))
}

/// Does `f` beat the tracked extremum in the `sgn` direction?
fn better(best: &Option<(f64, f64, Orbit)>, f: f64, sgn: f64) -> bool {
    best.as_ref().is_none_or(|(_, bf, _)| sgn * f > sgn * *bf)
}

/// Rung indices `k` whose targets `(2k + 1) pi hbar` lie in `[f_lo, f_hi]`.
fn rungs_between(f_lo: f64, f_hi: f64, pi_hbar: f64) -> std::ops::RangeInclusive<usize> {
    let lo = ((f_lo / pi_hbar - 1.0) / 2.0).ceil().max(0.0) as usize;
    let hi_f = ((f_hi / pi_hbar - 1.0) / 2.0).floor();
    if hi_f < 0.0 {
        return 1..=0; // empty
    }
    lo..=(hi_f as usize)
}

/// Seed and integrate one tight orbit at energy `e` on a branch.
fn branch_orbit(
    sym: &mut SymbolEval,
    integ: &mut OrbitIntegrator,
    branch: &Branch,
    e: f64,
) -> Result<Orbit, SpinError> {
    let seed = branch.seed_at(sym, e)?;
    integ.closed_orbit(seed)
}

/// Secant refinement of `F(E) = target` from a bracketing pair.
///
/// Two tiers: a few secant steps on the cheap loose integrator first pull
/// the pair close to the root (the loose functional carries integration
/// noise far below `pre_gate`, so iterating past that gate buys nothing),
/// then the tight integrator polishes to the residual tolerance. Residual
/// acceptance and the returned orbit always come from tight evaluations.
///
/// `warm`, when given, is an `(energy, dF/dE)` prediction extrapolated
/// through previously converged roots of the same monotone run. It replaces
/// the whole loose phase: on a smooth branch the predicted energy already
/// sits within the acceptance gate and a single tight evaluation settles
/// the rung.
#[allow(clippy::too_many_arguments)]
fn refine_rung(
    sym: &mut SymbolEval,
    loose: &mut OrbitIntegrator,
    integ: &mut OrbitIntegrator,
    branch: &Branch,
    p0: (f64, f64),
    p1: (f64, f64),
    target: f64,
    domain: (f64, f64),
    res_tol: f64,
    pre_gate: f64,
    warm: Option<(f64, f64)>,
    iters: usize,
) -> Result<(f64, Orbit, f64), SpinError> {
    let (mut e_prev, mut f_prev) = p0;
    let (mut e_cur, mut f_cur) = p1;
    if warm.is_none() {
        for _ in 0..3 {
            if (f_cur - target).abs() <= pre_gate {
                break;
            }
            let denom = f_cur - f_prev;
            if denom == 0.0 {
                break;
            }
            let e_next = (e_cur - (f_cur - target) * (e_cur - e_prev) / denom).clamp(
                domain.0 + f64::EPSILON * domain.0.abs(),
                domain.1 - f64::EPSILON * domain.1.abs(),
            );
            let Some((f_next, _)) = try_f(sym, loose, branch, e_next) else {
                break;
            };
            (e_prev, f_prev) = (e_cur, f_cur);
            (e_cur, f_cur) = (e_next, f_next);
        }
    }
    // Tight phase with tight-only memory. A secant pair must never mix
    // tiers: once the loose phase has converged, a loose f differs from the
    // tight f at the same energy by the loose integration bias over a
    // vanishing energy separation, and a slope computed across the tiers
    // diverges (or collapses the denominator to zero outright). The loop
    // below therefore proposes Newton steps from a running slope that is
    // seeded by the wide loose pair — where the bias contribution is
    // negligible — and refreshed only from pairs of tight evaluations with
    // meaningful separation.
    let mut slope = {
        let d = e_cur - e_prev;
        if d != 0.0 {
            (f_cur - f_prev) / d
        } else {
            0.0
        }
    };
    let sep_floor = 1e-13 * (domain.1 - domain.0).abs();
    let mut prev_tight: Option<(f64, f64)> = None;
    let mut e_next = if slope != 0.0 && slope.is_finite() {
        e_cur - (f_cur - target) / slope
    } else {
        e_cur
    };
    if let Some((e_warm, slope_warm)) = warm {
        e_next = e_warm;
        if slope_warm != 0.0 && slope_warm.is_finite() {
            slope = slope_warm;
        }
    }
    let mut best: Option<(f64, Orbit, f64)> = None;
    for _ in 0..iters {
        // Keep iterates inside the branch domain.
        e_next = e_next.clamp(
            domain.0 + f64::EPSILON * domain.0.abs(),
            domain.1 - f64::EPSILON * domain.1.abs(),
        );
        // A proposal pinned to the clamp repeats the previous evaluation
        // verbatim (a target beyond the branch edge drives every Newton
        // step outward); stop instead of burning the budget on it.
        if prev_tight.is_some_and(|(ep, _)| ep == e_next) {
            break;
        }
        let orbit = branch_orbit(sym, integ, branch, e_next)?;
        let f_next = (orbit.action + orbit.sk_phase).abs();
        let residual = (f_next - target).abs();
        if best
            .as_ref()
            .is_none_or(|(_, _, f)| residual < (f - target).abs())
        {
            best = Some((e_next, orbit, f_next));
        }
        if residual <= res_tol {
            break;
        }
        if let Some((ep, fp)) = prev_tight {
            let d = e_next - ep;
            if d.abs() > sep_floor && f_next != fp {
                slope = (f_next - fp) / d;
            }
        }
        prev_tight = Some((e_next, f_next));
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        e_next -= (f_next - target) / slope;
    }
    let (e_star, orbit, f_star) = best.ok_or(SpinError::QuantizeFailed {
        n: 0,
        reason: "secant iteration made no progress".into(),
    })?;
    let residual = (f_star - target).abs();
    if residual > res_tol {
        return Err(SpinError::QuantizeFailed {
            n: 0,
            reason: format!("residual {residual:.3e} above tolerance {res_tol:.3e}"),
        });
    }
    // The accepted evaluation still sits `residual` short of the target;
    // one uncommitted Newton step removes that bias from the reported
    // energy, leaving only integration noise. The correction is at most
    // `res_tol / slope`, so even a mediocre slope estimate only perturbs
    // an already-negligible term.
    let e_star = if slope != 0.0 && slope.is_finite() {
        (e_star - (f_star - target) / slope).clamp(
            domain.0 + f64::EPSILON * domain.0.abs(),
            domain.1 - f64::EPSILON * domain.1.abs(),
        )
    } else {
        e_star
    };
    Ok((e_star, orbit, residual))
}

/// Secant `dI_SK/dE` from the sweep segment containing `e`.
fn slope_near(table: &[SweepPoint], e: f64) -> f64 {
    let i = table
        .windows(2)
        .position(|w| e <= w[1].e)
        .unwrap_or(table.len() - 2);
    let (p, q) = (table[i], table[i + 1]);
    (q.sk_phase - p.sk_phase) / (q.e - p.e)
}

fn near_critical(e: f64, criticals: &[f64], dist: f64) -> bool {
    criticals.iter().any(|&c| (e - c).abs() <= dist)
}

fn make_level(
    k: usize,
    branch: usize,
    energy: f64,
    orbit: &Orbit,
    residual: f64,
    sk_phase_slope: f64,
    near_separatrix: bool,
) -> Level {
    Level {
        n: 0, // assigned after the global sort
        n_local: k,
        branch,
        energy,
        action: orbit.action,
        sk_phase: orbit.sk_phase,
        period: orbit.period,
        sk_phase_slope,
        residual,
        flags: LevelFlags {
            near_separatrix,
            extrapolated: false,
            loose_closure: orbit.loose_closure,
        },
    }
}
