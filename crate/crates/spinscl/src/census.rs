//! Phase-space census: critical points of the symbol and orbit families.
//!
//! The quantizer needs to know, before it can bracket any level, how the
//! sphere decomposes into one-parameter families of closed orbits
//! ("branches"). On a sphere that structure is controlled entirely by the
//! critical points of the symbol: families are born and die only at critical
//! energies, so every open interval between adjacent critical energies
//! carries a fixed set of branches.
//!
//! Discovery proceeds in two stages:
//!
//! 1. **Critical points** — a coarse grid scan of `|h_d|^2` over both chart
//!    disks (plus the two pole seeds) feeds a damped 2D Newton iteration on
//!    the real gradient, using the exact chart-coordinate Hessian assembled
//!    from the second-order symbols. Converged points are deduplicated by
//!    chordal distance and classified by the Hessian signature.
//! 2. **Branches** — from every critical point four chart-axis rays are cast;
//!    the first crossing of the mid-interval energy along each ray seeds a
//!    trial orbit. Seeds landing on an already-integrated orbit (chordal
//!    distance to its samples below a few sample gaps — distinct orbits of
//!    one energy cannot touch) are dropped, so each branch is kept once, with
//!    its generating ray stored for later re-seeding at any energy in the
//!    interval.

use crate::chart::{self, Chart, Point};
use crate::model::SpinModel;
use crate::orbit::{OrbitIntegrator, OrbitParams};
use crate::symbol::SymbolEval;
use crate::{C64, SpinError};

/// Hessian signature of a critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
}

/// One critical point of the classical symbol.
#[derive(Debug, Clone, Copy)]
pub struct CriticalPoint {
    pub point: Point,
    pub energy: f64,
    pub kind: CriticalKind,
}

/// Invariants of the representative mid-interval orbit of a branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchRep {
    pub energy: f64,
    pub period: f64,
    pub action: f64,
    pub sk_phase: f64,
}

/// A one-parameter family of closed orbits on an open energy interval.
#[derive(Debug, Clone)]
pub struct Branch {
    /// Open energy interval `(e_lo, e_hi)` on which the family lives.
    pub e_lo: f64,
    pub e_hi: f64,
    /// Critical point the generating ray starts from.
    pub anchor: Point,
    /// Unit ray direction in the anchor's chart.
    pub ray: C64,
    /// Mid-interval representative orbit invariants.
    pub rep: BranchRep,
}

impl Branch {
    /// A point with symbol energy `e` on this branch: first crossing of `e`
    /// along the generating ray. `e` must lie inside the open interval.
    pub fn seed_at(&self, sym: &mut SymbolEval, e: f64) -> Result<Point, SpinError> {
        ray_crossing(sym, self.anchor, self.ray, e)
            .ok_or(SpinError::EnergyOutOfRange { energy: e })
    }
}

/// Complete phase-space census for one model.
#[derive(Debug, Clone)]
pub struct Census {
    pub criticals: Vec<CriticalPoint>,
    pub branches: Vec<Branch>,
    /// Non-fatal discovery anomalies (skipped seeds and the like).
    pub warnings: Vec<String>,
}

impl Census {
    /// Lowest / highest symbol value (attained at critical points).
    pub fn e_min(&self) -> f64 {
        self.criticals.first().map_or(f64::NAN, |c| c.energy)
    }

    pub fn e_max(&self) -> f64 {
        self.criticals.last().map_or(f64::NAN, |c| c.energy)
    }

    /// Full classical energy span of the symbol.
    pub fn span(&self) -> f64 {
        self.e_max() - self.e_min()
    }
}

/// Census controls. Defaults suit symbols of modest polynomial degree.
#[derive(Debug, Clone, Copy)]
pub struct CensusParams {
    /// Grid points per side of each chart scan.
    pub grid_n: usize,
    /// Newton iteration cap per seed.
    pub newton_iters: usize,
    /// Critical-point dedup radius as a fraction of the phase-space diameter.
    pub dedup_rtol: f64,
    /// Critical-energy dedup as a fraction of the symbol span.
    pub energy_dedup_rtol: f64,
    pub orbit: OrbitParams,
}

impl Default for CensusParams {
    fn default() -> Self {
        Self {
            grid_n: 160,
            newton_iters: 80,
            dedup_rtol: 1e-6,
            energy_dedup_rtol: 1e-12,
            orbit: OrbitParams::default(),
        }
    }
}

/// Run the full census for a model.
pub fn census(model: &SpinModel, params: CensusParams) -> Result<Census, SpinError> {
    let mut sym = SymbolEval::new(model);
    let criticals = critical_points(&mut sym, &params)?;
    let (branches, warnings) = discover_branches(model, &mut sym, &criticals, &params)?;
    Ok(Census {
        criticals,
        branches,
        warnings,
    })
}

/// Locate and classify every critical point of the symbol.
pub fn critical_points(
    sym: &mut SymbolEval,
    params: &CensusParams,
) -> Result<Vec<CriticalPoint>, SpinError> {
    let spin = sym.spin();
    let diam = 2.0 * (spin.hbar() * spin.j()).sqrt();

    // Stage 1: grid-scan |h_d| on both chart disks; local minima seed Newton.
    let n = params.grid_n;
    let lim = chart::SWITCH_RADIUS;
    let mut seeds: Vec<Point> = vec![
        Point {
            zeta: C64::new(0.0, 0.0),
            chart: Chart::South,
        },
        Point {
            zeta: C64::new(0.0, 0.0),
            chart: Chart::North,
        },
    ];
    for &ch in &[Chart::South, Chart::North] {
        let mut grad = vec![0.0f64; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let x = -lim + 2.0 * lim * (ix as f64 + 0.5) / n as f64;
                let y = -lim + 2.0 * lim * (iy as f64 + 0.5) / n as f64;
                let pt = Point {
                    zeta: C64::new(x, y),
                    chart: ch,
                };
                grad[iy * n + ix] = sym.eval(pt).h_d.norm_sqr();
            }
        }
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let idx = iy * n + ix;
                let g = grad[idx];
                let mut is_min = true;
                'nb: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let j = (iy as i64 + dy) as usize * n + (ix as i64 + dx) as usize;
                        // Lexicographic tie-break: symmetric symbols produce
                        // exactly tied plateau pairs astride mirror axes, and
                        // a strict comparison alone would discard both.
                        if grad[j] < g || (grad[j] == g && j < idx) {
                            is_min = false;
                            break 'nb;
                        }
                    }
                }
                if is_min {
                    let x = -lim + 2.0 * lim * (ix as f64 + 0.5) / n as f64;
                    let y = -lim + 2.0 * lim * (iy as f64 + 0.5) / n as f64;
                    seeds.push(Point {
                        zeta: C64::new(x, y),
                        chart: ch,
                    });
                }
            }
        }
    }

    // Stage 2: damped Newton on the real gradient per seed.
    let mut found: Vec<(Point, f64, CriticalKind, f64)> = Vec::new(); // + |h_d| quality
    for &seed in &seeds {
        if let Some((pt, quality)) = newton_refine(sym, seed, params.newton_iters) {
            let sc = sym.eval_curvature(pt);
            let hxx = 2.0 * (sc.pt.h_dd + sc.h_hh.re);
            let hyy = 2.0 * (sc.pt.h_dd - sc.h_hh.re);
            let hxy = -2.0 * sc.h_hh.im;
            let det = hxx * hyy - hxy * hxy;
            let kind = if det < 0.0 {
                CriticalKind::Saddle
            } else if hxx + hyy > 0.0 {
                CriticalKind::Minimum
            } else {
                CriticalKind::Maximum
            };
            found.push((pt, sc.pt.h, kind, quality));
        }
    }

    // Stage 3: chordal dedup, keeping the best-converged representative.
    let tol = params.dedup_rtol * diam;
    let mut kept: Vec<(Point, f64, CriticalKind, f64)> = Vec::new();
    // Deterministic examination order regardless of seed order.
    found.sort_by(|a, b| {
        (a.1, a.0.unit_vector())
            .partial_cmp(&(b.1, b.0.unit_vector()))
            .unwrap()
    });
    for cand in found {
        match kept
            .iter_mut()
            .find(|k| chart::chordal_distance(spin, k.0, cand.0) <= tol)
        {
            Some(k) => {
                if cand.3 < k.3 {
                    *k = cand;
                }
            }
            None => kept.push(cand),
        }
    }
    if kept.is_empty() {
        return Err(SpinError::OrbitOpen(
            "no critical points found; symbol appears constant".into(),
        ));
    }
    kept.sort_by(|a, b| {
        (a.1, a.0.unit_vector())
            .partial_cmp(&(b.1, b.0.unit_vector()))
            .unwrap()
    });
    Ok(kept
        .into_iter()
        .map(|(point, energy, kind, _)| CriticalPoint {
            point,
            energy,
            kind,
        })
        .collect())
}

/// Damped Newton for `h_d = 0` from one seed. Returns the converged point
/// and its residual `|h_d|`, or `None` if it failed to converge.
fn newton_refine(sym: &mut SymbolEval, seed: Point, iters: usize) -> Option<(Point, f64)> {
    let mut pt = seed;
    for _ in 0..iters {
        let sc = sym.eval_curvature(pt);
        // Real gradient: h_d = (H_x - i H_y)/2.
        let gx = 2.0 * sc.pt.h_d.re;
        let gy = -2.0 * sc.pt.h_d.im;
        let hxx = 2.0 * (sc.pt.h_dd + sc.h_hh.re);
        let hyy = 2.0 * (sc.pt.h_dd - sc.h_hh.re);
        let hxy = -2.0 * sc.h_hh.im;
        let det = hxx * hyy - hxy * hxy;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let mut dx = -(hyy * gx - hxy * gy) / det;
        let mut dy = -(hxx * gy - hxy * gx) / det;
        // Clamp the step to a fraction of the local chart scale.
        let scale = 0.25 * (1.0 + pt.zeta.norm_sqr());
        let step = (dx * dx + dy * dy).sqrt();
        if step > scale {
            dx *= scale / step;
            dy *= scale / step;
        }
        // Globalize: take the Newton step only if it reduces |h_d|^2,
        // backtracking otherwise. Raw Newton oscillates across the thin
        // well channels of strongly anisotropic symbols and then which
        // seeds survive depends on rounding dust.
        let g0 = sc.pt.h_d.norm_sqr();
        let mut t = 1.0f64;
        let taken = loop {
            let mut cand = Point {
                zeta: pt.zeta + C64::new(t * dx, t * dy),
                chart: pt.chart,
            };
            if !cand.zeta.is_finite() {
                return None;
            }
            if chart::needs_switch(cand.zeta) {
                cand = cand.switched();
            }
            // Below the backtracking floor the residual sits at its noise
            // level; take the step and let the size test decide.
            if sym.eval(cand).h_d.norm_sqr() < g0 || t < 1.0 / 1024.0 {
                break cand;
            }
            t *= 0.5;
        };
        pt = taken;
        if t * step < 1e-14 * (1.0 + pt.zeta.norm_sqr()) {
            let q = sym.eval(pt).h_d.norm();
            return Some((pt, q));
        }
    }
    None
}

/// First `h = e` crossing along a chart ray from `from`, or `None`.
///
/// The march is geometric so rays can chase level sets far beyond the chart
/// disk (a level set hugging the opposite pole sits at large `|zeta|`; the
/// symbol evaluation stays well-conditioned there and the orbit integrator
/// re-normalizes the chart on entry).
fn ray_crossing(sym: &mut SymbolEval, from: Point, ray: C64, e: f64) -> Option<Point> {
    let at = |sym: &mut SymbolEval, t: f64| -> f64 {
        sym.energy(Point {
            zeta: from.zeta + ray * t,
            chart: from.chart,
        }) - e
    };
    let f0 = at(sym, 0.0);
    if f0 == 0.0 {
        return None; // degenerate: the anchor itself sits at `e`
    }
    // The coarse ratio covers the fifteen decades quickly, but when the
    // level set is tangent to a symbol extremum lying on the ray the
    // sign-change window is narrow (width ~ sqrt of the energy gap) and a
    // coarse step can clear it entirely; a failed pass is retried at a fine
    // ratio. The cap must reach the crossings of near-degenerate energies:
    // a level set confined to a cap of depth `d` below the opposite pole
    // sits at `|zeta| ~ 1/sqrt(d)`, so 3e8 covers depths down to ~1e-17 of
    // the energy scale.
    let mut bracket = None;
    'pass: for ratio in [1.25, 1.02] {
        let mut t_prev = 0.0f64;
        let mut t = 1e-7;
        while t < 3e8 {
            let f = at(sym, t);
            if f == 0.0 || (f > 0.0) != (f0 > 0.0) {
                bracket = Some((t_prev, t));
                break 'pass;
            }
            t_prev = t;
            t *= ratio;
        }
    }
    let (mut lo, mut hi) = bracket?;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let f = at(sym, mid);
        if f == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (f > 0.0) == (f0 > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(Point {
        zeta: from.zeta + ray * (0.5 * (lo + hi)),
        chart: from.chart,
    })
}

/// Enumerate orbit families per critical-energy interval.
fn discover_branches(
    model: &SpinModel,
    sym: &mut SymbolEval,
    criticals: &[CriticalPoint],
    params: &CensusParams,
) -> Result<(Vec<Branch>, Vec<String>), SpinError> {
    let spin = sym.spin();
    let mut warnings = Vec::new();

    // Distinct critical energies.
    let mut energies: Vec<f64> = criticals.iter().map(|c| c.energy).collect();
    energies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let span = energies.last().unwrap() - energies.first().unwrap();
    if !(span > 0.0) {
        return Err(SpinError::OrbitOpen(
            "symbol span is zero; no orbit families".into(),
        ));
    }
    let tol_e = params.energy_dedup_rtol * span;
    energies.dedup_by(|a, b| (*a - *b).abs() <= tol_e);

    let rays = [
        C64::new(1.0, 0.0),
        C64::new(-1.0, 0.0),
        C64::new(0.0, 1.0),
        C64::new(0.0, -1.0),
    ];

    let mut orbit_params = params.orbit;
    orbit_params.collect_samples = true;
    let mut integ = OrbitIntegrator::from_symbols(SymbolEval::new(model), orbit_params);

    // Probe fractions across each interval. The midpoint alone is not
    // safe: for a symbol with an exact reflection symmetry it can land on
    // a measure-zero pathological energy whose orbit threads a chart pole
    // and defeats the integrator. Shifted probes (irrational fractions, so
    // no symmetry can reproduce the coincidence) retry the discovery; the
    // first probe where every seed integrates cleanly wins.
    let probe_fracs = [0.5, 0.538_190_632, 0.461_809_368, 0.618_033_989, 0.381_966_011];

    let mut branches = Vec::new();
    for win in energies.windows(2) {
        let (e_lo, e_hi) = (win[0], win[1]);
        let width = e_hi - e_lo;
        // (branches, warnings, integration failures) of the best attempt.
        let mut best: Option<(Vec<Branch>, Vec<String>, usize)> = None;
        for frac in probe_fracs {
            let e_probe = e_lo + frac * width;
            let mut attempt: Vec<Branch> = Vec::new();
            let mut attempt_warnings: Vec<String> = Vec::new();
            let mut failures = 0usize;
            // Orbits found at e_probe so far: (samples, dedup radius).
            let mut found: Vec<(Vec<Point>, f64)> = Vec::new();
            for cp in criticals {
                for &ray in &rays {
                    let seed = match ray_crossing(sym, cp.point, ray, e_probe) {
                        Some(p) => p,
                        None => continue,
                    };
                    // On an already-integrated orbit?
                    let dup = found.iter().any(|(samples, radius)| {
                        samples
                            .iter()
                            .map(|&s| chart::chordal_distance(spin, s, seed))
                            .fold(f64::INFINITY, f64::min)
                            <= *radius
                    });
                    if dup {
                        continue;
                    }
                    let orbit = match integ.closed_orbit(seed) {
                        Ok(o) => o,
                        Err(err) => {
                            failures += 1;
                            attempt_warnings.push(format!(
                                "seed at energy {e_probe:.6e} from ray ({:.1},{:.1}) skipped: {err}",
                                ray.re, ray.im
                            ));
                            continue;
                        }
                    };
                    // Dedup radius: a few times the largest inter-sample gap
                    // (closed loop, so include the wrap-around gap).
                    let mut gap = 0.0f64;
                    for k in 0..orbit.samples.len() {
                        let a = orbit.samples[k];
                        let b = orbit.samples[(k + 1) % orbit.samples.len()];
                        gap = gap.max(chart::chordal_distance(spin, a, b));
                    }
                    attempt.push(Branch {
                        e_lo,
                        e_hi,
                        anchor: cp.point,
                        ray,
                        rep: BranchRep {
                            energy: orbit.energy,
                            period: orbit.period,
                            action: orbit.action,
                            sk_phase: orbit.sk_phase,
                        },
                    });
                    found.push((orbit.samples, 5.0 * gap));
                }
            }
            let clean = !attempt.is_empty() && failures == 0;
            let improves = match &best {
                None => true,
                Some((bb, _, bf)) => {
                    attempt.len() > bb.len() || (attempt.len() == bb.len() && failures < *bf)
                }
            };
            if improves {
                best = Some((attempt, attempt_warnings, failures));
            }
            if clean {
                break;
            }
        }
        let (mut got, mut warns, _) = best.expect("probe list is non-empty");
        if got.is_empty() {
            warnings.push(format!(
                "no orbit family found on ({e_lo:.6e}, {e_hi:.6e}); spectrum may be incomplete"
            ));
        }
        warnings.append(&mut warns);
        branches.append(&mut got);
    }
    Ok((branches, warnings))
}
