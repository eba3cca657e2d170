//! Embedded Dormand-Prince 5(4) integrator with step-size control.
//!
//! Small, fixed-dimension systems only (orbit integration carries four
//! reals: the chart coordinate plus two phase accumulators), so states are
//! stack arrays and the right-hand side is a trait with a `&mut self`
//! receiver, letting implementors reuse scratch buffers.
//!
//! Design notes:
//!
//! * FSAL (first-same-as-last): the seventh stage of an accepted step is the
//!   first stage of the next, so an accepted step costs six fresh
//!   evaluations.
//! * Dense output is a cubic Hermite interpolant over the accepted step.
//!   That is accurate enough for event *localization*; event refinement
//!   re-integrates the final partial step with the full fifth-order method
//!   (see [`Dopri5::step_exact`]), so no high-order interpolant is needed.
//! * The controller is the standard I-controller with safety factor 0.9 and
//!   step-ratio clamps; after a rejection the growth clamp is 1.

use crate::SpinError;

/// Right-hand side of an autonomous ODE in `R^N`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&mut self, y: &[f64; N], dy: &mut [f64; N]);
}

/// Butcher tableau of the Dormand-Prince 5(4) pair (stage coefficients only:
/// systems here are autonomous, so the node times are never needed).
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (identical to the last row of `A`: FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Error weights `b5 - b4`.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Tolerances and limits for one integration.
#[derive(Debug, Clone, Copy)]
pub struct OdeParams {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on accepted + rejected steps.
    pub max_steps: usize,
}

impl Default for OdeParams {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

/// One accepted step with everything needed for interpolation.
#[derive(Debug, Clone, Copy)]
pub struct AcceptedStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    /// Derivative at `(t0, y0)`.
    pub f0: [f64; N],
    /// Derivative at `(t0 + h, y1)`.
    pub f1: [f64; N],
}

impl<const N: usize> AcceptedStep<N> {
    /// Cubic Hermite interpolant at fraction `theta` of the step.
    /// Exact at the endpoints; `O(h^4)` inside, which suffices for event
    /// localization (refinement re-integrates).
    pub fn interpolate(&self, theta: f64) -> [f64; N] {
        let h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
        let h10 = theta * (1.0 - theta) * (1.0 - theta);
        let h01 = theta * theta * (3.0 - 2.0 * theta);
        let h11 = theta * theta * (theta - 1.0);
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = h00 * self.y0[i]
                + h10 * self.h * self.f0[i]
                + h01 * self.y1[i]
                + h11 * self.h * self.f1[i];
        }
        out
    }
}

/// The integrator: owns the current state, time, FSAL cache and controller.
#[derive(Debug, Clone)]
pub struct Dopri5<const N: usize> {
    params: OdeParams,
    pub t: f64,
    pub y: [f64; N],
    f_cur: [f64; N],
    h: f64,
    steps_taken: usize,
    just_rejected: bool,
}

impl<const N: usize> Dopri5<N> {
    /// Set up at `(t0, y0)`. One right-hand-side evaluation.
    pub fn new<S: OdeSystem<N>>(sys: &mut S, t0: f64, y0: [f64; N], params: OdeParams) -> Self {
        let mut f0 = [0.0; N];
        sys.rhs(&y0, &mut f0);
        let h = initial_step(&y0, &f0, params.rtol, params.atol);
        Self {
            params,
            t: t0,
            y: y0,
            f_cur: f0,
            h,
            steps_taken: 0,
            just_rejected: false,
        }
    }

    /// Derivative at the current state (FSAL cache).
    pub fn current_derivative(&self) -> &[f64; N] {
        &self.f_cur
    }

    /// Advance by one accepted adaptive step.
    pub fn step<S: OdeSystem<N>>(&mut self, sys: &mut S) -> Result<AcceptedStep<N>, SpinError> {
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.params.max_steps {
                return Err(SpinError::OrbitOpen(format!(
                    "step budget of {} exhausted at t = {:.6e}",
                    self.params.max_steps, self.t
                )));
            }
            if !(self.h.is_finite()) || self.h <= f64::EPSILON * self.t.abs().max(1e-3) {
                return Err(SpinError::StepUnderflow { t: self.t });
            }

            let (y1, f1, err) = self.attempt(sys, self.h);
            if err <= 1.0 {
                // Accept.
                let rec = AcceptedStep {
                    t0: self.t,
                    h: self.h,
                    y0: self.y,
                    y1,
                    f0: self.f_cur,
                    f1,
                };
                self.t += self.h;
                self.y = y1;
                self.f_cur = f1; // FSAL
                let grow_cap = if self.just_rejected { 1.0 } else { 5.0 };
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, grow_cap);
                self.h *= fac;
                self.just_rejected = false;
                return Ok(rec);
            }
            // Reject and shrink.
            self.just_rejected = true;
            self.h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    /// Take a single non-adaptive step of *exactly* `h` from the current
    /// state without committing it: the full fifth-order result, used to
    /// refine event times inside an already-accepted step.
    pub fn step_exact<S: OdeSystem<N>>(&self, sys: &mut S, h: f64) -> [f64; N] {
        let mut k = [[0.0f64; N]; 7];
        k[0] = self.f_cur;
        let mut ytmp = [0.0f64; N];
        for s in 1..7 {
            for i in 0..N {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ytmp[i] = self.y[i] + h * acc;
            }
            let mut ks = [0.0f64; N];
            sys.rhs(&ytmp, &mut ks);
            k[s] = ks;
        }
        let mut y1 = [0.0f64; N];
        for i in 0..N {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += B5[j] * kj[i];
            }
            y1[i] = self.y[i] + h * acc;
        }
        y1
    }

    /// Replace the state (used at chart switches); re-evaluates the
    /// derivative to restore the FSAL cache.
    pub fn reset_state<S: OdeSystem<N>>(&mut self, sys: &mut S, y: [f64; N]) {
        self.y = y;
        sys.rhs(&self.y, &mut self.f_cur);
    }

    /// Error-weighted trial step; returns `(y1, f1, scaled error norm)`.
    fn attempt<S: OdeSystem<N>>(&mut self, sys: &mut S, h: f64) -> ([f64; N], [f64; N], f64) {
        let mut k = [[0.0f64; N]; 7];
        k[0] = self.f_cur;
        let mut ytmp = [0.0f64; N];
        for s in 1..6 {
            for i in 0..N {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ytmp[i] = self.y[i] + h * acc;
            }
            let mut ks = [0.0f64; N];
            sys.rhs(&ytmp, &mut ks);
            k[s] = ks;
        }
        // Sixth stage IS the solution (b = a[6]); evaluate f there for both
        // the embedded error estimate and the FSAL cache.
        let mut y1 = [0.0f64; N];
        for i in 0..N {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(6) {
                acc += A[6][j] * kj[i];
            }
            y1[i] = self.y[i] + h * acc;
        }
        let mut f1 = [0.0f64; N];
        sys.rhs(&y1, &mut f1);
        k[6] = f1;

        let mut err_sq = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= h;
            let sc = self.params.atol + self.params.rtol * self.y[i].abs().max(y1[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        (y1, f1, (err_sq / N as f64).sqrt())
    }
}

/// Conservative initial step from the state and derivative scales.
fn initial_step<const N: usize>(y: &[f64; N], f: &[f64; N], rtol: f64, atol: f64) -> f64 {
    let mut dy = 0.0f64;
    let mut df = 0.0f64;
    for i in 0..N {
        let sc = atol + rtol * y[i].abs();
        dy += (y[i] / sc) * (y[i] / sc);
        df += (f[i] / sc) * (f[i] / sc);
    }
    let h = if dy.sqrt() < 1e-10 || df.sqrt() < 1e-10 {
        1e-6
    } else {
        0.01 * (dy / df).sqrt()
    };
    // First step is cheap to reject; bias small.
    0.1 * h
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Harmonic oscillator: y = (q, p), dq = p, dp = -q.
    struct Sho;
    impl OdeSystem<2> for Sho {
        fn rhs(&mut self, y: &[f64; 2], dy: &mut [f64; 2]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn oscillator_full_turn() {
        let mut sys = Sho;
        let params = OdeParams::default();
        let mut ode = Dopri5::new(&mut sys, 0.0, [1.0, 0.0], params);
        let t_end = 2.0 * std::f64::consts::PI;
        while ode.t < t_end {
            let remaining = t_end - ode.t;
            if ode.h > remaining {
                ode.h = remaining;
            }
            ode.step(&mut sys).unwrap();
        }
        assert!((ode.t - t_end).abs() < 1e-12);
        assert!((ode.y[0] - 1.0).abs() < 5e-11, "q = {}", ode.y[0]);
        assert!(ode.y[1].abs() < 5e-11, "p = {}", ode.y[1]);
    }

    #[test]
    fn dense_output_localizes_and_step_exact_refines() {
        // Find the time where q crosses zero (t = pi/2) to full precision.
        let mut sys = Sho;
        let mut ode = Dopri5::new(&mut sys, 0.0, [1.0, 0.0], OdeParams::default());
        let target = std::f64::consts::FRAC_PI_2;
        loop {
            let before = ode.y[0];
            let rec = ode.step(&mut sys).unwrap();
            if before > 0.0 && ode.y[0] <= 0.0 {
                // Coarse: Hermite interpolation brackets the root.
                let mut lo = 0.0;
                let mut hi = 1.0;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rec.interpolate(mid)[0] > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let t_coarse = rec.t0 + 0.5 * (lo + hi) * rec.h;
                assert!(
                    (t_coarse - target).abs() < 1e-9,
                    "hermite localization {t_coarse}"
                );
                break;
            }
        }
    }

    #[test]
    fn step_exact_matches_adaptive_path() {
        // step_exact from a committed state must reproduce the very next
        // accepted state when given the same h.
        let mut sys = Sho;
        let mut ode = Dopri5::new(&mut sys, 0.0, [0.3, -0.7], OdeParams::default());
        for _ in 0..5 {
            ode.step(&mut sys).unwrap();
        }
        let snapshot = ode.clone();
        let rec = ode.step(&mut sys).unwrap();
        let replay = snapshot.step_exact(&mut sys, rec.h);
        for i in 0..2 {
            assert!((replay[i] - rec.y1[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tolerance_scaling() {
        // Tighter tolerance must reduce the closure error.
        let run = |rtol: f64| -> f64 {
            let mut sys = Sho;
            let params = OdeParams {
                rtol,
                atol: rtol * 1e-2,
                max_steps: 1_000_000,
            };
            let mut ode = Dopri5::new(&mut sys, 0.0, [1.0, 0.0], params);
            let t_end = 2.0 * std::f64::consts::PI;
            while ode.t < t_end {
                let remaining = t_end - ode.t;
                if ode.h > remaining {
                    ode.h = remaining;
                }
                ode.step(&mut sys).unwrap();
            }
            ((ode.y[0] - 1.0).powi(2) + ode.y[1].powi(2)).sqrt()
        };
        let coarse = run(1e-6);
        let fine = run(1e-12);
        assert!(fine < coarse * 1e-3, "coarse {coarse} fine {fine}");
    }
}
