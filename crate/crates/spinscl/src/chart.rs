//! Stereographic charts on the sphere and the area-true canonical plane.
//!
//! Phase space is the sphere of spin coherent states. The working coordinate
//! is the stereographic parameter of the *south* chart, `z`, with `z = 0` at
//! the south pole (`m = -j`) and `|z| -> inf` at the north pole. Orbits that
//! climb toward the north pole hand off to the antipodal chart `w = 1/z`.
//! Both charts see the same equations of motion, so integration code is
//! chart-agnostic and only the gauge-fixed functionals (loop action and the
//! Solari-Kochetov integrand) carry chart-dependent expressions.
//!
//! For output and root finding the south chart is flattened to canonical
//! coordinates `(q, p)` via
//!
//! ```text
//! q + i p = sqrt(4 hbar j) * z / sqrt(1 + |z|^2),
//! ```
//!
//! which maps the sphere minus the north pole onto the open disk
//! `q^2 + p^2 < 4 hbar j` and is area-true: `dq dp = d(Area)`, total area
//! `4 pi hbar j`. Distances between phase-space points are always measured
//! with the chordal metric of the embedded sphere (radius `sqrt(hbar j)`),
//! which is chart-free and non-degenerate at both poles.

use crate::{C64, Spin};

/// Which stereographic chart a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// `z = 0` at the south pole, `m = -j`.
    South,
    /// `w = 1/z`, `w = 0` at the north pole, `m = +j`.
    North,
}

impl Chart {
    /// The antipodal chart.
    pub fn other(self) -> Chart {
        match self {
            Chart::South => Chart::North,
            Chart::North => Chart::South,
        }
    }
}

/// A phase-space point: a chart coordinate plus the chart it lives in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub zeta: C64,
    pub chart: Chart,
}

impl Point {
    pub fn south(z: C64) -> Self {
        Point {
            zeta: z,
            chart: Chart::South,
        }
    }

    pub fn north(w: C64) -> Self {
        Point {
            zeta: w,
            chart: Chart::North,
        }
    }

    /// The same point in the antipodal chart. The poles themselves
    /// (`zeta = 0`) map to infinity; callers switch charts well before that.
    pub fn switched(self) -> Self {
        Point {
            zeta: C64::new(1.0, 0.0) / self.zeta,
            chart: self.chart.other(),
        }
    }

    /// Unit vector on the embedded sphere, chart-free.
    ///
    /// South: `(X, Y, Z) = (2 Re z, 2 Im z, |z|^2 - 1) / (1 + |z|^2)`;
    /// the north-chart expression follows from `z = 1/w`.
    pub fn unit_vector(self) -> [f64; 3] {
        let rho = self.zeta.norm_sqr();
        let d = 1.0 / (1.0 + rho);
        match self.chart {
            Chart::South => [
                2.0 * self.zeta.re * d,
                2.0 * self.zeta.im * d,
                (rho - 1.0) * d,
            ],
            Chart::North => [
                2.0 * self.zeta.re * d,
                -2.0 * self.zeta.im * d,
                (1.0 - rho) * d,
            ],
        }
    }
}

/// Hand off to the antipodal chart once `|zeta|` exceeds this. With the
/// switch at 1.5 the incoming coordinate lands at 1/1.5 ~ 0.67, so repeated
/// back-and-forth switching (hysteresis) is impossible.
pub const SWITCH_RADIUS: f64 = 1.5;

/// True when the integrator should swap `zeta -> 1/zeta`.
pub fn needs_switch(zeta: C64) -> bool {
    zeta.norm_sqr() > SWITCH_RADIUS * SWITCH_RADIUS
}

/// Radius of the canonical disk: `q^2 + p^2 < (plane_radius)^2 = 4 hbar j`.
pub fn plane_radius(spin: Spin) -> f64 {
    2.0 * (spin.hbar() * spin.j()).sqrt()
}

/// Chordal distance between two phase-space points on the sphere of radius
/// `sqrt(hbar j)`. Matches the canonical-plane metric near the south pole.
pub fn chordal_distance(spin: Spin, a: Point, b: Point) -> f64 {
    let ua = a.unit_vector();
    let ub = b.unit_vector();
    let dx = ua[0] - ub[0];
    let dy = ua[1] - ub[1];
    let dz = ua[2] - ub[2];
    (spin.hbar() * spin.j()).sqrt() * (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Canonical-plane image of a point. Well defined everywhere except the
/// north pole itself, which smears onto the boundary circle.
pub fn to_plane(spin: Spin, pt: Point) -> (f64, f64) {
    let scale = plane_radius(spin);
    let rho = pt.zeta.norm_sqr();
    match pt.chart {
        Chart::South => {
            let f = scale / (1.0 + rho).sqrt();
            (f * pt.zeta.re, f * pt.zeta.im)
        }
        Chart::North => {
            // z/sqrt(1+|z|^2) with z = 1/w reduces to conj(w)/(|w| sqrt(1+|w|^2)).
            let n = pt.zeta.norm();
            if n == 0.0 {
                // Degenerate: return a boundary point on the +q axis.
                return (scale, 0.0);
            }
            let f = scale / (n * (1.0 + rho).sqrt());
            (f * pt.zeta.re, -f * pt.zeta.im)
        }
    }
}

/// Inverse of [`to_plane`] into the south chart:
/// `z = (q + i p) / sqrt(4 hbar j - q^2 - p^2)`.
/// Returns `None` on or outside the boundary circle.
pub fn from_plane(spin: Spin, q: f64, p: f64) -> Option<C64> {
    let rr = 4.0 * spin.hbar() * spin.j() - q * q - p * p;
    if rr <= 0.0 {
        return None;
    }
    let inv = 1.0 / rr.sqrt();
    Some(C64::new(q * inv, p * inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin() -> Spin {
        Spin::new(7.5, 0.31).unwrap()
    }

    #[test]
    fn plane_round_trip() {
        let s = spin();
        let l = plane_radius(s);
        for (q, p) in [(0.0, 0.0), (0.3 * l, -0.2 * l), (-0.7 * l, 0.65 * l)] {
            let z = from_plane(s, q, p).unwrap();
            let (q2, p2) = to_plane(s, Point::south(z));
            assert!((q - q2).abs() < 1e-13 * l && (p - p2).abs() < 1e-13 * l);
        }
        assert!(from_plane(s, l, 0.0).is_none());
    }

    #[test]
    fn switch_is_involutive_and_preserves_position() {
        let s = spin();
        let pt = Point::south(C64::new(1.2, -0.7));
        let sw = pt.switched();
        assert_eq!(sw.chart, Chart::North);
        assert!(chordal_distance(s, pt, sw) < 1e-13);
        let back = sw.switched();
        assert!((back.zeta - pt.zeta).norm() < 1e-15);
        assert_eq!(back.chart, Chart::South);
    }

    #[test]
    fn plane_image_agrees_across_charts() {
        let s = spin();
        let pt = Point::south(C64::new(0.9, 1.1));
        let (q1, p1) = to_plane(s, pt);
        let (q2, p2) = to_plane(s, pt.switched());
        assert!((q1 - q2).abs() < 1e-13 && (p1 - p2).abs() < 1e-13);
    }

    #[test]
    fn unit_vector_poles() {
        let south = Point::south(C64::new(0.0, 0.0)).unit_vector();
        assert_eq!(south, [0.0, 0.0, -1.0]);
        let north = Point::north(C64::new(0.0, 0.0)).unit_vector();
        assert_eq!(north, [0.0, 0.0, 1.0]);
    }
}
