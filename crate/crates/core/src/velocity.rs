//! Closed-form planar velocity from the two FDOAs at a known position.
//!
//! For stationary sensors the range-rate identity reads
//! `s_iᵀv + ṙ_i0·R + r_i0·ṙ_0 + r_i0·ṙ_i0 = 0`. With a horizontal velocity,
//! `ṙ_0 = v·cos(θ_v − az)·cos(el)`, so each sensor gives one line
//! `A_i·v·cosθ_v + B_i·v·sinθ_v = C_i`. The production path solves that 2×2
//! system; [`closed_form_velocity`] evaluates the explicit speed/heading
//! formulas and serves as a cross-check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{MeasurementSet, SensorLayout, SphericalFix};

/// Default relative threshold on `|A_1B_2 − A_2B_1|`.
pub const DEFAULT_DEGENERACY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCoefficients {
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Right-hand side `−(r_i0·ṙ_i0 + ṙ_i0·R)` in m²/s.
    pub c: [f64; 2],
}

impl VelocityCoefficients {
    pub fn determinant(&self) -> f64 {
        self.a[0] * self.b[1] - self.a[1] * self.b[0]
    }

    fn magnitude(&self) -> f64 {
        self.a.iter().chain(self.b.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_degeneracy(&self, rel_tol: f64) -> Result<f64> {
        let det = self.determinant();
        let mag = self.magnitude();
        let well_posed = matches!(
            det.abs().partial_cmp(&(rel_tol * mag * mag)),
            Some(std::cmp::Ordering::Greater | std::cmp::Ordering::Equal)
        );
        if !well_posed || mag == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "FDOA constraint lines are parallel (det = {det:e})"
            )));
        }
        Ok(det)
    }
}

/// Speed and planar heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub v: f64,
    /// In (−π, π].
    pub theta_v: f64,
}

impl VelocityEstimate {
    pub fn components(&self) -> (f64, f64) {
        let (s, c) = self.theta_v.sin_cos();
        (self.v * c, self.v * s)
    }
}

/// Result of the explicit speed/heading formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormVelocity {
    pub estimate: VelocityEstimate,
    /// The arcsine argument left [−1, 1] and was clamped (noise-inflated input).
    pub clamped: bool,
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t == -PI {
        t = PI;
    }
    t
}

pub fn coefficients(layout: &SensorLayout, m: &MeasurementSet, fix: &SphericalFix) -> VelocityCoefficients {
    let (sin_az, cos_az) = fix.azimuth.sin_cos();
    let cos_el = fix.elevation.cos();
    let mut out = VelocityCoefficients {
        a: [0.0; 2],
        b: [0.0; 2],
        c: [0.0; 2],
    };
    for i in 0..2 {
        let (norm, theta) = layout.polar(i);
        let (ri, rdi) = (m.r[i], m.rdot[i]);
        out.a[i] = norm * theta.cos() + ri * cos_az * cos_el;
        out.b[i] = norm * theta.sin() + ri * sin_az * cos_el;
        out.c[i] = -(ri * rdi + rdi * fix.range);
    }
    out
}

pub fn solve_velocity(c: &VelocityCoefficients) -> Result<VelocityEstimate> {
    solve_velocity_with(c, DEFAULT_DEGENERACY)
}

pub fn solve_velocity_with(c: &VelocityCoefficients, rel_tol: f64) -> Result<VelocityEstimate> {
    let det = c.check_degeneracy(rel_tol)?;
    let u = (c.c[0] * c.b[1] - c.c[1] * c.b[0]) / det;
    let w = (c.a[0] * c.c[1] - c.a[1] * c.c[0]) / det;
    let v = u.hypot(w);
    let theta_v = if v == 0.0 { 0.0 } else { wrap_angle(w.atan2(u)) };
    Ok(VelocityEstimate { v, theta_v })
}

/// Explicit speed from the eliminated heading and heading from the first
/// sensor's arcsine equation.
pub fn closed_form_velocity(c: &VelocityCoefficients) -> Result<ClosedFormVelocity> {
    let det = c.check_degeneracy(DEFAULT_DEGENERACY)?;
    let [a1, a2] = c.a;
    let [b1, b2] = c.b;
    let [k1, k2] = c.c;
    let n1_sq = a1 * a1 + b1 * b1;
    let n2_sq = a2 * a2 + b2 * b2;
    let dot = a1 * a2 + b1 * b2;
    let det_sq = det * det;

    let v_sq = k1 * k1 * n2_sq / det_sq + k2 * k2 * dot * dot / (n2_sq * det_sq) - 2.0 * k1 * k2 * dot / det_sq
        + k2 * k2 / n2_sq;
    let v = v_sq.max(0.0).sqrt();
    if v == 0.0 {
        return Ok(ClosedFormVelocity {
            estimate: VelocityEstimate { v: 0.0, theta_v: 0.0 },
            clamped: false,
        });
    }

    // sin(θ_v + φ_1) = K_1 / (v·n_1), φ_1 = atan2(A_1, B_1)
    let phi1 = a1.atan2(b1);
    let arg = k1 / (v * n1_sq.sqrt());
    let clamped = !(-1.0..=1.0).contains(&arg);
    let base = arg.clamp(-1.0, 1.0).asin();

    let residual = |theta: f64| {
        let (s, co) = theta.sin_cos();
        (0..2)
            .map(|i| ((c.a[i] * co + c.b[i] * s) * v - c.c[i]).abs())
            .fold(0.0, f64::max)
    };
    let first = base - phi1;
    let second = PI - base - phi1;
    let theta = if residual(first) <= residual(second) {
        first
    } else {
        second
    };

    Ok(ClosedFormVelocity {
        estimate: VelocityEstimate {
            v,
            theta_v: wrap_angle(theta),
        },
        clamped,
    })
}
