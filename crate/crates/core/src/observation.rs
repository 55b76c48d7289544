//! Turns one TDOA/FDOA epoch into a full-state filter measurement at a
//! hypothesised altitude, and propagates the measurement noise into it.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::fang::{select_initial, select_nearest, solve_fix, BoundingBox, PlanarFix};
use crate::filters::StateVector;
use crate::geom::{to_spherical, MeasurementSet, SensorLayout};
use crate::velocity::{coefficients, solve_velocity_with, VelocityEstimate};

/// How to pick among the planar fix candidates.
#[derive(Debug, Clone, Copy)]
pub enum RootChoice<'a> {
    /// Largest slant range inside the surveillance region.
    Initial(&'a BoundingBox),
    /// Closest to a predicted ground position.
    Nearest(Vector2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisObservation {
    pub fix: PlanarFix,
    pub velocity: VelocityEstimate,
    /// `[x, y, h, vx, vy, 0]`
    pub z: StateVector,
}

/// Planar fix and velocity at altitude `h`, packed as a filter measurement.
pub fn observe(
    layout: &SensorLayout,
    m: &MeasurementSet,
    h: f64,
    choice: RootChoice<'_>,
    degeneracy: f64,
) -> Result<HypothesisObservation> {
    let fixes = solve_fix(layout, m.r, h)?;
    let fix = *match choice {
        RootChoice::Initial(bounds) => select_initial(&fixes, bounds),
        RootChoice::Nearest(p) => select_nearest(&fixes, &p),
    }
    .ok_or(Error::NoSolution { altitude: h })?;
    let spherical = to_spherical(&fix.local(layout, h));
    let velocity = solve_velocity_with(&coefficients(layout, m, &spherical), degeneracy)?;
    let (vx, vy) = velocity.components();
    Ok(HypothesisObservation {
        fix,
        velocity,
        z: StateVector::from([fix.x, fix.y, h, vx, vy, 0.0]),
    })
}

/// Settings for the diagonal measurement covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePropagation {
    /// Lower bound on every propagated variance.
    pub floor: f64,
    /// Variance assigned to the altitude slot, which is a hypothesis rather
    /// than an observation.
    pub altitude_variance: f64,
    pub degeneracy: f64,
}

const TDOA_STEP: f64 = 1e-3;
const FDOA_STEP: f64 = 1e-3;

/// Diagonal of `R` for the measurement `obs` derived from `m` at altitude `h`.
///
/// The planar entries are `diag(J Σ Jᵀ)` where `J` is the central-difference
/// Jacobian of `(x, y, vx, vy)` with respect to `(r_10, r_20, ṙ_10, ṙ_20)` and
/// `Σ = diag(σ_r², σ_r², σ_f², σ_f²)`.
pub fn observation_noise(
    layout: &SensorLayout,
    m: &MeasurementSet,
    h: f64,
    obs: &HypothesisObservation,
    cfg: &NoisePropagation,
) -> StateVector {
    let mut var = [0.0f64; 4];
    let inputs = [(0, m.sigma_r2), (1, m.sigma_r2), (2, m.sigma_f2), (3, m.sigma_f2)];
    let anchor = obs.fix.xy();
    for (k, sigma2) in inputs {
        if sigma2 <= 0.0 {
            continue;
        }
        let step = if k < 2 { TDOA_STEP } else { FDOA_STEP };
        let perturbed = |sign: f64| {
            let mut p = *m;
            if k < 2 {
                p.r[k] += sign * step;
            } else {
                p.rdot[k - 2] += sign * step;
            }
            observe(layout, &p, h, RootChoice::Nearest(anchor), cfg.degeneracy).ok()
        };
        let (Some(plus), Some(minus)) = (perturbed(1.0), perturbed(-1.0)) else {
            continue;
        };
        let d = (plus.z - minus.z) / (2.0 * step);
        for (slot, idx) in [0usize, 1, 3, 4].into_iter().enumerate() {
            var[slot] += d[idx] * d[idx] * sigma2;
        }
    }
    let f = cfg.floor;
    StateVector::from([
        var[0].max(f),
        var[1].max(f),
        cfg.altitude_variance,
        var[2].max(f),
        var[3].max(f),
        f,
    ])
}

/// Position relative to the main receiver, for error metrics.
pub fn local_position(layout: &SensorLayout, xy: Vector2<f64>, h: f64) -> Vector3<f64> {
    let m = layout.main();
    Vector3::new(xy.x - m.x, xy.y - m.y, h)
}
