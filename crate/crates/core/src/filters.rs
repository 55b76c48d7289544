//! Constant-velocity Kalman and unbiased FIR estimators for one altitude
//! hypothesis, plus the residual-based selection between them.
//!
//! State and measurement are both `[x, y, h, vx, vy, vz]` with `H = I`.

use nalgebra::{Cholesky, Matrix2, Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = Vector6<f64>;
pub type StateMatrix = Matrix6<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: StateVector,
    pub p: StateMatrix,
}

impl FilterState {
    pub fn new(x: StateVector, p: StateMatrix) -> Self {
        Self { x, p }
    }
}

/// Identity observation with diagonal noise `r` and epoch spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub r: StateMatrix,
    pub dt: f64,
}

impl ObservationModel {
    pub fn new(r_diag: StateVector, dt: f64) -> Result<Self> {
        if r_diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Numerical(format!(
                "observation noise must be positive: {r_diag:?}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Numerical(format!("epoch spacing must be positive: {dt}")));
        }
        Ok(Self {
            r: StateMatrix::from_diagonal(&r_diag),
            dt,
        })
    }

    pub fn h(&self) -> StateMatrix {
        StateMatrix::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UfirConfig {
    /// Number of most recent epochs in the batch window.
    pub horizon: usize,
}

impl Default for UfirConfig {
    fn default() -> Self {
        Self { horizon: 6 }
    }
}

impl UfirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::config("resolver.ufir.horizon", "must be >= 2"));
        }
        Ok(())
    }
}

/// `[I, dt·I; 0, I]`
pub fn transition(dt: f64) -> StateMatrix {
    let mut f = StateMatrix::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

/// Discretised continuous white-noise acceleration with intensity `q` (m²/s³).
pub fn white_noise_acceleration(dt: f64, q: f64) -> StateMatrix {
    let mut m = StateMatrix::zeros();
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    for i in 0..3 {
        m[(i, i)] = q * dt3 / 3.0;
        m[(i, i + 3)] = q * dt2 / 2.0;
        m[(i + 3, i)] = q * dt2 / 2.0;
        m[(i + 3, i + 3)] = q * dt;
    }
    m
}

pub fn kf_predict(s: &FilterState, dt: f64, q: &StateMatrix) -> FilterState {
    let f = transition(dt);
    let p = f * s.p * f.transpose() + q;
    FilterState {
        x: f * s.x,
        p: symmetrize(&p),
    }
}

/// Innovation `ỹ = z − H x⁻` with `S = H P⁻ Hᵀ + R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation {
    pub y: StateVector,
    pub s: StateMatrix,
    pub s_inv: StateMatrix,
    /// `ln |2π S|`
    pub log_det_2pi_s: f64,
}

impl Innovation {
    fn new(y: StateVector, s: StateMatrix) -> Result<Self> {
        let chol = Cholesky::new(symmetrize(&s))
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            y,
            s,
            s_inv: chol.inverse(),
            log_det_2pi_s: log_det + 6.0 * (2.0 * std::f64::consts::PI).ln(),
        })
    }

    /// `d² = rᵀ S⁻¹ r` for an arbitrary residual against the same `S`.
    pub fn mahalanobis(&self, residual: &StateVector) -> f64 {
        (residual.transpose() * self.s_inv * residual)[(0, 0)]
    }

    pub fn d2(&self) -> f64 {
        self.mahalanobis(&self.y)
    }
}

/// Kalman correction of a predicted state with measurement `z`.
pub fn kf_update(pred: &FilterState, z: &StateVector, obs: &ObservationModel) -> Result<(FilterState, Innovation)> {
    let h = obs.h();
    let innovation = Innovation::new(z - h * pred.x, h * pred.p * h.transpose() + obs.r)?;
    let k = pred.p * h.transpose() * innovation.s_inv;
    let ikh = StateMatrix::identity() - k * h;
    // Joseph form keeps P positive semidefinite under rounding.
    let p = ikh * pred.p * ikh.transpose() + k * obs.r * k.transpose();
    Ok((
        FilterState {
            x: pred.x + k * innovation.y,
            p: symmetrize(&p),
        },
        innovation,
    ))
}

/// Batch unbiased FIR estimate at the latest epoch of `history`.
///
/// Fits a constant-velocity trajectory by ordinary least squares to the last
/// `cfg.horizon` full-state measurements (spaced `obs.dt` apart), weighting
/// every row equally. The returned covariance propagates `obs.r` through the
/// fit. `None` means the window is not yet full.
pub fn ufir_update(history: &[StateVector], cfg: &UfirConfig, obs: &ObservationModel) -> Option<FilterState> {
    let n = cfg.horizon;
    if n < 2 || history.len() < n {
        return None;
    }
    let window = &history[history.len() - n..];
    // τ_k ≤ 0 is the time of epoch k relative to the newest one.
    let taus: Vec<f64> = (0..n).map(|k| (k as f64 - (n - 1) as f64) * obs.dt).collect();

    // Rows: position (1, τ_k) and velocity (0, 1) for unknowns (p_latest, v).
    let sum_tau: f64 = taus.iter().sum();
    let sum_tau2: f64 = taus.iter().map(|t| t * t).sum();
    let normal = Matrix2::new(n as f64, sum_tau, sum_tau, sum_tau2 + n as f64);
    let inv = normal.try_inverse()?;

    let mut x = StateVector::zeros();
    let mut p = StateMatrix::zeros();
    for axis in 0..3 {
        let mut rhs = Vector2::zeros();
        for (z, tau) in window.iter().zip(&taus) {
            rhs += Vector2::new(z[axis], z[axis] * tau + z[axis + 3]);
        }
        let est = inv * rhs;
        x[axis] = est[0];
        x[axis + 3] = est[1];

        let (rp, rv) = (obs.r[(axis, axis)], obs.r[(axis + 3, axis + 3)]);
        let mut info = Matrix2::zeros();
        for tau in &taus {
            let a = Vector2::new(1.0, *tau);
            info += rp * a * a.transpose();
        }
        info += rv * n as f64 * Matrix2::new(0.0, 0.0, 0.0, 1.0);
        let cov = inv * info * inv;
        p[(axis, axis)] = cov[(0, 0)];
        p[(axis, axis + 3)] = cov[(0, 1)];
        p[(axis + 3, axis)] = cov[(1, 0)];
        p[(axis + 3, axis + 3)] = cov[(1, 1)];
    }
    Some(FilterState { x, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedSource {
    Kalman,
    Ufir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub state: FilterState,
    pub source: FusedSource,
    /// Weighted residual `(z − x)ᵀ S⁻¹ (z − x)` of the selected state.
    pub d2: f64,
}

/// Keeps whichever of the Kalman and UFIR estimates sits closer to `z` in the
/// metric of the Kalman innovation covariance. Ties go to Kalman.
pub fn fuse(kf: &FilterState, innovation: &Innovation, ufir: Option<&FilterState>, z: &StateVector) -> Fused {
    let d2_kf = innovation.mahalanobis(&(z - kf.x));
    match ufir {
        Some(u) => {
            let d2_u = innovation.mahalanobis(&(z - u.x));
            if d2_u < d2_kf {
                Fused {
                    state: u.clone(),
                    source: FusedSource::Ufir,
                    d2: d2_u,
                }
            } else {
                Fused {
                    state: kf.clone(),
                    source: FusedSource::Kalman,
                    d2: d2_kf,
                }
            }
        }
        None => Fused {
            state: kf.clone(),
            source: FusedSource::Kalman,
            d2: d2_kf,
        },
    }
}

fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}
