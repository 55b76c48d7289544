//! Altitude-blind planar localization used as the comparison baseline.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fang::BoundingBox;
use crate::geom::{MeasurementSet, SensorLayout, TargetState};
use crate::observation::{observe, RootChoice};
use crate::velocity::DEFAULT_DEGENERACY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarEstimate {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Exact three-receiver fix that treats the target as lying on the ground.
pub fn solve_2d(layout: &SensorLayout, m: &MeasurementSet) -> Result<PlanarEstimate> {
    let obs = observe(
        layout,
        m,
        0.0,
        RootChoice::Initial(&BoundingBox::default()),
        DEFAULT_DEGENERACY,
    )?;
    Ok(PlanarEstimate {
        x: obs.z[0],
        y: obs.z[1],
        vx: obs.z[3],
        vy: obs.z[4],
    })
}

/// Slant range minus ground range: the range error incurred by dropping the altitude.
pub fn fixed_error(truth: &TargetState) -> f64 {
    let ground = truth.x.hypot(truth.y);
    ground.hypot(truth.h) - ground
}
