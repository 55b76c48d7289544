//! Single-site 3D localization of an aerial emitter.
//!
//! One ground receiver observes the emitter directly and through two large
//! ground reflectors ("pseudo-sensors"). The resulting pair of TDOA/FDOA
//! measurements fixes position and velocity only up to altitude; the
//! [`resolver`] recovers the altitude from target motion by running a
//! bank of filters over a shrinking grid of altitude hypotheses.

pub mod altitude;
pub mod baseline;
pub mod error;
pub mod fang;
pub mod filters;
pub mod geom;
pub mod harness;
pub mod observation;
pub mod resolver;
pub mod velocity;

pub use altitude::{conditional_transfer, likelihood, mix_altitudes, refine_grid, update_probs, MarkovTransition};
pub use baseline::{fixed_error, solve_2d, PlanarEstimate};
pub use error::{Error, Result};
pub use fang::{solve_fix, BoundingBox, PlanarFix, RootIndex};
pub use filters::{fuse, kf_predict, kf_update, ufir_update, FilterState, ObservationModel, UfirConfig};
pub use geom::{
    add_noise, add_noise_seeded, from_spherical, synth_measurements, to_spherical, MeasurementSet, NoiseModel,
    SensorLayout, SphericalFix, TargetState,
};
pub use harness::{monte_carlo, run_scenario, Format, ScenarioConfig, SummaryRow, TraceRecord};
pub use resolver::{
    run_algorithm1, AltitudeHypothesis, IterationRecord, LikelihoodSource, LocalizationResult, PriorReset, Refinement,
    ResolverConfig,
};
pub use velocity::{
    closed_form_velocity, coefficients, solve_velocity, ClosedFormVelocity, VelocityCoefficients, VelocityEstimate,
};
