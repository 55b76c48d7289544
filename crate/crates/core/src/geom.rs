//! Geometry types and the forward measurement model.
//!
//! The main receiver sits on the ground plane (at the origin by convention) and
//! the two pseudo-sensors are ground reflectors with known positions. A TDOA is
//! stored as the range difference `r_i0 = |p - s_i| - |p - s_0|` in metres and
//! an FDOA as its time derivative in m/s.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position and velocity of the aerial target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetState {
    pub x: f64,
    pub y: f64,
    /// Altitude above the sensor plane.
    pub h: f64,
    pub vx: f64,
    pub vy: f64,
    #[serde(default)]
    pub vz: f64,
}

impl TargetState {
    pub fn new(x: f64, y: f64, h: f64, vx: f64, vy: f64, vz: f64) -> Self {
        Self { x, y, h, vx, vy, vz }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.h)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    /// Constant-velocity propagation by `dt` seconds.
    pub fn advanced(&self, dt: f64) -> Self {
        Self {
            x: self.x + self.vx * dt,
            y: self.y + self.vy * dt,
            h: self.h + self.vz * dt,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x, self.y, self.h, self.vx, self.vy, self.vz];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("truth", "all fields must be finite"));
        }
        if self.h < 0.0 {
            return Err(Error::config("truth.h", "altitude must be >= 0"));
        }
        Ok(())
    }
}

/// Main receiver plus exactly two ground pseudo-sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct SensorLayout {
    main: Vector2<f64>,
    pseudo: [Vector2<f64>; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    #[serde(default)]
    main: [f64; 2],
    pseudo: [[f64; 2]; 2],
}

impl TryFrom<RawLayout> for SensorLayout {
    type Error = Error;

    fn try_from(raw: RawLayout) -> Result<Self> {
        SensorLayout::with_main(
            Vector2::from(raw.main),
            [Vector2::from(raw.pseudo[0]), Vector2::from(raw.pseudo[1])],
        )
    }
}

impl From<SensorLayout> for RawLayout {
    fn from(l: SensorLayout) -> Self {
        RawLayout {
            main: l.main.into(),
            pseudo: [l.pseudo[0].into(), l.pseudo[1].into()],
        }
    }
}

impl SensorLayout {
    /// Layout with the main receiver at the origin.
    pub fn new(pseudo: [Vector2<f64>; 2]) -> Result<Self> {
        Self::with_main(Vector2::zeros(), pseudo)
    }

    pub fn with_main(main: Vector2<f64>, pseudo: [Vector2<f64>; 2]) -> Result<Self> {
        let layout = Self { main, pseudo };
        let finite = main.iter().chain(pseudo.iter().flat_map(|p| p.iter()));
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(Error::config("layout", "sensor coordinates must be finite"));
        }
        let (a, b) = (layout.relative(0), layout.relative(1));
        let scale = a.norm() * b.norm();
        let det = layout.baseline_matrix().determinant();
        if scale == 0.0 || det.abs() <= 1e-9 * scale {
            return Err(Error::DegenerateGeometry(
                "pseudo-sensors are collinear with the main receiver".into(),
            ));
        }
        Ok(layout)
    }

    /// Main receiver at the origin, reflectors at (10, 0) km and (10, 10) km.
    pub fn reference() -> Self {
        Self::new([Vector2::new(10_000.0, 0.0), Vector2::new(10_000.0, 10_000.0)]).expect("reference layout is valid")
    }

    pub fn main(&self) -> Vector2<f64> {
        self.main
    }

    pub fn pseudo(&self, i: usize) -> Vector2<f64> {
        self.pseudo[i]
    }

    /// Pseudo-sensor `i` in the frame centred on the main receiver.
    pub fn relative(&self, i: usize) -> Vector2<f64> {
        self.pseudo[i] - self.main
    }

    /// `|s_i|` and its polar angle `θ_si` (main-centred frame).
    pub fn polar(&self, i: usize) -> (f64, f64) {
        let s = self.relative(i);
        (s.norm(), s.y.atan2(s.x))
    }

    /// Rows are the main-centred pseudo-sensor coordinates.
    pub fn baseline_matrix(&self) -> Matrix2<f64> {
        let (a, b) = (self.relative(0), self.relative(1));
        Matrix2::new(a.x, a.y, b.x, b.y)
    }

    /// Largest distance from the main receiver to a pseudo-sensor.
    pub fn scale(&self) -> f64 {
        self.relative(0).norm().max(self.relative(1).norm())
    }
}

/// Slant range, azimuth and elevation of a point seen from the main receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalFix {
    pub range: f64,
    /// In (-π, π].
    pub azimuth: f64,
    /// In [-π/2, π/2].
    pub elevation: f64,
}

/// Cartesian to spherical. The origin maps to all zeros since `atan2(0, 0) = 0`.
pub fn to_spherical(p: &Vector3<f64>) -> SphericalFix {
    let ground = p.x.hypot(p.y);
    let mut azimuth = p.y.atan2(p.x);
    if azimuth == -std::f64::consts::PI {
        azimuth = std::f64::consts::PI;
    }
    SphericalFix {
        range: p.norm(),
        azimuth,
        elevation: p.z.atan2(ground),
    }
}

pub fn from_spherical(fix: &SphericalFix) -> Vector3<f64> {
    let (sa, ca) = fix.azimuth.sin_cos();
    let (se, ce) = fix.elevation.sin_cos();
    fix.range * Vector3::new(ca * ce, sa * ce, se)
}

/// Range-difference and range-rate-difference pairs for the two pseudo-sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    /// `r_10`, `r_20` in metres.
    pub r: [f64; 2],
    /// `ṙ_10`, `ṙ_20` in m/s.
    pub rdot: [f64; 2],
    pub sigma_r2: f64,
    pub sigma_f2: f64,
}

/// Zero-mean, uncorrelated Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// TDOA variance σ² in m².
    pub sigma2: f64,
    /// FDOA variance as a fraction of σ², in (m/s)² per m².
    #[serde(default = "NoiseModel::default_ratio")]
    pub ratio_f: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma2: 0.0,
            ratio_f: Self::default_ratio(),
        }
    }
}

impl NoiseModel {
    fn default_ratio() -> f64 {
        0.1
    }

    pub fn new(sigma2: f64) -> Self {
        Self {
            sigma2,
            ..Self::default()
        }
    }

    pub fn sigma_r2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma_f2(&self) -> f64 {
        self.ratio_f * self.sigma2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::config("noise.sigma2", "must be finite and >= 0"));
        }
        if !(self.ratio_f.is_finite() && self.ratio_f > 0.0) {
            return Err(Error::config("noise.ratio_f", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Noiseless TDOA/FDOA of `truth` for stationary sensors.
pub fn synth_measurements(truth: &TargetState, layout: &SensorLayout) -> Result<MeasurementSet> {
    let main = layout.main();
    let p = truth.position() - Vector3::new(main.x, main.y, 0.0);
    let v = truth.velocity();
    let r0 = p.norm();
    let tiny = 1e-9 * layout.scale();
    if r0 <= tiny {
        return Err(Error::DegenerateGeometry(
            "target coincides with the main receiver".into(),
        ));
    }
    let r0_dot = p.dot(&v) / r0;

    let mut r = [0.0; 2];
    let mut rdot = [0.0; 2];
    for i in 0..2 {
        let s = layout.relative(i);
        let d = p - Vector3::new(s.x, s.y, 0.0);
        let ri = d.norm();
        if ri <= tiny {
            return Err(Error::DegenerateGeometry(format!(
                "target coincides with pseudo-sensor {}",
                i + 1
            )));
        }
        // |p − s|² − |p|² = |s|² − 2 p·s, which avoids cancelling two long ranges.
        r[i] = (s.norm_squared() - 2.0 * (p.x * s.x + p.y * s.y)) / (ri + r0);
        rdot[i] = d.dot(&v) / ri - r0_dot;
    }
    Ok(MeasurementSet {
        r,
        rdot,
        sigma_r2: 0.0,
        sigma_f2: 0.0,
    })
}

/// Adds independent Gaussian noise drawn from `rng`.
pub fn add_noise<R: Rng + ?Sized>(m: &MeasurementSet, noise: &NoiseModel, rng: &mut R) -> MeasurementSet {
    let mut out = MeasurementSet {
        sigma_r2: noise.sigma_r2(),
        sigma_f2: noise.sigma_f2(),
        ..*m
    };
    if noise.sigma2 == 0.0 {
        return out;
    }
    let tdoa = Normal::new(0.0, noise.sigma_r2().sqrt()).expect("validated sigma");
    let fdoa = Normal::new(0.0, noise.sigma_f2().sqrt()).expect("validated sigma");
    for r in &mut out.r {
        *r += tdoa.sample(rng);
    }
    for rd in &mut out.rdot {
        *rd += fdoa.sample(rng);
    }
    out
}

/// [`add_noise`] with a private generator seeded from `seed`.
pub fn add_noise_seeded(m: &MeasurementSet, noise: &NoiseModel, seed: u64) -> MeasurementSet {
    add_noise(m, noise, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_truth() -> TargetState {
        TargetState::new(20_000.0, 5_000.0, 8_500.0, 70.0, 70.0, 0.0)
    }

    /// `s_iᵀẋ + ṙ_i0 r_0 + r_i0 ṙ_0 + r_i0 ṙ_i0` for stationary sensors; zero for
    /// a consistent measurement.
    fn fdoa_identity(layout: &SensorLayout, truth: &TargetState, m: &MeasurementSet) -> [f64; 2] {
        let p = truth.position();
        let v = truth.velocity();
        let r0 = p.norm();
        let r0_dot = p.dot(&v) / r0;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let s = layout.relative(i);
            let s_dot_v = s.x * v.x + s.y * v.y;
            *o = s_dot_v + m.rdot[i] * r0 + m.r[i] * r0_dot + m.r[i] * m.rdot[i];
        }
        out
    }

    #[test]
    fn spherical_examples() {
        let f = to_spherical(&Vector3::new(3000.0, 4000.0, 0.0));
        assert_relative_eq!(f.range, 5000.0, max_relative = 1e-15);
        assert_relative_eq!(f.azimuth, 4f64.atan2(3.0), max_relative = 1e-15);
        assert_eq!(f.elevation, 0.0);

        let f = to_spherical(&Vector3::new(1000.0, 1000.0, 2f64.sqrt() * 1000.0));
        assert_relative_eq!(f.elevation, std::f64::consts::FRAC_PI_4, max_relative = 1e-12);

        // sqrt(20² + 5² + 8.5²) km
        let f = to_spherical(&Vector3::new(20_000.0, 5_000.0, 8_500.0));
        assert_relative_eq!(f.range, 497.25f64.sqrt() * 1000.0, max_relative = 1e-15);
        assert!((f.range - 22_299.10).abs() < 0.01);
    }

    #[test]
    fn spherical_origin_is_zero() {
        let f = to_spherical(&Vector3::zeros());
        assert_eq!((f.range, f.azimuth, f.elevation), (0.0, 0.0, 0.0));
    }

    #[test]
    fn azimuth_negative_x_axis_is_pi() {
        let f = to_spherical(&Vector3::new(-1.0, -0.0, 0.0));
        assert_eq!(f.azimuth, std::f64::consts::PI);
    }

    #[test]
    fn reference_range_difference() {
        let m = synth_measurements(&reference_truth(), &SensorLayout::reference()).unwrap();
        let expected = (197.25f64.sqrt() - 497.25f64.sqrt()) * 1000.0;
        assert_relative_eq!(m.r[0], expected, max_relative = 1e-12);
        assert!((m.r[0] - (-8254.5)).abs() < 0.1);
    }

    #[test]
    fn equidistant_target_has_zero_tdoa() {
        // Perpendicular bisector of origin and (10 km, 0) is x = 5 km.
        let truth = TargetState::new(5_000.0, 12_345.0, 3_000.0, 10.0, -4.0, 0.0);
        let m = synth_measurements(&truth, &SensorLayout::reference()).unwrap();
        assert!(m.r[0].abs() < 1e-9);
    }

    #[test]
    fn stationary_target_has_zero_fdoa() {
        let truth = TargetState::new(20_000.0, 5_000.0, 8_500.0, 0.0, 0.0, 0.0);
        let m = synth_measurements(&truth, &SensorLayout::reference()).unwrap();
        assert_eq!(m.rdot, [0.0, 0.0]);
    }

    #[test]
    fn target_on_sensor_is_degenerate() {
        let truth = TargetState::new(10_000.0, 0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(matches!(
            synth_measurements(&truth, &SensorLayout::reference()),
            Err(Error::DegenerateGeometry(_))
        ));
        let truth = TargetState::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0);
        assert!(synth_measurements(&truth, &SensorLayout::reference()).is_err());
    }

    #[test]
    fn collinear_layout_rejected() {
        let bad = SensorLayout::new([Vector2::new(1000.0, 1000.0), Vector2::new(-2000.0, -2000.0)]);
        assert!(matches!(bad, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn translated_layout_matches_origin_layout() {
        let shift = Vector2::new(-3_000.0, 7_000.0);
        let shifted = SensorLayout::with_main(
            shift,
            [
                Vector2::new(10_000.0, 0.0) + shift,
                Vector2::new(10_000.0, 10_000.0) + shift,
            ],
        )
        .unwrap();
        let t = reference_truth();
        let moved = TargetState::new(t.x + shift.x, t.y + shift.y, t.h, t.vx, t.vy, 0.0);
        let a = synth_measurements(&t, &SensorLayout::reference()).unwrap();
        let b = synth_measurements(&moved, &shifted).unwrap();
        for i in 0..2 {
            assert_relative_eq!(a.r[i], b.r[i], max_relative = 1e-9);
            assert_relative_eq!(a.rdot[i], b.rdot[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = synth_measurements(&reference_truth(), &SensorLayout::reference()).unwrap();
        let n = add_noise_seeded(&m, &NoiseModel::new(0.0), 3);
        assert_eq!(n, m);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let m = synth_measurements(&reference_truth(), &SensorLayout::reference()).unwrap();
        let noise = NoiseModel::new(2.5);
        let a = add_noise_seeded(&m, &noise, 42);
        let b = add_noise_seeded(&m, &noise, 42);
        assert_eq!(a.r.map(f64::to_bits), b.r.map(f64::to_bits));
        assert_eq!(a.rdot.map(f64::to_bits), b.rdot.map(f64::to_bits));
        assert_eq!(a.sigma_r2, 2.5);
        assert_relative_eq!(a.sigma_f2, 0.25, max_relative = 1e-15);
        assert_ne!(a, add_noise_seeded(&m, &noise, 43));
    }

    #[test]
    fn noise_sample_variance() {
        let m = MeasurementSet {
            r: [0.0; 2],
            rdot: [0.0; 2],
            sigma_r2: 0.0,
            sigma_f2: 0.0,
        };
        let noise = NoiseModel::new(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let (mut sum, mut sum_sq, mut f_sq) = (0.0, 0.0, 0.0);
        for _ in 0..n / 2 {
            let d = add_noise(&m, &noise, &mut rng);
            for (r, f) in d.r.iter().zip(d.rdot) {
                sum += r;
                sum_sq += r * r;
                f_sq += f * f;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((3.9..=4.1).contains(&var), "sample variance {var}");
        let var_f = f_sq / n as f64;
        assert!((0.39..=0.41).contains(&var_f), "fdoa variance {var_f}");
    }

    #[test]
    fn reference_satisfies_fdoa_identity() {
        let truth = reference_truth();
        let layout = SensorLayout::reference();
        let m = synth_measurements(&truth, &layout).unwrap();
        for res in fdoa_identity(&layout, &truth, &m) {
            assert!(res.abs() < 1e-9 * 1e6, "residual {res}");
        }
    }

    fn arb_truth() -> impl Strategy<Value = TargetState> {
        (
            -60_000.0..60_000.0f64,
            -60_000.0..60_000.0f64,
            100.0..20_000.0f64,
            -300.0..300.0f64,
            -300.0..300.0f64,
            -20.0..20.0f64,
        )
            .prop_map(|(x, y, h, vx, vy, vz)| TargetState::new(x, y, h, vx, vy, vz))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn fdoa_identity_holds(truth in arb_truth()) {
            let layout = SensorLayout::reference();
            let m = synth_measurements(&truth, &layout).unwrap();
            // Each term is at most |s|·|v| or r0·|ṙ|; scale the tolerance accordingly.
            let r0 = truth.position().norm();
            let scale = layout.scale() * truth.velocity().norm() + r0 * (m.rdot[0].abs() + m.rdot[1].abs()) + 1.0;
            for res in fdoa_identity(&layout, &truth, &m) {
                prop_assert!(res.abs() <= 1e-9 * scale, "residual {} scale {}", res, scale);
            }
        }

        #[test]
        fn tdoa_bounded_by_baseline(truth in arb_truth()) {
            let layout = SensorLayout::reference();
            let m = synth_measurements(&truth, &layout).unwrap();
            for i in 0..2 {
                prop_assert!(m.r[i].abs() <= layout.relative(i).norm() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn spherical_round_trip(x in -1e5..1e5f64, y in -1e5..1e5f64, z in -1e5..1e5f64) {
            let p = Vector3::new(x, y, z);
            prop_assume!(p.norm() > 1e-3);
            let back = from_spherical(&to_spherical(&p));
            prop_assert!((back - p).norm() <= 1e-12 * p.norm());
        }
    }
}
