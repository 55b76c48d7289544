//! Exact planar fix from two range differences at a hypothesised altitude.
//!
//! With the main receiver at the origin and ground pseudo-sensors, squaring
//! `|p - s_i| = r_0 + r_i` gives `s_i · (x, y) = (|s_i|² - r_i²)/2 - r_0 r_i`.
//! Given `r_0` this is a 2×2 linear system, so `(x, y) = a + b·r_0`. Feeding that
//! back into `r_0² = x² + y² + h²` leaves a quadratic in `r_0`.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::SensorLayout;

/// Which root of the range quadratic produced a fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootIndex {
    /// Larger `r_0`.
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarFix {
    pub x: f64,
    pub y: f64,
    /// Slant range from the main receiver at the solving altitude.
    pub r0: f64,
    pub root_index: RootIndex,
}

impl PlanarFix {
    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Position relative to the main receiver, at altitude `h`.
    pub fn local(&self, layout: &SensorLayout, h: f64) -> Vector3<f64> {
        let m = layout.main();
        Vector3::new(self.x - m.x, self.y - m.y, h)
    }
}

/// Axis-aligned search region for the target's ground projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }
}

impl Default for BoundingBox {
    fn default() -> Self {
        Self {
            x_min: -200_000.0,
            x_max: 200_000.0,
            y_min: -200_000.0,
            y_max: 200_000.0,
        }
    }
}

const DISCRIMINANT_TOL: f64 = 1e-9;

/// All consistent planar fixes for range differences `r` at altitude `h`,
/// ordered by decreasing `r0`. Coordinates are in the layout's frame.
pub fn solve_fix(layout: &SensorLayout, r: [f64; 2], h: f64) -> Result<Vec<PlanarFix>> {
    if !(h.is_finite() && h >= 0.0) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("invalid fix input r={r:?}, h={h}")));
    }
    let inv = layout
        .baseline_matrix()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("singular pseudo-sensor matrix".into()))?;

    let s = [layout.relative(0), layout.relative(1)];
    let k = Vector2::new(
        (s[0].norm_squared() - r[0] * r[0]) / 2.0,
        (s[1].norm_squared() - r[1] * r[1]) / 2.0,
    );
    let a = inv * k;
    let b = -(inv * Vector2::new(r[0], r[1]));

    // qa·r0² + 2·qb·r0 + qc = 0
    let qa = b.norm_squared() - 1.0;
    let qb = a.dot(&b);
    let qc = a.norm_squared() + h * h;

    let scale = layout.scale().max(a.norm()).max(h);
    let mut roots: Vec<f64> = Vec::with_capacity(2);
    if qa.abs() <= 1e-12 {
        if qb.abs() > 1e-12 * scale {
            roots.push(-qc / (2.0 * qb));
        }
    } else {
        let mut disc = qb * qb - qa * qc;
        if disc < 0.0 && disc > -DISCRIMINANT_TOL * scale * scale {
            disc = 0.0;
        }
        if disc >= 0.0 {
            // Numerically stable pair: q = -(qb + sign(qb)·√disc).
            let sq = disc.sqrt();
            let q = -(qb + qb.signum() * sq);
            if q == 0.0 {
                roots.push(0.0);
            } else {
                roots.push(q / qa);
                if sq > 0.0 {
                    roots.push(qc / q);
                }
            }
        }
    }

    // A root is only a fix if both squared range equations unsquare consistently.
    let tol = 1e-9 * scale;
    roots.retain(|&r0| r0.is_finite() && r0 >= -tol && r.iter().all(|ri| r0 + ri >= -tol));
    roots.sort_by(|x, y| y.total_cmp(x));

    let fixes: Vec<PlanarFix> = roots
        .iter()
        .enumerate()
        .map(|(n, &r0)| {
            let local = polish(&s, r, h, a + b * r0.max(0.0));
            let xy = local + layout.main();
            PlanarFix {
                x: xy.x,
                y: xy.y,
                r0: local.norm().hypot(h),
                root_index: if n == 0 {
                    RootIndex::Primary
                } else {
                    RootIndex::Secondary
                },
            }
        })
        .collect();

    if fixes.is_empty() {
        return Err(Error::NoSolution { altitude: h });
    }
    Ok(fixes)
}

fn tdoa_residual(s: &[Vector2<f64>; 2], r: [f64; 2], h: f64, q: &Vector2<f64>) -> Vector2<f64> {
    let r0 = q.norm().hypot(h);
    let diff = |si: &Vector2<f64>| (si.norm_squared() - 2.0 * q.dot(si)) / ((q - si).norm().hypot(h) + r0);
    Vector2::new(diff(&s[0]) - r[0], diff(&s[1]) - r[1])
}

/// Newton steps on the unsquared range-difference equations. The algebraic
/// solution loses a few digits when the quadratic is badly conditioned (far
/// targets); this recovers them without changing which root was found.
fn polish(s: &[Vector2<f64>; 2], r: [f64; 2], h: f64, mut q: Vector2<f64>) -> Vector2<f64> {
    let mut res = tdoa_residual(s, r, h, &q);
    for _ in 0..3 {
        let r0 = q.norm().hypot(h);
        if r0 == 0.0 {
            break;
        }
        let grad = |si: &Vector2<f64>| {
            let d = (q - si).norm().hypot(h);
            if d == 0.0 {
                None
            } else {
                Some((q - si) / d - q / r0)
            }
        };
        let (Some(g0), Some(g1)) = (grad(&s[0]), grad(&s[1])) else {
            break;
        };
        let Some(jinv) = Matrix2::from_rows(&[g0.transpose(), g1.transpose()]).try_inverse() else {
            break;
        };
        let next = q - jinv * res;
        let next_res = tdoa_residual(s, r, h, &next);
        if next_res.norm() >= res.norm() {
            break;
        }
        q = next;
        res = next_res;
    }
    q
}

/// Largest-range candidate inside `bounds`, falling back to the largest overall.
pub fn select_initial<'a>(fixes: &'a [PlanarFix], bounds: &BoundingBox) -> Option<&'a PlanarFix> {
    fixes
        .iter()
        .find(|f| bounds.contains(&f.xy()))
        .or_else(|| fixes.first())
}

/// Candidate whose ground position is nearest `predicted`.
pub fn select_nearest<'a>(fixes: &'a [PlanarFix], predicted: &Vector2<f64>) -> Option<&'a PlanarFix> {
    fixes.iter().min_by(|a, b| {
        (a.xy() - predicted)
            .norm_squared()
            .total_cmp(&(b.xy() - predicted).norm_squared())
    })
}
