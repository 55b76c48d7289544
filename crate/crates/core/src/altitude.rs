//! Building blocks of the altitude resolver: hypothesis likelihoods, Bayesian
//! weight updates, Markov transfer between altitudes, and grid refinement.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filters::{StateMatrix, StateVector};

/// `ln N(ỹ; 0, S)` for a 6-dimensional innovation.
pub fn log_likelihood(y: &StateVector, s: &StateMatrix) -> Result<f64> {
    let chol = nalgebra::Cholesky::new((s + s.transpose()) * 0.5)
        .ok_or_else(|| Error::Numerical("likelihood covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let d2 = y.dot(&chol.solve(y));
    Ok(-0.5 * d2 - 0.5 * (log_det + 6.0 * (2.0 * std::f64::consts::PI).ln()))
}

/// Gaussian density `exp(−d²/2) / √|2πS|` with `d² = ỹᵀ S⁻¹ ỹ`.
pub fn likelihood(y: &StateVector, s: &StateMatrix) -> Result<f64> {
    log_likelihood(y, s).map(f64::exp)
}

/// Posterior hypothesis weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityUpdate {
    pub u: Vec<f64>,
    /// Every `Λ_j u_j` was zero, so the weights fell back to uniform.
    pub degenerate: bool,
}

/// `u_j ∝ Λ_j u_prev_j`, normalised.
pub fn update_probs(lambdas: &[f64], u_prev: &[f64]) -> Result<ProbabilityUpdate> {
    check_weights(lambdas, u_prev)?;
    let logs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    update_probs_log(&logs, u_prev)
}

/// Same as [`update_probs`] with likelihoods given as logarithms, so that
/// densities far below the smallest positive double still rank correctly.
/// `-inf` marks a hypothesis with zero likelihood.
pub fn update_probs_log(log_lambdas: &[f64], u_prev: &[f64]) -> Result<ProbabilityUpdate> {
    if log_lambdas.len() != u_prev.len() || u_prev.is_empty() {
        return Err(Error::Numerical(format!(
            "likelihood/prior length mismatch: {} vs {}",
            log_lambdas.len(),
            u_prev.len()
        )));
    }
    if log_lambdas.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Numerical("log-likelihood must be finite or -inf".into()));
    }
    check_weights(&[], u_prev)?;
    let w: Vec<f64> = log_lambdas.iter().zip(u_prev).map(|(l, u)| l + u.ln()).collect();
    let peak = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Ok(ProbabilityUpdate {
            u: uniform(u_prev.len()),
            degenerate: true,
        });
    }
    let e: Vec<f64> = w.iter().map(|v| (v - peak).exp()).collect();
    Ok(ProbabilityUpdate {
        u: normalized(&e),
        degenerate: false,
    })
}

fn check_weights(lambdas: &[f64], u: &[f64]) -> Result<()> {
    if lambdas.iter().chain(u).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numerical(
            "weights and likelihoods must be finite and >= 0".into(),
        ));
    }
    Ok(())
}

pub fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Divides by the sum, then absorbs the remaining rounding error into the
/// largest entry so the weights add to one as closely as doubles allow.
fn normalized(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut u: Vec<f64> = w.iter().map(|v| v / total).collect();
    let j = argmax(&u);
    let rest: f64 = u.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v).sum();
    u[j] = (1.0 - rest).max(0.0);
    u
}

/// Index of the largest weight; ties go to the lowest index.
pub fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if *v > u[best] {
            best = i;
        }
    }
    best
}

/// Row-stochastic matrix of altitude-to-altitude transfer probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovTransition {
    rho: DMatrix<f64>,
}

impl MarkovTransition {
    /// Square matrix from rows; each row is rescaled to sum to one.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m < 2 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::config("resolver.rho", "must be a square matrix of size >= 2"));
        }
        let mut rho = DMatrix::zeros(m, m);
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(
                    "resolver.rho",
                    format!("row {i} has a negative or non-finite entry"),
                ));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::config("resolver.rho", format!("row {i} sums to zero")));
            }
            for (j, v) in row.iter().enumerate() {
                rho[(i, j)] = v / total;
            }
        }
        Ok(Self { rho })
    }

    /// Staying put is as likely as stepping to either neighbouring altitude,
    /// written with the two-decimal entries of the reference scenario.
    pub fn reference() -> Self {
        Self::new(&[
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.33, 0.33, 0.33, 0.0],
            vec![0.0, 0.33, 0.33, 0.33],
            vec![0.0, 0.0, 0.5, 0.5],
        ])
        .expect("reference transition matrix is valid")
    }

    /// Tridiagonal matrix: uniform over the current altitude and its neighbours.
    pub fn adjacent(m: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i.abs_diff(j) <= 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(&rows)
    }

    pub fn size(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rho
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    /// `U[(i, j)]`: probability of having come from altitude `i` given altitude `j` now.
    pub u: DMatrix<f64>,
    /// Columns whose normaliser vanished and were filled from `ρ` instead.
    pub fallback_columns: Vec<usize>,
}

/// `U_ij = ρ_ij u_i / Σ_l ρ_lj u_l`; every column sums to one.
pub fn conditional_transfer(rho: &MarkovTransition, u: &[f64]) -> Result<Transfer> {
    let m = rho.size();
    if u.len() != m {
        return Err(Error::Numerical(format!(
            "transfer matrix is {m}x{m} but got {} weights",
            u.len()
        )));
    }
    check_weights(&[], u)?;
    let r = rho.matrix();
    let mut out = DMatrix::zeros(m, m);
    let mut fallback_columns = Vec::new();
    for j in 0..m {
        let denom: f64 = (0..m).map(|l| r[(l, j)] * u[l]).sum();
        if denom > 0.0 {
            for i in 0..m {
                out[(i, j)] = r[(i, j)] * u[i] / denom;
            }
        } else {
            let col: f64 = (0..m).map(|l| r[(l, j)]).sum();
            for i in 0..m {
                out[(i, j)] = if col > 0.0 { r[(i, j)] / col } else { 1.0 / m as f64 };
            }
            fallback_columns.push(j);
        }
    }
    Ok(Transfer {
        u: out,
        fallback_columns,
    })
}

/// `h0_j = Σ_i h_i U_ij`.
pub fn mix_altitudes(h_plus: &[f64], u: &DMatrix<f64>) -> Vec<f64> {
    (0..u.ncols())
        .map(|j| h_plus.iter().enumerate().map(|(i, h)| h * u[(i, j)]).sum())
        .collect()
}

/// Respans the grid over the bracket `[h_{j*−1}, h_{j*+1}]` around the most
/// likely altitude `j*`.
///
/// At an end of the grid the missing neighbour is reflected at the local
/// spacing and clamped to `[0, h_max]`. A two-point grid has no interior node,
/// so it is recentred on the winner with half the old spacing on each side.
pub fn refine_grid(h: &[f64], u: &[f64], h_max: f64) -> Vec<f64> {
    let m = h.len();
    let j = argmax(u);
    let (lo, hi) = if m == 2 {
        let half = (h[1] - h[0]) / 2.0;
        (h[j] - half, h[j] + half)
    } else {
        let lo = if j > 0 { h[j - 1] } else { h[0] - (h[1] - h[0]) };
        let hi = if j + 1 < m {
            h[j + 1]
        } else {
            h[m - 1] + (h[m - 1] - h[m - 2])
        };
        (lo, hi)
    };
    linspace(lo.max(0.0), hi.min(h_max), m)
}

/// `m` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let step = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|k| if k + 1 == m { hi } else { lo + step * k as f64 })
        .collect()
}

pub fn span(h: &[f64]) -> f64 {
    h.last().copied().unwrap_or(0.0) - h.first().copied().unwrap_or(0.0)
}

pub fn strictly_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[0] < w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn likelihood_at_zero_residual_is_peak_density() {
        let s = StateMatrix::from_diagonal(&StateVector::from([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let expected = 1.0 / ((2.0 * std::f64::consts::PI).powi(6) * 720.0).sqrt();
        assert_relative_eq!(
            likelihood(&StateVector::zeros(), &s).unwrap(),
            expected,
            max_relative = 1e-12
        );
        let unit = likelihood(&StateVector::zeros(), &StateMatrix::identity()).unwrap();
        assert_relative_eq!(unit, (2.0 * std::f64::consts::PI).powi(-3), max_relative = 1e-12);
    }

    #[test]
    fn likelihood_factorises_into_scalar_gaussians() {
        // With S = diag(4, 1, ..., 1) and ỹ = (2, 0, ..., 0) the density is the
        // N(0, 4) density at 2 times five standard-normal peaks.
        let mut s = StateMatrix::identity();
        s[(0, 0)] = 4.0;
        let mut y = StateVector::zeros();
        y[0] = 2.0;
        let tau = 2.0 * std::f64::consts::PI;
        let scalar = (-0.5f64 * 4.0 / 4.0).exp() / (tau * 4.0).sqrt();
        let expected = scalar * tau.powf(-2.5);
        assert_relative_eq!(likelihood(&y, &s).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn likelihood_rejects_singular_covariance() {
        let mut s = StateMatrix::identity();
        s[(2, 2)] = 0.0;
        assert!(matches!(
            likelihood(&StateVector::zeros(), &s),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn log_likelihood_survives_underflow() {
        let mut y = StateVector::zeros();
        y[0] = 1e4;
        let l = log_likelihood(&y, &StateMatrix::identity()).unwrap();
        assert!(l.is_finite() && l < -4e7);
        assert_eq!(likelihood(&y, &StateMatrix::identity()).unwrap(), 0.0);
    }

    #[test]
    fn update_reference_arithmetic() {
        let r = update_probs(&[1.0, 2.0, 3.0, 2.0], &[0.25; 4]).unwrap();
        for (a, b) in r.u.iter().zip([0.125, 0.25, 0.375, 0.25]) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        assert!(!r.degenerate);
    }

    #[test]
    fn equal_likelihoods_keep_prior() {
        let prior = [0.1, 0.2, 0.3, 0.4];
        let r = update_probs(&[0.7; 4], &prior).unwrap();
        for (a, b) in r.u.iter().zip(prior) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn flat_prior_gives_normalised_likelihood() {
        let r = update_probs(&[3.0, 1.0, 0.0, 4.0], &[0.25; 4]).unwrap();
        assert_eq!(r.u[2], 0.0);
        assert_relative_eq!(r.u[3], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn all_zero_numerator_falls_back_to_uniform() {
        let r = update_probs(&[0.0; 4], &[0.25; 4]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.u, uniform(4));
        let r = update_probs_log(&[f64::NEG_INFINITY; 3], &[0.2, 0.3, 0.5]).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn log_update_ranks_far_below_double_range() {
        let r = update_probs_log(&[-1e3, -1e3 + 2f64.ln(), f64::NEG_INFINITY], &[1.0 / 3.0; 3]).unwrap();
        assert_relative_eq!(r.u[0], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.u[1], 2.0 / 3.0, max_relative = 1e-12);
        assert_eq!(r.u[2], 0.0);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        assert!(update_probs(&[1.0, -1.0], &[0.5, 0.5]).is_err());
        assert!(update_probs(&[1.0], &[0.5, 0.5]).is_err());
        assert!(update_probs_log(&[f64::NAN, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn reference_rows_are_stochastic() {
        let rho = MarkovTransition::reference();
        for i in 0..4 {
            assert_relative_eq!(rho.matrix().row(i).sum(), 1.0, max_relative = 1e-15);
        }
        let adj = MarkovTransition::adjacent(4).unwrap();
        assert!((rho.matrix() - adj.matrix()).abs().max() < 1e-15);
        assert!(MarkovTransition::new(&[vec![1.0, 0.0]]).is_err());
        assert!(MarkovTransition::new(&[vec![1.0, -1.0], vec![0.0, 1.0]]).is_err());
        assert!(MarkovTransition::new(&[vec![0.0, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn transfer_reference_entry() {
        let t = conditional_transfer(&MarkovTransition::reference(), &[0.25; 4]).unwrap();
        assert_relative_eq!(t.u[(0, 0)], 0.5 / (0.5 + 1.0 / 3.0), max_relative = 1e-14);
        assert_relative_eq!(t.u[(0, 0)], 0.6, max_relative = 1e-14);
        assert!(t.fallback_columns.is_empty());
    }

    #[test]
    fn transfer_with_concentrated_prior() {
        let t = conditional_transfer(&MarkovTransition::reference(), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(t.u[(0, 0)], 1.0);
        assert_eq!(t.u[(0, 1)], 1.0);
        // Columns 2 and 3 cannot be reached from altitude 0 and use ρ instead.
        assert_eq!(t.fallback_columns, vec![2, 3]);
        for j in 0..4 {
            assert_relative_eq!(t.u.column(j).sum(), 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn identity_transfer_is_identity() {
        let rho = MarkovTransition::new(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let t = conditional_transfer(&rho, &[0.2, 0.5, 0.3]).unwrap();
        assert_eq!(t.u, DMatrix::identity(3, 3));
    }

    #[test]
    fn mixing_examples() {
        let h = [0.0, 5_000.0, 10_000.0, 15_000.0];
        assert_eq!(mix_altitudes(&h, &DMatrix::identity(4, 4)), h.to_vec());
        let flat = DMatrix::from_element(4, 4, 0.25);
        assert!(mix_altitudes(&h, &flat).iter().all(|v| (*v - 7_500.0).abs() < 1e-9));
        let u = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.6, 0.2, 0.0, 0.0, 0.4, 0.5, 0.1, 0.0, 0.0, 0.3, 0.6, 0.5, 0.0, 0.0, 0.3, 0.5,
            ],
        );
        // Column j dotted with h by hand.
        let expected = [2_000.0, 5_500.0, 11_000.0, 12_500.0];
        for (a, b) in mix_altitudes(&h, &u).iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn refine_interior_and_endpoint() {
        let h = [0.0, 5_000.0, 10_000.0, 15_000.0];
        let g = refine_grid(&h, &[0.1, 0.2, 0.6, 0.1], 20_000.0);
        let third = 10_000.0 / 3.0;
        for (a, b) in g
            .iter()
            .zip([5_000.0, 5_000.0 + third, 5_000.0 + 2.0 * third, 15_000.0])
        {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
        assert_eq!(
            refine_grid(&h, &[0.7, 0.1, 0.1, 0.1], 20_000.0),
            linspace(0.0, 5_000.0, 4)
        );
        assert_eq!(
            refine_grid(&h, &[0.1, 0.1, 0.1, 0.7], 20_000.0),
            linspace(10_000.0, 20_000.0, 4)
        );
        assert_eq!(
            refine_grid(&h, &[0.1, 0.1, 0.1, 0.7], 18_000.0),
            linspace(10_000.0, 18_000.0, 4)
        );
        let low = [1_000.0, 4_000.0, 7_000.0];
        assert_eq!(refine_grid(&low, &[0.8, 0.1, 0.1], 20_000.0), linspace(0.0, 4_000.0, 3));
    }

    #[test]
    fn refine_two_point_grid() {
        assert_eq!(
            refine_grid(&[2_000.0, 6_000.0], &[0.3, 0.7], 20_000.0),
            vec![4_000.0, 8_000.0]
        );
        assert_eq!(refine_grid(&[0.0, 6_000.0], &[0.7, 0.3], 20_000.0), vec![0.0, 3_000.0]);
    }

    #[test]
    fn interior_refinement_contracts_by_two_over_m_minus_one() {
        for m in 3..9usize {
            let h = linspace(1_000.0, 13_000.0, m);
            let mut u = vec![0.0; m];
            u[m / 2] = 1.0;
            let g = refine_grid(&h, &u, 20_000.0);
            assert_relative_eq!(span(&g), span(&h) * 2.0 / (m - 1) as f64, max_relative = 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn refined_grid_invariants(
            m in 2usize..8,
            lo in 0.0f64..10_000.0,
            width in 10.0f64..20_000.0,
            w in proptest::collection::vec(0.001f64..1.0, 8),
        ) {
            let h_max = 40_000.0;
            let h = linspace(lo, (lo + width).min(h_max), m);
            let u = normalized(&w[..m]);
            let g = refine_grid(&h, &u, h_max);
            prop_assert!(strictly_increasing(&g));
            prop_assert!(g[0] >= 0.0 && g[m - 1] <= h_max);
            prop_assert!(span(&g) <= span(&h) * (1.0 + 1e-12));
        }

        #[test]
        fn update_sums_to_one(w in proptest::collection::vec(-800.0f64..0.0, 2..10)) {
            let prior = uniform(w.len());
            let r = update_probs_log(&w, &prior).unwrap();
            prop_assert!((r.u.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(r.u.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn transfer_columns_sum_to_one(w in proptest::collection::vec(0.0f64..1.0, 4)) {
            let t = conditional_transfer(&MarkovTransition::reference(), &w).unwrap();
            for j in 0..4 {
                prop_assert!((t.u.column(j).sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn mixed_altitudes_stay_in_hull(w in proptest::collection::vec(0.01f64..1.0, 4)) {
            let h = [0.0, 5_000.0, 10_000.0, 15_000.0];
            let t = conditional_transfer(&MarkovTransition::reference(), &w).unwrap();
            for v in mix_altitudes(&h, &t.u) {
                prop_assert!((-1e-9..=15_000.0 + 1e-9).contains(&v));
            }
        }
    }
}
