//! The iterative altitude resolver.
//!
//! Each iteration evaluates every altitude hypothesis on the grid by replaying
//! the measurement window collected so far: at altitude `h_j` each epoch yields
//! a planar fix and velocity, which a constant-velocity Kalman filter and a
//! UFIR estimator track. Only the true altitude makes the derived trajectory
//! consistent with constant velocity, so its final residual is smallest. The
//! resulting likelihoods update the hypothesis weights, and the grid is then
//! refined around the most likely altitude until its span drops below `ε₀`.

use serde::{Deserialize, Serialize};

use crate::altitude::{
    argmax, conditional_transfer, mix_altitudes, refine_grid, span, strictly_increasing, uniform, update_probs_log,
    MarkovTransition,
};
use crate::error::{Error, Result};
use crate::fang::BoundingBox;
use crate::filters::{
    fuse, kf_predict, kf_update, ufir_update, white_noise_acceleration, FilterState, Fused, FusedSource, Innovation,
    ObservationModel, StateMatrix, StateVector, UfirConfig,
};
use crate::geom::{MeasurementSet, SensorLayout};
use crate::observation::{observation_noise, observe, NoisePropagation, RootChoice};
use crate::velocity::DEFAULT_DEGENERACY;

/// How the next altitude grid is produced from the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Respan the grid over the neighbours of the most likely altitude.
    #[default]
    Bracket,
    /// Move each altitude to its transfer-weighted mean `Σ_i h_i U_ij`.
    Mixing,
}

/// Prior weights for a freshly refined grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorReset {
    #[default]
    Uniform,
    /// Each new altitude inherits the weight of the nearest old one.
    Nearest,
}

/// Residual that scores a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodSource {
    /// Residual of the fused (Kalman or UFIR) estimate against the latest measurement.
    #[default]
    Fused,
    /// Kalman innovation of the latest measurement.
    Innovation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolverConfig {
    /// Starting altitude hypotheses (m); their count is the number of models.
    pub initial_grid: Vec<f64>,
    /// Stop once the grid span is at most this many metres.
    pub epsilon0: f64,
    pub max_iterations: usize,
    /// Seconds between measurement epochs.
    pub dt: f64,
    /// Upper bound for refined grids (m).
    pub h_max: f64,
    /// Epochs of track collected before the first iteration.
    pub warmup_epochs: usize,
    /// White-noise acceleration intensity (m²/s³).
    pub process_noise_q: f64,
    /// Lower bound on propagated measurement variances.
    pub r_floor: f64,
    /// Measurement variance of the altitude slot (m²).
    pub altitude_variance: f64,
    /// Relative determinant threshold for the velocity solve.
    pub degeneracy: f64,
    pub refinement: Refinement,
    pub prior: PriorReset,
    pub likelihood: LikelihoodSource,
    /// Altitude transfer matrix for mixing; defaults to the neighbour-uniform one.
    pub rho: Option<Vec<Vec<f64>>>,
    /// Region searched for the first fix of every replay.
    pub surveillance: BoundingBox,
    pub ufir: UfirConfig,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        Self {
            initial_grid: vec![0.0, 5_000.0, 10_000.0, 15_000.0],
            epsilon0: 500.0,
            max_iterations: 20,
            dt: 1.0,
            h_max: 20_000.0,
            warmup_epochs: 6,
            process_noise_q: 1e-3,
            r_floor: 1e-2,
            altitude_variance: 1e6,
            degeneracy: DEFAULT_DEGENERACY,
            refinement: Refinement::Bracket,
            prior: PriorReset::Uniform,
            likelihood: LikelihoodSource::Fused,
            rho: None,
            surveillance: BoundingBox::default(),
            ufir: UfirConfig::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ResolverConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.initial_grid;
        if g.len() < 2 {
            return Err(Error::config("resolver.initial_grid", "needs at least 2 altitudes"));
        }
        if g.iter().any(|h| !h.is_finite()) || !strictly_increasing(g) {
            return Err(Error::config(
                "resolver.initial_grid",
                "must be finite and strictly increasing",
            ));
        }
        positive("resolver.h_max", self.h_max)?;
        if g[0] < 0.0 || g[g.len() - 1] > self.h_max {
            return Err(Error::config("resolver.initial_grid", "must lie within [0, h_max]"));
        }
        positive("resolver.epsilon0", self.epsilon0)?;
        positive("resolver.dt", self.dt)?;
        positive("resolver.r_floor", self.r_floor)?;
        positive("resolver.altitude_variance", self.altitude_variance)?;
        positive("resolver.degeneracy", self.degeneracy)?;
        if !(self.process_noise_q.is_finite() && self.process_noise_q >= 0.0) {
            return Err(Error::config("resolver.process_noise_q", "must be finite and >= 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("resolver.max_iterations", "must be >= 1"));
        }
        if self.warmup_epochs == 0 {
            return Err(Error::config("resolver.warmup_epochs", "must be >= 1"));
        }
        let s = &self.surveillance;
        if !(s.x_min < s.x_max && s.y_min < s.y_max) {
            return Err(Error::config(
                "resolver.surveillance",
                "min must be below max on both axes",
            ));
        }
        self.ufir.validate()?;
        let rho = self.transition()?;
        if rho.size() != g.len() {
            return Err(Error::config(
                "resolver.rho",
                format!("is {0}x{0} but the grid has {1} altitudes", rho.size(), g.len()),
            ));
        }
        Ok(())
    }

    pub fn transition(&self) -> Result<MarkovTransition> {
        match &self.rho {
            Some(rows) => MarkovTransition::new(rows),
            None => MarkovTransition::adjacent(self.initial_grid.len()),
        }
    }

    /// Number of epochs consumed when all iterations run.
    pub fn stream_len(&self) -> usize {
        self.warmup_epochs + self.max_iterations
    }
}

/// One altitude hypothesis after replaying the window.
#[derive(Debug, Clone, PartialEq)]
pub struct AltitudeHypothesis {
    pub h: f64,
    /// Posterior weight.
    pub u: f64,
    pub log_likelihood: f64,
    /// `None` when the replay failed at this altitude.
    pub bank: Option<FilterBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub kalman: FilterState,
    pub innovation: Innovation,
    pub ufir: Option<FilterState>,
    pub fused: Fused,
    /// Measurements derived from the window at this altitude.
    pub history: Vec<StateVector>,
}

/// Per-iteration trace entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Altitudes evaluated in this iteration.
    pub grid: Vec<f64>,
    /// Posterior weights over `grid`.
    pub u: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub h_ml: f64,
    /// Fused state `[x, y, h, vx, vy, vz]` of the most likely hypothesis.
    pub state: [f64; 6],
    pub source: FusedSource,
    /// The weights fell back to uniform because every hypothesis failed.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub altitude_ml: f64,
    /// Grid of the last iteration (contains `altitude_ml`).
    pub final_grid: Vec<f64>,
    /// Grid the next iteration would have used.
    pub next_grid: Vec<f64>,
    pub initial_grid: Vec<f64>,
    pub initial_u: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub hypotheses: Vec<AltitudeHypothesis>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the last measurement epoch used.
    pub epoch_index: usize,
}

/// Runs the resolver over a stream of measurement epochs spaced `cfg.dt` apart.
///
/// Iteration `k` (from 1) uses epochs `0 .. warmup_epochs + k`. The loop stops
/// once the refined grid spans at most `epsilon0`, or when either the iteration
/// budget or the stream runs out.
pub fn run_algorithm1(
    layout: &SensorLayout,
    stream: &[MeasurementSet],
    cfg: &ResolverConfig,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    if stream.len() <= cfg.warmup_epochs {
        return Err(Error::config(
            "stream",
            format!("needs more than {} epochs, got {}", cfg.warmup_epochs, stream.len()),
        ));
    }
    let resolver = Resolver::new(layout, cfg)?;
    let m = cfg.initial_grid.len();
    let mut grid = cfg.initial_grid.clone();
    let mut prior = uniform(m);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last = None;

    for k in 1..=cfg.max_iterations {
        let end = cfg.warmup_epochs + k;
        if end > stream.len() {
            break;
        }
        let mut hyps = resolver.evaluate(&stream[..end], &grid, k)?;
        let update = update_probs_log(&hyps.iter().map(|h| h.log_likelihood).collect::<Vec<_>>(), &prior)?;
        for (h, u) in hyps.iter_mut().zip(&update.u) {
            h.u = *u;
        }
        let j = argmax(&update.u);
        let ml = &hyps[j];
        let fused = match &ml.bank {
            Some(b) => b.fused.clone(),
            // The weights are uniform here, so pick any hypothesis that produced a state.
            None => hyps
                .iter()
                .find_map(|h| h.bank.as_ref())
                .expect("at least one bank")
                .fused
                .clone(),
        };
        trace.push(IterationRecord {
            iteration: k,
            grid: grid.clone(),
            u: update.u.clone(),
            log_likelihood: hyps.iter().map(|h| h.log_likelihood).collect(),
            h_ml: grid[j],
            state: fused.state.x.into(),
            source: fused.source,
            degenerate: update.degenerate,
        });

        let next = resolver.next_grid(&grid, &update.u, k)?;
        prior = match cfg.prior {
            PriorReset::Uniform => uniform(m),
            PriorReset::Nearest => inherit_weights(&grid, &update.u, &next),
        };
        let evaluated = std::mem::replace(&mut grid, next);
        last = Some((evaluated, hyps, fused, end - 1));
        if span(&grid) <= cfg.epsilon0 {
            converged = true;
            break;
        }
    }

    let (final_grid, hypotheses, fused, epoch_index) = last.expect("at least one iteration runs");
    let rec = trace.last().expect("trace is non-empty");
    let x = fused.state.x;
    Ok(LocalizationResult {
        position: [x[0], x[1], rec.h_ml],
        velocity: [x[3], x[4], x[5]],
        altitude_ml: rec.h_ml,
        final_grid,
        next_grid: grid,
        initial_grid: cfg.initial_grid.clone(),
        initial_u: uniform(m),
        iterations: trace.len(),
        trace,
        hypotheses,
        converged,
        epoch_index,
    })
}

fn inherit_weights(old: &[f64], u: &[f64], new: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = new
        .iter()
        .map(|g| {
            let (i, _) = old
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - g).abs().total_cmp(&(b.1 - g).abs()))
                .expect("grid is non-empty");
            u[i]
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|v| v / total).collect()
    } else {
        uniform(new.len())
    }
}

struct Resolver<'a> {
    layout: &'a SensorLayout,
    cfg: &'a ResolverConfig,
    q: StateMatrix,
    noise: NoisePropagation,
    rho: MarkovTransition,
}

impl<'a> Resolver<'a> {
    fn new(layout: &'a SensorLayout, cfg: &'a ResolverConfig) -> Result<Self> {
        Ok(Self {
            layout,
            cfg,
            q: white_noise_acceleration(cfg.dt, cfg.process_noise_q),
            noise: NoisePropagation {
                floor: cfg.r_floor,
                altitude_variance: cfg.altitude_variance,
                degeneracy: cfg.degeneracy,
            },
            rho: cfg.transition()?,
        })
    }

    fn evaluate(&self, window: &[MeasurementSet], grid: &[f64], iteration: usize) -> Result<Vec<AltitudeHypothesis>> {
        let mut last_err = None;
        let hyps: Vec<AltitudeHypothesis> = grid
            .iter()
            .map(|&h| match self.replay(window, h) {
                Ok(bank) => {
                    let innovation_d2 = match self.cfg.likelihood {
                        LikelihoodSource::Fused => bank.fused.d2,
                        LikelihoodSource::Innovation => bank.innovation.d2(),
                    };
                    AltitudeHypothesis {
                        h,
                        u: 0.0,
                        log_likelihood: -0.5 * innovation_d2 - 0.5 * bank.innovation.log_det_2pi_s,
                        bank: Some(bank),
                    }
                }
                Err(e) => {
                    last_err = Some(e);
                    AltitudeHypothesis {
                        h,
                        u: 0.0,
                        log_likelihood: f64::NEG_INFINITY,
                        bank: None,
                    }
                }
            })
            .collect();
        if hyps.iter().all(|h| h.bank.is_none()) {
            return Err(Error::ResolverFailure {
                iteration,
                message: format!(
                    "no altitude hypothesis produced a track: {}",
                    last_err.expect("every replay failed")
                ),
            });
        }
        Ok(hyps)
    }

    /// Tracks the whole window as if the target flew at altitude `h`.
    fn replay(&self, window: &[MeasurementSet], h: f64) -> Result<FilterBank> {
        let (layout, cfg) = (self.layout, self.cfg);
        let first = observe(
            layout,
            &window[0],
            h,
            RootChoice::Initial(&cfg.surveillance),
            cfg.degeneracy,
        )?;
        let r0 = observation_noise(layout, &window[0], h, &first, &self.noise);
        let mut state = FilterState::new(first.z, StateMatrix::from_diagonal(&r0));
        let mut history = vec![first.z];
        let mut last = None;
        for m in &window[1..] {
            let pred = kf_predict(&state, cfg.dt, &self.q);
            let o = observe(
                layout,
                m,
                h,
                RootChoice::Nearest(pred.x.fixed_rows::<2>(0).into()),
                cfg.degeneracy,
            )?;
            let model = ObservationModel::new(observation_noise(layout, m, h, &o, &self.noise), cfg.dt)?;
            let (post, innovation) = kf_update(&pred, &o.z, &model)?;
            state = post;
            history.push(o.z);
            last = Some((innovation, model));
        }
        let (innovation, model) = last.ok_or_else(|| Error::Numerical("replay window has a single epoch".into()))?;
        let z = *history.last().expect("history is non-empty");
        let ufir = ufir_update(&history, &cfg.ufir, &model);
        let fused = fuse(&state, &innovation, ufir.as_ref(), &z);
        Ok(FilterBank {
            kalman: state,
            innovation,
            ufir,
            fused,
            history,
        })
    }

    fn next_grid(&self, grid: &[f64], u: &[f64], iteration: usize) -> Result<Vec<f64>> {
        match self.cfg.refinement {
            Refinement::Bracket => Ok(refine_grid(grid, u, self.cfg.h_max)),
            Refinement::Mixing => {
                let t = conditional_transfer(&self.rho, u)?;
                let mut next = mix_altitudes(grid, &t.u);
                next.iter_mut().for_each(|h| *h = h.clamp(0.0, self.cfg.h_max));
                next.sort_by(f64::total_cmp);
                if !strictly_increasing(&next) {
                    return Err(Error::ResolverFailure {
                        iteration,
                        message: format!("altitude mixing collapsed the grid to {next:?}"),
                    });
                }
                Ok(next)
            }
        }
    }
}
