use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{solve_2d, PlanarEstimate};
use crate::error::{Error, Result};
use crate::geom::{add_noise, synth_measurements, MeasurementSet, NoiseModel, TargetState};
use crate::harness::config::ScenarioConfig;
use crate::resolver::{run_algorithm1, LocalizationResult};

/// One synthesised epoch with the truth that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub index: usize,
    pub time: f64,
    pub truth: TargetState,
    pub measurement: MeasurementSet,
}

/// Seed of Monte Carlo trial `trial`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

/// Noisy measurement stream long enough for every resolver iteration, with
/// the truth advanced at constant velocity between epochs.
pub fn synth_stream(cfg: &ScenarioConfig, noise: &NoiseModel, seed: u64) -> Result<Vec<Epoch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = cfg.resolver.dt;
    let mut truth = cfg.truth;
    (0..cfg.resolver.stream_len())
        .map(|index| {
            let clean = synth_measurements(&truth, &cfg.layout)?;
            let epoch = Epoch {
                index,
                time: index as f64 * dt,
                truth,
                measurement: add_noise(&clean, noise, &mut rng),
            };
            truth = truth.advanced(dt);
            Ok(epoch)
        })
        .collect()
}

/// Result of one trial of both methods.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trial: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub result: LocalizationResult,
    /// Truth at the last epoch the resolver used.
    pub truth: TargetState,
    /// Altitude-blind estimate from the same epoch, or why it failed.
    pub baseline: std::result::Result<PlanarEstimate, String>,
}

impl ScenarioRun {
    pub fn error_3d(&self) -> f64 {
        (Vector3::from(self.result.position) - self.truth.position()).norm()
    }

    pub fn altitude_error(&self) -> f64 {
        self.result.altitude_ml - self.truth.h
    }

    pub fn baseline_error_3d(&self) -> Option<f64> {
        self.baseline
            .as_ref()
            .ok()
            .map(|b| (Vector3::new(b.x, b.y, 0.0) - self.truth.position()).norm())
    }
}

/// Runs trial `trial` of the scenario at noise variance `sigma2`.
pub fn run_trial(cfg: &ScenarioConfig, sigma2: f64, trial: usize) -> Result<ScenarioRun> {
    let noise = NoiseModel { sigma2, ..cfg.noise };
    noise.validate()?;
    let seed = trial_seed(cfg.seed, trial);
    let stream = synth_stream(cfg, &noise, seed)?;
    let measurements: Vec<MeasurementSet> = stream.iter().map(|e| e.measurement).collect();
    let result = run_algorithm1(&cfg.layout, &measurements, &cfg.resolver)?;
    let last = &stream[result.epoch_index];
    Ok(ScenarioRun {
        trial,
        seed,
        sigma2,
        baseline: solve_2d(&cfg.layout, &last.measurement).map_err(|e| e.to_string()),
        truth: last.truth,
        result,
    })
}

/// Single run at the configured noise level with the base seed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    run_trial(cfg, cfg.noise.sigma2, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline => "baseline",
        }
    }
}

/// Aggregate over the trials of one method at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sigma2: f64,
    pub method: Method,
    pub rmse_3d_m: f64,
    pub rmse_alt_m: f64,
    /// Converged trials over all trials (for the baseline: successful fixes).
    pub converged_fraction: f64,
}

/// Trials that returned an error, by noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub sigma2: f64,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct MonteCarloReport {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<TrialFailure>,
    /// Successful runs, ordered by noise level then trial index.
    pub runs: Vec<ScenarioRun>,
}

/// Runs `cfg.runs` trials of both methods at every sweep value on a pool of
/// `jobs` worker threads. Results are keyed by trial index, so the report does
/// not depend on scheduling.
pub fn monte_carlo(cfg: &ScenarioConfig, jobs: usize) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let mut report = MonteCarloReport::default();
    for sigma2 in cfg.sweep_values() {
        let outcomes: Vec<Result<ScenarioRun>> = pool.install(|| {
            (0..cfg.runs)
                .into_par_iter()
                .map(|t| run_trial(cfg, sigma2, t))
                .collect()
        });
        let mut runs = Vec::with_capacity(outcomes.len());
        for (trial, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(run) => runs.push(run),
                Err(e) => report.failures.push(TrialFailure {
                    sigma2,
                    trial,
                    message: e.to_string(),
                }),
            }
        }
        report.rows.extend(summarize(sigma2, cfg.runs, &runs));
        report.runs.extend(runs);
    }
    Ok(report)
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Per-method rows for one noise level; `trials` counts failures too.
pub fn summarize(sigma2: f64, trials: usize, runs: &[ScenarioRun]) -> [SummaryRow; 2] {
    let converged = runs.iter().filter(|r| r.result.converged).count();
    let baseline: Vec<(f64, f64)> = runs
        .iter()
        .filter_map(|r| r.baseline_error_3d().map(|e| (e, r.truth.h)))
        .collect();
    [
        SummaryRow {
            sigma2,
            method: Method::Proposed,
            rmse_3d_m: rms(runs.iter().map(ScenarioRun::error_3d)),
            rmse_alt_m: rms(runs.iter().map(ScenarioRun::altitude_error)),
            converged_fraction: converged as f64 / trials as f64,
        },
        SummaryRow {
            sigma2,
            method: Method::Baseline,
            rmse_3d_m: rms(baseline.iter().map(|b| b.0)),
            rmse_alt_m: rms(baseline.iter().map(|b| b.1)),
            converged_fraction: baseline.len() as f64 / trials as f64,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenario_converges_at_ten_km() {
        let mut cfg = ScenarioConfig::default();
        cfg.truth.h = 10_000.0;
        let run = run_scenario(&cfg).unwrap();
        assert!(run.result.converged);
        assert!(run.altitude_error().abs() <= 200.0);
        assert!(run.error_3d() < 300.0);
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ScenarioConfig {
            noise: NoiseModel::new(1e-4),
            seed: 99,
            ..ScenarioConfig::default()
        };
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.result.trace, b.result.trace);
    }

    #[test]
    fn trials_use_offset_seeds() {
        let cfg = ScenarioConfig {
            noise: NoiseModel::new(1e-4),
            seed: 5,
            ..ScenarioConfig::default()
        };
        let a = synth_stream(&cfg, &cfg.noise, trial_seed(cfg.seed, 3)).unwrap();
        let b = synth_stream(&cfg, &cfg.noise, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), cfg.resolver.stream_len());
        assert_eq!(a[2].truth.x, 20_000.0 + 2.0 * 70.0);
    }

    #[test]
    fn report_is_independent_of_worker_count() {
        let cfg = ScenarioConfig {
            runs: 6,
            sweep: Some(vec![1e-6, 1e-4]),
            seed: 11,
            ..ScenarioConfig::default()
        };
        let one = monte_carlo(&cfg, 1).unwrap();
        let four = monte_carlo(&cfg, 4).unwrap();
        assert_eq!(one.rows, four.rows);
        assert_eq!(one.rows.len(), 4);
        let traces = |r: &MonteCarloReport| r.runs.iter().map(|x| x.result.trace.clone()).collect::<Vec<_>>();
        assert_eq!(traces(&one), traces(&four));
    }

    #[test]
    fn failing_trials_are_counted() {
        // Noise this large routinely leaves the range differences without a fix.
        let cfg = ScenarioConfig {
            runs: 8,
            sweep: Some(vec![1e8]),
            ..ScenarioConfig::default()
        };
        let report = monte_carlo(&cfg, 2).unwrap();
        assert_eq!(report.failures.len() + report.runs.len(), 8);
        assert_eq!(report.rows.len(), 2);
    }

    #[test]
    fn rms_of_nothing_is_nan() {
        assert!(rms(std::iter::empty()).is_nan());
        assert_eq!(rms([3.0, 4.0].into_iter()), (12.5f64).sqrt());
    }
}
