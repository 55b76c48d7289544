use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{NoiseModel, SensorLayout, TargetState};
use crate::resolver::ResolverConfig;

/// Everything needed to reproduce a simulation run, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Base seed; trial `k` draws its noise from `seed + k`.
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo trials per noise level.
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Noise variances (m²) for a Monte Carlo sweep.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    pub layout: SensorLayout,
    pub truth: TargetState,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub resolver: ResolverConfig,
}

fn default_runs() -> usize {
    1
}

impl Default for ScenarioConfig {
    /// Reference scenario: reflectors at (10, 0) and (10, 10) km, target at
    /// (20, 5, 8.5) km flying at (70, 70) m/s, no noise.
    fn default() -> Self {
        Self {
            seed: 0,
            runs: default_runs(),
            sweep: None,
            layout: SensorLayout::reference(),
            truth: TargetState::new(20_000.0, 5_000.0, 8_500.0, 70.0, 70.0, 0.0),
            noise: NoiseModel::default(),
            resolver: ResolverConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| match find_config_error(&e) {
            Some(inner) => inner,
            None => Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            },
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs", "must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            if let Some(bad) = sweep.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::config(
                    "sweep",
                    format!("noise variances must be finite and >= 0, got {bad}"),
                ));
            }
        }
        self.truth.validate()?;
        self.noise.validate()?;
        self.resolver.validate()
    }

    /// Sweep values, or the single configured noise level when no sweep is set.
    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.clone().unwrap_or_else(|| vec![self.noise.sigma2])
    }
}

/// Layout validation runs inside deserialisation; recover its typed error
/// instead of flattening it into a parse message.
fn find_config_error(e: &toml::de::Error) -> Option<Error> {
    let msg = e.message();
    if msg.contains("collinear") {
        return Some(Error::DegenerateGeometry(msg.to_string()));
    }
    None
}
