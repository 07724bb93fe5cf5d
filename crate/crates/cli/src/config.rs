use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wavecat::conformal::{CalibrationMode, UncertaintyMode, DEFAULT_WINDOW};
use wavecat::eval::{HorizonLabel, ModelSpec, DEFAULT_SEASON};
use wavecat::gbdt::GbdtParams;
use wavecat::pipeline::WaveCatBoostConfig;
use wavecat::series::{ImputationPolicy, STANDARD_POLLUTANTS};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pollutants: Vec<String>,
    pub horizons: Vec<HorizonLabel>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub gbdt: GbdtParams,
    pub conformal: ConformalConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Minute-level sensor CSV read by `ingest`.
    pub raw: Option<PathBuf>,
    pub imputation: ImputationPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lag: usize,
    pub levels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalConfig {
    pub alpha: f64,
    pub window: usize,
    pub uncertainty: UncertaintyMode,
    pub calibration: CalibrationMode,
    /// Trailing observations held out of training and used to collect scores.
    pub calibration_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub models: Vec<String>,
    pub season: usize,
    pub mcb_alpha: f64,
    pub mcb_per_horizon: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            pollutants: STANDARD_POLLUTANTS.iter().map(|(p, _)| p.to_string()).collect(),
            horizons: HorizonLabel::ALL.to_vec(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            gbdt: GbdtParams::default(),
            conformal: ConformalConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = WaveCatBoostConfig::default();
        ModelConfig {
            lag: d.lag,
            levels: d.levels,
        }
    }
}

impl Default for ConformalConfig {
    fn default() -> Self {
        ConformalConfig {
            alpha: 0.05,
            window: DEFAULT_WINDOW,
            uncertainty: UncertaintyMode::Constant,
            calibration: CalibrationMode::PerStep,
            calibration_points: 200,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            models: vec!["wavecatboost".into(), "plain-gbdt".into(), "seasonal-naive".into()],
            season: DEFAULT_SEASON,
            mcb_alpha: 0.05,
            mcb_per_horizon: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.pollutants.is_empty() {
            return bad("at least one pollutant is required".into());
        }
        if self.horizons.is_empty() {
            return bad("at least one horizon is required".into());
        }
        if self.model.lag == 0 {
            return bad("model.lag must be at least 1".into());
        }
        self.gbdt.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let c = &self.conformal;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return bad(format!("conformal.alpha must be in (0, 1), got {}", c.alpha));
        }
        if c.window == 0 || c.calibration_points == 0 {
            return bad("conformal.window and conformal.calibration_points must be at least 1".into());
        }
        if self.eval.season == 0 {
            return bad("eval.season must be at least 1".into());
        }
        self.model_specs()?;
        Ok(())
    }

    pub fn wavecatboost(&self) -> WaveCatBoostConfig {
        WaveCatBoostConfig {
            lag: self.model.lag,
            gbdt: GbdtParams {
                seed: self.seed,
                ..self.gbdt.clone()
            },
            levels: self.model.levels,
        }
    }

    pub fn model_specs(&self) -> Result<Vec<ModelSpec>, CliError> {
        self.eval
            .models
            .iter()
            .map(|name| match name.as_str() {
                "wavecatboost" => Ok(ModelSpec::Wavecatboost(self.wavecatboost())),
                "plain-gbdt" => Ok(ModelSpec::PlainGbdt(self.wavecatboost())),
                "seasonal-naive" => Ok(ModelSpec::SeasonalNaive {
                    season: self.eval.season,
                }),
                other => Err(CliError::Config(format!(
                    "unknown model `{other}` (expected wavecatboost, plain-gbdt or seasonal-naive)"
                ))),
            })
            .collect()
    }

    /// SHA-256 of the config serialized as JSON with sorted keys. The
    /// output directory is left out: it names where a run goes, not what it
    /// computes.
    pub fn hash(&self) -> String {
        // serde_json's default map is ordered by key, so a round trip
        // through Value yields the canonical form
        let mut value = serde_json::to_value(self).expect("config is always serializable");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn series_dir(&self) -> PathBuf {
        self.out_dir.join("series")
    }

    pub fn series_path(&self, pollutant: &str) -> PathBuf {
        self.series_dir().join(format!("{pollutant}.csv"))
    }

    pub fn model_path(&self, pollutant: &str) -> PathBuf {
        self.out_dir.join("models").join(format!("{pollutant}.json"))
    }

    pub fn forecast_dir(&self) -> PathBuf {
        self.out_dir.join("forecasts")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }

    pub fn mcb_dir(&self) -> PathBuf {
        self.out_dir.join("mcb")
    }
}
