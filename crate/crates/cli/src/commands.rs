use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use wavecat::conformal::{
    collect_residuals, fit_uncertainty, predict_interval, ConformalCalibrator, IntervalForecast, UncertaintyMode,
};
use wavecat::eval::{mcb_by_horizon, mcb_test, run_rolling_eval, EvalReport, HorizonLabel};
use wavecat::pipeline::{fit_wavecatboost, mix_seed, ForecastResult, WaveCatBoostModel};
use wavecat::plot::{forecast_band_svg, rank_plot_svg};
use wavecat::series::{hourly_average, impute_missing, load_csv, ColumnSchema, LoadReport, TimeSeries};

use crate::config::RunConfig;
use crate::error::CliError;

const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub pollutant: Option<String>,
    pub horizon: Option<HorizonLabel>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(p) = &self.pollutant {
            config.pollutants = vec![p.clone()];
        }
        if let Some(h) = self.horizon {
            config.horizons = vec![h];
        }
        config.validate()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::write(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::missing(path, e))
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(wavecat::Error::from)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    source: String,
    load: &'a LoadReport,
    /// Values filled by imputation, per pollutant (minute level).
    imputed_per_column: &'a BTreeMap<String, usize>,
    hourly_lengths: BTreeMap<String, usize>,
}

pub fn ingest(config: &RunConfig, input: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let source = input
        .map(Path::to_path_buf)
        .or_else(|| config.data.raw.clone())
        .ok_or_else(|| CliError::Config("no input CSV: pass --input or set data.raw".into()))?;
    if !source.exists() {
        return Err(CliError::MissingArtifact {
            path: source.display().to_string(),
            message: "file not found".into(),
        });
    }
    let schema = ColumnSchema::for_pollutants(config.pollutants.iter().map(String::as_str));
    let (records, load) = load_csv(&source, &schema)?;
    let imputed = impute_missing(&records, config.data.imputation)?;
    let mut written = Vec::new();
    let mut lengths = BTreeMap::new();
    for p in &config.pollutants {
        let series = hourly_average(&imputed, p)?;
        let mut buf = Vec::new();
        series.write_csv(&mut buf)?;
        let path = config.series_path(p);
        write(&path, buf)?;
        lengths.insert(p.clone(), series.len());
        written.push(path);
    }
    let report = IngestReport {
        source: source.display().to_string(),
        load: &load,
        imputed_per_column: &load.missing_per_column,
        hourly_lengths: lengths,
    };
    let path = config.out_dir.join("load_report.json");
    write(&path, json(&report)?)?;
    written.push(path);
    Ok(written)
}

fn load_series(config: &RunConfig, pollutant: &str) -> Result<TimeSeries, CliError> {
    let path = config.series_path(pollutant);
    let file = fs::File::open(&path).map_err(|e| CliError::missing(&path, e))?;
    Ok(TimeSeries::read_csv(file)?)
}

/// Everything `forecast` needs, written by `train`.
#[derive(Serialize, Deserialize)]
pub struct TrainedArtifact {
    pub format_version: u32,
    pub config_hash: String,
    pub pollutant: String,
    /// Steps the calibrator holds scores for.
    pub horizon: usize,
    pub model: WaveCatBoostModel,
    pub calibrator: ConformalCalibrator,
}

fn calibration_horizon(config: &RunConfig) -> usize {
    config.horizons.iter().map(|h| h.hours()).max().unwrap_or(24)
}

pub fn train(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let h = calibration_horizon(config);
    let c = config.conformal.calibration_points;
    let mut written = Vec::new();
    for p in &config.pollutants {
        let series = load_series(config, p)?;
        if series.len() <= c {
            return Err(wavecat::Error::SeriesTooShort {
                len: series.len(),
                min: c + 1,
            }
            .into());
        }
        let fit_len = series.len() - c;
        let model = fit_wavecatboost(&series.prefix(fit_len)?, &config.wavecatboost())?;
        let (model, residuals) = collect_residuals(&model, &series.values()[fit_len..], h)?;
        let uncertainty = match config.conformal.uncertainty {
            UncertaintyMode::Constant => fit_uncertainty(&[], UncertaintyMode::Constant, 0)?,
            UncertaintyMode::Learned => {
                let pairs: Vec<_> = residuals
                    .iter()
                    .filter(|r| r.step == 1)
                    .map(|r| (r.lags.clone(), r.abs_residual))
                    .collect();
                fit_uncertainty(&pairs, UncertaintyMode::Learned, mix_seed(config.seed, u64::MAX))?
            }
        };
        let mut calibrator = ConformalCalibrator::new(
            config.conformal.alpha,
            config.conformal.window,
            config.conformal.calibration,
            uncertainty,
        )?;
        calibrator.absorb(&residuals)?;
        let artifact = TrainedArtifact {
            format_version: ARTIFACT_VERSION,
            config_hash: config.hash(),
            pollutant: p.clone(),
            horizon: h,
            model,
            calibrator,
        };
        let path = config.model_path(p);
        write(&path, serde_json::to_string(&artifact).map_err(wavecat::Error::from)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_artifact(path: &Path) -> Result<TrainedArtifact, CliError> {
    let artifact: TrainedArtifact = serde_json::from_str(&read(path)?).map_err(wavecat::Error::from)?;
    if artifact.format_version != ARTIFACT_VERSION {
        return Err(CliError::Config(format!(
            "{} has artifact version {}, expected {ARTIFACT_VERSION}",
            path.display(),
            artifact.format_version
        )));
    }
    Ok(artifact)
}

#[derive(Serialize)]
struct ForecastOutput<'a> {
    config_hash: &'a str,
    forecast: &'a ForecastResult,
    interval: &'a IntervalForecast,
}

/// Forecasts the first configured horizon (or `--horizon`) for each pollutant.
pub fn forecast(config: &RunConfig, alpha: Option<f64>) -> Result<Vec<PathBuf>, CliError> {
    let h = config.horizons[0].hours();
    let mut written = Vec::new();
    for p in &config.pollutants {
        let artifact = load_artifact(&config.model_path(p))?;
        let calibrator = match alpha {
            Some(a) => artifact.calibrator.with_alpha(a)?,
            None => artifact.calibrator,
        };
        let fc = artifact.model.forecast(h)?;
        let interval = predict_interval(&artifact.model, &calibrator, h)?;
        let out = ForecastOutput {
            config_hash: &artifact.config_hash,
            forecast: &fc,
            interval: &interval,
        };
        let json_path = config.forecast_dir().join(format!("{p}.json"));
        write(&json_path, json(&out)?)?;
        let history = artifact.model.recent_values(7 * 24);
        let title = format!("{p}: {h}-step forecast, {:.0}% band", 100.0 * (1.0 - calibrator.alpha()));
        let svg = forecast_band_svg(&title, &history, None, &fc.point, &interval.lower, &interval.upper);
        let svg_path = config.forecast_dir().join(format!("{p}.svg"));
        write(&svg_path, svg)?;
        written.push(json_path);
        written.push(svg_path);
    }
    Ok(written)
}

pub fn eval(config: &RunConfig, format: Format) -> Result<(Vec<PathBuf>, String), CliError> {
    let mut series = BTreeMap::new();
    for p in &config.pollutants {
        series.insert(p.clone(), load_series(config, p)?);
    }
    let report = run_rolling_eval(
        &series,
        &config.model_specs()?,
        &config.horizons,
        config.seed,
        config.eval.season,
    )?;
    let json_text = report.to_json()? + "\n";
    let mut csv_buf = Vec::new();
    report.write_csv(&mut csv_buf)?;
    let csv_text = String::from_utf8(csv_buf).expect("csv writer emits utf-8");
    let json_path = config.eval_dir().join("report.json");
    let csv_path = config.eval_dir().join("report.csv");
    write(&json_path, &json_text)?;
    write(&csv_path, &csv_text)?;
    let shown = match format {
        Format::Json => json_text,
        Format::Csv => csv_text,
    };
    Ok((vec![json_path, csv_path], shown))
}

pub fn mcb(config: &RunConfig, alpha: Option<f64>) -> Result<Vec<PathBuf>, CliError> {
    let report_path = config.eval_dir().join("report.json");
    let report = EvalReport::from_json(&read(&report_path)?)?;
    let alpha = alpha.unwrap_or(config.eval.mcb_alpha);
    let mut written = Vec::new();
    let mut emit = |stem: String, result: &wavecat::eval::McbResult| -> Result<(), CliError> {
        let json_path = config.mcb_dir().join(format!("{stem}.json"));
        let svg_path = config.mcb_dir().join(format!("{stem}.svg"));
        write(&json_path, json(result)?)?;
        write(&svg_path, rank_plot_svg(result))?;
        written.push(json_path);
        written.push(svg_path);
        Ok(())
    };
    emit("mcb".into(), &mcb_test(&report, alpha)?)?;
    if config.eval.mcb_per_horizon {
        for (label, result) in mcb_by_horizon(&report, alpha)? {
            emit(format!("mcb_{label}"), &result)?;
        }
    }
    Ok(written)
}
