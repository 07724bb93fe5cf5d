//! Decompose, fit one booster per component, forecast recursively, recombine.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gbdt::{self, GbdtParams, OrderedGbdtModel};
use crate::modwt::{component_names, decompose, decomposition_levels, max_level, FilterPair};
use crate::series::{NormParams, TimeSeries};

const SNAPSHOT_VERSION: u32 = 1;

/// Rows the lag matrix must have beyond the lag itself.
pub const MIN_EXTRA_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveCatBoostConfig {
    /// Number of lagged values fed to every component model.
    pub lag: usize,
    pub gbdt: GbdtParams,
    /// Overrides `floor(ln N)` when set.
    pub levels: Option<usize>,
}

impl Default for WaveCatBoostConfig {
    fn default() -> Self {
        WaveCatBoostConfig {
            lag: 48,
            gbdt: GbdtParams::default(),
            levels: None,
        }
    }
}

/// Splits `seed` into an independent stream per `stream` index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined state
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_length(len: usize, lag: usize) -> Result<()> {
    if lag == 0 {
        return Err(Error::InvalidParam("lag must be at least 1".into()));
    }
    if lag >= len {
        return Err(Error::LagTooLarge { lag, len });
    }
    let min = lag + MIN_EXTRA_ROWS + 1;
    if len < min {
        return Err(Error::SeriesTooShort { len, min });
    }
    Ok(())
}

fn tail(values: &[f64], n: usize) -> Vec<f64> {
    values[values.len() - n..].to_vec()
}

/// Iterates a one-step model `h` times, feeding each prediction back into
/// the lag window.
pub fn recursive_forecast(model: &OrderedGbdtModel, window: &[f64], h: usize) -> Result<Vec<f64>> {
    let mut window = window.to_vec();
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        let next = model.predict(&window)?;
        if !next.is_finite() {
            return Err(Error::NonFinite("recursive forecast"));
        }
        out.push(next);
        window.remove(0);
        window.push(next);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveCatBoostModel {
    pollutant: String,
    lag: usize,
    levels: usize,
    norm: NormParams,
    filter: FilterPair,
    component_models: Vec<OrderedGbdtModel>,
    /// Normalized series the current component histories were derived from.
    history: Vec<f64>,
    component_histories: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SnapshotRef<'a, T> {
    format_version: u32,
    model: &'a T,
}

#[derive(Deserialize)]
struct SnapshotOwned<T> {
    format_version: u32,
    model: T,
}

fn snapshot_json<T: Serialize>(model: &T) -> Result<String> {
    Ok(serde_json::to_string(&SnapshotRef {
        format_version: SNAPSHOT_VERSION,
        model,
    })?)
}

fn snapshot_parse<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T> {
    let snap: SnapshotOwned<T> = serde_json::from_str(s)?;
    if snap.format_version != SNAPSHOT_VERSION {
        return Err(Error::InvalidParam(format!(
            "unsupported snapshot version {}",
            snap.format_version
        )));
    }
    Ok(snap.model)
}

fn decompose_tails(history: &[f64], levels: usize, lag: usize, filter: &FilterPair) -> Result<Vec<Vec<f64>>> {
    Ok(decompose(history, levels, filter)?
        .into_components()
        .into_iter()
        .map(|c| tail(&c, lag))
        .collect())
}

pub fn fit_wavecatboost(series: &TimeSeries, config: &WaveCatBoostConfig) -> Result<WaveCatBoostModel> {
    let n = series.len();
    check_length(n, config.lag)?;
    config.gbdt.validate()?;
    let filter = FilterPair::haar();
    let levels = match config.levels {
        Some(k) => {
            let max = max_level(n, &filter);
            if k == 0 || k > max {
                return Err(Error::LevelOutOfRange { requested: k, max });
            }
            k
        }
        None => decomposition_levels(n)?,
    };
    let norm = NormParams::fit(series.values())?;
    let history: Vec<f64> = series.values().iter().map(|&y| norm.scale(y)).collect();
    let components = decompose(&history, levels, &filter)?.into_components();
    let names = component_names(levels);

    let component_models = components
        .par_iter()
        .enumerate()
        .map(|(k, comp)| {
            let params = GbdtParams {
                seed: mix_seed(config.gbdt.seed, k as u64),
                ..config.gbdt.clone()
            };
            gbdt::make_lag_matrix(comp, config.lag)
                .and_then(|data| gbdt::fit(&data, &params))
                .map_err(|e| e.in_component(&names[k]))
        })
        .collect::<Result<Vec<_>>>()?;

    let component_histories = components.iter().map(|c| tail(c, config.lag)).collect();
    Ok(WaveCatBoostModel {
        pollutant: series.pollutant().to_string(),
        lag: config.lag,
        levels,
        norm,
        filter,
        component_models,
        history,
        component_histories,
    })
}

impl WaveCatBoostModel {
    pub fn pollutant(&self) -> &str {
        &self.pollutant
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn norm(&self) -> &NormParams {
        &self.norm
    }

    pub fn filter(&self) -> &FilterPair {
        &self.filter
    }

    pub fn component_models(&self) -> &[OrderedGbdtModel] {
        &self.component_models
    }

    pub fn component_histories(&self) -> &[Vec<f64>] {
        &self.component_histories
    }

    /// Observations seen so far, training data included.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// The last `n` observations in original units.
    pub fn recent_values(&self, n: usize) -> Vec<f64> {
        let n = n.min(self.history.len());
        self.history[self.history.len() - n..]
            .iter()
            .map(|&x| self.norm.unscale(x))
            .collect()
    }

    pub fn forecast(&self, h: usize) -> Result<ForecastResult> {
        let names = component_names(self.levels);
        let per_component = self
            .component_models
            .par_iter()
            .zip(self.component_histories.par_iter())
            .enumerate()
            .map(|(k, (model, window))| {
                recursive_forecast(model, window, h).map_err(|e| e.in_component(&names[k]))
            })
            .collect::<Result<Vec<_>>>()?;
        let point = (0..h)
            .map(|s| self.norm.unscale(per_component.iter().map(|c| c[s]).sum()))
            .collect();
        Ok(ForecastResult {
            pollutant: self.pollutant.clone(),
            issued_at: self.history.len(),
            horizon: h,
            point,
            components: names.into_iter().zip(per_component).collect(),
        })
    }

    /// Appends one observation and re-derives every component window from a
    /// fresh decomposition of the extended series. Models are not refitted.
    pub fn update_history(&self, new_value: f64) -> Result<Self> {
        if !new_value.is_finite() {
            return Err(Error::NonFinite("history update"));
        }
        let mut next = self.clone();
        next.history.push(self.norm.scale(new_value));
        next.component_histories = decompose_tails(&next.history, self.levels, self.lag, &self.filter)?;
        Ok(next)
    }

    /// Appends several observations, decomposing once at the end.
    pub fn extend_history(&self, values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("history update"));
        }
        let mut next = self.clone();
        next.history.extend(values.iter().map(|&y| self.norm.scale(y)));
        next.component_histories = decompose_tails(&next.history, self.levels, self.lag, &self.filter)?;
        Ok(next)
    }

    pub fn to_json(&self) -> Result<String> {
        snapshot_json(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = snapshot_parse(s)?;
        if model.component_models.len() != model.levels + 1 {
            return Err(Error::LengthMismatch {
                expected: model.levels + 1,
                got: model.component_models.len(),
            });
        }
        Ok(model)
    }

    pub fn snapshot_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Point forecast with the per-component forecasts it was summed from.
/// Component values stay in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub pollutant: String,
    pub issued_at: usize,
    pub horizon: usize,
    pub point: Vec<f64>,
    pub components: IndexMap<String, Vec<f64>>,
}

/// One booster on the raw (normalized) series, no decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectGbdtModel {
    pollutant: String,
    lag: usize,
    norm: NormParams,
    model: OrderedGbdtModel,
    window: Vec<f64>,
}

pub fn fit_direct_gbdt(series: &TimeSeries, config: &WaveCatBoostConfig) -> Result<DirectGbdtModel> {
    check_length(series.len(), config.lag)?;
    config.gbdt.validate()?;
    let norm = NormParams::fit(series.values())?;
    let scaled: Vec<f64> = series.values().iter().map(|&y| norm.scale(y)).collect();
    let model = gbdt::fit(&gbdt::make_lag_matrix(&scaled, config.lag)?, &config.gbdt)?;
    Ok(DirectGbdtModel {
        pollutant: series.pollutant().to_string(),
        lag: config.lag,
        norm,
        model,
        window: tail(&scaled, config.lag),
    })
}

impl DirectGbdtModel {
    pub fn model(&self) -> &OrderedGbdtModel {
        &self.model
    }

    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        Ok(recursive_forecast(&self.model, &self.window, h)?
            .into_iter()
            .map(|x| self.norm.unscale(x))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        snapshot_json(self)
    }

    pub fn snapshot_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}
