//! Rolling-origin evaluation: MASE, seasonal-naive baseline, and the
//! multiple-comparisons-with-the-best rank test.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{fit_direct_gbdt, fit_wavecatboost, DirectGbdtModel, WaveCatBoostConfig, WaveCatBoostModel};
use crate::series::TimeSeries;

pub const DEFAULT_SEASON: usize = 24;

/// Mean absolute scaled error, scaled by the in-sample seasonal-naive error.
pub fn mase(actuals: &[f64], forecasts: &[f64], train: &[f64], s: usize) -> Result<f64> {
    if actuals.len() != forecasts.len() {
        return Err(Error::LengthMismatch {
            expected: actuals.len(),
            got: forecasts.len(),
        });
    }
    if actuals.is_empty() {
        return Err(Error::EmptyData);
    }
    if s == 0 {
        return Err(Error::InvalidParam("seasonality must be at least 1".into()));
    }
    if train.len() <= s {
        return Err(Error::SeriesTooShort {
            len: train.len(),
            min: s + 1,
        });
    }
    let all = actuals.iter().chain(forecasts).chain(train);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("MASE input"));
    }
    let num: f64 = actuals.iter().zip(forecasts).map(|(y, f)| (f - y).abs()).sum();
    let den: f64 = train.windows(s + 1).map(|w| (w[s] - w[0]).abs()).sum();
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let n = train.len() as f64;
    let h = actuals.len() as f64;
    Ok((n - s as f64) / h * num / den)
}

/// Repeats the last season of `train`.
pub fn seasonal_naive(train: &[f64], s: usize, h: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::InvalidParam("seasonality must be at least 1".into()));
    }
    if train.len() < s {
        return Err(Error::SeriesTooShort {
            len: train.len(),
            min: s,
        });
    }
    let last = &train[train.len() - s..];
    Ok((0..h).map(|i| last[i % s]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HorizonLabel {
    #[serde(rename = "1d")]
    Day1,
    #[serde(rename = "7d")]
    Day7,
    #[serde(rename = "14d")]
    Day14,
    #[serde(rename = "31d")]
    Day31,
}

impl HorizonLabel {
    pub const ALL: [HorizonLabel; 4] = [
        HorizonLabel::Day1,
        HorizonLabel::Day7,
        HorizonLabel::Day14,
        HorizonLabel::Day31,
    ];

    pub fn days(self) -> usize {
        match self {
            HorizonLabel::Day1 => 1,
            HorizonLabel::Day7 => 7,
            HorizonLabel::Day14 => 14,
            HorizonLabel::Day31 => 31,
        }
    }

    pub fn hours(self) -> usize {
        24 * self.days()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HorizonLabel::Day1 => "1d",
            HorizonLabel::Day7 => "7d",
            HorizonLabel::Day14 => "14d",
            HorizonLabel::Day31 => "31d",
        }
    }
}

impl fmt::Display for HorizonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HorizonLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HorizonLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown horizon `{s}` (expected 1d, 7d, 14d or 31d)")))
    }
}

/// Training prefix `[0, train_end)` and test window `[train_end, train_end + horizon)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub train_end: usize,
    pub horizon: usize,
    pub label: HorizonLabel,
}

impl EvalSplit {
    /// The split whose test window ends at the end of the series.
    pub fn at_end(series_len: usize, label: HorizonLabel) -> Result<Self> {
        let horizon = label.hours();
        if series_len <= horizon {
            return Err(Error::SeriesTooShort {
                len: series_len,
                min: horizon + 1,
            });
        }
        Ok(EvalSplit {
            train_end: series_len - horizon,
            horizon,
            label,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Wavecatboost(WaveCatBoostConfig),
    PlainGbdt(WaveCatBoostConfig),
    SeasonalNaive { season: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Wavecatboost(_) => "wavecatboost",
            ModelSpec::PlainGbdt(_) => "plain-gbdt",
            ModelSpec::SeasonalNaive { .. } => "seasonal-naive",
        }
    }

    /// Fits on `train`, overriding the model's own seed with `seed`.
    pub fn fit(&self, train: &TimeSeries, seed: u64) -> Result<FittedModel> {
        let reseed = |c: &WaveCatBoostConfig| {
            let mut c = c.clone();
            c.gbdt.seed = seed;
            c
        };
        Ok(match self {
            ModelSpec::Wavecatboost(c) => FittedModel::Wavecatboost(Box::new(fit_wavecatboost(train, &reseed(c))?)),
            ModelSpec::PlainGbdt(c) => FittedModel::PlainGbdt(Box::new(fit_direct_gbdt(train, &reseed(c))?)),
            ModelSpec::SeasonalNaive { season } => {
                seasonal_naive(train.values(), *season, 0)?;
                FittedModel::SeasonalNaive {
                    season: *season,
                    last: train.values()[train.len() - season..].to_vec(),
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedModel {
    Wavecatboost(Box<WaveCatBoostModel>),
    PlainGbdt(Box<DirectGbdtModel>),
    SeasonalNaive { season: usize, last: Vec<f64> },
}

impl FittedModel {
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        match self {
            FittedModel::Wavecatboost(m) => Ok(m.forecast(h)?.point),
            FittedModel::PlainGbdt(m) => m.forecast(h),
            FittedModel::SeasonalNaive { season, last } => seasonal_naive(last, *season, h),
        }
    }

    pub fn snapshot_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Seed for one grid cell, independent of the order cells run in.
pub fn cell_seed(seed: u64, model: &str, pollutant: &str, label: HorizonLabel) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{model}/{pollutant}/{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub pollutant: String,
    pub horizon: HorizonLabel,
    pub mase: f64,
    pub seed: u64,
}

/// A cell that could not be scored, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsentCell {
    pub model: String,
    pub pollutant: String,
    pub horizon: HorizonLabel,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub seed: u64,
    pub season: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<String>,
    pub cells: Vec<EvalCell>,
    pub absent: Vec<AbsentCell>,
    pub metadata: EvalMetadata,
}

impl EvalReport {
    pub fn get(&self, model: &str, pollutant: &str, horizon: HorizonLabel) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.pollutant == pollutant && c.horizon == horizon)
            .map(|c| c.mase)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "pollutant", "horizon", "mase"])?;
        for c in &self.cells {
            w.write_record([
                c.model.as_str(),
                c.pollutant.as_str(),
                c.horizon.as_str(),
                &format!("{:.12}", c.mase),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits `spec` for one split of the full series. Only the training prefix
/// is handed to the model.
pub fn fit_split(spec: &ModelSpec, series: &TimeSeries, split: &EvalSplit, seed: u64) -> Result<FittedModel> {
    spec.fit(&series.prefix(split.train_end)?, seed)
}

#[derive(Serialize)]
struct GridIdentity<'a> {
    models: &'a [ModelSpec],
    horizons: &'a [HorizonLabel],
    pollutants: Vec<&'a str>,
    seed: u64,
    season: usize,
}

/// For every series and horizon: fit on the prefix ending `h` points before
/// the series end, forecast `h`, score with MASE against that prefix.
pub fn run_rolling_eval(
    series: &BTreeMap<String, TimeSeries>,
    models: &[ModelSpec],
    horizons: &[HorizonLabel],
    seed: u64,
    season: usize,
) -> Result<EvalReport> {
    let names: Vec<String> = models.iter().map(|m| m.name().to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::InvalidParam(format!("model `{n}` listed twice")));
        }
    }
    let jobs: Vec<(&String, &TimeSeries, HorizonLabel, &ModelSpec)> = series
        .iter()
        .flat_map(|(p, s)| {
            horizons
                .iter()
                .flat_map(move |&h| models.iter().map(move |m| (p, s, h, m)))
        })
        .collect();

    let outcomes: Vec<std::result::Result<EvalCell, AbsentCell>> = jobs
        .par_iter()
        .map(|&(pollutant, s, label, spec)| {
            let cell_seed = cell_seed(seed, spec.name(), pollutant, label);
            let score = || -> Result<f64> {
                let split = EvalSplit::at_end(s.len(), label)?;
                let fitted = fit_split(spec, s, &split, cell_seed)?;
                let fc = fitted.forecast(split.horizon)?;
                mase(&s.values()[split.train_end..], &fc, &s.values()[..split.train_end], season)
            };
            match score() {
                Ok(m) => Ok(EvalCell {
                    model: spec.name().to_string(),
                    pollutant: pollutant.clone(),
                    horizon: label,
                    mase: m,
                    seed: cell_seed,
                }),
                Err(e) => Err(AbsentCell {
                    model: spec.name().to_string(),
                    pollutant: pollutant.clone(),
                    horizon: label,
                    reason: e.to_string(),
                }),
            }
        })
        .collect();

    let mut cells = Vec::new();
    let mut absent = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => cells.push(c),
            Err(a) => {
                log::warn!("{} / {} / {}: {}", a.model, a.pollutant, a.horizon, a.reason);
                absent.push(a);
            }
        }
    }
    let identity = GridIdentity {
        models,
        horizons,
        pollutants: series.keys().map(String::as_str).collect(),
        seed,
        season,
    };
    let config_hash = hex::encode(Sha256::digest(serde_json::to_vec(&identity)?));
    Ok(EvalReport {
        models: names,
        cells,
        absent,
        metadata: EvalMetadata {
            seed,
            season,
            config_hash,
        },
    })
}

const TABULATED_ALPHAS: [f64; 3] = [0.01, 0.05, 0.10];

/// Upper quantiles of the range of M iid standard normals, M = 2..=20,
/// one row per entry of `TABULATED_ALPHAS`.
const RANGE_QUANTILES: [[f64; 19]; 3] = [
    [
        3.6427727354, 4.1203032065, 4.4028008614, 4.6028210422, 4.7570472494, 4.8821661950, 4.9871826891,
        5.0775056811, 5.1566349601, 5.2269628834, 5.2901955791, 5.3475915402, 5.4001049882, 5.4484762119,
        5.4932907701, 5.5350195915, 5.5740469083, 5.6106901940, 5.6452146980,
    ],
    [
        2.7718076487, 3.3144931554, 3.6331595749, 3.8576555104, 4.0300920532, 4.1695541550, 4.2863094093,
        4.3865091155, 4.4741242217, 4.5518635841, 4.6216554719, 4.6849198473, 4.7427317077, 4.7959238604,
        4.8451541840, 4.8909511256, 4.9337453581, 4.9738923487, 5.0116887941,
    ],
    [
        2.3261743074, 2.9023802134, 3.2404462209, 3.4782805507, 3.6607209417, 3.8080982570, 3.9313491005,
        4.0370231302, 4.1293463982, 4.2112002465, 4.2846346037, 4.3511581986, 4.4119126222, 4.4677818159,
        4.5194637048, 4.5675186363, 4.6124030718, 4.6544935987, 4.6941044095,
    ],
];

/// Tabulated upper-`alpha` quantile of the range of `models` standard normals.
pub fn range_quantile(models: usize, alpha: f64) -> Result<f64> {
    let row = TABULATED_ALPHAS.iter().position(|&a| (a - alpha).abs() < 1e-12);
    match row {
        Some(r) if (2..=20).contains(&models) => Ok(RANGE_QUANTILES[r][models - 2]),
        _ => Err(Error::UntabulatedQuantile { models, alpha }),
    }
}

/// Ranks starting at 1, ties sharing the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McbResult {
    pub alpha: f64,
    /// Number of ranked cells.
    pub cells: usize,
    pub mean_ranks: IndexMap<String, f64>,
    pub half_width: f64,
    pub best: String,
    pub reference_interval: (f64, f64),
    pub significantly_worse: Vec<String>,
}

impl McbResult {
    pub fn interval(&self, model: &str) -> Option<(f64, f64)> {
        self.mean_ranks
            .get(model)
            .map(|&r| (r - self.half_width, r + self.half_width))
    }
}

/// MCB on a table with one row per cell and one column per model.
pub fn mcb_from_table(models: &[String], table: &[Vec<f64>], alpha: f64) -> Result<McbResult> {
    let m = models.len();
    if m < 2 {
        return Err(Error::InvalidParam("MCB needs at least two models".into()));
    }
    if table.len() < 2 {
        return Err(Error::InvalidParam("MCB needs at least two cells".into()));
    }
    let mut sums = vec![0.0; m];
    for row in table {
        if row.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: row.len(),
            });
        }
        for (s, r) in sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
    }
    let n = table.len() as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let half_width = range_quantile(m, alpha)? * ((m * (m + 1)) as f64 / (12.0 * n)).sqrt();
    // first model wins ties for best
    let best = (0..m).fold(0, |b, i| if mean[i] < mean[b] { i } else { b });
    let reference_interval = (mean[best] - half_width, mean[best] + half_width);
    let significantly_worse = (0..m)
        .filter(|&i| mean[i] - half_width > reference_interval.1)
        .map(|i| models[i].clone())
        .collect();
    Ok(McbResult {
        alpha,
        cells: table.len(),
        mean_ranks: models.iter().cloned().zip(mean).collect(),
        half_width,
        best: models[best].clone(),
        reference_interval,
        significantly_worse,
    })
}

fn table_for(report: &EvalReport, keep: impl Fn(HorizonLabel) -> bool) -> Result<Vec<Vec<f64>>> {
    let mut grid: BTreeMap<(String, HorizonLabel), Vec<Option<f64>>> = BTreeMap::new();
    let idx: BTreeMap<&str, usize> = report.models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let keys = report
        .cells
        .iter()
        .map(|c| (&c.model, &c.pollutant, c.horizon))
        .chain(report.absent.iter().map(|a| (&a.model, &a.pollutant, a.horizon)));
    for (_, p, h) in keys {
        if keep(h) {
            grid.entry((p.clone(), h)).or_insert_with(|| vec![None; report.models.len()]);
        }
    }
    for c in report.cells.iter().filter(|c| keep(c.horizon)) {
        let i = *idx
            .get(c.model.as_str())
            .ok_or_else(|| Error::IncompleteGrid(format!("undeclared model `{}`", c.model)))?;
        grid.get_mut(&(c.pollutant.clone(), c.horizon)).expect("cell registered above")[i] = Some(c.mase);
    }
    grid.into_iter()
        .map(|((p, h), row)| {
            row.iter()
                .enumerate()
                .map(|(i, v)| {
                    v.ok_or_else(|| Error::IncompleteGrid(format!("no score for {} on {p} at {h}", report.models[i])))
                })
                .collect()
        })
        .collect()
}

/// Ranks pooled over every (pollutant, horizon) cell of the report.
pub fn mcb_test(report: &EvalReport, alpha: f64) -> Result<McbResult> {
    mcb_from_table(&report.models, &table_for(report, |_| true)?, alpha)
}

/// One ranking per horizon label.
pub fn mcb_by_horizon(report: &EvalReport, alpha: f64) -> Result<BTreeMap<HorizonLabel, McbResult>> {
    let mut labels: Vec<HorizonLabel> = report.cells.iter().map(|c| c.horizon).collect();
    labels.sort();
    labels.dedup();
    labels
        .into_iter()
        .map(|l| Ok((l, mcb_from_table(&report.models, &table_for(report, |h| h == l)?, alpha)?)))
        .collect()
}
