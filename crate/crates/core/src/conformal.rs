//! Windowed conformal prediction intervals around point forecasts.
//!
//! A conformity score is the absolute residual divided by an uncertainty
//! scale `U(lags)`. The interval half-width at time `t` is the
//! `ceil((n + 1)(1 - alpha))`-th smallest of the `n` scores recorded at
//! times `t - window <= t' < t`, multiplied by `U` at the forecast lags.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{self, BoostingMode, GbdtParams, LagMatrix, OrderedGbdtModel};
use crate::pipeline::WaveCatBoostModel;

/// Lower bound applied to every uncertainty value.
pub const UNCERTAINTY_FLOOR: f64 = 1e-6;

/// Residual pairs needed before a learned uncertainty model is fitted.
pub const MIN_LEARNED_PAIRS: usize = 32;

pub const DEFAULT_WINDOW: usize = 200;

pub fn conformal_score(y: f64, pred: f64, u: f64) -> Result<f64> {
    if !y.is_finite() || !pred.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite("conformal score input"));
    }
    Ok((y - pred).abs() / u.max(UNCERTAINTY_FLOOR))
}

/// `k`-th order statistic (1-based) of the scores, `+inf` when `k > n`.
fn order_statistic(mut scores: Vec<f64>, alpha: f64) -> f64 {
    let n = scores.len();
    // the small offset keeps products like 11 * 0.9 from rounding up to 10.000000000000002
    let rank = (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize;
    if rank > n {
        return f64::INFINITY;
    }
    scores.sort_by(f64::total_cmp);
    scores[rank - 1]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMode {
    #[default]
    Constant,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyModel {
    Constant,
    Learned(OrderedGbdtModel),
}

impl UncertaintyModel {
    pub fn evaluate(&self, lags: &[f64]) -> Result<f64> {
        match self {
            UncertaintyModel::Constant => Ok(1.0),
            UncertaintyModel::Learned(model) => Ok(model.predict(lags)?.max(UNCERTAINTY_FLOOR)),
        }
    }
}

/// Fits the uncertainty scale on `(lag vector, |residual|)` pairs.
pub fn fit_uncertainty(pairs: &[(Vec<f64>, f64)], mode: UncertaintyMode, seed: u64) -> Result<UncertaintyModel> {
    match mode {
        UncertaintyMode::Constant => Ok(UncertaintyModel::Constant),
        UncertaintyMode::Learned => {
            if pairs.len() < MIN_LEARNED_PAIRS {
                return Err(Error::TooFewResiduals {
                    got: pairs.len(),
                    need: MIN_LEARNED_PAIRS,
                });
            }
            let rows: Vec<Vec<f64>> = pairs.iter().map(|(x, _)| x.clone()).collect();
            let targets = pairs.iter().map(|&(_, r)| r.abs()).collect();
            let data = LagMatrix::from_rows(&rows, targets)?;
            let params = GbdtParams {
                iterations: 100,
                depth: 3,
                learning_rate: 0.1,
                seed,
                mode: BoostingMode::Plain,
                ..GbdtParams::default()
            };
            Ok(UncertaintyModel::Learned(gbdt::fit(&data, &params)?))
        }
    }
}

/// Time-ordered scores of one calibration stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreBuffer {
    entries: VecDeque<(i64, f64)>,
}

impl ScoreBuffer {
    fn push(&mut self, t: i64, score: f64, window: usize) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back() {
            if t < last {
                return Err(Error::OutOfOrder { last, got: t });
            }
        }
        self.entries.push_back((t, score));
        // nothing older than this can fall inside the window of a later query
        let keep_from = t + 1 - window as i64;
        while self.entries.front().is_some_and(|&(s, _)| s < keep_from) {
            self.entries.pop_front();
        }
        Ok(())
    }

    fn window(&self, t: i64, window: usize) -> Vec<f64> {
        let from = t - window as i64;
        self.entries
            .iter()
            .filter(|&&(s, _)| s >= from && s < t)
            .map(|&(_, v)| v)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// One buffer per forecast step.
    #[default]
    PerStep,
    /// Every step shares one buffer.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibrator {
    alpha: f64,
    window: usize,
    mode: CalibrationMode,
    uncertainty: UncertaintyModel,
    buffers: Vec<ScoreBuffer>,
}

impl ConformalCalibrator {
    pub fn new(alpha: f64, window: usize, mode: CalibrationMode, uncertainty: UncertaintyModel) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParam(format!("alpha must be in (0, 1), got {alpha}")));
        }
        if window == 0 {
            return Err(Error::InvalidParam("window must be at least 1".into()));
        }
        Ok(ConformalCalibrator {
            alpha,
            window,
            mode,
            uncertainty,
            buffers: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn uncertainty(&self) -> &UncertaintyModel {
        &self.uncertainty
    }

    /// Same scores, different miscoverage level.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut next = ConformalCalibrator::new(alpha, self.window, self.mode, self.uncertainty.clone())?;
        next.buffers = self.buffers.clone();
        Ok(next)
    }

    fn slot(&self, step: usize) -> usize {
        match self.mode {
            CalibrationMode::PerStep => step.max(1) - 1,
            CalibrationMode::Pooled => 0,
        }
    }

    /// Records a score for forecast step `step` (1-based) whose target sits at time `t`.
    pub fn push_score(&mut self, step: usize, t: i64, score: f64) -> Result<()> {
        if !(score >= 0.0) {
            return Err(Error::InvalidParam(format!("conformity score must be >= 0, got {score}")));
        }
        let slot = self.slot(step);
        if self.buffers.len() <= slot {
            self.buffers.resize_with(slot + 1, ScoreBuffer::default);
        }
        self.buffers[slot].push(t, score, self.window)
    }

    /// Scores the forecast `pred` of actual `y` made from `lags` and records it.
    pub fn record(&mut self, step: usize, t: i64, y: f64, pred: f64, lags: &[f64]) -> Result<f64> {
        let u = self.uncertainty.evaluate(lags)?;
        let score = conformal_score(y, pred, u)?;
        self.push_score(step, t, score)?;
        Ok(score)
    }

    /// Windowed quantile of the step's scores as seen from time `t`.
    pub fn quantile(&self, step: usize, t: i64) -> Result<f64> {
        let scores = self
            .buffers
            .get(self.slot(step))
            .map(|b| b.window(t, self.window))
            .unwrap_or_default();
        if scores.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(order_statistic(scores, self.alpha))
    }
}

/// Quantile of the first (or pooled) buffer at time `t`.
pub fn conformal_quantile(cal: &ConformalCalibrator, t: i64) -> Result<f64> {
    cal.quantile(1, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub point: Vec<f64>,
    /// `None` where the interval is unbounded.
    #[serde(with = "nullable")]
    pub lower: Vec<f64>,
    #[serde(with = "nullable")]
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub unbounded_flag: bool,
}

// JSON has no infinity, so unbounded ends are written as null.
mod nullable {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

/// Builds the interval from per-step quantiles and uncertainty values.
pub fn interval_from_parts(point: &[f64], quantiles: &[f64], scales: &[f64], alpha: f64) -> IntervalForecast {
    let mut lower = Vec::with_capacity(point.len());
    let mut upper = Vec::with_capacity(point.len());
    let mut unbounded = false;
    for ((&p, &q), &u) in point.iter().zip(quantiles).zip(scales) {
        let half = q * u;
        if half.is_finite() {
            lower.push((p - half).max(0.0));
            upper.push(p + half);
        } else {
            unbounded = true;
            lower.push(0.0);
            upper.push(f64::INFINITY);
        }
    }
    IntervalForecast {
        point: point.to_vec(),
        lower,
        upper,
        alpha,
        unbounded_flag: unbounded,
    }
}

/// Lag vector for step `step` (1-based): the last `lag` values of the history
/// followed by the first `step - 1` point forecasts.
fn step_lags(recent: &[f64], point: &[f64], step: usize, lag: usize) -> Vec<f64> {
    let mut lags: Vec<f64> = recent.iter().chain(&point[..step - 1]).copied().collect();
    lags.drain(..lags.len() - lag);
    lags
}

pub fn predict_interval(model: &WaveCatBoostModel, cal: &ConformalCalibrator, h: usize) -> Result<IntervalForecast> {
    let fc = model.forecast(h)?;
    let t = fc.issued_at as i64;
    let recent = model.recent_values(model.lag());
    let mut quantiles = Vec::with_capacity(h);
    let mut scales = Vec::with_capacity(h);
    for step in 1..=h {
        quantiles.push(cal.quantile(step, t)?);
        scales.push(cal.uncertainty.evaluate(&step_lags(&recent, &fc.point, step, model.lag()))?);
    }
    Ok(interval_from_parts(&fc.point, &quantiles, &scales, cal.alpha))
}

/// Absolute residual of one rolled-forward forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub step: usize,
    /// Index of the forecast target in the full series.
    pub t: i64,
    pub lags: Vec<f64>,
    pub abs_residual: f64,
}

/// Rolls the model through `observations`, forecasting up to `h` steps from
/// every origin and scoring each forecast once its actual is known. Returns
/// the model with all observations appended.
pub fn collect_residuals(
    model: &WaveCatBoostModel,
    observations: &[f64],
    h: usize,
) -> Result<(WaveCatBoostModel, Vec<Residual>)> {
    let mut model = model.clone();
    let mut out = Vec::new();
    for (i, &obs) in observations.iter().enumerate() {
        let steps = h.min(observations.len() - i);
        let fc = model.forecast(steps)?;
        let recent = model.recent_values(model.lag());
        for step in 1..=steps {
            out.push(Residual {
                step,
                t: (fc.issued_at + step - 1) as i64,
                lags: step_lags(&recent, &fc.point, step, model.lag()),
                abs_residual: (observations[i + step - 1] - fc.point[step - 1]).abs(),
            });
        }
        model = model.update_history(obs)?;
    }
    // each buffer must be filled in time order
    out.sort_by_key(|r| (r.step, r.t));
    Ok((model, out))
}

impl ConformalCalibrator {
    /// Scores residuals with this calibrator's uncertainty model.
    pub fn absorb(&mut self, residuals: &[Residual]) -> Result<()> {
        for r in residuals {
            let u = self.uncertainty.evaluate(&r.lags)?;
            self.push_score(r.step, r.t, r.abs_residual / u.max(UNCERTAINTY_FLOOR))?;
        }
        Ok(())
    }
}
