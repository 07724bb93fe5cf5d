//! Gradient-boosted oblivious regression trees with ordered boosting.
//!
//! In [`BoostingMode::Ordered`] the tree structure at every iteration is
//! chosen on one of `u` random permutations of the training rows. The
//! gradient of the row at position `i` of that permutation is taken from a
//! supporting model that has only seen rows at earlier positions, so a row's
//! own target never leaks into the residual it is scored on. Supporting
//! models are kept for prefixes of length 1, 2, 4, ...; position `i` reads
//! the model for the largest prefix `L <= i`, position 0 reads the base
//! prediction. Candidate splits are scored by how well the running mean of
//! earlier same-leaf gradients predicts each row's gradient. Once a tree's
//! structure is fixed, every supporting model is boosted with leaf values
//! estimated on its own prefix, and the leaf values of the returned model
//! come from an ordinary gradient step over all rows in temporal order.
//!
//! [`BoostingMode::Plain`] is standard histogram gradient boosting with the
//! same trees and is used as the leakage-prone baseline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lagged design matrix: row `i` holds the `lag` values preceding target `i`,
/// oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct LagMatrix {
    features: Vec<f64>,
    targets: Vec<f64>,
    time_index: Vec<usize>,
    lag: usize,
}

impl LagMatrix {
    /// Arbitrary regression rows (not necessarily lags); `time_index` is the row number.
    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                got: targets.len(),
            });
        }
        let lag = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * lag);
        for row in rows {
            if row.len() != lag {
                return Err(Error::ArityMismatch {
                    expected: lag,
                    got: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training rows"));
        }
        Ok(LagMatrix {
            features,
            time_index: (0..targets.len()).collect(),
            targets,
            lag,
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Number of feature columns.
    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.lag..(i + 1) * self.lag]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Position of each row's target in the source series.
    pub fn time_index(&self) -> &[usize] {
        &self.time_index
    }

    fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.lag + feature]
    }
}

/// Sliding-window design matrix with `lag` columns over `series`.
pub fn make_lag_matrix(series: &[f64], lag: usize) -> Result<LagMatrix> {
    if lag == 0 {
        return Err(Error::InvalidParam("lag must be at least 1".into()));
    }
    if lag >= series.len() {
        return Err(Error::LagTooLarge {
            lag,
            len: series.len(),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lagged series"));
    }
    let rows = series.len() - lag;
    let mut features = Vec::with_capacity(rows * lag);
    for t in lag..series.len() {
        features.extend_from_slice(&series[t - lag..t]);
    }
    Ok(LagMatrix {
        features,
        targets: series[lag..].to_vec(),
        time_index: (lag..series.len()).collect(),
        lag,
    })
}

/// Squared-error loss `(y - a)^2 / 2`.
pub fn loss(y: f64, a: f64) -> f64 {
    0.5 * (y - a) * (y - a)
}

/// Derivative of [`loss`] with respect to the prediction: `a - y`.
pub fn gradient(y: f64, a: f64) -> Result<f64> {
    if !y.is_finite() || !a.is_finite() {
        return Err(Error::NonFinite("gradient input"));
    }
    Ok(a - y)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoostingMode {
    #[default]
    Ordered,
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    /// Number of trees.
    pub iterations: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// Structure permutations besides the temporal one.
    pub permutations: usize,
    /// Maximum bins per feature (at most 256).
    pub bins: usize,
    pub seed: u64,
    pub mode: BoostingMode,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            iterations: 500,
            depth: 6,
            learning_rate: 0.05,
            permutations: 3,
            bins: 32,
            seed: 0,
            mode: BoostingMode::Ordered,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParam("learning_rate must be in (0, 1]".into()));
        }
        if self.permutations == 0 {
            return Err(Error::InvalidParam("permutations must be at least 1".into()));
        }
        if !(2..=256).contains(&self.bins) {
            return Err(Error::InvalidParam("bins must be in 2..=256".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

/// Symmetric tree: level `d` of every path tests `splits[d]`. A sample goes
/// right (bit 1) when `x[feature] > threshold`; the first split is the most
/// significant bit of the leaf index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub splits: Vec<Split>,
    pub leaf_values: Vec<f64>,
}

impl ObliviousTree {
    pub fn depth(&self) -> usize {
        self.splits.len()
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.splits
            .iter()
            .fold(0, |idx, s| (idx << 1) | usize::from(x[s.feature] > s.threshold))
    }

    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        self.leaf_values[self.leaf_index(x)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedGbdtModel {
    trees: Vec<ObliviousTree>,
    learning_rate: f64,
    base_prediction: f64,
    features: usize,
    permutation_count: usize,
    seed: u64,
    mode: BoostingMode,
    training_log: Vec<f64>,
}

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot<M> {
    format_version: u32,
    model: M,
}

impl OrderedGbdtModel {
    /// A model from explicit parts; used for hand-built trees.
    pub fn from_trees(
        trees: Vec<ObliviousTree>,
        learning_rate: f64,
        base_prediction: f64,
        features: usize,
    ) -> Result<Self> {
        for t in &trees {
            if t.leaf_values.len() != 1 << t.depth() {
                return Err(Error::InvalidParam("leaf count must be 2^depth".into()));
            }
            if t.splits.iter().any(|s| s.feature >= features) {
                return Err(Error::InvalidParam("split feature out of range".into()));
            }
        }
        Ok(OrderedGbdtModel {
            training_log: Vec::new(),
            trees,
            learning_rate,
            base_prediction,
            features,
            permutation_count: 0,
            seed: 0,
            mode: BoostingMode::Plain,
        })
    }

    pub fn trees(&self) -> &[ObliviousTree] {
        &self.trees
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn base_prediction(&self) -> f64 {
        self.base_prediction
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn permutation_count(&self) -> usize {
        self.permutation_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> BoostingMode {
        self.mode
    }

    /// Mean training loss after each iteration.
    pub fn training_log(&self) -> &[f64] {
        &self.training_log
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.features {
            return Err(Error::ArityMismatch {
                expected: self.features,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value(x)).sum();
        Ok(self.base_prediction + self.learning_rate * sum)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            format_version: SNAPSHOT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot<OrderedGbdtModel> = serde_json::from_str(s)?;
        if snap.format_version != SNAPSHOT_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported snapshot version {}",
                snap.format_version
            )));
        }
        Ok(snap.model)
    }

    /// SHA-256 of the JSON snapshot, hex encoded.
    pub fn snapshot_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// One gradient evaluation during ordered boosting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientRead {
    pub iteration: usize,
    /// Structure permutation, `1..=u`.
    pub permutation: usize,
    /// Position of the row in that permutation.
    pub position: usize,
    pub row: usize,
    /// The supporting model that produced the prediction was estimated from
    /// positions `0..fitted_on` of the same permutation.
    pub fitted_on: usize,
}

/// Instrumentation hooks called during [`fit_with_observer`].
pub trait FitObserver {
    fn permutation_chosen(&mut self, _iteration: usize, _permutation: usize, _order: &[usize]) {}
    fn gradient_read(&mut self, _read: GradientRead) {}
}

struct Silent;
impl FitObserver for Silent {}

/// Records every gradient read whose supporting model saw the row itself
/// or a later position.
#[derive(Debug, Default)]
pub struct CausalityAudit {
    pub reads: usize,
    pub violations: Vec<GradientRead>,
}

impl FitObserver for CausalityAudit {
    fn gradient_read(&mut self, read: GradientRead) {
        self.reads += 1;
        if read.fitted_on > read.position {
            self.violations.push(read);
        }
    }
}

/// Per-feature quantized values.
struct Binned {
    borders: Vec<Vec<f64>>,
    /// `bins[f][row]` = number of borders of `f` strictly below the value.
    bins: Vec<Vec<u8>>,
}

/// Split candidates for one feature: every midpoint between consecutive
/// distinct values when there are few enough, otherwise midpoints at
/// `bins - 1` evenly spaced quantiles.
pub fn feature_borders(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let midpoint = |a: f64, b: f64| a + 0.5 * (b - a);
    if distinct.len() <= bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut borders = Vec::with_capacity(bins - 1);
    for q in 1..bins {
        // close bin q with q*n/bins values below the border
        let a = sorted[(q * n / bins).clamp(1, n) - 1];
        let pos = distinct.partition_point(|&d| d <= a);
        if let Some(&b) = distinct.get(pos) {
            let border = midpoint(a, b);
            if borders.last() != Some(&border) {
                borders.push(border);
            }
        }
    }
    borders
}

fn bin_features(data: &LagMatrix, bins: usize) -> Binned {
    let (borders, binned) = (0..data.lag())
        .map(|f| {
            let column: Vec<f64> = (0..data.rows()).map(|i| data.value(i, f)).collect();
            let borders = feature_borders(&column, bins);
            let binned = column
                .iter()
                .map(|&x| borders.partition_point(|&b| b < x) as u8)
                .collect();
            (borders, binned)
        })
        .unzip();
    Binned {
        borders,
        bins: binned,
    }
}

/// Shift-anchored mean, exact for constant input.
fn mean(xs: &[f64]) -> f64 {
    let anchor = xs[0];
    anchor + xs.iter().map(|x| x - anchor).sum::<f64>() / xs.len() as f64
}

fn is_better(score: f64, best: Option<(f64, usize, usize)>) -> bool {
    best.is_none_or(|(b, _, _)| score < b)
}

/// Lowest score wins; ties go to the lowest `(feature, border)`.
fn pick_best(candidates: impl Iterator<Item = (f64, usize, usize)>) -> Option<(f64, usize, usize)> {
    let mut best = None;
    for c in candidates {
        if is_better(c.0, best) {
            best = Some(c);
        }
    }
    best
}

/// Ordered split scores for every border of one feature: for each border,
/// the sum over positions of `(g_i - mean of earlier same-leaf gradients)^2`,
/// where the mean is 0 for a leaf with no earlier rows. `recip[c] = 1/c`
/// with `recip[0] = 0`.
fn ordered_scores(
    leaf_of: &[u32],
    bins: &[u8],
    n_borders: usize,
    grads: &[f64],
    leaves: usize,
    recip: &[f64],
) -> Vec<f64> {
    // state for border k and child leaf l lives at k * leaves + l
    let mut sums = vec![0.0; n_borders * leaves];
    let mut counts = vec![0u32; n_borders * leaves];
    let mut scores = vec![0.0; n_borders];
    for ((&leaf, &bin), &g) in leaf_of.iter().zip(bins).zip(grads) {
        let split_at = (bin as usize).min(n_borders);
        let left = (leaf << 1) as usize;
        // borders below the row's bin send it right, the rest send it left
        for (k, score) in scores.iter_mut().enumerate() {
            let l = k * leaves + left + usize::from(k < split_at);
            let c = counts[l];
            let e = g - sums[l] * recip[c as usize];
            *score += e * e;
            sums[l] += g;
            counts[l] = c + 1;
        }
    }
    scores
}

/// Plain split score: negated sum of `(sum g)^2 / n` over non-empty leaves,
/// i.e. the gradient SSE around leaf means minus a constant.
fn histogram_scores(leaf_of: &[u32], bins: &[u8], n_borders: usize, grads: &[f64], leaves: usize) -> Vec<f64> {
    let width = n_borders + 1;
    let mut hist_sum = vec![0.0; leaves * width];
    let mut hist_cnt = vec![0u32; leaves * width];
    for ((&leaf, &bin), &g) in leaf_of.iter().zip(bins).zip(grads) {
        let k = leaf as usize * width + bin as usize;
        hist_sum[k] += g;
        hist_cnt[k] += 1;
    }
    let mut scores = vec![0.0; n_borders];
    for leaf in 0..leaves {
        let row_s = &hist_sum[leaf * width..(leaf + 1) * width];
        let row_c = &hist_cnt[leaf * width..(leaf + 1) * width];
        let total_s: f64 = row_s.iter().sum();
        let total_c: u32 = row_c.iter().sum();
        let (mut left_s, mut left_c) = (0.0, 0u32);
        for (k, score) in scores.iter_mut().enumerate() {
            left_s += row_s[k];
            left_c += row_c[k];
            let (right_s, right_c) = (total_s - left_s, total_c - left_c);
            if left_c > 0 {
                *score -= left_s * left_s / left_c as f64;
            }
            if right_c > 0 {
                *score -= right_s * right_s / right_c as f64;
            }
        }
    }
    scores
}

/// Greedy level-wise search for an oblivious structure. `bins_of(f)` gives
/// feature `f`'s bins in the same row order as `grads`.
fn search_structure<'a>(
    binned: &'a Binned,
    bins_of: &(dyn Fn(usize) -> &'a [u8] + Sync),
    grads: &[f64],
    depth: usize,
    mode: BoostingMode,
) -> Vec<(usize, u8)> {
    let n = grads.len();
    let recip: Vec<f64> = (0..=n).map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
    let mut leaf_of = vec![0u32; n];
    let mut chosen = Vec::with_capacity(depth);
    for level in 0..depth {
        let leaves = 1usize << (level + 1);
        let per_feature: Vec<Option<(f64, usize, usize)>> = (0..binned.borders.len())
            .into_par_iter()
            .map(|f| {
                let n_borders = binned.borders[f].len();
                if n_borders == 0 {
                    return None;
                }
                let bins = bins_of(f);
                match mode {
                    BoostingMode::Ordered => {
                        let scores = ordered_scores(&leaf_of, bins, n_borders, grads, leaves, &recip);
                        pick_best(scores.into_iter().enumerate().map(|(k, s)| (s, f, k)))
                    }
                    BoostingMode::Plain => {
                        let scores = histogram_scores(&leaf_of, bins, n_borders, grads, leaves / 2);
                        pick_best(scores.into_iter().enumerate().map(|(k, s)| (s, f, k)))
                    }
                }
            })
            .collect();
        let Some((_, f, k)) = pick_best(per_feature.into_iter().flatten()) else {
            break;
        };
        let k = k as u8;
        let bins = bins_of(f);
        for (leaf, &b) in leaf_of.iter_mut().zip(bins) {
            *leaf = (*leaf << 1) | u32::from(b > k);
        }
        chosen.push((f, k));
    }
    chosen
}

/// Leaf values `-mean(gradient)` over the given rows; 0 for empty leaves.
fn leaf_values(leaves: usize, rows: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut sums = vec![0.0; leaves];
    let mut counts = vec![0usize; leaves];
    for (leaf, g) in rows {
        sums[leaf] += g;
        counts[leaf] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { -s / c as f64 } else { 0.0 })
        .collect()
}

/// Supporting model fitted on positions `0..prefix` of a permutation,
/// serving positions `prefix..2*prefix`.
struct SupportingModel {
    prefix: usize,
    /// Predictions for positions `0..min(2*prefix, n)`.
    preds: Vec<f64>,
    fitted_on: usize,
}

struct Permutation {
    order: Vec<usize>,
    /// `bins[f][pos]` for row `order[pos]`.
    bins: Vec<Vec<u8>>,
    targets: Vec<f64>,
    models: Vec<SupportingModel>,
}

impl Permutation {
    fn new(order: Vec<usize>, binned: &Binned, targets: &[f64], base: f64) -> Self {
        let n = order.len();
        let bins = binned
            .bins
            .iter()
            .map(|col| order.iter().map(|&i| col[i]).collect())
            .collect();
        let mut models = Vec::new();
        let mut prefix = 1;
        while prefix < n {
            models.push(SupportingModel {
                prefix,
                preds: vec![base; (2 * prefix).min(n)],
                fitted_on: 0,
            });
            prefix *= 2;
        }
        Permutation {
            targets: order.iter().map(|&i| targets[i]).collect(),
            order,
            bins,
            models,
        }
    }

    /// Gradients in permutation order, each from the model for the largest
    /// prefix not exceeding the position.
    fn gradients(&self, base: f64, iteration: usize, index: usize, observer: &mut dyn FitObserver) -> Vec<f64> {
        (0..self.order.len())
            .map(|pos| {
                let (pred, fitted_on) = if pos == 0 {
                    (base, 0)
                } else {
                    let m = &self.models[pos.ilog2() as usize];
                    (m.preds[pos], m.fitted_on)
                };
                observer.gradient_read(GradientRead {
                    iteration,
                    permutation: index,
                    position: pos,
                    row: self.order[pos],
                    fitted_on,
                });
                pred - self.targets[pos]
            })
            .collect()
    }

    fn boost(&mut self, leaf_of_row: &[usize], leaves: usize, learning_rate: f64) {
        let order = &self.order;
        let targets = &self.targets;
        for m in &mut self.models {
            let values = leaf_values(
                leaves,
                (0..m.prefix).map(|pos| (leaf_of_row[order[pos]], m.preds[pos] - targets[pos])),
            );
            m.fitted_on = m.fitted_on.max(m.prefix);
            for (pos, p) in m.preds.iter_mut().enumerate() {
                *p += learning_rate * values[leaf_of_row[order[pos]]];
            }
        }
    }
}

pub fn fit(data: &LagMatrix, params: &GbdtParams) -> Result<OrderedGbdtModel> {
    fit_with_observer(data, params, &mut Silent)
}

pub fn fit_with_observer(
    data: &LagMatrix,
    params: &GbdtParams,
    observer: &mut dyn FitObserver,
) -> Result<OrderedGbdtModel> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = data.rows();
    let max_depth = n.ilog2() as usize;
    let depth = if params.depth > max_depth {
        log::warn!(
            "depth {} needs more than {n} rows; clamping to {max_depth}",
            params.depth
        );
        max_depth
    } else {
        params.depth
    };

    let targets = data.targets();
    let base = mean(targets);
    let binned = bin_features(data, params.bins);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut permutations: Vec<Permutation> = match params.mode {
        BoostingMode::Ordered => (0..params.permutations)
            .map(|_| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                Permutation::new(order, &binned, targets, base)
            })
            .collect(),
        BoostingMode::Plain => Vec::new(),
    };

    // full-data model in temporal order; its leaf values are the ones kept
    let mut fitted = vec![base; n];
    let mut trees = Vec::with_capacity(params.iterations);
    let mut training_log = Vec::with_capacity(params.iterations);
    let mut leaf_of_row = vec![0usize; n];

    for iteration in 0..params.iterations {
        let structure = match params.mode {
            BoostingMode::Ordered => {
                let r = rng.gen_range(0..permutations.len());
                let perm = &permutations[r];
                observer.permutation_chosen(iteration, r + 1, &perm.order);
                let grads = perm.gradients(base, iteration, r + 1, observer);
                search_structure(&binned, &|f| &perm.bins[f], &grads, depth, params.mode)
            }
            BoostingMode::Plain => {
                let grads: Vec<f64> = fitted.iter().zip(targets).map(|(a, y)| a - y).collect();
                search_structure(&binned, &|f| &binned.bins[f], &grads, depth, params.mode)
            }
        };

        let leaves = 1usize << structure.len();
        for (i, leaf) in leaf_of_row.iter_mut().enumerate() {
            *leaf = structure
                .iter()
                .fold(0, |idx, &(f, k)| (idx << 1) | usize::from(binned.bins[f][i] > k));
        }
        for perm in &mut permutations {
            perm.boost(&leaf_of_row, leaves, params.learning_rate);
        }

        let values = leaf_values(
            leaves,
            fitted
                .iter()
                .zip(targets)
                .zip(&leaf_of_row)
                .map(|((a, y), &leaf)| (leaf, a - y)),
        );
        let mut total_loss = 0.0;
        for ((a, y), &leaf) in fitted.iter_mut().zip(targets).zip(&leaf_of_row) {
            *a += params.learning_rate * values[leaf];
            total_loss += loss(*y, *a);
        }
        training_log.push(total_loss / n as f64);

        trees.push(ObliviousTree {
            splits: structure
                .iter()
                .map(|&(f, k)| Split {
                    feature: f,
                    threshold: binned.borders[f][k as usize],
                })
                .collect(),
            leaf_values: values,
        });
    }

    Ok(OrderedGbdtModel {
        trees,
        learning_rate: params.learning_rate,
        base_prediction: base,
        features: data.lag(),
        permutation_count: params.permutations,
        seed: params.seed,
        mode: params.mode,
        training_log,
    })
}
