//! Maximal overlap discrete wavelet transform (MODWT) with periodic boundary,
//! its inverse, and the additive multiresolution analysis built on top.
//!
//! Level `j` filters are the base filters with `2^(j-1) - 1` zeros inserted
//! between taps. Coefficients are computed with the pyramid algorithm:
//!
//! ```text
//! W[j][t] = sum_l p[l] * V[j-1][(t - 2^(j-1) l) mod N]
//! V[j][t] = sum_l q[l] * V[j-1][(t - 2^(j-1) l) mod N]
//! ```
//!
//! and inverted by running the adjoint filters back up the pyramid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FILTER_TOL: f64 = 1e-12;

/// MODWT-scaled wavelet (`p`) and scaling (`q`) filters of equal even length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterPair {
    wavelet: Vec<f64>,
    scaling: Vec<f64>,
}

impl FilterPair {
    /// Checks `sum q = 1`, `sum p = 0` and that both filters are orthogonal
    /// to their own even shifts.
    pub fn new(wavelet: Vec<f64>, scaling: Vec<f64>) -> Result<Self> {
        if wavelet.len() != scaling.len() {
            return Err(Error::InvalidFilter("wavelet and scaling lengths differ".into()));
        }
        if wavelet.is_empty() || wavelet.len() % 2 != 0 {
            return Err(Error::InvalidFilter("filter length must be even and non-zero".into()));
        }
        if (scaling.iter().sum::<f64>() - 1.0).abs() > FILTER_TOL {
            return Err(Error::InvalidFilter("scaling filter must sum to 1".into()));
        }
        if wavelet.iter().sum::<f64>().abs() > FILTER_TOL {
            return Err(Error::InvalidFilter("wavelet filter must sum to 0".into()));
        }
        for f in [&wavelet, &scaling] {
            for shift in (2..f.len()).step_by(2) {
                let acc: f64 = f.iter().zip(&f[shift..]).map(|(a, b)| a * b).sum();
                if acc.abs() > FILTER_TOL {
                    return Err(Error::InvalidFilter(format!(
                        "filter not orthogonal to its shift by {shift}"
                    )));
                }
            }
        }
        Ok(FilterPair { wavelet, scaling })
    }

    pub fn haar() -> Self {
        FilterPair {
            wavelet: vec![0.5, -0.5],
            scaling: vec![0.5, 0.5],
        }
    }

    pub fn wavelet(&self) -> &[f64] {
        &self.wavelet
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn len(&self) -> usize {
        self.wavelet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelet.is_empty()
    }
}

/// The MODWT Haar pair: wavelet `(1/2, -1/2)`, scaling `(1/2, 1/2)`.
pub fn haar_filters() -> FilterPair {
    FilterPair::haar()
}

/// Largest level whose equivalent filter width `(2^K - 1)(L - 1) + 1`
/// still fits in `n` samples.
pub fn max_level(n: usize, filter: &FilterPair) -> usize {
    let taps = filter.len().max(2) - 1;
    let mut k = 0;
    while k < 62 && ((1usize << (k + 1)) - 1) * taps < n {
        k += 1;
    }
    k
}

/// `floor(ln n)` clamped to `[1, floor(log2 n)]`.
pub fn decomposition_levels(n: usize) -> Result<usize> {
    if n < 4 {
        return Err(Error::SeriesTooShort { len: n, min: 4 });
    }
    let natural = (n as f64).ln().floor() as usize;
    let upper = usize::BITS as usize - 1 - n.leading_zeros() as usize;
    Ok(natural.clamp(1, upper))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Periodic,
}

/// Wavelet coefficients `W_1..W_K` and final scaling coefficients `V_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletCoefficients {
    wavelet: Vec<Vec<f64>>,
    scaling: Vec<f64>,
    boundary: Boundary,
    filter: FilterPair,
}

impl WaveletCoefficients {
    pub fn new(wavelet: Vec<Vec<f64>>, scaling: Vec<f64>, filter: FilterPair) -> Result<Self> {
        let n = scaling.len();
        if n == 0 {
            return Err(Error::SeriesTooShort { len: 0, min: 1 });
        }
        let max = max_level(n, &filter);
        if wavelet.is_empty() || wavelet.len() > max {
            return Err(Error::LevelOutOfRange {
                requested: wavelet.len(),
                max,
            });
        }
        if let Some(bad) = wavelet.iter().find(|w| w.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(WaveletCoefficients {
            wavelet,
            scaling,
            boundary: Boundary::Periodic,
            filter,
        })
    }

    pub fn levels(&self) -> usize {
        self.wavelet.len()
    }

    pub fn len(&self) -> usize {
        self.scaling.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaling.is_empty()
    }

    /// `W_k` for `k` in `1..=levels`.
    pub fn wavelet(&self, k: usize) -> &[f64] {
        &self.wavelet[k - 1]
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn filter(&self) -> &FilterPair {
        &self.filter
    }

    /// `sum_k ||W_k||^2 + ||V_K||^2`.
    pub fn energy(&self) -> f64 {
        self.wavelet
            .iter()
            .chain(std::iter::once(&self.scaling))
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// `out[t] = sum_l f[l] * x[(t - step*l) mod n]`
fn analysis(x: &[f64], f: &[f64], step: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (l, &c) in f.iter().enumerate() {
        let shift = (step * l) % n;
        // out[t] += c * x[t - shift], split to avoid a modulo per sample
        for t in 0..n {
            let src = if t >= shift { t - shift } else { t + n - shift };
            out[t] += c * x[src];
        }
    }
    out
}

/// Adjoint of [`analysis`]: `out[t] += sum_l f[l] * x[(t + step*l) mod n]`.
fn synthesis_into(out: &mut [f64], x: &[f64], f: &[f64], step: usize) {
    let n = x.len();
    for (l, &c) in f.iter().enumerate() {
        let shift = (step * l) % n;
        for t in 0..n {
            let src = if t + shift < n { t + shift } else { t + shift - n };
            out[t] += c * x[src];
        }
    }
}

/// Forward MODWT to `levels` levels via the pyramid algorithm.
pub fn modwt(values: &[f64], levels: usize, filter: &FilterPair) -> Result<WaveletCoefficients> {
    let n = values.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { len: n, min: 2 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("modwt input"));
    }
    let max = max_level(n, filter);
    if levels == 0 || levels > max {
        return Err(Error::LevelOutOfRange {
            requested: levels,
            max,
        });
    }
    let mut wavelet = Vec::with_capacity(levels);
    let mut v = values.to_vec();
    for j in 1..=levels {
        let step = 1usize << (j - 1);
        wavelet.push(analysis(&v, &filter.wavelet, step));
        v = analysis(&v, &filter.scaling, step);
    }
    Ok(WaveletCoefficients {
        wavelet,
        scaling: v,
        boundary: Boundary::Periodic,
        filter: filter.clone(),
    })
}

/// Runs the inverse pyramid from level `top` down to level 1. `details[j-1]`
/// is `W_j` or `None` for zeros; `smooth` is `V_top` or `None`.
fn inverse_pyramid<'a>(
    n: usize,
    top: usize,
    details: &dyn Fn(usize) -> Option<&'a [f64]>,
    smooth: Option<&[f64]>,
    filter: &FilterPair,
) -> Vec<f64> {
    let mut v = smooth.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    for j in (1..=top).rev() {
        let step = 1usize << (j - 1);
        let mut prev = vec![0.0; n];
        synthesis_into(&mut prev, &v, &filter.scaling, step);
        if let Some(w) = details(j) {
            synthesis_into(&mut prev, w, &filter.wavelet, step);
        }
        v = prev;
    }
    v
}

/// Inverse MODWT.
pub fn imodwt(coeffs: &WaveletCoefficients) -> Vec<f64> {
    inverse_pyramid(
        coeffs.len(),
        coeffs.levels(),
        &|j| Some(coeffs.wavelet(j)),
        Some(&coeffs.scaling),
        &coeffs.filter,
    )
}

/// Detail series `D_1..D_K` and smooth `S_K`, all the length of the source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletDecomposition {
    details: Vec<Vec<f64>>,
    smooth: Vec<f64>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn source_length(&self) -> usize {
        self.smooth.len()
    }

    /// `D_k` for `k` in `1..=levels`.
    pub fn detail(&self, k: usize) -> &[f64] {
        &self.details[k - 1]
    }

    pub fn smooth(&self) -> &[f64] {
        &self.smooth
    }

    /// `D_1, .., D_K, S_K` in that order.
    pub fn components(&self) -> impl Iterator<Item = &[f64]> {
        self.details
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.smooth.as_slice()))
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        let mut out = self.details;
        out.push(self.smooth);
        out
    }

    /// Elementwise sum of all components.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.smooth.clone();
        for d in &self.details {
            for (o, x) in out.iter_mut().zip(d) {
                *o += x;
            }
        }
        out
    }

    /// Columnar dump: `t,D1..DK,SK`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(component_names(self.levels()));
        w.write_record(&header)?;
        for t in 0..self.source_length() {
            let mut row = vec![t.to_string()];
            row.extend(self.components().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<decomposition csv>", e))?;
        Ok(())
    }
}

/// `["D1", .., "DK", "SK"]`.
pub fn component_names(levels: usize) -> Vec<String> {
    (1..=levels)
        .map(|k| format!("D{k}"))
        .chain(std::iter::once(format!("S{levels}")))
        .collect()
}

/// Multiresolution analysis: each `D_k` is the inverse transform of `W_k`
/// alone, `S_K` that of `V_K` alone.
pub fn mra(coeffs: &WaveletCoefficients) -> WaveletDecomposition {
    let n = coeffs.len();
    let levels = coeffs.levels();
    let filter = &coeffs.filter;
    let details = (1..=levels)
        .into_par_iter()
        .map(|k| {
            let w = coeffs.wavelet(k);
            inverse_pyramid(n, k, &|j| (j == k).then_some(w), None, filter)
        })
        .collect();
    let smooth = inverse_pyramid(n, levels, &|_| None, Some(&coeffs.scaling), filter);
    WaveletDecomposition { details, smooth }
}

/// `modwt` followed by `mra`.
pub fn decompose(values: &[f64], levels: usize, filter: &FilterPair) -> Result<WaveletDecomposition> {
    Ok(mra(&modwt(values, levels, filter)?))
}
