//! Cluster-accelerated forecasting.
//!
//! One forecaster is fitted per cluster mean and level. Every node's
//! forecast is the fuzzy-weighted combination of its level's mean
//! forecasts, and the result is made coherent bottom-up.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::MultiLevelClusterModel;
use crate::hts::{Hierarchy, HtsDataset, HtsError};
use crate::sdtw::{divergence_with_self_terms, soft_dtw_series, SdtwConfig};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("MASE undefined: in-sample series has no one-step variation")]
    MaseUndefined,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("forecaster needs at least {needed} observations, got {got}")]
    HistoryTooShort { needed: usize, got: usize },
    #[error("predict called before fit")]
    NotFitted,
    #[error("level {level}, cluster {cluster}: {source}")]
    Cluster {
        level: usize,
        cluster: usize,
        #[source]
        source: Box<ForecastError>,
    },
    #[error("node {node} of instance {instance}: {source}")]
    Node {
        instance: String,
        node: String,
        #[source]
        source: Box<ForecastError>,
    },
    #[error("model does not match the dataset: {0}")]
    ModelMismatch(String),
    #[error(transparent)]
    Hts(#[from] HtsError),
}

/// A univariate point forecaster.
pub trait Forecaster: Send {
    fn fit(&mut self, history: &[f64]) -> Result<(), ForecastError>;
    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError>;
}

/// Builds a fresh forecaster from a seed.
pub trait ForecasterFactory: Sync {
    fn build(&self, seed: u64) -> Box<dyn Forecaster>;
}

impl<F: Fn(u64) -> Box<dyn Forecaster> + Sync> ForecasterFactory for F {
    fn build(&self, seed: u64) -> Box<dyn Forecaster> {
        self(seed)
    }
}

/// `x_t = c + a_1 x_{t-1} + a_2 x_{t-2}` by least squares.
///
/// Short or degenerate histories fall back to AR(1) with intercept and
/// then to the history mean.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArDrift {
    coef: Option<Vec<f64>>,
    tail: Vec<f64>,
}

impl ArDrift {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fitted `[c, a_1, .., a_p]`.
    pub fn coefficients(&self) -> Option<&[f64]> {
        self.coef.as_deref()
    }

    pub fn factory() -> impl ForecasterFactory {
        |_seed: u64| -> Box<dyn Forecaster> { Box::new(ArDrift::new()) }
    }
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting; `None` when a pivot is negligible.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn fit_ar(h: &[f64], p: usize) -> Option<Vec<f64>> {
    let rows = h.len().checked_sub(p)?;
    if rows < p + 2 {
        return None;
    }
    let d = p + 1;
    let mut xtx = vec![vec![0.0; d]; d];
    let mut xty = vec![0.0; d];
    for t in p..h.len() {
        let mut row = Vec::with_capacity(d);
        row.push(1.0);
        row.extend((1..=p).map(|lag| h[t - lag]));
        for i in 0..d {
            xty[i] += row[i] * h[t];
            for j in 0..d {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    solve_dense(xtx, xty)
}

impl Forecaster for ArDrift {
    fn fit(&mut self, history: &[f64]) -> Result<(), ForecastError> {
        if history.is_empty() {
            return Err(ForecastError::HistoryTooShort { needed: 1, got: 0 });
        }
        let coef = fit_ar(history, 2)
            .or_else(|| fit_ar(history, 1))
            .unwrap_or_else(|| vec![history.iter().sum::<f64>() / history.len() as f64]);
        let p = coef.len() - 1;
        self.tail = history[history.len() - p..].to_vec();
        self.coef = Some(coef);
        Ok(())
    }

    fn predict(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let coef = self.coef.as_ref().ok_or(ForecastError::NotFitted)?;
        let p = coef.len() - 1;
        let mut buf = self.tail.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let n = buf.len();
            let next = coef[0] + (1..=p).map(|lag| coef[lag] * buf[n - lag]).sum::<f64>();
            buf.push(next);
            out.push(next);
        }
        Ok(out)
    }
}

/// Fuzzy membership `w_j = 1 / sum_k (d_j / d_k)^(2/(m-1))`. Zero distances
/// take all the weight, split evenly.
pub fn fuzzy_weights(dist: &[f64], m: f64) -> Vec<f64> {
    let k = dist.len();
    let zeros = dist.iter().filter(|&&d| d <= 0.0).count();
    if zeros > 0 {
        let w = 1.0 / zeros as f64;
        return dist
            .iter()
            .map(|&d| if d <= 0.0 { w } else { 0.0 })
            .collect();
    }
    let e = 2.0 / (m - 1.0);
    // Ratios against the smallest distance keep the powers finite.
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let inv: Vec<f64> = dist.iter().map(|&d| (dmin / d).powf(e)).collect();
    let total: f64 = inv.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return vec![1.0 / k as f64; k];
    }
    inv.iter().map(|v| v / total).collect()
}

/// Elementwise convex combination of equally long forecasts.
pub fn combine_forecasts(
    weights: &[f64],
    forecasts: &[Vec<f64>],
    horizon: usize,
) -> Result<Vec<f64>, ForecastError> {
    if weights.len() != forecasts.len() {
        return Err(ForecastError::LengthMismatch {
            expected: weights.len(),
            got: forecasts.len(),
        });
    }
    if let Some(f) = forecasts.iter().find(|f| f.len() != horizon) {
        return Err(ForecastError::LengthMismatch {
            expected: horizon,
            got: f.len(),
        });
    }
    if forecasts.is_empty() {
        return Err(ForecastError::LengthMismatch {
            expected: 1,
            got: 0,
        });
    }
    // Written as offsets from the heaviest forecast, which keeps hard
    // weights and identical forecasts exact.
    let mut pivot = 0;
    for (k, w) in weights.iter().enumerate() {
        if *w > weights[pivot] {
            pivot = k;
        }
    }
    let mut out = forecasts[pivot].clone();
    for (k, (w, f)) in weights.iter().zip(forecasts).enumerate() {
        if k == pivot || *w == 0.0 {
            continue;
        }
        for (o, (v, p)) in out.iter_mut().zip(f.iter().zip(&forecasts[pivot])) {
            *o += w * (v - p);
        }
    }
    Ok(out)
}

/// Replaces every aggregated forecast by the sum of its bottom forecasts.
pub fn coherent_projection(
    forecasts: &[Vec<f64>],
    h: &Hierarchy,
) -> Result<Vec<Vec<f64>>, ForecastError> {
    if forecasts.len() != h.node_count() {
        return Err(ForecastError::LengthMismatch {
            expected: h.node_count(),
            got: forecasts.len(),
        });
    }
    let bottom = &forecasts[h.bottom_nodes()];
    let horizon = bottom[0].len();
    if let Some(b) = bottom.iter().find(|b| b.len() != horizon) {
        return Err(ForecastError::LengthMismatch {
            expected: horizon,
            got: b.len(),
        });
    }
    let mut out = vec![Vec::with_capacity(horizon); h.node_count()];
    let mut column = vec![0.0; bottom.len()];
    for t in 0..horizon {
        for (c, b) in column.iter_mut().zip(bottom) {
            *c = b[t];
        }
        for (row, v) in out.iter_mut().zip(h.aggregate(&column)) {
            row.push(v);
        }
    }
    Ok(out)
}

/// Mean absolute scaled error against the in-sample one-step naive forecast.
pub fn mase(actual: &[f64], forecast: &[f64], insample: &[f64]) -> Result<f64, ForecastError> {
    if actual.len() != forecast.len() {
        return Err(ForecastError::LengthMismatch {
            expected: actual.len(),
            got: forecast.len(),
        });
    }
    if insample.len() < 2 {
        return Err(ForecastError::HistoryTooShort {
            needed: 2,
            got: insample.len(),
        });
    }
    let scale = insample
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (insample.len() - 1) as f64;
    if !(scale > 0.0) {
        return Err(ForecastError::MaseUndefined);
    }
    let err = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| (a - f).abs())
        .sum::<f64>()
        / actual.len().max(1) as f64;
    Ok(err / scale)
}

/// Train / validation / test boundaries of a length-`t` series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub validation_end: usize,
    pub len: usize,
}

impl Split {
    /// 60% train, 20% validation, 20% test (at least one test step).
    pub fn new(len: usize) -> Self {
        let train_end = len * 3 / 5;
        let validation_end = (len * 4 / 5).clamp(train_end, len.saturating_sub(1));
        Self {
            train_end,
            validation_end,
            len,
        }
    }

    /// Observations available to the forecaster (train and validation).
    pub fn history(&self) -> usize {
        self.validation_end
    }

    pub fn horizon(&self) -> usize {
        self.len - self.validation_end
    }
}

/// Per-instance splits of a dataset.
pub fn splits(ds: &HtsDataset) -> Vec<Split> {
    ds.instances()
        .iter()
        .map(|i| Split::new(i.length()))
        .collect()
}

/// The forecast-origin history of every instance.
pub fn history_dataset(ds: &HtsDataset) -> Result<HtsDataset, ForecastError> {
    Ok(ds.truncated(|i| Split::new(i.length()).history())?)
}

/// `forecasts[instance][node]` plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub forecasts: Vec<Vec<Vec<f64>>>,
    pub fits: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub fits: usize,
    pub wall_ms: u64,
    pub mase_per_level: Vec<f64>,
}

fn fit_predict(
    f: &dyn ForecasterFactory,
    series: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>, ForecastError> {
    let mut model = f.build(seed);
    model.fit(series)?;
    let out = model.predict(horizon)?;
    if out.len() != horizon {
        return Err(ForecastError::LengthMismatch {
            expected: horizon,
            got: out.len(),
        });
    }
    Ok(out)
}

fn check_model(history: &HtsDataset, model: &MultiLevelClusterModel) -> Result<(), ForecastError> {
    if model.depth() != history.levels() {
        return Err(ForecastError::ModelMismatch(format!(
            "model has {} levels, dataset {}",
            model.depth(),
            history.levels()
        )));
    }
    for l in 1..=history.levels() {
        let m = model.level(l);
        if m.assignments.len() != history.level_count(l) || m.raw_means.len() != m.k {
            return Err(ForecastError::ModelMismatch(format!(
                "level {l} does not cover the dataset"
            )));
        }
    }
    Ok(())
}

fn per_instance<T: Clone>(ds: &HtsDataset, flat: Vec<(usize, usize, T)>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<Option<T>>> = ds
        .instances()
        .iter()
        .map(|i| vec![None; i.hierarchy().node_count()])
        .collect();
    for (inst, node, v) in flat {
        out[inst][node] = Some(v);
    }
    out.into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| v.expect("every node is filled"))
                .collect()
        })
        .collect()
}

/// Forecasts every node of `history` for `horizons[instance]` steps from
/// the cluster means of `model` (which must be fitted on `history`).
pub fn forecast_with_clusters(
    history: &HtsDataset,
    model: &MultiLevelClusterModel,
    factory: &dyn ForecasterFactory,
    horizons: &[usize],
    m: f64,
    sdtw: &SdtwConfig,
) -> Result<ForecastRun, ForecastError> {
    let start = Instant::now();
    check_model(history, model)?;
    if horizons.len() != history.len() {
        return Err(ForecastError::LengthMismatch {
            expected: history.len(),
            got: horizons.len(),
        });
    }
    let hmax = horizons.iter().copied().max().unwrap_or(0);
    let seed = model.config.seed;
    let mut fits = 0;
    let mut flat = Vec::new();
    for l in 1..=history.levels() {
        let lm = model.level(l);
        fits += lm.k;
        let mean_fc: Vec<Vec<f64>> = lm
            .raw_means
            .par_iter()
            .enumerate()
            .map(|(k, mu)| {
                fit_predict(
                    factory,
                    mu,
                    hmax,
                    derive_seed(seed, "forecast", (l * 1_000_003 + k) as u64),
                )
                .map_err(|e| ForecastError::Cluster {
                    level: l,
                    cluster: k,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_, _>>()?;
        let mean_terms: Vec<f64> = lm
            .raw_means
            .iter()
            .map(|mu| soft_dtw_series(mu, mu, sdtw))
            .collect();
        let members = history.level_series(l)?;
        let rows: Vec<(usize, usize, Vec<f64>)> = members
            .par_iter()
            .map(|mem| {
                let x = mem.series.values();
                let sx = soft_dtw_series(x, x, sdtw);
                let d: Vec<f64> = lm
                    .raw_means
                    .iter()
                    .zip(&mean_terms)
                    .map(|(mu, &smu)| divergence_with_self_terms(x, sx, mu, smu, sdtw).max(0.0))
                    .collect();
                let w = fuzzy_weights(&d, m);
                let h = horizons[mem.instance];
                let sliced: Vec<Vec<f64>> = mean_fc.iter().map(|f| f[..h].to_vec()).collect();
                Ok((mem.instance, mem.node, combine_forecasts(&w, &sliced, h)?))
            })
            .collect::<Result<_, ForecastError>>()?;
        flat.extend(rows);
    }
    let raw = per_instance(history, flat);
    let forecasts = raw
        .iter()
        .zip(history.instances())
        .map(|(f, inst)| coherent_projection(f, inst.hierarchy()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForecastRun {
        forecasts,
        fits,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Baseline: one forecaster per node, then the same bottom-up projection.
pub fn forecast_per_series(
    history: &HtsDataset,
    factory: &dyn ForecasterFactory,
    horizons: &[usize],
    seed: u64,
) -> Result<ForecastRun, ForecastError> {
    let start = Instant::now();
    if horizons.len() != history.len() {
        return Err(ForecastError::LengthMismatch {
            expected: history.len(),
            got: horizons.len(),
        });
    }
    let jobs: Vec<(usize, usize)> = history
        .instances()
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| (0..inst.hierarchy().node_count()).map(move |n| (i, n)))
        .collect();
    let flat: Vec<(usize, usize, Vec<f64>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(i, n))| {
            let inst = &history.instances()[i];
            fit_predict(
                factory,
                inst.series(n).values(),
                horizons[i],
                derive_seed(seed, "per-series", j as u64),
            )
            .map(|f| (i, n, f))
            .map_err(|e| ForecastError::Node {
                instance: inst.id().to_string(),
                node: inst.hierarchy().node_id(n).to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    let fits = flat.len();
    let raw = per_instance(history, flat);
    let forecasts = raw
        .iter()
        .zip(history.instances())
        .map(|(f, inst)| coherent_projection(f, inst.hierarchy()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForecastRun {
        forecasts,
        fits,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Mean MASE of every level over its nodes; forecasts start at the end
/// of each instance's history.
pub fn mase_per_level(
    full: &HtsDataset,
    history: &HtsDataset,
    forecasts: &[Vec<Vec<f64>>],
) -> Result<Vec<f64>, ForecastError> {
    let mut sums = vec![0.0; full.levels()];
    let mut counts = vec![0usize; full.levels()];
    for ((inst, hist), fc) in full
        .instances()
        .iter()
        .zip(history.instances())
        .zip(forecasts)
    {
        let h = inst.hierarchy();
        let start = hist.length();
        for (node, f) in fc.iter().enumerate() {
            let actual = inst
                .series(node)
                .values()
                .get(start..start + f.len())
                .ok_or(ForecastError::LengthMismatch {
                    expected: start + f.len(),
                    got: inst.length(),
                })?;
            let v =
                mase(actual, f, hist.series(node).values()).map_err(|e| ForecastError::Node {
                    instance: inst.id().to_string(),
                    node: h.node_id(node).to_string(),
                    source: Box::new(e),
                })?;
            let l = h.level_of(node);
            sums[l - 1] += v;
            counts[l - 1] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuzzy_weight_examples() {
        assert_eq!(fuzzy_weights(&[3.0, 3.0, 3.0, 3.0], 1.7), vec![0.25; 4]);
        assert_eq!(fuzzy_weights(&[0.0, 5.0, 9.0], 2.0), vec![1.0, 0.0, 0.0]);
        assert_eq!(fuzzy_weights(&[0.0, 5.0, 0.0], 3.0), vec![0.5, 0.0, 0.5]);
        // 1 / (1 + (1/2)^2) and its complement.
        let w = fuzzy_weights(&[1.0, 2.0], 2.0);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fuzzy_weight_limits() {
        let d = [1.0, 2.0, 4.0];
        for w in fuzzy_weights(&d, 1e6) {
            assert!((w - 1.0 / 3.0).abs() < 1e-3);
        }
        let w = fuzzy_weights(&d, 1.0 + 1e-6);
        assert!((w[0] - 1.0).abs() < 1e-3 && w[1] < 1e-3 && w[2] < 1e-3);
    }

    #[test]
    fn combine_examples() {
        let f = vec![vec![2.0, 4.0], vec![4.0, 8.0]];
        assert_eq!(
            combine_forecasts(&[1.0, 0.0], &f, 2).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            combine_forecasts(&[0.5, 0.5], &f, 2).unwrap(),
            vec![3.0, 6.0]
        );
        let same = vec![vec![1.5, -2.0], vec![1.5, -2.0]];
        assert_eq!(
            combine_forecasts(&[0.3, 0.7], &same, 2).unwrap(),
            vec![1.5, -2.0]
        );
        assert!(combine_forecasts(&[1.0], &[vec![1.0]], 2).is_err());
    }

    #[test]
    fn projection_on_example_hierarchy() {
        let ids: Vec<String> = (1..=8).map(|i| format!("v{i}")).collect();
        let h = Hierarchy::from_parents(
            ids,
            vec![1, 2, 2, 3, 3, 3, 3, 3],
            vec![
                None,
                Some(0),
                Some(0),
                Some(1),
                Some(1),
                Some(1),
                Some(2),
                Some(2),
            ],
        )
        .unwrap();
        let mut f = vec![vec![0.0]; 8];
        for b in f.iter_mut().skip(3) {
            *b = vec![1.0];
        }
        let p = coherent_projection(&f, &h).unwrap();
        assert_eq!(p[0], vec![5.0]);
        assert_eq!(p[1], vec![3.0]);
        assert_eq!(p[2], vec![2.0]);
        assert_eq!(coherent_projection(&p, &h).unwrap(), p);
    }

    #[test]
    fn mase_examples() {
        assert_eq!(
            mase(&[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.0, 3.0]).unwrap(),
            0.0
        );
        // Naive scale (1 + 2) / 2 = 1.5, error (1 + 3) / 2 = 2.
        let v = mase(&[4.0, 6.0], &[3.0, 3.0], &[0.0, 1.0, 3.0]).unwrap();
        assert!((v - 2.0 / 1.5).abs() < 1e-15);
        assert!(matches!(
            mase(&[1.0], &[1.0], &[2.0, 2.0, 2.0]),
            Err(ForecastError::MaseUndefined)
        ));
        assert_eq!(
            ForecastError::MaseUndefined.to_string(),
            "MASE undefined: in-sample series has no one-step variation"
        );
    }

    #[test]
    fn ar_recovers_noiseless_recursion() {
        let mut x = vec![1.0, 2.0];
        for t in 2..40 {
            let v = 0.5 + 0.6 * x[t - 1] - 0.2 * x[t - 2];
            x.push(v);
        }
        // Perturb so the design is not rank deficient.
        let mut y = x.clone();
        for (t, v) in y.iter_mut().enumerate() {
            *v += if t % 3 == 0 { 1e-3 } else { -5e-4 };
        }
        let mut g = ArDrift::new();
        g.fit(&y).unwrap();
        let c = g.coefficients().unwrap();
        assert_eq!(c.len(), 3);
        assert!((c[1] - 0.6).abs() < 0.05 && (c[2] + 0.2).abs() < 0.05);
        assert_eq!(g.predict(5).unwrap().len(), 5);
    }

    #[test]
    fn ar_falls_back_on_degenerate_history() {
        let mut f = ArDrift::new();
        assert!(matches!(f.predict(1), Err(ForecastError::NotFitted)));
        f.fit(&[4.0, 4.0, 4.0, 4.0, 4.0, 4.0]).unwrap();
        assert_eq!(f.predict(3).unwrap(), vec![4.0; 3]);
        f.fit(&[2.0]).unwrap();
        assert_eq!(f.predict(2).unwrap(), vec![2.0, 2.0]);
        assert!(f.fit(&[]).is_err());
    }

    #[test]
    fn split_fractions() {
        let s = Split::new(100);
        assert_eq!((s.train_end, s.validation_end, s.horizon()), (60, 80, 20));
        let s = Split::new(3);
        assert_eq!((s.history(), s.horizon()), (2, 1));
    }
}
