//! Soft-DTW: value, gradients, the debiased divergence and barycentric means.
//!
//! All soft-min reductions are max-shifted log-sum-exp, so small `gamma`
//! values do not underflow. The ground cost is squared Euclidean per time
//! step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdtwError {
    #[error("gamma must be a positive finite number, got {0}")]
    InvalidGamma(f64),
    #[error("series must be non-empty")]
    EmptySeries,
    #[error("cost matrix has {len} entries, expected {rows}x{cols}")]
    CostShape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("cost matrix entries must be finite")]
    NonFiniteCost,
    #[error("mean requires at least one series with positive weight")]
    NoMembers,
    #[error("got {weights} weights for {series} series")]
    WeightCount { series: usize, weights: usize },
    #[error("invalid weight {0}")]
    InvalidWeight(f64),
    #[error("initial mean must be non-empty and finite")]
    InvalidInit,
}

/// Smoothing parameter and optional Sakoe-Chiba style band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdtwConfig {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<usize>,
}

impl Default for SdtwConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            band: None,
        }
    }
}

impl SdtwConfig {
    pub fn new(gamma: f64) -> Result<Self, SdtwError> {
        let cfg = Self { gamma, band: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.band = Some(band);
        self
    }

    pub fn validate(&self) -> Result<(), SdtwError> {
        if self.gamma > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(SdtwError::InvalidGamma(self.gamma))
        }
    }

    /// Band membership for 0-based cell `(i, j)` of a `t1 x t2` grid.
    ///
    /// The band is widened by the length difference so the end cell stays
    /// reachable for unequal lengths.
    #[inline]
    fn allows(&self, i: usize, j: usize, t1: usize, t2: usize) -> bool {
        match self.band {
            None => true,
            Some(w) => {
                let (i, j, w) = (i as isize, j as isize, w as isize);
                let d = t1 as isize - t2 as isize;
                if d >= 0 {
                    i >= j - w && i <= j + d + w
                } else {
                    j >= i - w && j <= i - d + w
                }
            }
        }
    }
}

/// Dense row-major `rows x cols` matrix of per-step ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SdtwError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(SdtwError::CostShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SdtwError::NonFiniteCost);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Pairwise squared differences `(x_i - y_j)^2`.
pub fn cost_matrix(x: &[f64], y: &[f64]) -> CostMatrix {
    let mut data = Vec::with_capacity(x.len() * y.len());
    for &a in x {
        data.extend(y.iter().map(|&b| (a - b) * (a - b)));
    }
    CostMatrix {
        rows: x.len(),
        cols: y.len(),
        data,
    }
}

/// `min^gamma(a, b, c)`; the minimum's own term is exactly one, so only two
/// exponentials are evaluated.
#[inline(always)]
fn softmin3(a: f64, b: f64, c: f64, gamma: f64, inv: f64) -> f64 {
    let (m, p, q) = if a <= b && a <= c {
        (a, b, c)
    } else if b <= c {
        (b, a, c)
    } else {
        (c, a, b)
    };
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = 1.0 + ((m - p) * inv).exp() + ((m - q) * inv).exp();
    m - gamma * s.ln()
}

/// Forward soft-min Bellman recursion. `r` is resized to `(t1 + 1) * (t2 + 1)`
/// with `r[0][0] = 0` and infinite borders.
///
/// Rows are swept in strips of `STRIP` with a one-column lag between
/// consecutive rows, so each step updates cells on one anti-diagonal. Those
/// cells are independent, which hides the latency of the soft-min chain.
#[inline(always)]
fn forward<F: Fn(usize, usize) -> f64>(
    t1: usize,
    t2: usize,
    cost: F,
    cfg: &SdtwConfig,
    r: &mut Vec<f64>,
) -> f64 {
    const STRIP: usize = 8;
    let w = t2 + 1;
    r.clear();
    r.resize((t1 + 1) * w, f64::INFINITY);
    r[0] = 0.0;
    let gamma = cfg.gamma;
    let inv = 1.0 / gamma;
    let banded = cfg.band.is_some();
    let cell = |r: &mut [f64], i: usize, j: usize| {
        if banded && !cfg.allows(i - 1, j - 1, t1, t2) {
            return;
        }
        let up = (i - 1) * w + j;
        let here = i * w + j;
        r[here] = cost(i - 1, j - 1) + softmin3(r[up - 1], r[up], r[here - 1], gamma, inv);
    };
    let mut i0 = 1;
    while i0 + STRIP - 1 <= t1 {
        let full = STRIP..t2 + 1;
        for step in 1..t2 + STRIP {
            if full.contains(&step) {
                for k in 0..STRIP {
                    cell(r, i0 + k, step - k);
                }
            } else {
                for k in 0..STRIP {
                    if step > k && step - k <= t2 {
                        cell(r, i0 + k, step - k);
                    }
                }
            }
        }
        i0 += STRIP;
    }
    for i in i0..=t1 {
        for j in 1..=t2 {
            cell(r, i, j);
        }
    }
    r[t1 * w + t2]
}

#[inline(always)]
fn exp_of(x: f64) -> f64 {
    x.exp()
}

/// Backward recursion producing the expected alignment `E = dSDTW/dC`
/// (row-major `t1 x t2`).
fn backward<F: Fn(usize, usize) -> f64>(
    t1: usize,
    t2: usize,
    cost: F,
    cfg: &SdtwConfig,
    r: &[f64],
) -> Vec<f64> {
    let w = t2 + 1;
    let inv = 1.0 / cfg.gamma;
    let mut e = vec![0.0; t1 * t2];
    e[t1 * t2 - 1] = 1.0;
    let banded = cfg.band.is_some();
    for i in (1..=t1).rev() {
        for j in (1..=t2).rev() {
            if i == t1 && j == t2 {
                continue;
            }
            let rij = r[i * w + j];
            if !rij.is_finite() {
                continue;
            }
            let mut acc = 0.0;
            if i < t1 && (!banded || cfg.allows(i, j - 1, t1, t2)) {
                let ev = e[i * t2 + (j - 1)];
                if ev != 0.0 {
                    acc += ev * exp_of((r[(i + 1) * w + j] - cost(i, j - 1) - rij) * inv);
                }
            }
            if j < t2 && (!banded || cfg.allows(i - 1, j, t1, t2)) {
                let ev = e[(i - 1) * t2 + j];
                if ev != 0.0 {
                    acc += ev * exp_of((r[i * w + j + 1] - cost(i - 1, j) - rij) * inv);
                }
            }
            if i < t1 && j < t2 && (!banded || cfg.allows(i, j, t1, t2)) {
                let ev = e[i * t2 + j];
                if ev != 0.0 {
                    acc += ev * exp_of((r[(i + 1) * w + j + 1] - cost(i, j) - rij) * inv);
                }
            }
            e[(i - 1) * t2 + (j - 1)] = acc;
        }
    }
    e
}

/// Soft-DTW value of a cost matrix.
pub fn soft_dtw(c: &CostMatrix, cfg: &SdtwConfig) -> f64 {
    let mut r = Vec::new();
    forward(c.rows, c.cols, |i, j| c.get(i, j), cfg, &mut r)
}

/// Soft-DTW value together with its gradient with respect to the cost
/// matrix (the expected alignment matrix).
pub fn soft_dtw_alignment(c: &CostMatrix, cfg: &SdtwConfig) -> (f64, CostMatrix) {
    let mut r = Vec::new();
    let value = forward(c.rows, c.cols, |i, j| c.get(i, j), cfg, &mut r);
    let e = backward(c.rows, c.cols, |i, j| c.get(i, j), cfg, &r);
    (
        value,
        CostMatrix {
            rows: c.rows,
            cols: c.cols,
            data: e,
        },
    )
}

/// `SDTW(C(x, y))` without materializing the cost matrix.
pub fn soft_dtw_series(x: &[f64], y: &[f64], cfg: &SdtwConfig) -> f64 {
    let mut r = Vec::new();
    forward(x.len(), y.len(), |i, j| sq(x[i] - y[j]), cfg, &mut r)
}

#[inline(always)]
fn sq(v: f64) -> f64 {
    v * v
}

/// Expected alignment between `x` and `y` plus the Soft-DTW value.
struct Alignment {
    value: f64,
    e: Vec<f64>,
}

fn align(x: &[f64], y: &[f64], cfg: &SdtwConfig) -> Alignment {
    let cost = |i: usize, j: usize| sq(x[i] - y[j]);
    let mut r = Vec::new();
    let value = forward(x.len(), y.len(), cost, cfg, &mut r);
    let e = backward(x.len(), y.len(), cost, cfg, &r);
    Alignment { value, e }
}

impl Alignment {
    fn grad_first(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let t2 = y.len();
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let row = &self.e[i * t2..(i + 1) * t2];
                row.iter().zip(y).map(|(&e, &yj)| 2.0 * e * (xi - yj)).sum()
            })
            .collect()
    }

    fn grad_second(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let t2 = y.len();
        let mut g = vec![0.0; t2];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.e[i * t2..(i + 1) * t2];
            for ((gj, &e), &yj) in g.iter_mut().zip(row).zip(y) {
                *gj += 2.0 * e * (yj - xi);
            }
        }
        g
    }

    /// Gradient of `SDTW(C(x, x))` counting both argument slots.
    fn grad_self(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.grad_first(x, x);
        for (a, b) in g.iter_mut().zip(self.grad_second(x, x)) {
            *a += b;
        }
        g
    }
}

/// Soft-DTW value and gradient with respect to `x`.
pub fn soft_dtw_grad(x: &[f64], y: &[f64], cfg: &SdtwConfig) -> (f64, Vec<f64>) {
    let a = align(x, y, cfg);
    let g = a.grad_first(x, y);
    (a.value, g)
}

/// Combines a cross term and two self terms into the divergence.
///
/// The subtraction order is fixed so that identical inputs give exactly zero.
#[inline]
pub fn divergence_from_terms(cross: f64, self_x: f64, self_y: f64) -> f64 {
    (cross - 0.5 * self_x) - 0.5 * self_y
}

/// Total order on series contents (length first, then values).
fn content_cmp(x: &[f64], y: &[f64]) -> std::cmp::Ordering {
    x.len().cmp(&y.len()).then_with(|| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Divergence from precomputed self terms `sx = SDTW(x,x)`, `sy = SDTW(y,y)`.
///
/// Arguments are put in a canonical content order first, so the result is
/// bitwise symmetric and depends only on the two series.
pub fn divergence_with_self_terms(x: &[f64], sx: f64, y: &[f64], sy: f64, cfg: &SdtwConfig) -> f64 {
    if content_cmp(x, y).is_le() {
        divergence_from_terms(soft_dtw_series(x, y, cfg), sx, sy)
    } else {
        divergence_from_terms(soft_dtw_series(y, x, cfg), sy, sx)
    }
}

/// Soft-DTW divergence `SDTW(x,y) - SDTW(x,x)/2 - SDTW(y,y)/2`.
pub fn sdtw_divergence(x: &[f64], y: &[f64], cfg: &SdtwConfig) -> f64 {
    let sx = soft_dtw_series(x, x, cfg);
    let sy = soft_dtw_series(y, y, cfg);
    divergence_with_self_terms(x, sx, y, sy, cfg)
}

/// Divergence value and gradient with respect to `x`.
pub fn sdtw_divergence_grad(x: &[f64], y: &[f64], cfg: &SdtwConfig) -> (f64, Vec<f64>) {
    let cross = align(x, y, cfg);
    let selfx = align(x, x, cfg);
    let sy = soft_dtw_series(y, y, cfg);
    let mut g = cross.grad_first(x, y);
    for (gi, si) in g.iter_mut().zip(selfx.grad_self(x)) {
        *gi -= 0.5 * si;
    }
    (divergence_from_terms(cross.value, selfx.value, sy), g)
}

/// Gradient-descent settings for [`sdtw_mean`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub rel_tol: f64,
    /// The very first trial step moves the largest coordinate by this
    /// fraction of the series magnitude.
    pub initial_step_scale: f64,
    pub shrink: f64,
    /// Each accepted step seeds the next trial at `growth` times its size.
    pub growth: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-6,
            initial_step_scale: 1e-2,
            shrink: 0.5,
            growth: 2.0,
            armijo_c: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanStatus {
    Converged,
    MaxIterations,
    /// No step satisfied the Armijo condition within `max_backtracks`
    /// halvings; the best iterate so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanResult {
    pub mean: Vec<f64>,
    /// Weighted average divergence of the members to `mean`.
    pub objective: f64,
    /// Objective after every accepted iterate, starting with the init.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub status: MeanStatus,
}

/// Uniform-weight Fréchet mean under the Soft-DTW divergence.
pub fn sdtw_mean(
    series: &[&[f64]],
    init: &[f64],
    cfg: &SdtwConfig,
    opt: &OptimizerConfig,
) -> Result<MeanResult, SdtwError> {
    let weights = vec![1.0; series.len()];
    sdtw_weighted_mean(series, &weights, init, cfg, opt)
}

/// Weighted Fréchet mean: minimizes `sum_i w_i D(x_i, mu) / sum_i w_i`
/// starting from `init` (whose length fixes the mean length).
pub fn sdtw_weighted_mean(
    series: &[&[f64]],
    weights: &[f64],
    init: &[f64],
    cfg: &SdtwConfig,
    opt: &OptimizerConfig,
) -> Result<MeanResult, SdtwError> {
    cfg.validate()?;
    if series.len() != weights.len() {
        return Err(SdtwError::WeightCount {
            series: series.len(),
            weights: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SdtwError::InvalidWeight(w));
    }
    if init.is_empty() || init.iter().any(|v| !v.is_finite()) {
        return Err(SdtwError::InvalidInit);
    }
    let members: Vec<(&[f64], f64)> = series
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (*s, w))
        .collect();
    if members.is_empty() {
        return Err(SdtwError::NoMembers);
    }
    if members.iter().any(|(s, _)| s.is_empty()) {
        return Err(SdtwError::EmptySeries);
    }
    let total: f64 = members.iter().map(|(_, w)| w).sum();
    let self_terms: Vec<f64> = members
        .par_iter()
        .map(|(s, _)| soft_dtw_series(s, s, cfg))
        .collect();
    let member_const: f64 = members
        .iter()
        .zip(&self_terms)
        .map(|((_, w), s)| w * 0.5 * s)
        .sum::<f64>()
        / total;

    let objective = |mu: &[f64]| -> f64 {
        let cross: Vec<f64> = members
            .par_iter()
            .map(|(s, w)| w * soft_dtw_series(s, mu, cfg))
            .collect();
        let cross = cross.iter().sum::<f64>() / total;
        (cross - member_const) - 0.5 * soft_dtw_series(mu, mu, cfg)
    };
    let value_and_grad = |mu: &[f64]| -> (f64, Vec<f64>) {
        let parts: Vec<(f64, Vec<f64>)> = members
            .par_iter()
            .map(|(s, w)| {
                let a = align(s, mu, cfg);
                (w * a.value, a.grad_second(s, mu))
            })
            .collect();
        let mut grad = vec![0.0; mu.len()];
        let mut cross = 0.0;
        for ((v, g), (_, w)) in parts.iter().zip(&members) {
            cross += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += w * b;
            }
        }
        cross /= total;
        grad.iter_mut().for_each(|g| *g /= total);
        let selfa = align(mu, mu, cfg);
        for (g, s) in grad.iter_mut().zip(selfa.grad_self(mu)) {
            *g -= 0.5 * s;
        }
        ((cross - member_const) - 0.5 * selfa.value, grad)
    };

    let mut mu = init.to_vec();
    let (mut f, mut g) = value_and_grad(&mu);
    let mut history = vec![f];
    let mut status = MeanStatus::MaxIterations;
    let mut iterations = 0;
    let magnitude = mu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut step: Option<f64> = None;
    let mut candidate = vec![0.0; mu.len()];

    if f <= 0.0 {
        // The divergence is nonnegative, so the init is already optimal.
        status = MeanStatus::Converged;
    } else {
        while iterations < opt.max_iter {
            let gnorm2: f64 = g.iter().map(|v| v * v).sum();
            let ginf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if ginf == 0.0 || !gnorm2.is_finite() {
                status = MeanStatus::Converged;
                break;
            }
            let mut t = match step {
                Some(s) => s * opt.growth,
                None => opt.initial_step_scale * magnitude / ginf,
            };
            let mut accepted = None;
            for _ in 0..=opt.max_backtracks {
                for ((c, m), gi) in candidate.iter_mut().zip(&mu).zip(&g) {
                    *c = m - t * gi;
                }
                let fc = objective(&candidate);
                if fc.is_finite() && fc <= f - opt.armijo_c * t * gnorm2 {
                    accepted = Some(fc);
                    break;
                }
                t *= opt.shrink;
            }
            let Some(fc) = accepted else {
                status = MeanStatus::LineSearchFailed;
                break;
            };
            iterations += 1;
            step = Some(t);
            std::mem::swap(&mut mu, &mut candidate);
            let decrease = f - fc;
            let (fv, gv) = value_and_grad(&mu);
            f = fv;
            g = gv;
            history.push(f);
            if decrease <= opt.rel_tol * f.abs().max(1e-12) {
                status = MeanStatus::Converged;
                break;
            }
        }
    }
    Ok(MeanResult {
        mean: mu,
        objective: f,
        history,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_matrix_entries() {
        assert_eq!(cost_matrix(&[0.0], &[3.0]).as_slice(), &[9.0]);
        assert_eq!(
            cost_matrix(&[1.0, 2.0], &[1.0, 2.0]).as_slice(),
            &[0.0, 1.0, 1.0, 0.0]
        );
        let x = [0.3, -1.0, 2.5];
        let c = cost_matrix(&x, &x);
        for i in 0..3 {
            assert_eq!(c.get(i, i), 0.0);
        }
    }

    #[test]
    fn single_cell_is_its_cost() {
        let c = cost_matrix(&[0.0], &[3.0]);
        for gamma in [1e-3, 1.0, 50.0] {
            assert_eq!(soft_dtw(&c, &SdtwConfig::new(gamma).unwrap()), 9.0);
        }
    }

    #[test]
    fn single_cell_gradient() {
        let (v, g) = soft_dtw_grad(&[0.0], &[3.0], &SdtwConfig::default());
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![-6.0]);
        let (v, g) = sdtw_divergence_grad(&[0.0], &[3.0], &SdtwConfig::default());
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![-6.0]);
    }

    #[test]
    fn divergence_of_single_points() {
        assert_eq!(sdtw_divergence(&[0.0], &[3.0], &SdtwConfig::default()), 9.0);
    }

    #[test]
    fn divergence_to_self_is_exactly_zero() {
        let x = [0.1, 2.0, -3.0, 4.5, 0.0];
        for gamma in [0.01, 1.0, 10.0] {
            assert_eq!(
                sdtw_divergence(&x, &x, &SdtwConfig::new(gamma).unwrap()),
                0.0
            );
        }
    }

    #[test]
    fn small_gamma_under_flow_is_stable() {
        let x = [0.0, 1.0, 2.0];
        let v = soft_dtw(&cost_matrix(&x, &x), &SdtwConfig::new(1e-3).unwrap());
        assert!(v <= 0.0 && v > -1e-6, "{v}");
        let far = [1e3, -1e3, 5e2];
        let v = soft_dtw_series(&far, &x, &SdtwConfig::new(1e-4).unwrap());
        assert!(v.is_finite());
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(SdtwConfig::new(0.0).is_err());
        assert!(SdtwConfig::new(-1.0).is_err());
        assert!(SdtwConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn band_matches_unbanded_when_wide() {
        let x = [0.0, 1.0, 3.0, 2.0, 1.0];
        let y = [0.5, 2.0, 2.5];
        let cfg = SdtwConfig::default();
        let wide = cfg.with_band(10);
        assert_eq!(
            soft_dtw_series(&x, &y, &cfg),
            soft_dtw_series(&x, &y, &wide)
        );
        let narrow = cfg.with_band(0);
        let v = soft_dtw_series(&x, &y, &narrow);
        assert!(v.is_finite());
        assert!(v >= soft_dtw_series(&x, &y, &cfg));
        let (_, g) = soft_dtw_grad(&x, &y, &narrow);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mean_of_singleton_is_identity() {
        let x = [1.0, 3.0, 2.0, 0.5];
        let res = sdtw_mean(
            &[&x],
            &x,
            &SdtwConfig::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(res.mean, x.to_vec());
        assert_eq!(res.objective, 0.0);
        assert_eq!(res.status, MeanStatus::Converged);
    }

    #[test]
    fn mean_of_two_identical_series() {
        let x = [0.0, 1.0, 0.0, -1.0];
        let res = sdtw_mean(
            &[&x, &x],
            &x,
            &SdtwConfig::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(res.mean, x.to_vec());
    }

    #[test]
    fn mean_descends_from_perturbed_init() {
        let x = [0.0, 1.0, 2.0, 1.0, 0.0];
        let init = [1.0, 1.0, 1.0, 1.0, 1.0];
        let res = sdtw_mean(
            &[&x],
            &init,
            &SdtwConfig::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(res.objective < res.history[0]);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mean_rejects_bad_inputs() {
        let x = [1.0];
        let cfg = SdtwConfig::default();
        let opt = OptimizerConfig::default();
        assert_eq!(sdtw_mean(&[], &x, &cfg, &opt), Err(SdtwError::NoMembers));
        assert_eq!(
            sdtw_mean(&[&x], &[], &cfg, &opt),
            Err(SdtwError::InvalidInit)
        );
        assert!(matches!(
            sdtw_weighted_mean(&[&x], &[-1.0], &x, &cfg, &opt),
            Err(SdtwError::InvalidWeight(_))
        ));
    }
}
