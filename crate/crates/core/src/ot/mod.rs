//! Discrete optimal transport with the Soft-DTW divergence as ground cost.
//!
//! Measures refer to their supports through an [`AtomRegistry`], which also
//! memoizes pairwise divergences for the duration of one run.

mod exact;
mod sinkhorn;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sdtw::{
    divergence_with_self_terms, sdtw_weighted_mean, soft_dtw_series, CostMatrix, OptimizerConfig,
    SdtwConfig, SdtwError,
};

pub type AtomId = usize;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("dimension mismatch: cost is {rows}x{cols}, weights are {a}x{b}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        a: usize,
        b: usize,
    },
    #[error("exact solver limited to {limit} atoms per side, got {rows}x{cols}")]
    SizeLimit {
        rows: usize,
        cols: usize,
        limit: usize,
    },
    #[error("Sinkhorn did not converge: marginal violation {violation:e}")]
    NotConverged { violation: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid OT configuration: {0}")]
    InvalidConfig(String),
    #[error("cost matrix has a non-finite entry")]
    NonFiniteCost,
    #[error(transparent)]
    Sdtw(#[from] SdtwError),
}

/// Shared store of atom series plus a concurrent divergence memo.
#[derive(Debug, Default)]
pub struct AtomRegistry {
    atoms: RwLock<Vec<Arc<[f64]>>>,
    self_terms: DashMap<(AtomId, u64, usize), f64>,
    divergences: DashMap<(AtomId, AtomId, u64, usize), f64>,
}

fn cfg_key(cfg: &SdtwConfig) -> (u64, usize) {
    (cfg.gamma.to_bits(), cfg.band.map_or(usize::MAX, |b| b))
}

impl AtomRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, series: Vec<f64>) -> AtomId {
        let mut atoms = self.atoms.write().expect("registry lock poisoned");
        atoms.push(series.into());
        atoms.len() - 1
    }

    pub fn get(&self, id: AtomId) -> Arc<[f64]> {
        Arc::clone(&self.atoms.read().expect("registry lock poisoned")[id])
    }

    pub fn len(&self) -> usize {
        self.atoms.read().expect("registry lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cached_pairs(&self) -> usize {
        self.divergences.len()
    }

    pub fn clear_cache(&self) {
        self.self_terms.clear();
        self.divergences.clear();
    }

    pub fn self_term(&self, id: AtomId, cfg: &SdtwConfig) -> f64 {
        let (g, b) = cfg_key(cfg);
        if let Some(v) = self.self_terms.get(&(id, g, b)) {
            return *v;
        }
        let x = self.get(id);
        let v = soft_dtw_series(&x, &x, cfg);
        self.self_terms.insert((id, g, b), v);
        v
    }

    /// Memoized `D(atom a, atom b)`; symmetric by construction.
    pub fn divergence(&self, a: AtomId, b: AtomId, cfg: &SdtwConfig) -> f64 {
        if a == b {
            return 0.0;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (g, band) = cfg_key(cfg);
        let key = (lo, hi, g, band);
        if let Some(v) = self.divergences.get(&key) {
            return *v;
        }
        let (x, y) = (self.get(lo), self.get(hi));
        let v = divergence_with_self_terms(
            &x,
            self.self_term(lo, cfg),
            &y,
            self.self_term(hi, cfg),
            cfg,
        );
        self.divergences.insert(key, v);
        v
    }

    /// Divergence between a registered atom and an unregistered series,
    /// reusing the atom's cached self term.
    pub fn divergence_to(&self, a: AtomId, y: &[f64], self_y: f64, cfg: &SdtwConfig) -> f64 {
        let x = self.get(a);
        divergence_with_self_terms(&x, self.self_term(a, cfg), y, self_y, cfg)
    }
}

/// Weighted atoms on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<AtomId>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<AtomId>, weights: Vec<f64>) -> Result<Self, OtError> {
        if atoms.is_empty() {
            return Err(OtError::InvalidMeasure("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(OtError::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(OtError::InvalidMeasure(
                "weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OtError::InvalidMeasure(format!("weights sum to {total}")));
        }
        let mut sorted = atoms.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(OtError::InvalidMeasure("duplicate atom".into()));
        }
        Ok(Self { atoms, weights })
    }

    pub fn point_mass(atom: AtomId) -> Self {
        Self {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn uniform(atoms: Vec<AtomId>) -> Result<Self, OtError> {
        let w = 1.0 / atoms.len().max(1) as f64;
        let weights = vec![w; atoms.len()];
        if atoms.is_empty() {
            return Err(OtError::InvalidMeasure("no atoms".into()));
        }
        // Uniform weights may miss 1 by a few ulps; skip the sum check.
        let mut sorted = atoms.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(OtError::InvalidMeasure("duplicate atom".into()));
        }
        Ok(Self { atoms, weights })
    }

    pub fn atoms(&self) -> &[AtomId] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    /// Entropic regularization; 0 selects the exact solver.
    pub epsilon: f64,
    pub max_iter: usize,
    /// L1 marginal-violation tolerance for Sinkhorn.
    pub tol: f64,
    /// Exponent applied to the divergence ground cost (1 or 2).
    pub cost_power: u8,
    pub exact_size_limit: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            max_iter: 100_000,
            tol: 1e-9,
            cost_power: 1,
            exact_size_limit: 64,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<(), OtError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(OtError::InvalidConfig(format!(
                "epsilon {} < 0",
                self.epsilon
            )));
        }
        if !matches!(self.cost_power, 1 | 2) {
            return Err(OtError::InvalidConfig(format!(
                "cost power {}",
                self.cost_power
            )));
        }
        if !(self.tol > 0.0) {
            return Err(OtError::InvalidConfig("tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Coupling together with its transport cost `<pi, C>`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub plan: Vec<f64>,
    pub cost: f64,
    /// Dual potentials (exact solver) or scaled Sinkhorn potentials.
    pub duals: (Vec<f64>, Vec<f64>),
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.plan.chunks(self.cols) {
            for (a, b) in s.iter_mut().zip(r) {
                *a += b;
            }
        }
        s
    }

    /// Primal cost minus the dual objective `sum a u + sum b v`.
    pub fn duality_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        let dual: f64 = a.iter().zip(&self.duals.0).map(|(x, u)| x * u).sum::<f64>()
            + b.iter().zip(&self.duals.1).map(|(x, v)| x * v).sum::<f64>();
        self.cost - dual
    }
}

/// `(i, j) -> D(atom_i of p, atom_j of q)`, with negative roundoff clamped to 0.
pub fn ground_cost_matrix(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    registry: &AtomRegistry,
    cfg: &SdtwConfig,
) -> CostMatrix {
    let data: Vec<f64> = p
        .atoms
        .iter()
        .flat_map(|&a| q.atoms.iter().map(move |&b| (a, b)))
        .map(|(a, b)| registry.divergence(a, b, cfg).max(0.0))
        .collect();
    CostMatrix::from_vec(p.len(), q.len(), data).expect("shape is consistent")
}

fn check_weights(w: &[f64]) -> Result<(), OtError> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(OtError::InvalidMeasure(
            "weights must be >= 0 with positive mass".into(),
        ));
    }
    Ok(())
}

/// Optimal transport between weight vectors `a`, `b` under `cost`.
pub fn ot_cost(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    cfg: &OtConfig,
) -> Result<TransportPlan, OtError> {
    cfg.validate()?;
    let (rows, cols) = (cost.rows(), cost.cols());
    if a.len() != rows || b.len() != cols {
        return Err(OtError::DimensionMismatch {
            rows,
            cols,
            a: a.len(),
            b: b.len(),
        });
    }
    check_weights(a)?;
    check_weights(b)?;
    if cost.as_slice().iter().any(|c| !c.is_finite()) {
        return Err(OtError::NonFiniteCost);
    }
    // Zero-weight atoms carry no mass and are removed before solving.
    let ri: Vec<usize> = (0..rows).filter(|&i| a[i] > 0.0).collect();
    let ci: Vec<usize> = (0..cols).filter(|&j| b[j] > 0.0).collect();
    let ra: Vec<f64> = ri.iter().map(|&i| a[i]).collect();
    let rb: Vec<f64> = ci.iter().map(|&j| b[j]).collect();
    let rc: Vec<f64> = ri
        .iter()
        .flat_map(|&i| ci.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost.get(i, j))
        .collect();
    let (p, q) = (ri.len(), ci.len());

    let (reduced, u_r, v_r) = if cfg.epsilon == 0.0 {
        if p > cfg.exact_size_limit || q > cfg.exact_size_limit {
            return Err(OtError::SizeLimit {
                rows: p,
                cols: q,
                limit: cfg.exact_size_limit,
            });
        }
        let s = exact::solve(&ra, &rb, &rc);
        (s.plan, s.u, s.v)
    } else {
        let s = sinkhorn::solve(&ra, &rb, &rc, cfg.epsilon, cfg.tol, cfg.max_iter);
        if !s.converged {
            return Err(OtError::NotConverged {
                violation: s.violation,
            });
        }
        (s.plan, s.f, s.g)
    };

    let mut plan = vec![0.0; rows * cols];
    for (x, &i) in ri.iter().enumerate() {
        for (y, &j) in ci.iter().enumerate() {
            plan[i * cols + j] = reduced[x * q + y];
        }
    }
    let mut u = vec![0.0; rows];
    let mut v = vec![0.0; cols];
    for (y, &j) in ci.iter().enumerate() {
        v[j] = v_r[y];
    }
    for (x, &i) in ri.iter().enumerate() {
        u[i] = u_r[x];
    }
    // Dual values for removed atoms: the largest feasible potential.
    for i in (0..rows).filter(|i| a[*i] <= 0.0) {
        u[i] = ci
            .iter()
            .map(|&j| cost.get(i, j) - v[j])
            .fold(f64::INFINITY, f64::min);
    }
    for j in (0..cols).filter(|j| b[*j] <= 0.0) {
        v[j] = (0..rows)
            .map(|i| cost.get(i, j) - u[i])
            .fold(f64::INFINITY, f64::min);
    }
    let total = plan.iter().zip(cost.as_slice()).map(|(p, c)| p * c).sum();
    Ok(TransportPlan {
        rows,
        cols,
        plan,
        cost: total,
        duals: (u, v),
    })
}

fn powered(mut c: CostMatrix, power: u8) -> CostMatrix {
    if power == 2 {
        let data = c.as_slice().iter().map(|v| v * v).collect();
        c = CostMatrix::from_vec(c.rows(), c.cols(), data).expect("same shape");
    }
    c
}

/// Transport plan for `W_sdtw(p, q)`.
pub fn w_sdtw_plan(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    registry: &AtomRegistry,
    sdtw: &SdtwConfig,
    ot: &OtConfig,
) -> Result<TransportPlan, OtError> {
    let c = powered(ground_cost_matrix(p, q, registry, sdtw), ot.cost_power);
    ot_cost(&p.weights, &q.weights, &c, ot)
}

/// Wasserstein distance with the Soft-DTW divergence as ground cost.
pub fn w_sdtw(
    p: &DiscreteMeasure,
    q: &DiscreteMeasure,
    registry: &AtomRegistry,
    sdtw: &SdtwConfig,
    ot: &OtConfig,
) -> Result<f64, OtError> {
    if p == q && ot.epsilon == 0.0 {
        return Ok(0.0);
    }
    Ok(w_sdtw_plan(p, q, registry, sdtw, ot)?.cost)
}

/// Second-order transport between measures whose supports are measures:
/// the ground cost between supports is itself `w_sdtw`.
pub fn w_sdtw2(
    a: &[f64],
    supports_a: &[DiscreteMeasure],
    b: &[f64],
    supports_b: &[DiscreteMeasure],
    registry: &AtomRegistry,
    sdtw: &SdtwConfig,
    ot: &OtConfig,
) -> Result<TransportPlan, OtError> {
    let mut data = Vec::with_capacity(supports_a.len() * supports_b.len());
    for p in supports_a {
        for q in supports_b {
            data.push(w_sdtw(p, q, registry, sdtw, ot)?);
        }
    }
    let c = CostMatrix::from_vec(supports_a.len(), supports_b.len(), data)
        .map_err(|_| OtError::InvalidMeasure("empty support list".into()))?;
    ot_cost(a, b, &c, ot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub mean: OptimizerConfig,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            rel_tol: 1e-6,
            mean: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterResult {
    pub measure: DiscreteMeasure,
    /// `sum_i lambda_i W_sdtw(P_i, nu)` at the returned measure.
    pub objective: f64,
    /// Objective at the start and after every outer iteration.
    pub trace: Vec<f64>,
}

/// Free-support barycenter with uniform weights on `support_size` atoms.
///
/// Alternates transport plans from every input to the barycenter with atom
/// updates: each atom becomes the Soft-DTW mean of the input atoms weighted
/// by the mass they send to it. Atom updates that do not lower the
/// transport-weighted cost are rejected, so the objective never increases
/// under the exact solver.
#[allow(clippy::too_many_arguments)]
pub fn free_support_barycenter(
    measures: &[&DiscreteMeasure],
    lambda: &[f64],
    support_size: usize,
    init: Option<&DiscreteMeasure>,
    registry: &AtomRegistry,
    sdtw: &SdtwConfig,
    ot: &OtConfig,
    cfg: &BarycenterConfig,
) -> Result<BarycenterResult, OtError> {
    if measures.is_empty() {
        return Err(OtError::InvalidMeasure("no input measures".into()));
    }
    if lambda.len() != measures.len() {
        return Err(OtError::InvalidMeasure(
            "lambda length differs from measure count".into(),
        ));
    }
    check_weights(lambda)?;
    if support_size == 0 {
        return Err(OtError::InvalidMeasure("support size must be >= 1".into()));
    }
    let lsum: f64 = lambda.iter().sum();
    let lambda: Vec<f64> = lambda.iter().map(|l| l / lsum).collect();

    // Distinct atoms in first-appearance order with their total mass.
    let mut order: Vec<AtomId> = Vec::new();
    let mut mass: BTreeMap<AtomId, f64> = BTreeMap::new();
    for (m, &l) in measures.iter().zip(&lambda) {
        for (&a, &w) in m.atoms.iter().zip(&m.weights) {
            let e = mass.entry(a).or_insert_with(|| {
                order.push(a);
                0.0
            });
            *e += l * w;
        }
    }
    let mut size = support_size;
    if size > order.len() {
        log::debug!(
            "barycenter support size {size} exceeds {} distinct atoms; clamping",
            order.len()
        );
        size = order.len();
    }
    let mut atoms: Vec<AtomId> = match init {
        Some(m) if m.len() == size => m.atoms.clone(),
        _ => {
            let mut ranked = order.clone();
            ranked.sort_by(|a, b| mass[b].total_cmp(&mass[a]));
            ranked.truncate(size);
            ranked
        }
    };

    let power = ot.cost_power;
    let solve_all = |atoms: &[AtomId]| -> Result<(Vec<TransportPlan>, f64), OtError> {
        let nu = DiscreteMeasure::uniform(atoms.to_vec())?;
        let plans = measures
            .iter()
            .map(|m| w_sdtw_plan(m, &nu, registry, sdtw, ot))
            .collect::<Result<Vec<_>, _>>()?;
        let obj = plans.iter().zip(&lambda).map(|(p, l)| l * p.cost).sum();
        Ok((plans, obj))
    };
    let ground = |a: AtomId, b: AtomId| -> f64 {
        let d = registry.divergence(a, b, sdtw).max(0.0);
        if power == 2 {
            d * d
        } else {
            d
        }
    };

    let (mut plans, mut objective) = solve_all(&atoms)?;
    let mut trace = vec![objective];
    for _ in 0..cfg.max_iter {
        // Mass each input atom sends to each barycenter atom.
        let incoming: Vec<Vec<(AtomId, f64)>> = (0..atoms.len())
            .map(|k| {
                let mut acc: BTreeMap<AtomId, f64> = BTreeMap::new();
                for ((m, plan), &l) in measures.iter().zip(&plans).zip(&lambda) {
                    for (r, &a) in m.atoms.iter().enumerate() {
                        let f = l * plan.get(r, k);
                        if f > 0.0 {
                            *acc.entry(a).or_insert(0.0) += f;
                        }
                    }
                }
                acc.into_iter().collect()
            })
            .collect();
        let candidates: Vec<Option<Vec<f64>>> = incoming
            .par_iter()
            .zip(atoms.par_iter())
            .map(|(inc, &current)| {
                if inc.is_empty() {
                    return Ok(None);
                }
                let series: Vec<Arc<[f64]>> = inc.iter().map(|(a, _)| registry.get(*a)).collect();
                let refs: Vec<&[f64]> = series.iter().map(|s| &s[..]).collect();
                let weights: Vec<f64> = if power == 2 {
                    inc.iter()
                        .map(|(a, w)| w * ground(*a, current).max(1e-12))
                        .collect()
                } else {
                    inc.iter().map(|(_, w)| *w).collect()
                };
                let init = registry.get(current);
                let res = sdtw_weighted_mean(&refs, &weights, &init, sdtw, &cfg.mean)?;
                Ok(Some(res.mean))
            })
            .collect::<Result<_, SdtwError>>()?;

        let mut changed = false;
        for (k, cand) in candidates.into_iter().enumerate() {
            let Some(cand) = cand else { continue };
            if cand.as_slice() == &registry.get(atoms[k])[..] {
                continue;
            }
            let id = registry.register(cand);
            let old: f64 = incoming[k]
                .iter()
                .map(|(a, w)| w * ground(*a, atoms[k]))
                .sum();
            let new: f64 = incoming[k].iter().map(|(a, w)| w * ground(*a, id)).sum();
            if new < old && !atoms.contains(&id) {
                atoms[k] = id;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let (p, obj) = solve_all(&atoms)?;
        let decrease = objective - obj;
        plans = p;
        objective = obj;
        trace.push(objective);
        if decrease <= cfg.rel_tol * objective.abs().max(1e-12) {
            break;
        }
    }
    Ok(BarycenterResult {
        measure: DiscreteMeasure::uniform(atoms)?,
        objective,
        trace,
    })
}
