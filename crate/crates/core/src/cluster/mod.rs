//! Level-by-level clustering of hierarchical time series.
//!
//! The bottom level is clustered with Soft-DTW K-means. Every aggregated
//! node is then lifted to a discrete measure over its children's cluster
//! means and clustered with Wasserstein K-means, level by level up to the
//! root. All losses are sums over members; the monotone traces are
//! recorded per level.

mod lloyd;
mod spaces;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hts::{HtsDataset, HtsError};
use crate::ot::{AtomRegistry, BarycenterConfig, DiscreteMeasure, OtConfig, OtError};
use crate::sdtw::{
    divergence_with_self_terms, soft_dtw_series, OptimizerConfig, SdtwConfig, SdtwError,
};
use crate::seed::derive_seed;

pub use lloyd::PostprocessReport;
use lloyd::{LloydParams, LloydState, Space};
use spaces::{MeasureSpace, SeriesCentroid, SeriesSpace};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid cluster configuration: {0}")]
    InvalidConfig(String),
    #[error("level {level}: k = {k} exceeds the {members} series at that level")]
    KExceedsMembers {
        level: usize,
        k: usize,
        members: usize,
    },
    #[error("level {level}: child structure is not covered by the lower-level model")]
    Uncovered { level: usize },
    #[error("ε_R too aggressive: every cluster would be removed")]
    TooAggressive,
    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<ClusterError>,
    },
    #[error(transparent)]
    Sdtw(#[from] SdtwError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Hts(#[from] HtsError),
}

impl ClusterError {
    fn at(self, level: usize) -> Self {
        match self {
            e @ Self::AtLevel { .. }
            | e @ Self::KExceedsMembers { .. }
            | e @ Self::Uncovered { .. } => e,
            e => Self::AtLevel {
                level,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerical solvers.
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::Sdtw(_) | Self::Ot(_) => true,
            Self::AtLevel { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeEps {
    /// `0.01 x` the median pairwise centroid distance of the level.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub merge_eps: MergeEps,
    /// Clusters with at most this many members are removed.
    pub remove_eps: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            merge_eps: MergeEps::Auto,
            remove_eps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// `k_per_level[l - 1]` clusters at level `l`.
    pub k_per_level: Vec<usize>,
    pub sdtw: SdtwConfig,
    pub ot: OtConfig,
    pub mean: OptimizerConfig,
    pub barycenter: BarycenterConfig,
    pub max_outer_iter: usize,
    /// Converged once at most this many labels change.
    pub assignment_stable_threshold: usize,
    pub seed: u64,
    /// Fuzziness exponent forwarded to forecasting.
    pub fuzziness: f64,
    /// Merge/remove post-processing; `None` disables it.
    pub postprocess: Option<PostprocessConfig>,
    /// Candidate and reference cap for medoid initialization of means.
    pub medoid_sample: usize,
    /// Divergence ratio above which a bottom series counts as boundary.
    pub calibration_ratio: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_per_level: Vec::new(),
            sdtw: SdtwConfig::default(),
            ot: OtConfig::default(),
            mean: OptimizerConfig::default(),
            barycenter: BarycenterConfig::default(),
            max_outer_iter: 100,
            assignment_stable_threshold: 0,
            seed: 0,
            fuzziness: 2.0,
            postprocess: Some(PostprocessConfig::default()),
            medoid_sample: 10,
            calibration_ratio: 0.9,
        }
    }
}

impl ClusterConfig {
    pub fn with_k(k_per_level: Vec<usize>) -> Self {
        Self {
            k_per_level,
            ..Self::default()
        }
    }

    pub fn validate(&self, levels: usize) -> Result<(), ClusterError> {
        let bad = |m: String| Err(ClusterError::InvalidConfig(m));
        if self.k_per_level.len() != levels {
            return bad(format!(
                "k given for {} levels, dataset has {levels}",
                self.k_per_level.len()
            ));
        }
        if self.k_per_level.contains(&0) {
            return bad("every k_l must be >= 1".into());
        }
        if let Some(PostprocessConfig {
            merge_eps: MergeEps::Value(v),
            ..
        }) = self.postprocess
        {
            if !(v >= 0.0) {
                return bad("merge epsilon must be >= 0".into());
            }
        }
        if !(self.fuzziness > 1.0) {
            return bad("fuzziness must be > 1".into());
        }
        if self.medoid_sample == 0 {
            return bad("medoid sample must be >= 1".into());
        }
        self.sdtw.validate()?;
        self.ot.validate()?;
        Ok(())
    }

    fn params(&self, level: usize) -> LloydParams {
        LloydParams {
            max_outer_iter: self.max_outer_iter,
            stable_threshold: self.assignment_stable_threshold,
            seed: derive_seed(self.seed, "level", level as u64),
        }
    }
}

/// Measure over lower-level clusters: `weights[a]` of cluster `clusters[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedMeasure {
    pub clusters: Vec<usize>,
    pub weights: Vec<f64>,
}

/// A discrete measure with its support series written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelClusterModel {
    pub level: usize,
    pub k: usize,
    /// `"instance_id/node_id"` in `level_series` order.
    pub members: Vec<String>,
    pub assignments: Vec<usize>,
    /// Soft-DTW mean of each cluster's original series.
    pub raw_means: Vec<Vec<f64>>,
    /// Wasserstein barycenters (aggregated levels only).
    pub barycenters: Vec<MeasureRecord>,
    /// Lifted measure of each member (aggregated levels only).
    pub lifted: Vec<LiftedMeasure>,
    pub loss_trace: Vec<f64>,
    /// Traces of earlier loops (before post-processing restarted the trace).
    pub prior_traces: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
}

impl LevelClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &z in &self.assignments {
            s[z] += 1;
        }
        s
    }

    pub fn is_aggregated(&self) -> bool {
        !self.barycenters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterMode {
    Multilevel,
    TwoLevelAlt,
    /// Every level clustered on its own series, without lifting.
    Levelwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelClusterModel {
    pub mode: ClusterMode,
    /// `levels[l - 1]` is the model of level `l`.
    pub levels: Vec<LevelClusterModel>,
    pub config: ClusterConfig,
}

impl MultiLevelClusterModel {
    pub fn level(&self, level: usize) -> &LevelClusterModel {
        &self.levels[level - 1]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn member_keys(ds: &HtsDataset, level: usize) -> Result<Vec<String>, ClusterError> {
    Ok(ds
        .level_series(level)?
        .iter()
        .map(|m| {
            let inst = &ds.instances()[m.instance];
            format!("{}/{}", inst.id(), inst.hierarchy().node_id(m.node))
        })
        .collect())
}

fn level_series_values(ds: &HtsDataset, level: usize) -> Result<Vec<&[f64]>, ClusterError> {
    Ok(ds
        .level_series(level)?
        .into_iter()
        .map(|m| m.series.values())
        .collect())
}

fn check_k(level: usize, k: usize, members: usize) -> Result<(), ClusterError> {
    if k > members {
        return Err(ClusterError::KExceedsMembers { level, k, members });
    }
    Ok(())
}

fn series_model(
    level: usize,
    keys: Vec<String>,
    state: LloydState<SeriesCentroid>,
) -> LevelClusterModel {
    LevelClusterModel {
        level,
        k: state.centroids.len(),
        members: keys,
        assignments: state.assignment,
        raw_means: state.centroids.into_iter().map(|c| c.values).collect(),
        barycenters: Vec::new(),
        lifted: Vec::new(),
        loss_trace: state.trace,
        prior_traces: state.prior_traces,
        iterations: state.iterations,
        converged: state.converged,
        reseeds: state.reseeds,
    }
}

fn run_series_level(
    series: Vec<&[f64]>,
    level: usize,
    k: usize,
    cfg: &ClusterConfig,
) -> Result<LloydState<SeriesCentroid>, ClusterError> {
    check_k(level, k, series.len())?;
    let space = SeriesSpace::new(series, cfg.sdtw, cfg.mean, cfg.medoid_sample);
    let params = cfg.params(level);
    let mut state = lloyd::run(&space, k, &params)?;
    if let Some(pp) = &cfg.postprocess {
        lloyd::postprocess(
            &space,
            &mut state,
            pp,
            derive_seed(params.seed, "postprocess", 0),
        )?;
    }
    Ok(state)
}

/// Soft-DTW K-means on one level's series (no post-processing).
pub fn cluster_series(
    series: &[&[f64]],
    k: usize,
    cfg: &ClusterConfig,
) -> Result<LevelClusterModel, ClusterError> {
    let level = cfg.k_per_level.len().max(1);
    check_k(level, k, series.len())?;
    let space = SeriesSpace::new(series.to_vec(), cfg.sdtw, cfg.mean, cfg.medoid_sample);
    let state = lloyd::run(&space, k, &cfg.params(level))?;
    let keys = (0..series.len()).map(|i| i.to_string()).collect();
    Ok(series_model(level, keys, state))
}

/// Bottom-level Soft-DTW K-means, followed by post-processing if configured.
pub fn cluster_bottom_level(
    ds: &HtsDataset,
    k: usize,
    cfg: &ClusterConfig,
) -> Result<LevelClusterModel, ClusterError> {
    let level = ds.levels();
    let series = level_series_values(ds, level)?;
    let state = run_series_level(series, level, k, cfg).map_err(|e| e.at(level))?;
    Ok(series_model(level, member_keys(ds, level)?, state))
}

/// Position of every `(instance, node)` of `level` in `level_series` order.
fn level_offsets(ds: &HtsDataset, level: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(ds.len());
    let mut acc = 0;
    for inst in ds.instances() {
        offsets.push(acc);
        acc += inst.hierarchy().nodes_at_level(level).len();
    }
    offsets
}

/// Lifts each level-`level` node to the empirical measure of its children's
/// cluster labels in `lower` (weights are child-count fractions).
pub fn lift_to_measures(
    ds: &HtsDataset,
    level: usize,
    lower: &LevelClusterModel,
) -> Result<Vec<LiftedMeasure>, ClusterError> {
    lift_with_assignments(ds, level, &lower.assignments, lower.k)
}

fn lift_with_assignments(
    ds: &HtsDataset,
    level: usize,
    lower_assign: &[usize],
    lower_k: usize,
) -> Result<Vec<LiftedMeasure>, ClusterError> {
    if level >= ds.levels() || level == 0 {
        return Err(ClusterError::Uncovered { level });
    }
    if lower_assign.len() != ds.level_count(level + 1) || lower_assign.iter().any(|&z| z >= lower_k)
    {
        return Err(ClusterError::Uncovered { level });
    }
    let offsets = level_offsets(ds, level + 1);
    let mut out = Vec::new();
    for m in ds.level_series(level)? {
        let h = ds.instances()[m.instance].hierarchy();
        let first = h.nodes_at_level(level + 1).start;
        let children = h.children(m.node);
        let mut counts = vec![0usize; lower_k];
        for &c in children {
            counts[lower_assign[offsets[m.instance] + c - first]] += 1;
        }
        let n = children.len() as f64;
        let clusters: Vec<usize> = (0..lower_k).filter(|&k| counts[k] > 0).collect();
        let weights = clusters.iter().map(|&k| counts[k] as f64 / n).collect();
        out.push(LiftedMeasure { clusters, weights });
    }
    Ok(out)
}

fn to_discrete(
    lifted: &[LiftedMeasure],
    atom_ids: &[usize],
) -> Result<Vec<DiscreteMeasure>, ClusterError> {
    lifted
        .iter()
        .map(|l| {
            Ok(DiscreteMeasure::new(
                l.clusters.iter().map(|&c| atom_ids[c]).collect(),
                l.weights.clone(),
            )?)
        })
        .collect()
}

/// `ceil` of the mean child count over the nodes of `level`.
fn mean_support_size(ds: &HtsDataset, level: usize) -> usize {
    let nodes = ds.level_count(level);
    let children = ds.level_count(level + 1);
    children.div_ceil(nodes).max(1)
}

fn record(m: &DiscreteMeasure, registry: &AtomRegistry) -> MeasureRecord {
    MeasureRecord {
        atoms: m
            .atoms()
            .iter()
            .map(|&a| registry.get(a).to_vec())
            .collect(),
        weights: m.weights().to_vec(),
    }
}

/// Wasserstein K-means over lifted measures whose atoms are `lower_means`.
pub fn cluster_aggregated_level(
    lifted: &[LiftedMeasure],
    lower_means: &[Vec<f64>],
    level: usize,
    k: usize,
    support_size: usize,
    cfg: &ClusterConfig,
) -> Result<(LevelClusterModel, Vec<MeasureRecord>), ClusterError> {
    check_k(level, k, lifted.len())?;
    let registry = AtomRegistry::new();
    let ids: Vec<usize> = lower_means
        .iter()
        .map(|m| registry.register(m.clone()))
        .collect();
    let space = MeasureSpace {
        measures: to_discrete(lifted, &ids)?,
        registry: &registry,
        sdtw: cfg.sdtw,
        ot: cfg.ot,
        barycenter: cfg.barycenter,
        support_size,
    };
    let params = cfg.params(level);
    let mut state = lloyd::run(&space, k, &params)?;
    if let Some(pp) = &cfg.postprocess {
        lloyd::postprocess(
            &space,
            &mut state,
            pp,
            derive_seed(params.seed, "postprocess", 0),
        )?;
    }
    let bary: Vec<MeasureRecord> = state
        .centroids
        .iter()
        .map(|c| record(c, &registry))
        .collect();
    let model = LevelClusterModel {
        level,
        k: state.centroids.len(),
        members: Vec::new(),
        assignments: state.assignment,
        raw_means: Vec::new(),
        barycenters: bary.clone(),
        lifted: lifted.to_vec(),
        loss_trace: state.trace,
        prior_traces: state.prior_traces,
        iterations: state.iterations,
        converged: state.converged,
        reseeds: state.reseeds,
    };
    Ok((model, bary))
}

/// Soft-DTW mean of the original level-`level` series of every cluster.
pub fn refine_level_means(
    ds: &HtsDataset,
    level: usize,
    assignments: &[usize],
    k: usize,
    cfg: &ClusterConfig,
) -> Result<Vec<Vec<f64>>, ClusterError> {
    let series = level_series_values(ds, level)?;
    if series.len() != assignments.len() {
        return Err(ClusterError::Uncovered { level });
    }
    let space = SeriesSpace::new(series, cfg.sdtw, cfg.mean, cfg.medoid_sample);
    let seed = derive_seed(cfg.seed, "refine", level as u64);
    (0..k)
        .into_par_iter()
        .map(|c| {
            let members: Vec<usize> = (0..assignments.len())
                .filter(|&i| assignments[i] == c)
                .collect();
            if members.is_empty() {
                return Err(ClusterError::InvalidConfig(format!(
                    "cluster {c} at level {level} is empty"
                )));
            }
            space.mean_of(&members, None, derive_seed(seed, "cluster", c as u64))
        })
        .collect()
}

/// Bottom-up multilevel clustering: bottom K-means, then for each level
/// upward lifting, Wasserstein K-means and refinement of raw means.
pub fn cluster_hts(
    ds: &HtsDataset,
    cfg: &ClusterConfig,
) -> Result<MultiLevelClusterModel, ClusterError> {
    cluster_hts_timed(ds, cfg).map(|(m, _)| m)
}

/// [`cluster_hts`] plus the wall time in seconds spent on each level.
pub fn cluster_hts_timed(
    ds: &HtsDataset,
    cfg: &ClusterConfig,
) -> Result<(MultiLevelClusterModel, Vec<f64>), ClusterError> {
    let depth = ds.levels();
    cfg.validate(depth)?;
    let mut seconds = vec![0.0; depth];
    let mut levels: Vec<Option<LevelClusterModel>> = vec![None; depth];
    let start = Instant::now();
    let bottom = cluster_bottom_level(ds, cfg.k_per_level[depth - 1], cfg)?;
    seconds[depth - 1] = start.elapsed().as_secs_f64();
    levels[depth - 1] = Some(bottom);
    for level in (1..depth).rev() {
        let start = Instant::now();
        let lower = levels[level].as_ref().expect("lower level is done");
        let run = || -> Result<LevelClusterModel, ClusterError> {
            let lifted = lift_to_measures(ds, level, lower)?;
            let support = mean_support_size(ds, level);
            let (mut model, _) = cluster_aggregated_level(
                &lifted,
                &lower.raw_means,
                level,
                cfg.k_per_level[level - 1],
                support,
                cfg,
            )?;
            model.members = member_keys(ds, level)?;
            model.raw_means = refine_level_means(ds, level, &model.assignments, model.k, cfg)?;
            Ok(model)
        };
        levels[level - 1] = Some(run().map_err(|e| e.at(level))?);
        seconds[level - 1] = start.elapsed().as_secs_f64();
    }
    let model = MultiLevelClusterModel {
        mode: ClusterMode::Multilevel,
        levels: levels
            .into_iter()
            .map(|l| l.expect("every level is filled"))
            .collect(),
        config: cfg.clone(),
    };
    Ok((model, seconds))
}

/// Baseline: Soft-DTW K-means on every level independently.
pub fn cluster_levelwise_independent(
    ds: &HtsDataset,
    cfg: &ClusterConfig,
) -> Result<MultiLevelClusterModel, ClusterError> {
    cluster_levelwise_timed(ds, cfg).map(|(m, _)| m)
}

/// [`cluster_levelwise_independent`] plus per-level wall time in seconds.
pub fn cluster_levelwise_timed(
    ds: &HtsDataset,
    cfg: &ClusterConfig,
) -> Result<(MultiLevelClusterModel, Vec<f64>), ClusterError> {
    let depth = ds.levels();
    cfg.validate(depth)?;
    let mut seconds = Vec::with_capacity(depth);
    let mut levels = Vec::with_capacity(depth);
    for level in 1..=depth {
        let start = Instant::now();
        let series = level_series_values(ds, level)?;
        let state = run_series_level(series, level, cfg.k_per_level[level - 1], cfg)
            .map_err(|e| e.at(level))?;
        levels.push(series_model(level, member_keys(ds, level)?, state));
        seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((
        MultiLevelClusterModel {
            mode: ClusterMode::Levelwise,
            levels,
            config: cfg.clone(),
        },
        seconds,
    ))
}

/// Boundary calibration of bottom labels using top-level assignments.
///
/// A bottom series whose two nearest centroids are within
/// `ratio` of each other moves to whichever of the two holds more of the
/// bottom series in instances sharing its instance's top cluster.
fn calibrate(
    space: &SeriesSpace<'_>,
    state: &LloydState<SeriesCentroid>,
    instance_of: &[usize],
    top_assign: &[usize],
    ratio: f64,
) -> Result<Option<(Vec<usize>, Vec<f64>)>, ClusterError> {
    let k = state.centroids.len();
    if k < 2 {
        return Ok(None);
    }
    let top_k = top_assign.iter().max().map_or(0, |m| m + 1);
    // Label counts per (top cluster, bottom cluster).
    let mut counts = vec![vec![0usize; k]; top_k];
    for (i, &z) in state.assignment.iter().enumerate() {
        counts[top_assign[instance_of[i]]][z] += 1;
    }
    let rows: Vec<Vec<f64>> = (0..space.len())
        .into_par_iter()
        .map(|i| {
            state
                .centroids
                .iter()
                .map(|c| space.distance(i, c))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut assign = state.assignment.clone();
    let mut dist = state.dist.clone();
    let mut changed = false;
    for (i, row) in rows.iter().enumerate() {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let (c1, c2) = (order[0], order[1]);
        if !(row[c2] > 0.0) || row[c1] / row[c2] <= ratio {
            continue;
        }
        let t = top_assign[instance_of[i]];
        let own = usize::from(state.assignment[i] == c1);
        let other = usize::from(state.assignment[i] == c2);
        // Siblings exclude the series itself.
        let n1 = counts[t][c1] - own;
        let n2 = counts[t][c2] - other;
        let target = if n2 > n1 { c2 } else { c1 };
        if target != assign[i] {
            assign[i] = target;
            dist[i] = row[target];
            changed = true;
        }
    }
    Ok(changed.then_some((assign, dist)))
}

/// Alternating two-level refinement (bottom step, lifting, top step,
/// calibration) until both levels' labels are stable.
///
/// The bottom trace is continuous. The top objective depends on the bottom
/// model through the lifted measures, so the top trace restarts whenever
/// they are rebuilt; earlier segments move to `prior_traces`.
pub fn two_level_alternating(
    ds: &HtsDataset,
    k_top: usize,
    k_bottom: usize,
    cfg: &ClusterConfig,
) -> Result<MultiLevelClusterModel, ClusterError> {
    if ds.levels() != 2 {
        return Err(ClusterError::InvalidConfig(format!(
            "two-level alternation needs L = 2, dataset has {}",
            ds.levels()
        )));
    }
    let cfg = ClusterConfig {
        k_per_level: vec![k_top, k_bottom],
        ..cfg.clone()
    };
    cfg.validate(2)?;
    let bottom_series = level_series_values(ds, 2)?;
    let instance_of: Vec<usize> = ds.level_series(2)?.iter().map(|m| m.instance).collect();
    check_k(2, k_bottom, bottom_series.len())?;
    check_k(1, k_top, ds.len())?;
    let bspace = SeriesSpace::new(bottom_series, cfg.sdtw, cfg.mean, cfg.medoid_sample);
    let (bp, tp) = (cfg.params(2), cfg.params(1));
    let mut bstate = lloyd::initialize(
        &bspace,
        lloyd::seed_plus_plus(&bspace, k_bottom, derive_seed(bp.seed, "init", 0))?,
    )?;
    let registry = AtomRegistry::new();
    let support = mean_support_size(ds, 1);

    let lift = |b: &LloydState<SeriesCentroid>| -> Result<(Vec<LiftedMeasure>, Vec<DiscreteMeasure>), ClusterError> {
        let ids: Vec<usize> = b.centroids.iter().map(|c| registry.register(c.values.clone())).collect();
        let lifted = lift_with_assignments(ds, 1, &b.assignment, b.centroids.len())?;
        let measures = to_discrete(&lifted, &ids)?;
        Ok((lifted, measures))
    };
    let (mut lifted, measures) = lift(&bstate)?;
    let mut tspace = MeasureSpace {
        measures,
        registry: &registry,
        sdtw: cfg.sdtw,
        ot: cfg.ot,
        barycenter: cfg.barycenter,
        support_size: support,
    };
    let mut tstate = lloyd::initialize(
        &tspace,
        lloyd::seed_plus_plus(&tspace, k_top, derive_seed(tp.seed, "init", 0))?,
    )?;
    // Rebuilding the measures changes the top objective, so every fixed set
    // of measures gets its own monotone trace.
    let rebase = |t: &mut LloydState<DiscreteMeasure>,
                  space: &MeasureSpace<'_>|
     -> Result<(), ClusterError> {
        for i in 0..t.assignment.len() {
            t.dist[i] = space.distance(i, &t.centroids[t.assignment[i]])?;
        }
        t.prior_traces.push(std::mem::take(&mut t.trace));
        t.trace.push(t.loss());
        Ok(())
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_outer_iter {
        let (prev_b, prev_t) = (bstate.assignment.clone(), tstate.assignment.clone());
        let it = iterations as u64;
        lloyd::center_all(&bspace, &mut bstate, derive_seed(bp.seed, "iteration", it))?;
        bstate.trace.push(bstate.loss());
        lloyd::assign(&bspace, &mut bstate)?;
        bstate.trace.push(bstate.loss());

        let (l, m) = lift(&bstate)?;
        if l != lifted {
            lifted = l;
            tspace.measures = m;
            rebase(&mut tstate, &tspace)?;
        }
        lloyd::center_all(&tspace, &mut tstate, derive_seed(tp.seed, "iteration", it))?;
        tstate.trace.push(tstate.loss());
        lloyd::assign(&tspace, &mut tstate)?;
        tstate.trace.push(tstate.loss());

        let before = bstate.loss();
        if let Some((assign, dist)) = calibrate(
            &bspace,
            &bstate,
            &instance_of,
            &tstate.assignment,
            cfg.calibration_ratio,
        )? {
            let loss: f64 = dist.iter().sum();
            if loss <= before {
                bstate.assignment = assign;
                bstate.dist = dist;
                bstate.trace.push(loss);
            }
        }
        iterations += 1;
        if bstate.assignment == prev_b && tstate.assignment == prev_t {
            converged = true;
            break;
        }
    }
    // Calibration may have changed bottom labels after the last lift.
    lloyd::compact(&mut bstate);
    let (l, m) = lift(&bstate)?;
    if l != lifted {
        lifted = l;
        tspace.measures = m;
        rebase(&mut tstate, &tspace)?;
        lloyd::assign(&tspace, &mut tstate)?;
        tstate.trace.push(tstate.loss());
    }
    bstate.iterations = iterations;
    tstate.iterations = iterations;
    bstate.converged = converged;
    tstate.converged = converged;

    if let Some(pp) = &cfg.postprocess {
        let report = lloyd::postprocess(
            &bspace,
            &mut bstate,
            pp,
            derive_seed(bp.seed, "postprocess", 0),
        )?;
        if report.merged + report.removed > 0 {
            let (l, m) = lift(&bstate)?;
            lifted = l;
            tspace.measures = m;
            rebase(&mut tstate, &tspace)?;
            lloyd::step(&tspace, &mut tstate, tp.seed)?;
        }
        lloyd::postprocess(
            &tspace,
            &mut tstate,
            pp,
            derive_seed(tp.seed, "postprocess", 0),
        )?;
    }
    lloyd::compact(&mut tstate);
    debug_assert_eq!(
        lift_with_assignments(ds, 1, &bstate.assignment, bstate.centroids.len())?,
        lifted
    );

    let bottom = series_model(2, member_keys(ds, 2)?, bstate);
    let top_k = tstate.centroids.len();
    let raw = refine_level_means(ds, 1, &tstate.assignment, top_k, &cfg)?;
    let top = LevelClusterModel {
        level: 1,
        k: top_k,
        members: member_keys(ds, 1)?,
        assignments: tstate.assignment,
        raw_means: raw,
        barycenters: tstate
            .centroids
            .iter()
            .map(|c| record(c, &registry))
            .collect(),
        lifted,
        loss_trace: tstate.trace,
        prior_traces: tstate.prior_traces,
        iterations: tstate.iterations,
        converged: tstate.converged,
        reseeds: tstate.reseeds,
    };
    Ok(MultiLevelClusterModel {
        mode: ClusterMode::TwoLevelAlt,
        levels: vec![top, bottom],
        config: cfg,
    })
}

fn state_from_model<S: Space>(
    space: &S,
    model: &LevelClusterModel,
    centroids: Vec<S::Centroid>,
) -> Result<LloydState<S::Centroid>, ClusterError> {
    if model.assignments.len() != space.len()
        || model.assignments.iter().any(|&z| z >= centroids.len())
    {
        return Err(ClusterError::Uncovered { level: model.level });
    }
    let dist = (0..space.len())
        .map(|i| space.distance(i, &centroids[model.assignments[i]]))
        .collect::<Result<_, _>>()?;
    Ok(LloydState {
        centroids,
        assignment: model.assignments.clone(),
        dist,
        trace: model.loss_trace.clone(),
        prior_traces: model.prior_traces.clone(),
        iterations: model.iterations,
        converged: model.converged,
        reseeds: model.reseeds,
    })
}

/// Merge/remove post-processing of a model over raw series, using the
/// Soft-DTW divergence between means.
pub fn merge_remove_series(
    series: &[&[f64]],
    model: &LevelClusterModel,
    pp: &PostprocessConfig,
    cfg: &ClusterConfig,
) -> Result<(LevelClusterModel, PostprocessReport), ClusterError> {
    let space = SeriesSpace::new(series.to_vec(), cfg.sdtw, cfg.mean, cfg.medoid_sample);
    let cents = model
        .raw_means
        .iter()
        .map(|v| SeriesCentroid::new(v.clone(), &cfg.sdtw))
        .collect();
    let mut state = state_from_model(&space, model, cents)?;
    let seed = derive_seed(cfg.params(model.level).seed, "postprocess", 0);
    let report = lloyd::postprocess(&space, &mut state, pp, seed)?;
    let out = series_model(model.level, model.members.clone(), state);
    Ok((out, report))
}

/// Merge/remove post-processing of an aggregated-level model, using
/// `W_sdtw` between barycenters. `lower_means` are the atoms of `model.lifted`.
pub fn merge_remove_measures(
    lower_means: &[Vec<f64>],
    model: &LevelClusterModel,
    pp: &PostprocessConfig,
    cfg: &ClusterConfig,
) -> Result<(LevelClusterModel, PostprocessReport), ClusterError> {
    let registry = AtomRegistry::new();
    let ids: Vec<usize> = lower_means
        .iter()
        .map(|m| registry.register(m.clone()))
        .collect();
    let cents = model
        .barycenters
        .iter()
        .map(|r| {
            let atoms: Vec<usize> = r
                .atoms
                .iter()
                .map(|a| registry.register(a.clone()))
                .collect();
            DiscreteMeasure::new(atoms.clone(), r.weights.clone())
                .or_else(|_| DiscreteMeasure::uniform(atoms))
        })
        .collect::<Result<Vec<_>, OtError>>()?;
    let support = cents.iter().map(DiscreteMeasure::len).max().unwrap_or(1);
    let space = MeasureSpace {
        measures: to_discrete(&model.lifted, &ids)?,
        registry: &registry,
        sdtw: cfg.sdtw,
        ot: cfg.ot,
        barycenter: cfg.barycenter,
        support_size: support,
    };
    let mut state = state_from_model(&space, model, cents)?;
    let seed = derive_seed(cfg.params(model.level).seed, "postprocess", 0);
    let report = lloyd::postprocess(&space, &mut state, pp, seed)?;
    let out = LevelClusterModel {
        level: model.level,
        k: state.centroids.len(),
        members: model.members.clone(),
        assignments: state.assignment,
        raw_means: Vec::new(),
        barycenters: state
            .centroids
            .iter()
            .map(|c| record(c, &registry))
            .collect(),
        lifted: model.lifted.clone(),
        loss_trace: state.trace,
        prior_traces: state.prior_traces,
        iterations: state.iterations,
        converged: state.converged,
        reseeds: state.reseeds,
    };
    Ok((out, report))
}

/// Per-level losses recomputed from scratch plus the level-normalized total
/// `sum_l L_l / G(l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub per_level: Vec<f64>,
    pub total: f64,
}

pub fn objective_value(
    ds: &HtsDataset,
    model: &MultiLevelClusterModel,
) -> Result<ObjectiveReport, ClusterError> {
    let cfg = &model.config;
    let depth = ds.levels();
    if model.depth() != depth {
        return Err(ClusterError::InvalidConfig(
            "model depth differs from dataset".into(),
        ));
    }
    let mut per_level = vec![0.0; depth];
    for level in (1..=depth).rev() {
        let m = model.level(level);
        if m.assignments.len() != ds.level_count(level) {
            return Err(ClusterError::Uncovered { level });
        }
        per_level[level - 1] = if m.is_aggregated() {
            let lower = model.level(level + 1);
            let lifted = lift_with_assignments(ds, level, &lower.assignments, lower.k)?;
            let registry = AtomRegistry::new();
            let ids: Vec<usize> = lower
                .raw_means
                .iter()
                .map(|v| registry.register(v.clone()))
                .collect();
            let measures = to_discrete(&lifted, &ids)?;
            let bary = m
                .barycenters
                .iter()
                .map(|r| {
                    let atoms: Vec<usize> = r
                        .atoms
                        .iter()
                        .map(|a| registry.register(a.clone()))
                        .collect();
                    // Uniform weights may miss 1 by a few ulps.
                    DiscreteMeasure::new(atoms.clone(), r.weights.clone())
                        .or_else(|_| DiscreteMeasure::uniform(atoms))
                })
                .collect::<Result<Vec<_>, OtError>>()?;
            let mut total = 0.0;
            for (p, &z) in measures.iter().zip(&m.assignments) {
                total += crate::ot::w_sdtw(p, &bary[z], &registry, &cfg.sdtw, &cfg.ot)?;
            }
            total
        } else {
            let series = level_series_values(ds, level)?;
            let means: Vec<(Vec<f64>, f64)> = m
                .raw_means
                .iter()
                .map(|v| (v.clone(), soft_dtw_series(v, v, &cfg.sdtw)))
                .collect();
            let d: Vec<f64> = series
                .par_iter()
                .zip(&m.assignments)
                .map(|(x, &z)| {
                    let sx = soft_dtw_series(x, x, &cfg.sdtw);
                    divergence_with_self_terms(x, sx, &means[z].0, means[z].1, &cfg.sdtw)
                })
                .collect();
            d.iter().sum()
        };
    }
    let total = (1..=depth)
        .map(|l| per_level[l - 1] / ds.level_count(l) as f64)
        .sum();
    Ok(ObjectiveReport { per_level, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hts::{Hierarchy, HtsInstance};

    fn star_dataset(children: usize, instances: usize) -> HtsDataset {
        let insts = (0..instances)
            .map(|i| {
                let bottom = (0..children)
                    .map(|c| vec![(i * children + c) as f64; 3])
                    .collect();
                HtsInstance::from_bottom(
                    format!("i{i}"),
                    Hierarchy::star(children).unwrap(),
                    bottom,
                )
                .unwrap()
            })
            .collect();
        HtsDataset::new(insts).unwrap()
    }

    #[test]
    fn lift_uses_child_count_fractions() {
        let ds = star_dataset(4, 1);
        let lifted = lift_with_assignments(&ds, 1, &[1, 1, 2, 0], 3).unwrap();
        assert_eq!(
            lifted,
            vec![LiftedMeasure {
                clusters: vec![0, 1, 2],
                weights: vec![0.25, 0.5, 0.25]
            }]
        );
        let lifted = lift_with_assignments(&ds, 1, &[2, 2, 2, 2], 3).unwrap();
        assert_eq!(
            lifted[0],
            LiftedMeasure {
                clusters: vec![2],
                weights: vec![1.0]
            }
        );
    }

    #[test]
    fn lift_single_child_is_point_mass() {
        let ds = star_dataset(1, 3);
        let lifted = lift_with_assignments(&ds, 1, &[0, 1, 0], 2).unwrap();
        assert_eq!(
            lifted[1],
            LiftedMeasure {
                clusters: vec![1],
                weights: vec![1.0]
            }
        );
    }

    #[test]
    fn lift_rejects_uncovered_children() {
        let ds = star_dataset(4, 2);
        assert!(matches!(
            lift_with_assignments(&ds, 1, &[0; 7], 1),
            Err(ClusterError::Uncovered { .. })
        ));
        assert!(matches!(
            lift_with_assignments(&ds, 1, &[0, 0, 0, 0, 0, 0, 0, 5], 2),
            Err(ClusterError::Uncovered { .. })
        ));
        assert!(matches!(
            lift_with_assignments(&ds, 2, &[0; 8], 1),
            Err(ClusterError::Uncovered { .. })
        ));
    }

    #[test]
    fn support_size_rounds_up() {
        assert_eq!(mean_support_size(&star_dataset(4, 3), 1), 4);
    }

    #[test]
    fn config_validation() {
        let cfg = ClusterConfig::with_k(vec![2, 0]);
        assert!(matches!(
            cfg.validate(2),
            Err(ClusterError::InvalidConfig(_))
        ));
        assert!(ClusterConfig::with_k(vec![2]).validate(2).is_err());
        let cfg = ClusterConfig {
            fuzziness: 1.0,
            ..ClusterConfig::with_k(vec![1, 1])
        };
        assert!(cfg.validate(2).is_err());
        assert!(ClusterConfig::with_k(vec![1, 3]).validate(2).is_ok());
    }

    #[test]
    fn k_larger_than_level_is_rejected() {
        let ds = star_dataset(2, 2);
        let err = cluster_hts(&ds, &ClusterConfig::with_k(vec![3, 2])).unwrap_err();
        assert!(matches!(
            err,
            ClusterError::KExceedsMembers {
                level: 1,
                k: 3,
                members: 2
            }
        ));
    }

    #[test]
    fn errors_are_annotated_with_level() {
        let e = ClusterError::TooAggressive.at(2);
        assert_eq!(
            e.to_string(),
            "level 2: ε_R too aggressive: every cluster would be removed"
        );
    }
}
