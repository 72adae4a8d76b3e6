//! Lloyd-style alternation over an abstract metric-like space.
//!
//! Centering updates that do not lower a cluster's cost are rejected and
//! assignment takes the argmin (lowest index on ties), so every recorded
//! loss is no larger than the previous one.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClusterError, MergeEps, PostprocessConfig};
use crate::seed::derive_seed;

pub(crate) trait Space: Sync {
    type Centroid: Clone + Send + Sync;

    fn len(&self) -> usize;
    fn distance(&self, item: usize, c: &Self::Centroid) -> Result<f64, ClusterError>;
    fn item_centroid(&self, item: usize) -> Result<Self::Centroid, ClusterError>;
    /// Proposed centroid for `members`; acceptance is decided by the caller.
    fn center(
        &self,
        members: &[usize],
        current: &Self::Centroid,
        seed: u64,
    ) -> Result<Self::Centroid, ClusterError>;
    fn centroid_distance(
        &self,
        a: &Self::Centroid,
        b: &Self::Centroid,
    ) -> Result<f64, ClusterError>;
    /// Whether clusters may be centered concurrently.
    fn parallel_centering(&self) -> bool;
}

#[derive(Debug, Clone)]
pub(crate) struct LloydState<C> {
    pub centroids: Vec<C>,
    pub assignment: Vec<usize>,
    /// Distance of each item to its assigned centroid.
    pub dist: Vec<f64>,
    pub trace: Vec<f64>,
    pub prior_traces: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
}

impl<C> LloydState<C> {
    pub fn loss(&self) -> f64 {
        self.dist.iter().sum()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == k)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LloydParams {
    pub max_outer_iter: usize,
    pub stable_threshold: usize,
    pub seed: u64,
}

fn distance_rows<S: Space>(
    space: &S,
    centroids: &[S::Centroid],
) -> Result<Vec<Vec<f64>>, ClusterError> {
    (0..space.len())
        .into_par_iter()
        .map(|i| centroids.iter().map(|c| space.distance(i, c)).collect())
        .collect()
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &d) in row.iter().enumerate() {
        if d < row[best] {
            best = k;
        }
    }
    best
}

/// Greedy k-means++ seeding: `2 + ln k` candidates per round, keeping the
/// one that lowers the potential most.
pub(crate) fn seed_plus_plus<S: Space>(
    space: &S,
    k: usize,
    seed: u64,
) -> Result<Vec<S::Centroid>, ClusterError> {
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut centroids = vec![space.item_centroid(chosen[0])?];
    let dist_to = |c: &S::Centroid| -> Result<Vec<f64>, ClusterError> {
        (0..n)
            .into_par_iter()
            .map(|i| space.distance(i, c))
            .collect()
    };
    let mut d = dist_to(&centroids[0])?;
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        if !(total > 0.0) {
            // Every remaining point coincides with a centroid: pick uniformly.
            let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            let pick = rest[rng.gen_range(0..rest.len())];
            chosen.push(pick);
            centroids.push(space.item_centroid(pick)?);
            continue;
        }
        let mut best: Option<(f64, usize, S::Centroid, Vec<f64>)> = None;
        for _ in 0..trials {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut cand = n - 1;
            for (i, &di) in d.iter().enumerate() {
                acc += di;
                if acc > target && di > 0.0 {
                    cand = i;
                    break;
                }
            }
            while d[cand] <= 0.0 {
                cand -= 1;
            }
            let c = space.item_centroid(cand)?;
            let dc = dist_to(&c)?;
            let nd: Vec<f64> = d.iter().zip(&dc).map(|(a, b)| a.min(*b)).collect();
            let pot: f64 = nd.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.0) {
                best = Some((pot, cand, c, nd));
            }
        }
        let (_, cand, c, nd) = best.expect("at least one trial");
        chosen.push(cand);
        centroids.push(c);
        d = nd;
    }
    Ok(centroids)
}

/// Moves the farthest eligible point into each empty cluster.
fn reseed_empty<S: Space>(
    space: &S,
    state: &mut LloydState<S::Centroid>,
) -> Result<(), ClusterError> {
    let k = state.centroids.len();
    for empty in 0..k {
        let mut sizes = vec![0usize; k];
        for &z in &state.assignment {
            sizes[z] += 1;
        }
        if sizes[empty] > 0 {
            continue;
        }
        let mut pick: Option<usize> = None;
        for i in 0..state.assignment.len() {
            if state.dist[i] > 0.0
                && sizes[state.assignment[i]] >= 2
                && pick.is_none_or(|p| state.dist[i] > state.dist[p])
            {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { continue };
        let c = space.item_centroid(i)?;
        let di = space.distance(i, &c)?;
        if di < state.dist[i] {
            state.centroids[empty] = c;
            state.assignment[i] = empty;
            state.dist[i] = di;
            state.reseeds += 1;
        }
    }
    Ok(())
}

/// Assignment step; returns the number of changed labels.
pub(crate) fn assign<S: Space>(
    space: &S,
    state: &mut LloydState<S::Centroid>,
) -> Result<usize, ClusterError> {
    let rows = distance_rows(space, &state.centroids)?;
    let mut changed = 0;
    for (i, row) in rows.iter().enumerate() {
        let z = argmin(row);
        if z != state.assignment[i] {
            changed += 1;
        }
        state.assignment[i] = z;
        state.dist[i] = row[z];
    }
    reseed_empty(space, state)?;
    Ok(changed)
}

/// Centering step with rejection of non-improving updates.
pub(crate) fn center_all<S: Space>(
    space: &S,
    state: &mut LloydState<S::Centroid>,
    seed: u64,
) -> Result<(), ClusterError> {
    let k = state.centroids.len();
    let groups: Vec<Vec<usize>> = (0..k).map(|c| state.members(c)).collect();
    let propose = |c: usize| -> Result<Option<(S::Centroid, Vec<f64>)>, ClusterError> {
        let members = &groups[c];
        if members.is_empty() {
            return Ok(None);
        }
        let cand = space.center(
            members,
            &state.centroids[c],
            derive_seed(seed, "center", c as u64),
        )?;
        let d: Vec<f64> = members
            .iter()
            .map(|&i| space.distance(i, &cand))
            .collect::<Result<_, _>>()?;
        let old: f64 = members.iter().map(|&i| state.dist[i]).sum();
        let new: f64 = d.iter().sum();
        Ok((new < old).then_some((cand, d)))
    };
    let updates: Vec<Option<(S::Centroid, Vec<f64>)>> = if space.parallel_centering() {
        (0..k)
            .into_par_iter()
            .map(propose)
            .collect::<Result<_, _>>()?
    } else {
        (0..k).map(propose).collect::<Result<_, _>>()?
    };
    for (c, up) in updates.into_iter().enumerate() {
        if let Some((cand, d)) = up {
            state.centroids[c] = cand;
            for (&i, di) in groups[c].iter().zip(d) {
                state.dist[i] = di;
            }
        }
    }
    Ok(())
}

/// State after seeding and one assignment.
pub(crate) fn initialize<S: Space>(
    space: &S,
    centroids: Vec<S::Centroid>,
) -> Result<LloydState<S::Centroid>, ClusterError> {
    let n = space.len();
    let mut state = LloydState {
        centroids,
        assignment: vec![0; n],
        dist: vec![f64::INFINITY; n],
        trace: Vec::new(),
        prior_traces: Vec::new(),
        iterations: 0,
        converged: false,
        reseeds: 0,
    };
    assign(space, &mut state)?;
    state.trace.push(state.loss());
    Ok(state)
}

/// One centering plus assignment; returns the number of changed labels.
pub(crate) fn step<S: Space>(
    space: &S,
    state: &mut LloydState<S::Centroid>,
    seed: u64,
) -> Result<usize, ClusterError> {
    center_all(
        space,
        state,
        derive_seed(seed, "iteration", state.iterations as u64),
    )?;
    state.trace.push(state.loss());
    let changed = assign(space, state)?;
    state.trace.push(state.loss());
    state.iterations += 1;
    Ok(changed)
}

pub(crate) fn run<S: Space>(
    space: &S,
    k: usize,
    params: &LloydParams,
) -> Result<LloydState<S::Centroid>, ClusterError> {
    let centroids = seed_plus_plus(space, k, derive_seed(params.seed, "init", 0))?;
    let mut state = initialize(space, centroids)?;
    while state.iterations < params.max_outer_iter {
        let changed = step(space, &mut state, params.seed)?;
        if changed <= params.stable_threshold {
            state.converged = true;
            break;
        }
    }
    compact(&mut state);
    Ok(state)
}

/// Drops clusters without members, keeping the order of the rest.
pub(crate) fn compact<C>(state: &mut LloydState<C>) {
    let k = state.centroids.len();
    let mut used = vec![false; k];
    for &z in &state.assignment {
        used[z] = true;
    }
    if used.iter().all(|&u| u) {
        return;
    }
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for c in 0..k {
        if used[c] {
            remap[c] = next;
            next += 1;
        }
    }
    let old = std::mem::take(&mut state.centroids);
    state.centroids = old
        .into_iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(c, _)| c)
        .collect();
    for z in state.assignment.iter_mut() {
        *z = remap[*z];
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Outcome counters of [`postprocess`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PostprocessReport {
    pub merged: usize,
    pub removed: usize,
}

/// Merge clusters whose centroids are closer than `eps_m` (transitively),
/// remove clusters with at most `eps_r` members, then fine-tune once.
pub(crate) fn postprocess<S: Space>(
    space: &S,
    state: &mut LloydState<S::Centroid>,
    cfg: &PostprocessConfig,
    seed: u64,
) -> Result<PostprocessReport, ClusterError> {
    compact(state);
    let k = state.centroids.len();
    let mut pair = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let d = space.centroid_distance(&state.centroids[a], &state.centroids[b])?;
            pair[a][b] = d;
            pair[b][a] = d;
        }
    }
    let eps_m = match cfg.merge_eps {
        MergeEps::Value(v) => v,
        MergeEps::Auto => {
            let all: Vec<f64> = (0..k)
                .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
                .map(|(a, b)| pair[a][b])
                .collect();
            0.01 * median(all)
        }
    };
    let mut parent: Vec<usize> = (0..k).collect();
    for a in 0..k {
        for b in a + 1..k {
            if pair[a][b] < eps_m {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi] = lo;
                }
            }
        }
    }
    let roots: Vec<usize> = (0..k).filter(|&c| find(&mut parent, c) == c).collect();
    let mut report = PostprocessReport {
        merged: k - roots.len(),
        removed: 0,
    };

    if report.merged > 0 {
        let mut new_centroids = Vec::with_capacity(roots.len());
        let mut relabel = vec![0usize; k];
        for (g, &root) in roots.iter().enumerate() {
            let group: Vec<usize> = (0..k).filter(|&c| find(&mut parent, c) == root).collect();
            for &c in &group {
                relabel[c] = g;
            }
            let members: Vec<usize> = (0..state.assignment.len())
                .filter(|&i| group.contains(&state.assignment[i]))
                .collect();
            // Best of the group's centroids and a re-centered candidate.
            let mut options: Vec<S::Centroid> =
                group.iter().map(|&c| state.centroids[c].clone()).collect();
            if !members.is_empty() {
                options.push(space.center(
                    &members,
                    &state.centroids[root],
                    derive_seed(seed, "merge", g as u64),
                )?);
            }
            let mut best: Option<(f64, usize)> = None;
            for (o, c) in options.iter().enumerate() {
                let cost: f64 = members
                    .iter()
                    .map(|&i| space.distance(i, c))
                    .sum::<Result<f64, _>>()?;
                if best.is_none_or(|b| cost < b.0) {
                    best = Some((cost, o));
                }
            }
            new_centroids.push(options.swap_remove(best.map_or(0, |b| b.1)));
        }
        state.centroids = new_centroids;
        for z in state.assignment.iter_mut() {
            *z = relabel[*z];
        }
        for i in 0..state.assignment.len() {
            state.dist[i] = space.distance(i, &state.centroids[state.assignment[i]])?;
        }
    }

    let k = state.centroids.len();
    let mut sizes = vec![0usize; k];
    for &z in &state.assignment {
        sizes[z] += 1;
    }
    let survivors: Vec<usize> = (0..k).filter(|&c| sizes[c] > cfg.remove_eps).collect();
    if survivors.is_empty() {
        return Err(ClusterError::TooAggressive);
    }
    if survivors.len() < k {
        report.removed = k - survivors.len();
        state.centroids = survivors
            .iter()
            .map(|&c| state.centroids[c].clone())
            .collect();
        let mut relabel = vec![usize::MAX; k];
        for (n, &c) in survivors.iter().enumerate() {
            relabel[c] = n;
        }
        for i in 0..state.assignment.len() {
            let z = relabel[state.assignment[i]];
            if z != usize::MAX {
                state.assignment[i] = z;
                continue;
            }
            let row: Vec<f64> = state
                .centroids
                .iter()
                .map(|c| space.distance(i, c))
                .collect::<Result<_, _>>()?;
            let z = argmin(&row);
            state.assignment[i] = z;
            state.dist[i] = row[z];
        }
    }

    if report.merged + report.removed > 0 {
        let old = std::mem::take(&mut state.trace);
        state.prior_traces.push(old);
        state.trace.push(state.loss());
        step(space, state, derive_seed(seed, "fine-tune", 0))?;
        compact(state);
    }
    Ok(report)
}
