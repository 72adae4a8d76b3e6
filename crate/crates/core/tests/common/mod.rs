//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

/// Every monotone alignment path from (0,0) to (t1-1,t2-1), as the list of
/// visited cells.
pub fn alignment_paths(t1: usize, t2: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        i: usize,
        j: usize,
        t1: usize,
        t2: usize,
        path: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        path.push((i, j));
        if i + 1 == t1 && j + 1 == t2 {
            out.push(path.clone());
        } else {
            if i + 1 < t1 {
                walk(i + 1, j, t1, t2, path, out);
            }
            if j + 1 < t2 {
                walk(i, j + 1, t1, t2, path, out);
            }
            if i + 1 < t1 && j + 1 < t2 {
                walk(i + 1, j + 1, t1, t2, path, out);
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, t1, t2, &mut Vec::new(), &mut out);
    out
}

fn path_costs(x: &[f64], y: &[f64]) -> Vec<f64> {
    alignment_paths(x.len(), y.len())
        .iter()
        .map(|p| p.iter().map(|&(i, j)| (x[i] - y[j]).powi(2)).sum())
        .collect()
}

/// `-gamma log sum_A exp(-<A,C>/gamma)` by direct enumeration.
pub fn brute_soft_dtw(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let costs = path_costs(x, y);
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = costs.iter().map(|c| (-(c - min) / gamma).exp()).sum();
    min - gamma * s.ln()
}

pub fn brute_hard_dtw(x: &[f64], y: &[f64]) -> f64 {
    path_costs(x, y).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn brute_divergence(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    brute_soft_dtw(x, y, gamma)
        - 0.5 * brute_soft_dtw(x, x, gamma)
        - 0.5 * brute_soft_dtw(y, y, gamma)
}

/// Central finite-difference gradient.
pub fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Exact transport cost by enumerating every basic solution (spanning trees
/// of the bipartite support graph). Intended for k1, k2 <= 4.
pub fn brute_ot(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (k1, k2) = (a.len(), b.len());
    let edges: Vec<(usize, usize)> = (0..k1).flat_map(|i| (0..k2).map(move |j| (i, j))).collect();
    let need = k1 + k2 - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    fn combos(
        start: usize,
        need: usize,
        edges: &[(usize, usize)],
        chosen: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if chosen.len() == need {
            visit(chosen);
            return;
        }
        for e in start..edges.len() {
            if edges.len() - e < need - chosen.len() {
                break;
            }
            chosen.push(e);
            combos(e + 1, need, edges, chosen, visit);
            chosen.pop();
        }
    }
    let mut visit = |subset: &[usize]| {
        // Leaf peeling computes the unique flow on a spanning tree.
        let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut alive: Vec<bool> = vec![true; subset.len()];
        let mut flow = vec![0.0; subset.len()];
        let mut remaining = subset.len();
        while remaining > 0 {
            let mut degree = vec![0usize; k1 + k2];
            for (s, &e) in subset.iter().enumerate() {
                if alive[s] {
                    degree[edges[e].0] += 1;
                    degree[k1 + edges[e].1] += 1;
                }
            }
            let Some(leaf) = (0..k1 + k2).find(|&v| degree[v] == 1) else {
                return; // contains a cycle
            };
            let s = (0..subset.len())
                .find(|&s| {
                    alive[s] && (edges[subset[s]].0 == leaf || k1 + edges[subset[s]].1 == leaf)
                })
                .unwrap();
            let (i, j) = edges[subset[s]];
            let other = if i == leaf { k1 + j } else { i };
            flow[s] = supply[leaf];
            supply[other] -= supply[leaf];
            supply[leaf] = 0.0;
            alive[s] = false;
            remaining -= 1;
        }
        if flow.iter().any(|&f| f < -1e-12) || supply.iter().any(|s| s.abs() > 1e-9) {
            return;
        }
        let total: f64 = subset
            .iter()
            .zip(&flow)
            .map(|(&e, &f)| f * cost[edges[e].0 * k2 + edges[e].1])
            .sum();
        best = best.min(total);
    };
    combos(0, need, &edges, &mut chosen, &mut visit);
    best
}

/// Random point on the simplex with all entries positive.
pub fn random_simplex<R: rand::Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
