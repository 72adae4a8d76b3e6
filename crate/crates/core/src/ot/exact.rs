//! Transportation simplex on the bipartite flow polytope.
//!
//! Basis trees are kept explicitly; entering cells are chosen by most
//! negative reduced cost, switching to Bland's rule after a run of
//! degenerate pivots so the method cannot cycle.

use std::collections::VecDeque;

pub(crate) struct ExactSolution {
    pub plan: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

const DEGENERATE_STREAK: usize = 32;

/// Solves `min <pi, C>` over couplings of `a` and `b` (all weights > 0).
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> ExactSolution {
    let (p, q) = (a.len(), b.len());
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1e-300);
    let tol = 1e-13 * scale;

    // North-west corner start; on ties only the row advances, which keeps
    // p + q - 1 basic cells.
    let mut flow = vec![0.0; p * q];
    let mut basic = vec![false; p * q];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(p + q - 1);
    let (mut supply, mut demand) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = supply[i].min(demand[j]);
        flow[i * q + j] = x;
        basic[i * q + j] = true;
        basis.push((i, j));
        supply[i] -= x;
        demand[j] -= x;
        if i + 1 == p && j + 1 == q {
            break;
        }
        if j + 1 == q || (i + 1 < p && supply[i] <= demand[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(basis.len(), p + q - 1);

    let mut u = vec![0.0; p];
    let mut v = vec![0.0; q];
    let mut degenerate_run = 0usize;
    let max_pivots = 50 * (p * q + p + q) + 1000;
    // Node ids: rows 0..p, columns p..p+q.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); p + q];
    for _ in 0..max_pivots {
        for l in adj.iter_mut() {
            l.clear();
        }
        for (k, &(r, c)) in basis.iter().enumerate() {
            adj[r].push(k);
            adj[p + c].push(k);
        }
        potentials(p, &basis, &adj, cost, q, &mut u, &mut v);

        let bland = degenerate_run >= DEGENERATE_STREAK;
        let mut entering = None;
        let mut best = -tol;
        'scan: for r in 0..p {
            for c in 0..q {
                if basic[r * q + c] {
                    continue;
                }
                let rc = cost[r * q + c] - u[r] - v[c];
                if rc < best {
                    entering = Some((r, c));
                    if bland {
                        break 'scan;
                    }
                    best = rc;
                }
            }
        }
        let Some((r, c)) = entering else {
            break;
        };

        // Tree path from row r to column c; alternating signs starting with -.
        let path = tree_path(p, q, &basis, &adj, r, p + c);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let (br, bc) = basis[k];
                let f = flow[br * q + bc];
                if f < theta {
                    theta = f;
                    leave = k;
                }
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            let (br, bc) = basis[k];
            if pos % 2 == 0 {
                flow[br * q + bc] = (flow[br * q + bc] - theta).max(0.0);
            } else {
                flow[br * q + bc] += theta;
            }
        }
        flow[r * q + c] = theta;
        let (lr, lc) = basis[leave];
        flow[lr * q + lc] = 0.0;
        basic[lr * q + lc] = false;
        basic[r * q + c] = true;
        basis[leave] = (r, c);
        if theta == 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
    }
    for l in adj.iter_mut() {
        l.clear();
    }
    for (k, &(r, c)) in basis.iter().enumerate() {
        adj[r].push(k);
        adj[p + c].push(k);
    }
    potentials(p, &basis, &adj, cost, q, &mut u, &mut v);
    ExactSolution { plan: flow, u, v }
}

fn potentials(
    p: usize,
    basis: &[(usize, usize)],
    adj: &[Vec<usize>],
    cost: &[f64],
    q: usize,
    u: &mut [f64],
    v: &mut [f64],
) {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen[0] = true;
    queue.push_back(0usize);
    while let Some(node) = queue.pop_front() {
        for &k in &adj[node] {
            let (r, c) = basis[k];
            let (other, is_col) = if node < p { (p + c, true) } else { (r, false) };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            if is_col {
                v[c] = cost[r * q + c] - u[r];
            } else {
                u[r] = cost[r * q + c] - v[c];
            }
            queue.push_back(other);
        }
    }
}

/// Basis-edge indices along the tree path from `from` to `to`.
fn tree_path(
    p: usize,
    _q: usize,
    basis: &[(usize, usize)],
    adj: &[Vec<usize>],
    from: usize,
    to: usize,
) -> Vec<usize> {
    let mut via: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &k in &adj[node] {
            let (r, c) = basis[k];
            let other = if node < p { p + c } else { r };
            if !seen[other] {
                seen[other] = true;
                via[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = to;
    while cur != from {
        let (prev, k) = via[cur].expect("basis is a spanning tree");
        path.push(k);
        cur = prev;
    }
    path.reverse();
    path
}
