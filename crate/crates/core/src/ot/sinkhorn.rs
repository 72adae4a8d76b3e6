//! Log-domain Sinkhorn iterations with epsilon scaling.

pub(crate) struct SinkhornSolution {
    pub plan: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub violation: f64,
    pub converged: bool,
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// L1 row-marginal violation of the plan implied by `(f, g)` at `eps`
/// (columns are exact right after a `g` update).
fn row_violation(a: &[f64], cost: &[f64], f: &[f64], g: &[f64], eps: f64) -> f64 {
    let q = g.len();
    a.iter()
        .enumerate()
        .map(|(i, &ai)| {
            let row: f64 = (0..q)
                .map(|j| ((f[i] + g[j] - cost[i * q + j]) / eps).exp())
                .sum();
            (row - ai).abs()
        })
        .sum()
}

pub(crate) fn solve(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> SinkhornSolution {
    let (p, q) = (a.len(), b.len());
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut f = vec![0.0; p];
    let mut g = vec![0.0; q];
    let mut stage_eps = scale.max(eps);
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    loop {
        let last = stage_eps <= eps;
        let stage_tol = if last { tol } else { tol.max(1e-6) };
        while iterations < max_iter {
            iterations += 1;
            for i in 0..p {
                let row = (0..q).map(|j| (g[j] - cost[i * q + j]) / stage_eps);
                f[i] = stage_eps * (log_a[i] - lse(row));
            }
            for j in 0..q {
                let col = (0..p).map(|i| (f[i] - cost[i * q + j]) / stage_eps);
                g[j] = stage_eps * (log_b[j] - lse(col));
            }
            if iterations % 10 == 0 || last {
                violation = row_violation(a, cost, &f, &g, stage_eps);
                if violation <= stage_tol {
                    break;
                }
            }
        }
        if last || iterations >= max_iter {
            break;
        }
        stage_eps = (stage_eps * 0.5).max(eps);
    }
    let plan: Vec<f64> = (0..p * q)
        .map(|k| ((f[k / q] + g[k % q] - cost[k]) / eps).exp())
        .collect();
    let converged = violation <= tol;
    SinkhornSolution {
        plan,
        f,
        g,
        violation,
        converged,
    }
}
