//! External clustering agreement indices: NMI, AMI and ARI.
//!
//! Entropies use natural logarithms. AMI uses the exact hypergeometric
//! expected mutual information and max-entropy normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("partitions cover different item counts ({a} vs {b})")]
    ItemCountMismatch { a: usize, b: usize },
    #[error("partitions must contain at least one item")]
    Empty,
}

/// Cluster-size cross tabulation; rows and columns follow sorted label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl Contingency {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

pub fn contingency<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<Contingency, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ItemCountMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let rows: BTreeMap<&A, usize> = label_index(a);
    let cols: BTreeMap<&B, usize> = label_index(b);
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (x, y) in a.iter().zip(b) {
        counts[rows[x]][cols[y]] += 1;
    }
    Ok(Contingency {
        counts,
        n: a.len() as u64,
    })
}

fn label_index<L: Ord>(labels: &[L]) -> BTreeMap<&L, usize> {
    let mut m: BTreeMap<&L, usize> = labels.iter().map(|l| (l, 0)).collect();
    for (k, v) in m.values_mut().enumerate() {
        *v = k;
    }
    m
}

fn entropy(sizes: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let (ra, cb) = (c.row_sums(), c.col_sums());
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (ra[i] as f64 * cb[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under the hypergeometric permutation model.
fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    let nf = n as f64;
    let lg = |k: u64| ln_gamma(k as f64 + 1.0);
    let lg_n = lg(n);
    let mut emi = 0.0;
    for &ai in &c.row_sums() {
        for &bj in &c.col_sums() {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            let fixed = lg(ai) + lg(bj) + lg(n - ai) + lg(n - bj) - lg_n;
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (ai as f64 * bj as f64)).ln();
                let lp = fixed - lg(nij) - lg(ai - nij) - lg(bj - nij) - lg(n + nij - ai - bj);
                emi += term * lp.exp();
            }
        }
    }
    emi
}

fn single_cluster(c: &Contingency) -> (bool, bool) {
    (
        c.counts.len() == 1,
        c.counts.first().map_or(0, Vec::len) == 1,
    )
}

/// True when the contingency table is a permutation of a diagonal.
fn identical_up_to_relabeling(c: &Contingency) -> bool {
    let cols = c.counts[0].len();
    c.counts.len() == cols
        && c.counts
            .iter()
            .all(|r| r.iter().filter(|&&v| v > 0).count() == 1)
        && (0..cols).all(|j| c.counts.iter().filter(|r| r[j] > 0).count() == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NmiNormalization {
    /// `sqrt(H(a) H(b))`.
    #[default]
    Geometric,
    Arithmetic,
    Max,
    Min,
}

fn normalizer(ha: f64, hb: f64, norm: NmiNormalization) -> f64 {
    match norm {
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Max => ha.max(hb),
        NmiNormalization::Min => ha.min(hb),
    }
}

pub fn nmi_with<A: Ord, B: Ord>(
    a: &[A],
    b: &[B],
    norm: NmiNormalization,
) -> Result<f64, MetricsError> {
    let c = contingency(a, b)?;
    match single_cluster(&c) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (ha, hb) = (entropy(&c.row_sums(), c.n), entropy(&c.col_sums(), c.n));
    let d = normalizer(ha, hb, norm);
    Ok((mutual_information(&c) / d).clamp(0.0, 1.0))
}

/// Normalized mutual information, geometric-mean normalization.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricsError> {
    nmi_with(a, b, NmiNormalization::Geometric)
}

/// Adjusted mutual information, `(I - E[I]) / (max(H(a), H(b)) - E[I])`.
pub fn ami<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricsError> {
    let c = contingency(a, b)?;
    match single_cluster(&c) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (ha, hb) = (entropy(&c.row_sums(), c.n), entropy(&c.col_sums(), c.n));
    let mi = mutual_information(&c);
    let emi = expected_mutual_information(&c);
    if identical_up_to_relabeling(&c) {
        return Ok(1.0);
    }
    let denom = ha.max(hb) - emi;
    if denom.abs() <= 1e-15 * ha.max(hb).max(1.0) {
        return Ok(0.0);
    }
    Ok(((mi - emi) / denom).min(1.0))
}

fn comb2(k: u64) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricsError> {
    let c = contingency(a, b)?;
    let index: f64 = c.counts.iter().flatten().map(|&v| comb2(v)).sum();
    let sa: f64 = c.row_sums().iter().map(|&v| comb2(v)).sum();
    let sb: f64 = c.col_sums().iter().map(|&v| comb2(v)).sum();
    let total = comb2(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both partitions trivial (one cluster, or all singletons).
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
