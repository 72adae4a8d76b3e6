//! Synthetic ARMA(2,2) hierarchical benchmark.
//!
//! Bottom series follow
//! `x_t = 0.75 x_{t-1} - 0.25 x_{t-2} + 0.65 e_{t-1} + 0.35 e_{t-2} + e_t + c`
//! with a per-cluster offset `c`; aggregated series are exact sums.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hts::{Hierarchy, HtsDataset, HtsError, HtsInstance};
use crate::seed::derive_seed;

/// Steps simulated and discarded before recording.
pub const BURN_IN: usize = 50;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Hts(#[from] HtsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// One offset per true cluster.
    pub offsets: Vec<f64>,
    pub instances_per_cluster: usize,
    /// Inclusive range of per-instance series lengths.
    pub length_range: (usize, usize),
    /// Children per node for each level below the root.
    pub branching: Vec<usize>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Four clusters of 30 instances, one root over four children.
    pub fn two_level() -> Self {
        Self {
            offsets: vec![0.0, 8.0, 16.0, 24.0],
            instances_per_cluster: 30,
            length_range: (80, 300),
            branching: vec![4],
            noise_std: 1.0,
            seed: 0,
        }
    }

    /// Four levels with branching 1 -> 3 -> 3 -> 2.
    pub fn multilevel() -> Self {
        Self {
            branching: vec![3, 3, 2],
            ..Self::two_level()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.offsets.is_empty() {
            return bad("at least one offset is required".into());
        }
        if self.offsets.iter().any(|c| !c.is_finite()) {
            return bad("offsets must be finite".into());
        }
        let mut sorted = self.offsets.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return bad("offsets must be distinct".into());
        }
        if self.instances_per_cluster == 0 {
            return bad("instances_per_cluster must be >= 1".into());
        }
        let (lo, hi) = self.length_range;
        if lo < 3 || hi < lo {
            return bad(format!(
                "length range [{lo}, {hi}] must satisfy 3 <= lo <= hi"
            ));
        }
        if self.branching.contains(&0) {
            return bad("branching factors must be >= 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise std must be >= 0".into());
        }
        Ok(())
    }
}

fn simulate_with<R: Rng>(t: usize, c: f64, noise_std: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, noise_std.max(0.0)).expect("std is finite and >= 0");
    let (mut x1, mut x2, mut e1, mut e2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(t);
    for step in 0..BURN_IN + t {
        let e = if noise_std > 0.0 {
            normal.sample(rng)
        } else {
            0.0
        };
        let x = 0.75 * x1 - 0.25 * x2 + 0.65 * e1 + 0.35 * e2 + e + c;
        x2 = x1;
        x1 = x;
        e2 = e1;
        e1 = e;
        if step >= BURN_IN {
            out.push(x);
        }
    }
    out
}

/// One ARMA(2,2) path of length `t` after the burn-in.
pub fn simulate_arma(t: usize, c: f64, noise_std: f64, seed: u64) -> Vec<f64> {
    simulate_with(t, c, noise_std, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Ground-truth labels; `per_level[l - 1]` follows `level_series(l)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelLabels {
    pub per_level: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub dataset: HtsDataset,
    pub labels: LevelLabels,
    /// True cluster of each instance.
    pub instance_labels: Vec<usize>,
}

pub fn generate_benchmark(cfg: &SynthConfig) -> Result<Benchmark, SynthError> {
    cfg.validate()?;
    let hierarchy = Hierarchy::balanced(&cfg.branching)?;
    let total = cfg.offsets.len() * cfg.instances_per_cluster;
    let instance_labels: Vec<usize> = (0..total).map(|i| i / cfg.instances_per_cluster).collect();
    let instances = instance_labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "simulate", i as u64));
            let (lo, hi) = cfg.length_range;
            let len = rng.gen_range(lo..=hi);
            let c = cfg.offsets[label];
            let bottom = (0..hierarchy.bottom_count())
                .map(|_| simulate_with(len, c, cfg.noise_std, &mut rng))
                .collect();
            HtsInstance::from_bottom(format!("h{i}"), hierarchy.clone(), bottom)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = HtsDataset::new(instances)?;
    let per_level = (1..=dataset.levels())
        .map(|l| {
            dataset.level_series(l).map(|members| {
                members
                    .iter()
                    .map(|m| instance_labels[m.instance])
                    .collect()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Benchmark {
        dataset,
        labels: LevelLabels { per_level },
        instance_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_converges_to_fixed_point() {
        let x = simulate_arma(200, 5.0, 0.0, 1);
        assert!((x[199] - 10.0).abs() < 1e-9);
        assert!(simulate_arma(20, 0.0, 0.0, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(
            simulate_arma(50, 1.0, 1.0, 9),
            simulate_arma(50, 1.0, 1.0, 9)
        );
        assert_ne!(
            simulate_arma(50, 1.0, 1.0, 9),
            simulate_arma(50, 1.0, 1.0, 10)
        );
    }

    #[test]
    fn two_level_default_shape() {
        let cfg = SynthConfig {
            length_range: (10, 20),
            ..SynthConfig::two_level()
        };
        let b = generate_benchmark(&cfg).unwrap();
        assert_eq!(b.dataset.len(), 120);
        assert_eq!(b.dataset.level_count(2), 480);
        assert_eq!(b.labels.per_level[1].len(), 480);
        for inst in b.dataset.instances() {
            assert!(inst.is_coherent(0.0));
            let len = inst.length();
            assert!((10..=20).contains(&len));
            for t in 0..len {
                let s: f64 = (1..5).map(|c| inst.series(c).values()[t]).sum();
                assert_eq!(s, inst.series(0).values()[t]);
            }
        }
    }

    #[test]
    fn zero_noise_clusters_are_identical() {
        let cfg = SynthConfig {
            length_range: (12, 12),
            noise_std: 0.0,
            instances_per_cluster: 3,
            ..SynthConfig::two_level()
        };
        let b = generate_benchmark(&cfg).unwrap();
        let members = b.dataset.level_series(2).unwrap();
        for (m, &l) in members.iter().zip(&b.labels.per_level[1]) {
            let expected = simulate_arma(12, cfg.offsets[l], 0.0, 0);
            assert_eq!(m.series.values(), expected.as_slice());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let base = SynthConfig::two_level();
        assert!(SynthConfig {
            offsets: vec![1.0, 1.0],
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            length_range: (2, 5),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            branching: vec![0],
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            noise_std: -1.0,
            ..base
        }
        .validate()
        .is_err());
    }
}
