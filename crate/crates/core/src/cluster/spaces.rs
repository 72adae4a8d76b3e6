//! Raw series under the Soft-DTW divergence, and lifted measures under
//! `W_sdtw`.

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lloyd::Space;
use super::ClusterError;
use crate::ot::{
    free_support_barycenter, w_sdtw, AtomRegistry, BarycenterConfig, DiscreteMeasure, OtConfig,
};
use crate::sdtw::{
    divergence_with_self_terms, sdtw_mean, soft_dtw_series, OptimizerConfig, SdtwConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SeriesCentroid {
    pub values: Vec<f64>,
    pub self_term: f64,
}

impl SeriesCentroid {
    pub fn new(values: Vec<f64>, cfg: &SdtwConfig) -> Self {
        let self_term = soft_dtw_series(&values, &values, cfg);
        Self { values, self_term }
    }
}

/// Median member length, rounded to the nearest length some member has
/// (the shorter one on ties).
pub(crate) fn target_length(lengths: &[usize]) -> usize {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m] as f64
    } else {
        0.5 * (sorted[m - 1] + sorted[m]) as f64
    };
    let mut best = sorted[0];
    for &l in &sorted {
        if (l as f64 - median).abs() < (best as f64 - median).abs() {
            best = l;
        }
    }
    best
}

/// Member of the target length with the smallest total divergence to a
/// random subsample of members; both candidate and reference sets are
/// capped at `cap`.
pub(crate) fn medoid_init(
    series: &[&[f64]],
    self_terms: &[f64],
    members: &[usize],
    target_len: usize,
    cap: usize,
    seed: u64,
    cfg: &SdtwConfig,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cands: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| series[i].len() == target_len)
        .collect();
    let pick = |pool: &[usize], rng: &mut ChaCha8Rng| -> Vec<usize> {
        if pool.len() <= cap {
            pool.to_vec()
        } else {
            let mut idx: Vec<usize> = sample(rng, pool.len(), cap)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            idx.sort_unstable();
            idx
        }
    };
    let cands = pick(&cands, &mut rng);
    let refs = pick(members, &mut rng);
    let mut best = (f64::INFINITY, cands[0]);
    for &c in &cands {
        let score: f64 = refs
            .iter()
            .map(|&r| {
                divergence_with_self_terms(series[c], self_terms[c], series[r], self_terms[r], cfg)
            })
            .sum();
        if score < best.0 {
            best = (score, c);
        }
    }
    best.1
}

pub(crate) struct SeriesSpace<'a> {
    pub series: Vec<&'a [f64]>,
    pub self_terms: Vec<f64>,
    pub sdtw: SdtwConfig,
    pub mean: OptimizerConfig,
    pub medoid_cap: usize,
}

impl<'a> SeriesSpace<'a> {
    pub fn new(
        series: Vec<&'a [f64]>,
        sdtw: SdtwConfig,
        mean: OptimizerConfig,
        medoid_cap: usize,
    ) -> Self {
        use rayon::prelude::*;
        let self_terms = series
            .par_iter()
            .map(|s| soft_dtw_series(s, s, &sdtw))
            .collect();
        Self {
            series,
            self_terms,
            sdtw,
            mean,
            medoid_cap,
        }
    }

    /// Soft-DTW mean of `members`, starting from `warm` when its length
    /// matches the target length and from a medoid otherwise.
    pub fn mean_of(
        &self,
        members: &[usize],
        warm: Option<&[f64]>,
        seed: u64,
    ) -> Result<Vec<f64>, ClusterError> {
        let lengths: Vec<usize> = members.iter().map(|&i| self.series[i].len()).collect();
        let len = target_length(&lengths);
        let init: Vec<f64> = match warm {
            Some(w) if w.len() == len => w.to_vec(),
            _ => {
                let m = medoid_init(
                    &self.series,
                    &self.self_terms,
                    members,
                    len,
                    self.medoid_cap,
                    seed,
                    &self.sdtw,
                );
                self.series[m].to_vec()
            }
        };
        let refs: Vec<&[f64]> = members.iter().map(|&i| self.series[i]).collect();
        Ok(sdtw_mean(&refs, &init, &self.sdtw, &self.mean)?.mean)
    }
}

impl Space for SeriesSpace<'_> {
    type Centroid = SeriesCentroid;

    fn len(&self) -> usize {
        self.series.len()
    }

    fn distance(&self, item: usize, c: &SeriesCentroid) -> Result<f64, ClusterError> {
        Ok(divergence_with_self_terms(
            self.series[item],
            self.self_terms[item],
            &c.values,
            c.self_term,
            &self.sdtw,
        ))
    }

    fn item_centroid(&self, item: usize) -> Result<SeriesCentroid, ClusterError> {
        Ok(SeriesCentroid {
            values: self.series[item].to_vec(),
            self_term: self.self_terms[item],
        })
    }

    fn center(
        &self,
        members: &[usize],
        current: &SeriesCentroid,
        seed: u64,
    ) -> Result<SeriesCentroid, ClusterError> {
        let mean = self.mean_of(members, Some(&current.values), seed)?;
        Ok(SeriesCentroid::new(mean, &self.sdtw))
    }

    fn centroid_distance(
        &self,
        a: &SeriesCentroid,
        b: &SeriesCentroid,
    ) -> Result<f64, ClusterError> {
        Ok(divergence_with_self_terms(
            &a.values,
            a.self_term,
            &b.values,
            b.self_term,
            &self.sdtw,
        ))
    }

    fn parallel_centering(&self) -> bool {
        true
    }
}

pub(crate) struct MeasureSpace<'a> {
    pub measures: Vec<DiscreteMeasure>,
    pub registry: &'a AtomRegistry,
    pub sdtw: SdtwConfig,
    pub ot: OtConfig,
    pub barycenter: BarycenterConfig,
    pub support_size: usize,
}

impl Space for MeasureSpace<'_> {
    type Centroid = DiscreteMeasure;

    fn len(&self) -> usize {
        self.measures.len()
    }

    fn distance(&self, item: usize, c: &DiscreteMeasure) -> Result<f64, ClusterError> {
        Ok(w_sdtw(
            &self.measures[item],
            c,
            self.registry,
            &self.sdtw,
            &self.ot,
        )?)
    }

    fn item_centroid(&self, item: usize) -> Result<DiscreteMeasure, ClusterError> {
        Ok(self.measures[item].clone())
    }

    fn center(
        &self,
        members: &[usize],
        current: &DiscreteMeasure,
        _seed: u64,
    ) -> Result<DiscreteMeasure, ClusterError> {
        let inputs: Vec<&DiscreteMeasure> = members.iter().map(|&i| &self.measures[i]).collect();
        let lambda = vec![1.0 / members.len() as f64; members.len()];
        let r = free_support_barycenter(
            &inputs,
            &lambda,
            self.support_size,
            Some(current),
            self.registry,
            &self.sdtw,
            &self.ot,
            &self.barycenter,
        )?;
        Ok(r.measure)
    }

    fn centroid_distance(
        &self,
        a: &DiscreteMeasure,
        b: &DiscreteMeasure,
    ) -> Result<f64, ClusterError> {
        Ok(w_sdtw(a, b, self.registry, &self.sdtw, &self.ot)?)
    }

    fn parallel_centering(&self) -> bool {
        false
    }
}
