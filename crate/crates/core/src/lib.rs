//! Clustering of hierarchical time series under the Soft-DTW divergence,
//! with aggregated levels lifted to discrete measures over the cluster
//! means below them and compared by optimal transport.
//!
//! The pipeline runs bottom-up: [`cluster::cluster_hts`] clusters the
//! leaves, lifts every aggregated node to a measure over its children's
//! cluster means and clusters those measures around free-support
//! barycenters. [`forecast`] then fits one forecaster per cluster mean and
//! blends them back to every node with fuzzy weights.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod cluster;
pub mod forecast;
pub mod hts;
pub mod metrics;
pub mod ot;
pub mod sdtw;
pub mod seed;
pub mod synth;
