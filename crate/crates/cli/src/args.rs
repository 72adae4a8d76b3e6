//! Command-line flags and the optional YAML/JSON config file.
//!
//! Every flag is optional at parse time so that the config file can fill
//! it in; resolution applies flag > config > default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "hts-cluster",
    version,
    about = "Hierarchical time series clustering and forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ARMA benchmark with ground-truth labels.
    Simulate(SimulateArgs),
    /// Cluster every level of a dataset.
    Cluster(ClusterArgs),
    /// Score clusterings against labels (optionally over repeated seeds).
    Evaluate(EvaluateArgs),
    /// Forecast through cluster means and report MASE per level.
    Forecast(ForecastArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory for all output files.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// YAML or JSON file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Multilevel,
    TwoLevelAlt,
    Levelwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TwoLevel,
    Multilevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The selected `--mode` pipeline.
    Hts,
    /// Independent Soft-DTW K-means on every level.
    SoftDtw,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterOpts {
    /// Soft-DTW smoothing parameter.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Sakoe-Chiba band half-width.
    #[arg(long)]
    pub band: Option<usize>,
    /// Entropic regularization; 0 selects the exact OT solver.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `l1=4,l2=8` or `4,8`.
    #[arg(long)]
    pub k_per_level: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// `auto`, `off` or a non-negative number.
    #[arg(long)]
    pub merge_eps: Option<String>,
    #[arg(long)]
    pub remove_eps: Option<usize>,
    #[arg(long)]
    pub max_outer_iter: Option<usize>,
    /// Iteration cap of the Soft-DTW mean optimizer.
    #[arg(long)]
    pub mean_max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Comma-separated cluster offsets.
    #[arg(long)]
    pub offsets: Option<String>,
    #[arg(long)]
    pub instances_per_cluster: Option<usize>,
    /// Inclusive length range `lo:hi`.
    #[arg(long)]
    pub length_range: Option<String>,
    /// Comma-separated children per node below the root.
    #[arg(long)]
    pub branching: Option<String>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset (`.json` or long-format `.csv`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Labels sidecar; sets the default k to twice the true cluster count.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub cluster: ClusterOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Score an existing model instead of clustering.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of derived seeds to average over.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[command(flatten)]
    pub cluster: ClusterOpts,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Model fitted on the forecast-origin history of `--input`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Steps to forecast; default is the last 20% of every instance.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Fuzzy membership exponent m > 1.
    #[arg(long)]
    pub fuzziness: Option<f64>,
    /// Also run one forecaster per series for comparison.
    #[arg(long, num_args = 0..=1, default_missing_value = "per-series")]
    pub baseline: Option<String>,
    #[command(flatten)]
    pub cluster: ClusterOpts,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KValue {
    List(Vec<usize>),
    Map(BTreeMap<String, usize>),
    Text(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub preset: Option<Preset>,
    pub offsets: Option<Vec<f64>>,
    pub instances_per_cluster: Option<usize>,
    pub length_range: Option<(usize, usize)>,
    pub branching: Option<Vec<usize>>,
    pub noise_std: Option<f64>,
}

/// Contents of `--config`; all keys optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub band: Option<usize>,
    pub epsilon: Option<f64>,
    pub k_per_level: Option<KValue>,
    pub mode: Option<Mode>,
    pub merge_eps: Option<EpsValue>,
    pub remove_eps: Option<usize>,
    pub max_outer_iter: Option<usize>,
    pub mean_max_iter: Option<usize>,
    pub fuzziness: Option<f64>,
    pub horizon: Option<usize>,
    pub repeats: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub baseline: Option<String>,
    #[serde(default)]
    pub simulate: SimulateFile,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        // YAML is a superset of JSON, so one parser covers both.
        serde_yaml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Parses `l1=4,l2=8` (any order) or `4,8`.
pub fn parse_k_text(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("invalid --k-per-level '{text}'"));
    let parts: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        return Err(bad());
    }
    if parts.iter().all(|p| p.contains('=')) {
        let mut map = BTreeMap::new();
        for p in parts {
            let (l, k) = p.split_once('=').ok_or_else(bad)?;
            map.insert(
                l.trim().to_string(),
                k.trim().parse::<usize>().map_err(|_| bad())?,
            );
        }
        return k_from_map(&map);
    }
    parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| bad()))
        .collect()
}

fn k_from_map(map: &BTreeMap<String, usize>) -> Result<Vec<usize>, CliError> {
    let mut by_level = BTreeMap::new();
    for (key, &k) in map {
        let level: usize = key
            .trim_start_matches(['l', 'L'])
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid level key '{key}' in k-per-level")))?;
        by_level.insert(level, k);
    }
    let levels: Vec<usize> = by_level.keys().copied().collect();
    if levels != (1..=levels.len()).collect::<Vec<_>>() {
        return Err(CliError::Usage(
            "k-per-level must cover levels 1..L without gaps".into(),
        ));
    }
    Ok(by_level.into_values().collect())
}

pub fn parse_k_value(v: &KValue) -> Result<Vec<usize>, CliError> {
    match v {
        KValue::List(l) => Ok(l.clone()),
        KValue::Map(m) => k_from_map(m),
        KValue::Text(t) => parse_k_text(t),
    }
}

pub fn parse_list<T: std::str::FromStr>(text: &str, name: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| CliError::Usage(format!("invalid value '{p}' in --{name}")))
        })
        .collect()
}

pub fn parse_range(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("invalid --length-range '{text}', expected lo:hi"));
    let (a, b) = text.split_once([':', '-', ',']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_formats() {
        assert_eq!(parse_k_text("l1=4,l2=8").unwrap(), vec![4, 8]);
        assert_eq!(parse_k_text("l2=8, l1=4").unwrap(), vec![4, 8]);
        assert_eq!(parse_k_text("3,6,9").unwrap(), vec![3, 6, 9]);
        assert!(parse_k_text("l1=4,l3=2").is_err());
        assert!(parse_k_text("x").is_err());
        let m: KValue = serde_yaml::from_str("{l1: 2, l2: 5}").unwrap();
        assert_eq!(parse_k_value(&m).unwrap(), vec![2, 5]);
        let l: KValue = serde_yaml::from_str("[2, 5]").unwrap();
        assert_eq!(parse_k_value(&l).unwrap(), vec![2, 5]);
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_range("80:300").unwrap(), (80, 300));
        assert!(parse_range("80").is_err());
        assert_eq!(
            parse_list::<f64>("0, 8,16", "offsets").unwrap(),
            vec![0.0, 8.0, 16.0]
        );
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_yaml::from_str::<FileConfig>("seeed: 3").is_err());
        let c: FileConfig = serde_yaml::from_str("{\"seed\": 3, \"merge_eps\": 0.5}").unwrap();
        assert_eq!(c.seed, Some(3));
        assert!(matches!(c.merge_eps, Some(EpsValue::Number(v)) if v == 0.5));
    }
}
