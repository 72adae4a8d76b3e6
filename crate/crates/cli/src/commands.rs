//! The four subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hts_cluster::cluster::{
    cluster_hts_timed, cluster_levelwise_timed, two_level_alternating, ClusterConfig, MergeEps,
    MultiLevelClusterModel, PostprocessConfig,
};
use hts_cluster::forecast::{
    forecast_per_series, forecast_with_clusters, history_dataset, mase_per_level, splits, ArDrift,
    ForecastRun,
};
use hts_cluster::hts::dataset_to_json_string;
use hts_cluster::hts::HtsDataset;
use hts_cluster::metrics::{ami, ari, nmi};
use hts_cluster::seed::derive_seed;
use hts_cluster::synth::{generate_benchmark, SynthConfig};
use serde_json::{json, Map, Value};

use crate::args::{
    parse_k_text, parse_k_value, parse_list, parse_range, ClusterArgs, ClusterOpts, Common,
    EpsValue, EvaluateArgs, FileConfig, ForecastArgs, Method, Mode, Preset, SimulateArgs,
};
use crate::artifacts::{
    aligned_labels, check_model_dataset, dataset_hash, labels_payload, read_dataset, read_labels,
    read_model, with_manifest, write_atomic, Manifest,
};
use crate::error::CliError;

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self, CliError> {
        let file = FileConfig::load(common.config.as_deref())?;
        let seed = pick(common.seed, file.seed, 0);
        let output_dir = pick(
            common.output_dir.clone(),
            file.output_dir.clone(),
            PathBuf::from("."),
        );
        Ok(Self {
            file,
            seed,
            output_dir,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn input(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| self.file.input.clone())
            .ok_or_else(|| CliError::Usage("--input is required".into()))
    }
}

pub fn threads(common: &Common) -> Result<Option<usize>, CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    Ok(common.threads.or(file.threads))
}

fn mode_of(opts: &ClusterOpts, file: &FileConfig) -> Mode {
    pick(opts.mode, file.mode, Mode::Multilevel)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Multilevel => "multilevel",
        Mode::TwoLevelAlt => "two-level-alt",
        Mode::Levelwise => "levelwise",
    }
}

fn parse_merge(text: &str) -> Result<Option<MergeEps>, CliError> {
    match text.trim() {
        "auto" => Ok(Some(MergeEps::Auto)),
        "off" | "none" => Ok(None),
        t => {
            let v: f64 = t
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid --merge-eps '{t}'")))?;
            if !(v >= 0.0) {
                return Err(CliError::Usage("--merge-eps must be >= 0".into()));
            }
            Ok(Some(MergeEps::Value(v)))
        }
    }
}

/// k per level: flag, then config, then twice the labeled cluster count.
fn resolve_k(
    opts: &ClusterOpts,
    ctx: &Context,
    ds: &HtsDataset,
    labels: Option<&Path>,
) -> Result<Vec<usize>, CliError> {
    if let Some(t) = &opts.k_per_level {
        return parse_k_text(t);
    }
    if let Some(v) = &ctx.file.k_per_level {
        return parse_k_value(v);
    }
    let Some(path) = labels else {
        return Err(CliError::Usage(
            "--k-per-level is required when no --labels are given".into(),
        ));
    };
    let lab = aligned_labels(ds, &read_labels(path)?)?;
    Ok(lab
        .iter()
        .enumerate()
        .map(|(l, v)| {
            let mut distinct = v.clone();
            distinct.sort_unstable();
            distinct.dedup();
            (2 * distinct.len()).min(ds.level_count(l + 1)).max(1)
        })
        .collect())
}

pub fn cluster_config(
    opts: &ClusterOpts,
    ctx: &Context,
    k: Vec<usize>,
) -> Result<ClusterConfig, CliError> {
    let f = &ctx.file;
    let mut cfg = ClusterConfig {
        seed: ctx.seed,
        ..ClusterConfig::with_k(k)
    };
    cfg.sdtw.gamma = pick(opts.gamma, f.gamma, cfg.sdtw.gamma);
    cfg.sdtw.band = opts.band.or(f.band);
    cfg.ot.epsilon = pick(opts.epsilon, f.epsilon, cfg.ot.epsilon);
    cfg.max_outer_iter = pick(opts.max_outer_iter, f.max_outer_iter, cfg.max_outer_iter);
    if let Some(it) = opts.mean_max_iter.or(f.mean_max_iter) {
        cfg.mean.max_iter = it;
        cfg.barycenter.mean.max_iter = it;
    }
    cfg.fuzziness = pick(None, f.fuzziness, cfg.fuzziness);
    let merge = match (&opts.merge_eps, &f.merge_eps) {
        (Some(t), _) => parse_merge(t)?,
        (None, Some(EpsValue::Text(t))) => parse_merge(t)?,
        (None, Some(EpsValue::Number(v))) => parse_merge(&v.to_string())?,
        (None, None) => Some(MergeEps::Auto),
    };
    let remove = pick(
        opts.remove_eps,
        f.remove_eps,
        PostprocessConfig::default().remove_eps,
    );
    cfg.postprocess = merge.map(|merge_eps| PostprocessConfig {
        merge_eps,
        remove_eps: remove,
    });
    Ok(cfg)
}

fn run_model(
    ds: &HtsDataset,
    mode: Mode,
    cfg: &ClusterConfig,
) -> Result<(MultiLevelClusterModel, Vec<Option<f64>>), CliError> {
    Ok(match mode {
        Mode::Multilevel => {
            let (m, s) = cluster_hts_timed(ds, cfg)?;
            (m, s.into_iter().map(Some).collect())
        }
        Mode::Levelwise => {
            let (m, s) = cluster_levelwise_timed(ds, cfg)?;
            (m, s.into_iter().map(Some).collect())
        }
        Mode::TwoLevelAlt => {
            if cfg.k_per_level.len() != 2 {
                return Err(CliError::Usage(format!(
                    "two-level-alt needs a two-level dataset, got {} levels",
                    ds.levels()
                )));
            }
            let m = two_level_alternating(ds, cfg.k_per_level[0], cfg.k_per_level[1], cfg)?;
            (m, vec![None; 2])
        }
    })
}

fn loss_trace_csv(model: &MultiLevelClusterModel, manifest_sha: &str) -> String {
    let mut out = format!("# manifest_sha256: {manifest_sha}\nlevel,segment,step,loss\n");
    for lm in &model.levels {
        let segments = lm
            .prior_traces
            .iter()
            .chain(std::iter::once(&lm.loss_trace));
        for (seg, trace) in segments.enumerate() {
            for (step, v) in trace.iter().enumerate() {
                writeln!(out, "{},{seg},{step},{v}", lm.level).expect("string write");
            }
        }
    }
    out
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("payloads are objects"),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let ctx = Context::new(&args.common)?;
    let f = &ctx.file.simulate;
    let base = match pick(args.preset, f.preset, Preset::TwoLevel) {
        Preset::TwoLevel => SynthConfig::two_level(),
        Preset::Multilevel => SynthConfig::multilevel(),
    };
    let offsets = match &args.offsets {
        Some(t) => parse_list(t, "offsets")?,
        None => f.offsets.clone().unwrap_or(base.offsets),
    };
    let branching = match &args.branching {
        Some(t) => parse_list(t, "branching")?,
        None => f.branching.clone().unwrap_or(base.branching),
    };
    let length_range = match &args.length_range {
        Some(t) => parse_range(t)?,
        None => f.length_range.unwrap_or(base.length_range),
    };
    let cfg = SynthConfig {
        offsets,
        instances_per_cluster: pick(
            args.instances_per_cluster,
            f.instances_per_cluster,
            base.instances_per_cluster,
        ),
        length_range,
        branching,
        noise_std: pick(args.noise_std, f.noise_std, base.noise_std),
        seed: derive_seed(ctx.seed, "simulate", 0),
    };
    let bench = generate_benchmark(&cfg)?;
    let hash = dataset_hash(&bench.dataset);
    let manifest = Manifest::new("simulate", ctx.seed, hash, json!({ "synth": cfg }));
    let dataset: Value = serde_json::from_str(&dataset_to_json_string(&bench.dataset))?;
    write_atomic(
        &ctx.path("dataset.json"),
        &with_manifest(&manifest, object(dataset)),
    )?;
    let labels = labels_payload(&bench.dataset, &bench.labels.per_level)?;
    write_atomic(&ctx.path("labels.json"), &with_manifest(&manifest, labels))?;
    write_manifest(&ctx, &manifest)?;
    log::info!(
        "simulated {} instances, {} bottom series",
        bench.dataset.len(),
        bench.dataset.level_count(bench.dataset.levels())
    );
    Ok(())
}

fn write_manifest(ctx: &Context, manifest: &Manifest) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    write_atomic(&ctx.path("manifest.json"), &bytes)
}

fn write_model(
    ctx: &Context,
    manifest: &Manifest,
    model: &MultiLevelClusterModel,
) -> Result<(), CliError> {
    let payload = object(json!({ "model": model }));
    write_atomic(&ctx.path("model.json"), &with_manifest(manifest, payload))?;
    write_atomic(
        &ctx.path("loss_trace.csv"),
        loss_trace_csv(model, &manifest.sha256()).as_bytes(),
    )
}

pub fn cluster(args: &ClusterArgs) -> Result<(), CliError> {
    let ctx = Context::new(&args.common)?;
    let ds = read_dataset(&ctx.input(&args.input)?)?;
    let labels = args.labels.clone().or_else(|| ctx.file.labels.clone());
    let k = resolve_k(&args.cluster, &ctx, &ds, labels.as_deref())?;
    let cfg = cluster_config(&args.cluster, &ctx, k)?;
    let mode = mode_of(&args.cluster, &ctx.file);
    let start = Instant::now();
    let (model, _) = run_model(&ds, mode, &cfg)?;
    log::info!("clustered in {:.3}s", start.elapsed().as_secs_f64());
    let manifest = Manifest::new(
        "cluster",
        ctx.seed,
        dataset_hash(&ds),
        json!({ "mode": mode_name(mode), "cluster": cfg }),
    );
    write_model(&ctx, &manifest, &model)?;
    write_manifest(&ctx, &manifest)
}

#[derive(Default)]
struct Samples {
    nmi: Vec<f64>,
    ami: Vec<f64>,
    ari: Vec<f64>,
    seconds: Vec<f64>,
}

fn stats(v: &[f64]) -> Value {
    if v.is_empty() {
        return Value::Null;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    json!({ "mean": mean, "std": std, "values": v })
}

fn fmt_pm(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        v => format!(
            "{:.3} ± {:.3}",
            v["mean"].as_f64().unwrap_or(f64::NAN),
            v["std"].as_f64().unwrap_or(f64::NAN)
        ),
    }
}

fn score(
    model: &MultiLevelClusterModel,
    truth: &[Vec<i64>],
    samples: &mut [Samples],
) -> Result<(), CliError> {
    for (l, s) in samples.iter_mut().enumerate() {
        let pred = &model.levels[l].assignments;
        s.nmi.push(nmi(&truth[l], pred)?);
        s.ami.push(ami(&truth[l], pred)?);
        s.ari.push(ari(&truth[l], pred)?);
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ctx = Context::new(&args.common)?;
    let ds = read_dataset(&ctx.input(&args.input)?)?;
    let labels_path = args
        .labels
        .clone()
        .or_else(|| ctx.file.labels.clone())
        .ok_or_else(|| CliError::Usage("--labels is required".into()))?;
    let truth = aligned_labels(&ds, &read_labels(&labels_path)?)?;
    let depth = ds.levels();
    let mut table = String::from("method\tlevel\tNMI\tAMI\tARI\tseconds\n");
    let mut methods_out = Vec::new();
    let mut seeds = Vec::new();
    let repeats;
    let config_snapshot;
    if let Some(path) = args.model.clone().or_else(|| ctx.file.model.clone()) {
        let mf = read_model(&path)?;
        check_model_dataset(&mf, &ds)?;
        if mf.model.depth() != depth {
            return Err(CliError::Data("model depth differs from dataset".into()));
        }
        let mut samples: Vec<Samples> = (0..depth).map(|_| Samples::default()).collect();
        score(&mf.model, &truth, &mut samples)?;
        methods_out.push(method_json("model", &samples, &[], &mut table));
        repeats = 1;
        seeds.push(mf.manifest.seed);
        config_snapshot = json!({ "model_manifest_sha256": mf.manifest.sha256() });
    } else {
        repeats = pick(args.repeats, ctx.file.repeats, 1).max(1);
        let methods = args
            .methods
            .clone()
            .or_else(|| ctx.file.methods.clone())
            .unwrap_or(vec![Method::Hts, Method::SoftDtw]);
        let labels = args.labels.clone().or_else(|| ctx.file.labels.clone());
        let k = resolve_k(&args.cluster, &ctx, &ds, labels.as_deref())?;
        let base = cluster_config(&args.cluster, &ctx, k)?;
        let mode = mode_of(&args.cluster, &ctx.file);
        seeds = (0..repeats)
            .map(|r| derive_seed(ctx.seed, "repeat", r as u64))
            .collect();
        for method in &methods {
            let m = match method {
                Method::Hts => mode,
                Method::SoftDtw => Mode::Levelwise,
            };
            let name = match method {
                Method::Hts => format!("hts-{}", mode_name(mode)),
                Method::SoftDtw => "soft-dtw".to_string(),
            };
            let mut samples: Vec<Samples> = (0..depth).map(|_| Samples::default()).collect();
            let mut totals = Vec::new();
            for &seed in &seeds {
                let cfg = ClusterConfig {
                    seed,
                    ..base.clone()
                };
                let start = Instant::now();
                let (model, secs) = run_model(&ds, m, &cfg)?;
                totals.push(start.elapsed().as_secs_f64());
                score(&model, &truth, &mut samples)?;
                for (s, t) in samples.iter_mut().zip(secs) {
                    if let Some(t) = t {
                        s.seconds.push(t);
                    }
                }
            }
            methods_out.push(method_json(&name, &samples, &totals, &mut table));
        }
        config_snapshot = json!({ "mode": mode_name(mode), "cluster": base, "methods": methods.iter().map(|m| format!("{m:?}")).collect::<Vec<_>>() });
    }
    let manifest = Manifest::new("evaluate", ctx.seed, dataset_hash(&ds), config_snapshot);
    let payload = object(json!({ "repeats": repeats, "seeds": seeds, "methods": methods_out }));
    write_atomic(
        &ctx.path("metrics.json"),
        &with_manifest(&manifest, payload),
    )?;
    write_manifest(&ctx, &manifest)?;
    print!("{table}");
    Ok(())
}

fn method_json(name: &str, samples: &[Samples], totals: &[f64], table: &mut String) -> Value {
    let levels: Vec<Value> = samples
        .iter()
        .enumerate()
        .map(|(l, s)| {
            let v = json!({
                "level": l + 1,
                "nmi": stats(&s.nmi),
                "ami": stats(&s.ami),
                "ari": stats(&s.ari),
                "seconds": stats(&s.seconds),
            });
            writeln!(
                table,
                "{name}\t{}\t{}\t{}\t{}\t{}",
                l + 1,
                fmt_pm(&v["nmi"]),
                fmt_pm(&v["ami"]),
                fmt_pm(&v["ari"]),
                fmt_pm(&v["seconds"])
            )
            .expect("string write");
            v
        })
        .collect();
    json!({ "method": name, "levels": levels, "total_seconds": stats(totals) })
}

fn forecasts_csv(history: &HtsDataset, run: &ForecastRun, manifest_sha: &str) -> String {
    let mut out = format!("# manifest_sha256: {manifest_sha}\ninstance_id,node_id,t,forecast\n");
    for (inst, fc) in history.instances().iter().zip(&run.forecasts) {
        let start = inst.length();
        for (node, f) in fc.iter().enumerate() {
            let id = inst.hierarchy().node_id(node);
            for (step, v) in f.iter().enumerate() {
                writeln!(out, "{},{id},{},{v}", inst.id(), start + step).expect("string write");
            }
        }
    }
    out
}

pub fn forecast(args: &ForecastArgs) -> Result<(), CliError> {
    let ctx = Context::new(&args.common)?;
    let ds = read_dataset(&ctx.input(&args.input)?)?;
    let horizon = args.horizon.or(ctx.file.horizon);
    let (history, horizons) = match horizon {
        Some(h) => {
            if h == 0 {
                return Err(CliError::Usage("--horizon must be >= 1".into()));
            }
            if let Some(inst) = ds.instances().iter().find(|i| i.length() <= h + 1) {
                return Err(CliError::Data(format!(
                    "instance '{}' has {} steps, too short for horizon {h}",
                    inst.id(),
                    inst.length()
                )));
            }
            (ds.truncated(|i| i.length() - h)?, vec![h; ds.len()])
        }
        None => (
            history_dataset(&ds)?,
            splits(&ds).iter().map(|s| s.horizon()).collect(),
        ),
    };
    let baseline = match args.baseline.clone().or_else(|| ctx.file.baseline.clone()) {
        None => false,
        Some(b) if b == "per-series" => true,
        Some(b) => {
            return Err(CliError::Usage(format!(
                "unknown --baseline '{b}', expected per-series"
            )))
        }
    };

    let (model, manifest_cfg, fitted_here) =
        match args.model.clone().or_else(|| ctx.file.model.clone()) {
            Some(path) => {
                let mf = read_model(&path)?;
                check_model_dataset(&mf, &history)?;
                let sha = mf.manifest.sha256();
                (mf.model, json!({ "model_manifest_sha256": sha }), false)
            }
            None => {
                let labels = ctx.file.labels.clone();
                let k = resolve_k(&args.cluster, &ctx, &history, labels.as_deref())?;
                let cfg = cluster_config(&args.cluster, &ctx, k)?;
                let mode = mode_of(&args.cluster, &ctx.file);
                let (model, _) = run_model(&history, mode, &cfg)?;
                (
                    model,
                    json!({ "mode": mode_name(mode), "cluster": cfg }),
                    true,
                )
            }
        };
    let m = pick(args.fuzziness, ctx.file.fuzziness, model.config.fuzziness);
    if !(m > 1.0) {
        return Err(CliError::Usage("--fuzziness must be > 1".into()));
    }
    let factory = ArDrift::factory();
    let run = forecast_with_clusters(&history, &model, &factory, &horizons, m, &model.config.sdtw)?;
    let mase = mase_per_level(&ds, &history, &run.forecasts)?;

    let mut cfg = manifest_cfg;
    cfg["fuzziness"] = json!(m);
    cfg["horizons"] = json!(horizons);
    cfg["forecaster"] = json!("ar2-drift");
    let manifest = Manifest::new("forecast", ctx.seed, dataset_hash(&history), cfg);
    let sha = manifest.sha256();
    write_atomic(
        &ctx.path("forecasts.csv"),
        forecasts_csv(&history, &run, &sha).as_bytes(),
    )?;
    if fitted_here {
        write_model(&ctx, &manifest, &model)?;
    }
    let mut timing = json!({ "fits": run.fits, "wall_ms": run.wall_ms, "mase_per_level": mase });
    if baseline {
        let base = forecast_per_series(
            &history,
            &factory,
            &horizons,
            derive_seed(ctx.seed, "forecast", 0),
        )?;
        let base_mase = mase_per_level(&ds, &history, &base.forecasts)?;
        write_atomic(
            &ctx.path("forecasts_baseline.csv"),
            forecasts_csv(&history, &base, &sha).as_bytes(),
        )?;
        timing["baseline"] =
            json!({ "fits": base.fits, "wall_ms": base.wall_ms, "mase_per_level": base_mase });
        timing["fit_ratio"] = json!(run.fits as f64 / base.fits as f64);
        timing["relative_mase"] = json!(mase
            .iter()
            .zip(&base_mase)
            .map(|(a, b)| a / b)
            .collect::<Vec<_>>());
    }
    write_atomic(
        &ctx.path("timing.json"),
        &with_manifest(&manifest, object(timing)),
    )?;
    write_manifest(&ctx, &manifest)
}
