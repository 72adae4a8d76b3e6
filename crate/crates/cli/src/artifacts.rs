//! Output files: manifests, atomic writes, labels and model files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use hts_cluster::cluster::MultiLevelClusterModel;
use hts_cluster::hts::HtsDataset;
use hts_cluster::hts::{dataset_to_json_string, load_dataset, DataFormat};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything needed to rerun a command bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub dataset_sha256: String,
    pub config: Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, dataset_sha256: String, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            dataset_sha256,
            config,
        }
    }

    pub fn sha256(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form, independent of the input file format.
pub fn dataset_hash(ds: &HtsDataset) -> String {
    sha256_hex(dataset_to_json_string(ds).as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<HtsDataset, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "input file {} does not exist",
            path.display()
        )));
    }
    Ok(load_dataset(path, DataFormat::from_path(path))?)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

/// JSON object `{manifest, manifest_sha256, ...payload}`, newline-terminated.
pub fn with_manifest(manifest: &Manifest, payload: Map<String, Value>) -> Vec<u8> {
    let mut obj = Map::new();
    obj.insert(
        "manifest".into(),
        serde_json::to_value(manifest).expect("manifest serializes"),
    );
    obj.insert("manifest_sha256".into(), Value::String(manifest.sha256()));
    obj.extend(payload);
    let mut out = serde_json::to_vec_pretty(&Value::Object(obj)).expect("json serializes");
    out.push(b'\n');
    out
}

/// `labels[level - 1]["instance/node"]`.
pub type Labels = Vec<BTreeMap<String, i64>>;

pub struct LabelsFile {
    pub labels: Labels,
    pub dataset_sha256: Option<String>,
}

pub fn read_labels(path: &Path) -> Result<LabelsFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read labels {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::Data("labels file must be a JSON object".into()))?;
    let dataset_sha256 = obj
        .get("manifest")
        .and_then(|m| m.get("dataset_sha256"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut by_level: BTreeMap<usize, BTreeMap<String, i64>> = BTreeMap::new();
    for (key, val) in obj {
        let Ok(level) = key.parse::<usize>() else {
            continue;
        };
        let map: BTreeMap<String, i64> = serde_json::from_value(val.clone())
            .map_err(|e| CliError::Data(format!("labels for level {level}: {e}")))?;
        by_level.insert(level, map);
    }
    let max = by_level.keys().max().copied().unwrap_or(0);
    let labels = (1..=max)
        .map(|l| by_level.remove(&l).unwrap_or_default())
        .collect();
    Ok(LabelsFile {
        labels,
        dataset_sha256,
    })
}

pub fn member_keys(ds: &HtsDataset, level: usize) -> Result<Vec<String>, CliError> {
    Ok(ds
        .level_series(level)?
        .iter()
        .map(|m| {
            let inst = &ds.instances()[m.instance];
            format!("{}/{}", inst.id(), inst.hierarchy().node_id(m.node))
        })
        .collect())
}

/// Label vectors in `level_series` order; every member must be labeled.
pub fn aligned_labels(ds: &HtsDataset, labels: &LabelsFile) -> Result<Vec<Vec<i64>>, CliError> {
    if let Some(h) = &labels.dataset_sha256 {
        if *h != dataset_hash(ds) {
            return Err(CliError::Data(
                "labels belong to a different dataset (hash mismatch)".into(),
            ));
        }
    }
    (1..=ds.levels())
        .map(|l| {
            let map = labels.labels.get(l - 1);
            member_keys(ds, l)?
                .into_iter()
                .map(|k| {
                    map.and_then(|m| m.get(&k)).copied().ok_or_else(|| {
                        CliError::Data(format!(
                            "labels incomplete: no label for '{k}' at level {l}"
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn labels_payload(
    ds: &HtsDataset,
    per_level: &[Vec<usize>],
) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    for (l, labels) in per_level.iter().enumerate() {
        let keys = member_keys(ds, l + 1)?;
        let m: Map<String, Value> = keys
            .into_iter()
            .zip(labels)
            .map(|(k, &v)| (k, Value::from(v)))
            .collect();
        out.insert((l + 1).to_string(), Value::Object(m));
    }
    Ok(out)
}

pub struct ModelFile {
    pub manifest: Manifest,
    pub model: MultiLevelClusterModel,
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    #[derive(Deserialize)]
    struct Raw {
        manifest: Manifest,
        model: MultiLevelClusterModel,
    }
    let raw: Raw = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("invalid model file: {e}")))?;
    Ok(ModelFile {
        manifest: raw.manifest,
        model: raw.model,
    })
}

pub fn check_model_dataset(model: &ModelFile, ds: &HtsDataset) -> Result<(), CliError> {
    if model.manifest.dataset_sha256 != dataset_hash(ds) {
        return Err(CliError::Data(
            "model was fitted on a different dataset (manifest hash mismatch)".into(),
        ));
    }
    Ok(())
}
