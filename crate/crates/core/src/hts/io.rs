//! JSON and CSV (long format) dataset files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hierarchy, HtsDataset, HtsError, HtsInstance, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Json,
    Csv,
}

impl DataFormat {
    /// Guesses the format from a file extension; defaults to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    levels: usize,
    instances: Vec<InstanceFile>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    id: String,
    nodes: Vec<NodeFile>,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    id: String,
    level: usize,
    parent: Option<String>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct CsvRow {
    instance_id: String,
    node_id: String,
    level: usize,
    parent_id: Option<String>,
    t: usize,
    value: f64,
}

fn build_instance(file: InstanceFile) -> Result<HtsInstance, HtsError> {
    let mut index = HashMap::with_capacity(file.nodes.len());
    for (i, n) in file.nodes.iter().enumerate() {
        if index.insert(n.id.clone(), i).is_some() {
            return Err(HtsError::Schema(format!(
                "instance '{}': duplicate node id '{}'",
                file.id, n.id
            )));
        }
    }
    let mut ids = Vec::with_capacity(file.nodes.len());
    let mut levels = Vec::with_capacity(file.nodes.len());
    let mut parents = Vec::with_capacity(file.nodes.len());
    let mut series = Vec::with_capacity(file.nodes.len());
    for n in file.nodes {
        let parent = match n.parent.as_deref() {
            None | Some("") => None,
            Some(p) => Some(*index.get(p).ok_or_else(|| {
                HtsError::Schema(format!(
                    "instance '{}': node '{}' has unknown parent '{p}'",
                    file.id, n.id
                ))
            })?),
        };
        series.push(TimeSeries::new(n.id.clone(), n.values)?);
        ids.push(n.id);
        levels.push(n.level);
        parents.push(parent);
    }
    if ids.is_empty() {
        return Err(HtsError::Schema(format!(
            "instance '{}' has no nodes",
            file.id
        )));
    }
    let hierarchy = Hierarchy::from_parents(ids, levels, parents)?;
    HtsInstance::new(file.id, hierarchy, series)
}

fn build_dataset(file: DatasetFile) -> Result<HtsDataset, HtsError> {
    if file.instances.is_empty() {
        return Err(HtsError::Schema("empty instance list".into()));
    }
    let instances = file
        .instances
        .into_iter()
        .map(build_instance)
        .collect::<Result<_, _>>()?;
    let ds = HtsDataset::new(instances)?;
    if ds.levels() != file.levels {
        return Err(HtsError::Invariant(format!(
            "declared {} levels but the hierarchies have {}",
            file.levels,
            ds.levels()
        )));
    }
    Ok(ds)
}

fn json_error(e: serde_json::Error) -> HtsError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => HtsError::Schema(e.to_string()),
        Category::Io => HtsError::Io(e.into()),
        Category::Syntax | Category::Eof => HtsError::Parse(e.to_string()),
    }
}

pub fn dataset_from_json_str(text: &str) -> Result<HtsDataset, HtsError> {
    build_dataset(serde_json::from_str(text).map_err(json_error)?)
}

fn to_file(ds: &HtsDataset) -> DatasetFile {
    DatasetFile {
        levels: ds.levels(),
        instances: ds
            .instances()
            .iter()
            .map(|inst| {
                let h = inst.hierarchy();
                InstanceFile {
                    id: inst.id().to_string(),
                    nodes: (0..h.node_count())
                        .map(|i| NodeFile {
                            id: h.node_id(i).to_string(),
                            level: h.level_of(i),
                            parent: h.parent_of(i).map(|p| h.node_id(p).to_string()),
                            values: inst.series(i).values().to_vec(),
                        })
                        .collect(),
                }
            })
            .collect(),
    }
}

/// Serializes with shortest round-trip float formatting.
pub fn dataset_to_json_string(ds: &HtsDataset) -> String {
    serde_json::to_string(&to_file(ds)).expect("dataset serialization cannot fail")
}

pub fn save_dataset_json<W: Write>(ds: &HtsDataset, writer: W) -> Result<(), HtsError> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, &to_file(ds)).map_err(json_error)?;
    w.flush()?;
    Ok(())
}

fn dataset_from_csv<R: Read>(reader: R) -> Result<HtsDataset, HtsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    // Instance and node order follow first appearance.
    let mut inst_order: Vec<String> = Vec::new();
    let mut inst_index: HashMap<String, usize> = HashMap::new();
    let mut nodes: Vec<Vec<(NodeFile, Vec<(usize, f64)>)>> = Vec::new();
    let mut node_index: Vec<HashMap<String, usize>> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| match e.kind() {
            csv::ErrorKind::Deserialize { .. } => HtsError::Schema(e.to_string()),
            _ => HtsError::Parse(e.to_string()),
        })?;
        let ii = *inst_index
            .entry(row.instance_id.clone())
            .or_insert_with(|| {
                inst_order.push(row.instance_id.clone());
                nodes.push(Vec::new());
                node_index.push(HashMap::new());
                inst_order.len() - 1
            });
        let ni = match node_index[ii].get(&row.node_id) {
            Some(&ni) => ni,
            None => {
                nodes[ii].push((
                    NodeFile {
                        id: row.node_id.clone(),
                        level: row.level,
                        parent: row.parent_id.clone().filter(|p| !p.is_empty()),
                        values: Vec::new(),
                    },
                    Vec::new(),
                ));
                node_index[ii].insert(row.node_id.clone(), nodes[ii].len() - 1);
                nodes[ii].len() - 1
            }
        };
        let (node, points) = &mut nodes[ii][ni];
        if node.level != row.level || node.parent != row.parent_id.filter(|p| !p.is_empty()) {
            return Err(HtsError::Schema(format!(
                "instance '{}': node '{}' has inconsistent level/parent across rows",
                row.instance_id, row.node_id
            )));
        }
        points.push((row.t, row.value));
    }
    if inst_order.is_empty() {
        return Err(HtsError::Schema("empty instance list".into()));
    }
    let mut instances = Vec::with_capacity(inst_order.len());
    let mut depth = 0;
    for (id, inst_nodes) in inst_order.into_iter().zip(nodes) {
        let mut files = Vec::with_capacity(inst_nodes.len());
        for (mut node, mut points) in inst_nodes {
            points.sort_by_key(|p| p.0);
            if points.iter().enumerate().any(|(k, p)| p.0 != k) {
                return Err(HtsError::Schema(format!(
                    "instance '{id}': node '{}' time steps are not 0..T without gaps",
                    node.id
                )));
            }
            node.values = points.into_iter().map(|p| p.1).collect();
            depth = depth.max(node.level);
            files.push(node);
        }
        instances.push(InstanceFile { id, nodes: files });
    }
    build_dataset(DatasetFile {
        levels: depth,
        instances,
    })
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<HtsDataset, HtsError> {
    let file = File::open(path)?;
    match format {
        DataFormat::Json => {
            let mut text = String::new();
            BufReader::new(file).read_to_string(&mut text)?;
            dataset_from_json_str(&text)
        }
        DataFormat::Csv => dataset_from_csv(BufReader::new(file)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"{"levels":3,"instances":[{"id":"h0","nodes":[
        {"id":"v1","level":1,"parent":null,"values":[5.0,10.0]},
        {"id":"v2","level":2,"parent":"v1","values":[3.0,6.0]},
        {"id":"v3","level":2,"parent":"v1","values":[2.0,4.0]},
        {"id":"v4","level":3,"parent":"v2","values":[1.0,2.0]},
        {"id":"v5","level":3,"parent":"v2","values":[1.0,2.0]},
        {"id":"v6","level":3,"parent":"v2","values":[1.0,2.0]},
        {"id":"v7","level":3,"parent":"v3","values":[1.0,2.0]},
        {"id":"v8","level":3,"parent":"v3","values":[1.0,2.0]}]}]}"#;

    #[test]
    fn loads_figure_one_json() {
        let ds = dataset_from_json_str(FIG1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.levels(), 3);
        assert!(ds.instances()[0].is_coherent(0.0));
    }

    #[test]
    fn ignores_extra_top_level_keys() {
        let text = FIG1.replacen('{', r#"{"manifest":{"seed":1},"#, 1);
        assert!(dataset_from_json_str(&text).is_ok());
    }

    #[test]
    fn error_classes() {
        assert!(matches!(
            dataset_from_json_str("{\"levels\":"),
            Err(HtsError::Parse(_))
        ));
        assert!(matches!(
            dataset_from_json_str(r#"{"levels":1,"instances":[]}"#),
            Err(HtsError::Schema(_))
        ));
        assert!(matches!(
            dataset_from_json_str(r#"{"levels":1}"#),
            Err(HtsError::Schema(_))
        ));
        let bad_parent = FIG1.replace(
            r#""parent":"v3","values":[1.0,2.0]},
        {"id":"v8""#,
            r#""parent":"v9","values":[1.0,2.0]},
        {"id":"v8""#,
        );
        assert!(matches!(
            dataset_from_json_str(&bad_parent),
            Err(HtsError::Schema(_))
        ));
        let ragged = r#"{"levels":2,"instances":[{"id":"a","nodes":[
            {"id":"r","level":1,"parent":null,"values":[1.0]},
            {"id":"x","level":3,"parent":"r","values":[1.0]}]}]}"#;
        assert!(matches!(
            dataset_from_json_str(ragged),
            Err(HtsError::Hierarchy(_))
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let vals = vec![
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            123_456_789.123_456_79,
            -0.0,
            f64::MIN_POSITIVE,
        ];
        let h = Hierarchy::star(2).unwrap();
        let inst = HtsInstance::from_bottom("a", h, vec![vals.clone(), vals]).unwrap();
        let ds = HtsDataset::new(vec![inst]).unwrap();
        let text = dataset_to_json_string(&ds);
        let back = dataset_from_json_str(&text).unwrap();
        for (a, b) in ds.instances()[0]
            .all_series()
            .iter()
            .zip(back.instances()[0].all_series())
        {
            let ab: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(text, dataset_to_json_string(&back));
    }

    #[test]
    fn csv_long_format() {
        let csv = "instance_id,node_id,level,parent_id,t,value\n\
                   a,r,1,,1,4\n a,r,1,,0,2\n a,x,2,r,0,1\n a,x,2,r,1,2\n a,y,2,r,0,1\n a,y,2,r,1,2\n";
        let ds = dataset_from_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.levels(), 2);
        assert_eq!(ds.instances()[0].series(0).values(), &[2.0, 4.0]);
        let nan = csv.replace("a,y,2,r,1,2", "a,y,2,r,1,NaN");
        assert!(matches!(
            dataset_from_csv(nan.as_bytes()),
            Err(HtsError::Invariant(_))
        ));
        let gap = csv.replace("a,y,2,r,1,2", "a,y,2,r,2,2");
        assert!(matches!(
            dataset_from_csv(gap.as_bytes()),
            Err(HtsError::Schema(_))
        ));
        let header_only = "instance_id,node_id,level,parent_id,t,value\n";
        assert!(matches!(
            dataset_from_csv(header_only.as_bytes()),
            Err(HtsError::Schema(_))
        ));
    }
}
