//! Text loaders: whitespace edge lists, header-less feature CSVs, label
//! files, LINQS-style `.content`/`.cites` pairs and multi-graph manifests.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;

use super::Graph;
use crate::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Content lines with their 1-based line numbers; `#` starts a comment.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

struct EdgeList {
    edges: Vec<(usize, usize)>,
    labels: Option<Vec<usize>>,
}

fn parse_edges(path: &Path) -> Result<EdgeList> {
    let text = read(path)?;
    let mut edges = Vec::new();
    let mut labels = Vec::new();
    let mut labeled: Option<bool> = None;
    for (line, l) in content_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, line, "expected `src dst [edge_label]`"));
        }
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad node id `{s}`")))
        };
        edges.push((id(fields[0])?, id(fields[1])?));
        let has_label = fields.len() == 3;
        if *labeled.get_or_insert(has_label) != has_label {
            return Err(parse_err(path, line, "edge labels must be given on every line or none"));
        }
        if has_label {
            labels.push(
                fields[2]
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("bad edge label `{}`", fields[2])))?,
            );
        }
    }
    Ok(EdgeList {
        edges,
        labels: labeled.unwrap_or(false).then_some(labels),
    })
}

fn parse_features(path: &Path) -> Result<Array2<f64>> {
    let text = read(path)?;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let row = l
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line + 1, format!("bad feature value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    line + 1,
                    format!("row has {} values, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), values)
        .map_err(|e| Error::Shape(e.to_string()))
}

fn parse_node_labels(path: &Path) -> Result<Vec<Option<usize>>> {
    let text = read(path)?;
    content_lines(&text)
        .map(|(line, l)| {
            let x: i64 = l
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad label `{l}`")))?;
            Ok((x >= 0).then_some(x as usize))
        })
        .collect()
}

/// Loads a graph from an edge list, a feature CSV and an optional label
/// file. Node ids in the edge list index the feature rows; a negative label
/// marks an unlabeled node. Edge labels are read from an optional third
/// column.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
    directed: bool,
) -> Result<Graph> {
    let features = parse_features(feature_path)?;
    let EdgeList { edges, labels } = parse_edges(edge_path)?;
    let mut g = Graph::new(edges, features, directed)?;
    if let Some(labels) = labels {
        g = g.with_edge_labels(labels)?;
    }
    if let Some(path) = label_path {
        let labels = parse_node_labels(path)?;
        if labels.len() != g.num_nodes() {
            return Err(Error::Shape(format!(
                "{} has {} labels for {} feature rows",
                path.display(),
                labels.len(),
                g.num_nodes()
            )));
        }
        g = g.with_node_labels(labels)?;
    }
    Ok(g)
}

/// Loads a LINQS citation dataset (`<name>.content` with
/// `paper_id feature... class` rows and `<name>.cites` with
/// `cited citing` rows). Paper ids are remapped to `0..N` in content-file
/// order and class names to integers in sorted order. Citations that refer
/// to papers missing from the content file are skipped.
pub fn load_linqs(content_path: &Path, cites_path: &Path) -> Result<Graph> {
    let text = read(content_path)?;
    let mut ids = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut classes = Vec::new();
    for (line, l) in content_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(parse_err(content_path, line, "expected `id features... class`"));
        }
        let feats = fields[1..fields.len() - 1]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(content_path, line, format!("bad feature `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != feats.len() {
                return Err(parse_err(content_path, line, "inconsistent feature width"));
            }
        }
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(content_path, line, format!("duplicate id `{}`", fields[0])));
        }
        rows.push(feats);
        classes.push(fields[fields.len() - 1].to_string());
    }
    let names: BTreeSet<&String> = classes.iter().collect();
    let class_id: HashMap<&String, usize> = names.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let labels = classes.iter().map(|c| Some(class_id[c])).collect();

    let width = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((rows.len(), width), rows.concat())
        .map_err(|e| Error::Shape(e.to_string()))?;

    let text = read(cites_path)?;
    let mut edges = Vec::new();
    let mut skipped = 0;
    for (line, l) in content_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(cites_path, line, "expected `cited citing`"));
        }
        match (ids.get(fields[1]), ids.get(fields[0])) {
            (Some(&citing), Some(&cited)) => edges.push((citing, cited)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} citations to unknown papers", cites_path.display());
    }
    Graph::new(edges, features, true)?.with_node_labels(labels)
}

/// Reads `graph_id,target` rows.
pub fn load_graph_targets(path: &Path) -> Result<HashMap<usize, f64>> {
    let text = read(path)?;
    let mut out = HashMap::new();
    for (line, l) in content_lines(&text) {
        let (id, target) = l
            .split_once(',')
            .ok_or_else(|| parse_err(path, line, "expected `graph_id,target`"))?;
        let id = id
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, line, format!("bad graph id `{id}`")))?;
        let target = target
            .trim()
            .parse::<f64>()
            .map_err(|_| parse_err(path, line, format!("bad target `{target}`")))?;
        out.insert(id, target);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct Manifest {
    targets: PathBuf,
    graphs: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    id: usize,
    edges: PathBuf,
    features: PathBuf,
}

/// Loads a multi-graph dataset from a JSON manifest:
///
/// ```json
/// {"targets": "targets.csv",
///  "graphs": [{"id": 0, "edges": "g0.edges", "features": "g0.csv"}]}
/// ```
///
/// Relative paths resolve against the manifest's directory. Every graph
/// must have a row in the targets file.
pub fn load_manifest(path: &Path) -> Result<Vec<Graph>> {
    let manifest: Manifest = serde_json::from_str(&read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let targets = load_graph_targets(&base.join(&manifest.targets))?;
    manifest
        .graphs
        .iter()
        .map(|entry| {
            let target = targets.get(&entry.id).copied().ok_or_else(|| {
                Error::Input(format!("no target for graph {} in {}", entry.id, path.display()))
            })?;
            Ok(load_graph(&base.join(&entry.edges), &base.join(&entry.features), None, false)?
                .with_graph_target(target))
        })
        .collect()
}
