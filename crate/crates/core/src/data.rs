//! Dataset ingestion (SNAP page-page CSV/JSON layout), synthetic graphs,
//! planted-anomaly injection, and writers for the same formats.
//!
//! Node ids in files are arbitrary nonnegative integers. They are remapped to
//! dense ids `0..N` in order of first appearance in the edge file; nodes that
//! only occur in the feature file are appended afterwards in ascending id
//! order.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::numerics::DenseMatrix;

/// Bijection between original node ids and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    original: Vec<u64>,
    dense: HashMap<u64, usize>,
}

impl IdMap {
    pub fn identity(n: usize) -> Self {
        let mut m = IdMap::default();
        for i in 0..n as u64 {
            m.intern(i);
        }
        m
    }

    /// Dense id for `original`, assigning the next one if unseen.
    pub fn intern(&mut self, original: u64) -> usize {
        *self.dense.entry(original).or_insert_with(|| {
            self.original.push(original);
            self.original.len() - 1
        })
    }

    pub fn dense_id(&self, original: u64) -> Option<usize> {
        self.dense.get(&original).copied()
    }

    pub fn original_id(&self, dense: usize) -> u64 {
        self.original[dense]
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    /// 1 marks a known anomaly.
    pub labels: Option<Vec<u8>>,
    pub id_map: IdMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_self_loops: usize,
    pub feature_dim: usize,
    pub num_labeled_anomalies: Option<usize>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(Error::Input(format!("{} feature rows for {n} nodes", self.features.rows())));
        }
        if self.id_map.len() != n {
            return Err(Error::Input(format!("id map has {} entries for {n} nodes", self.id_map.len())));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::Input(format!("{} labels for {n} nodes", l.len())));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            num_nodes: self.graph.num_nodes(),
            num_edges: self.graph.edge_count(),
            num_self_loops: self.graph.num_self_loops(),
            feature_dim: self.features.cols(),
            num_labeled_anomalies: self
                .labels
                .as_ref()
                .map(|l| l.iter().filter(|&&v| v == 1).count()),
        }
    }

    /// Reads an edge CSV, a feature JSON, and optionally a label CSV.
    pub fn load(
        edges: &Path,
        features: &Path,
        labels: Option<&Path>,
        normalize_features: bool,
    ) -> Result<Dataset> {
        let (pairs, mut id_map) = load_edges_csv(edges)?;
        let raw = read_feature_json(features)?;
        let mut extra: Vec<u64> = raw.keys().filter(|id| id_map.dense_id(**id).is_none()).copied().collect();
        extra.sort_unstable();
        for id in extra {
            id_map.intern(id);
        }
        let graph = SparseGraph::from_edges(&pairs, id_map.len())?;
        let features = features_from_raw(&raw, &id_map, normalize_features);
        let labels = labels.map(|p| load_labels_csv(p, &id_map)).transpose()?;
        let ds = Dataset {
            graph,
            features,
            labels,
            id_map,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the edge CSV, feature JSON, and (if present) label CSV using
    /// original ids.
    pub fn save(&self, edges: &Path, features: &Path, labels: Option<&Path>) -> Result<()> {
        write_edges_csv(edges, &self.graph, &self.id_map)?;
        write_features_json(features, &self.features, &self.id_map)?;
        if let (Some(path), Some(l)) = (labels, &self.labels) {
            write_labels_csv(path, l, &self.id_map)?;
        }
        Ok(())
    }
}

fn parse_error(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open_csv(path: &Path, expected_header: [&str; 2]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(Error::Input(format!("{} is empty", path.display())));
    }
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected_header {
        return Err(parse_error(
            path,
            1,
            format!("expected header {:?}, found {:?}", expected_header.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

fn parse_field(path: &Path, line: u64, rec: &csv::StringRecord, k: usize) -> Result<u64> {
    let raw = rec.get(k).ok_or_else(|| parse_error(path, line, "missing field"))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("{raw:?} is not a nonnegative integer")))
}

/// Reads `id_1,id_2` rows, remapping ids densely in first-appearance order.
pub fn load_edges_csv(path: &Path) -> Result<(Vec<(usize, usize)>, IdMap)> {
    let mut rdr = open_csv(path, ["id_1", "id_2"])?;
    let mut id_map = IdMap::default();
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(parse_error(path, line, format!("expected 2 fields, found {}", rec.len())));
        }
        let u = parse_field(path, line, &rec, 0)?;
        let v = parse_field(path, line, &rec, 1)?;
        pairs.push((id_map.intern(u), id_map.intern(v)));
    }
    if pairs.is_empty() {
        return Err(Error::Input(format!("{} contains no edges", path.display())));
    }
    Ok((pairs, id_map))
}

fn read_feature_json(path: &Path) -> Result<BTreeMap<u64, Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, Vec<usize>> =
        serde_json::from_str(&text).map_err(|e| parse_error(path, e.line() as u64, e.to_string()))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u64>()
                .map(|id| (id, v))
                .map_err(|_| parse_error(path, 0, format!("key {k:?} is not a node id")))
        })
        .collect()
}

fn features_from_raw(raw: &BTreeMap<u64, Vec<usize>>, id_map: &IdMap, normalize: bool) -> DenseMatrix {
    let dim = raw.values().flatten().max().map_or(0, |&m| m + 1);
    let mut x = DenseMatrix::zeros(id_map.len(), dim);
    let mut missing = 0;
    for i in 0..id_map.len() {
        match raw.get(&id_map.original_id(i)) {
            Some(cols) => {
                for &c in cols {
                    x.set(i, c, 1.0);
                }
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("{missing} node(s) have no feature entry; using zero rows");
    }
    if normalize {
        for i in 0..x.rows() {
            let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                x.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    x
}

/// Multi-hot matrix from `{"<original id>": [feature indices]}`; width is
/// one past the largest index in the file.
pub fn load_features_json(path: &Path, id_map: &IdMap, normalize: bool) -> Result<DenseMatrix> {
    let raw = read_feature_json(path)?;
    Ok(features_from_raw(&raw, id_map, normalize))
}

/// Reads `node_id,label` rows (original ids, label 0 or 1). Every node must
/// be labeled.
pub fn load_labels_csv(path: &Path, id_map: &IdMap) -> Result<Vec<u8>> {
    let mut rdr = open_csv(path, ["node_id", "label"])?;
    let mut labels: Vec<Option<u8>> = vec![None; id_map.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = parse_field(path, line, &rec, 0)?;
        let label = match parse_field(path, line, &rec, 1)? {
            0 => 0,
            1 => 1,
            other => return Err(parse_error(path, line, format!("label must be 0 or 1, found {other}"))),
        };
        let dense = id_map
            .dense_id(id)
            .ok_or_else(|| parse_error(path, line, format!("unknown node id {id}")))?;
        labels[dense] = Some(label);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| Error::Input(format!("node {} has no label", id_map.original_id(i))))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Each undirected edge once as `min,max` (in dense order), sorted by
/// `(max, min)`, except that a node with no lower-numbered neighbor emits its
/// edge to the next node just before that node's block. For a graph that was
/// itself ingested from a file, this order makes re-ingestion reproduce the
/// same dense ids.
pub fn write_edges_csv(path: &Path, g: &SparseGraph, id_map: &IdMap) -> Result<()> {
    let has_lower = |u: usize| g.neighbors(u).first().is_some_and(|&w| w < u);
    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    edges.sort_unstable_by_key(|&(u, v)| {
        if v == u + 1 && !has_lower(u) {
            (u, v)
        } else {
            (v, u)
        }
    });
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "id_1,id_2").map_err(io)?;
    for (u, v) in edges {
        writeln!(w, "{},{}", id_map.original_id(u), id_map.original_id(v)).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Nonzero column indices per node, keyed by original id in dense order.
pub fn write_features_json(path: &Path, x: &DenseMatrix, id_map: &IdMap) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = create(path)?;
    write!(w, "{{").map_err(io)?;
    for i in 0..x.rows() {
        let cols: Vec<usize> = (0..x.cols()).filter(|&c| x.get(i, c) != 0.0).collect();
        let sep = if i == 0 { "" } else { "," };
        let cols = serde_json::to_string(&cols).expect("serializing integers");
        write!(w, "{sep}\"{}\":{cols}", id_map.original_id(i)).map_err(io)?;
    }
    writeln!(w, "}}").map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_labels_csv(path: &Path, labels: &[u8], id_map: &IdMap) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = create(path)?;
    writeln!(w, "node_id,label").map_err(io)?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{},{l}", id_map.original_id(i)).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Erdős–Rényi graph with edge probability `avg_degree / (n - 1)` and
/// multi-hot features whose count of active entries grows with degree.
///
/// Node `i` always has feature `i mod feat_dim` set (a category column, so
/// every column is used once `n >= feat_dim`), plus `2 + deg/2` further
/// random columns.
pub fn generate_synthetic(n: usize, avg_degree: f64, feat_dim: usize, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Input(format!("synthetic graphs need at least 10 nodes, got {n}")));
    }
    if feat_dim == 0 {
        return Err(Error::Input("feat_dim must be positive".into()));
    }
    if !(avg_degree >= 0.0 && avg_degree <= (n - 1) as f64) {
        return Err(Error::Input(format!("avg_degree must lie in [0, {}]", n - 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = avg_degree / (n - 1) as f64;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = SparseGraph::from_edges(&edges, n)?;
    let mut features = DenseMatrix::zeros(n, feat_dim);
    for i in 0..n {
        features.set(i, i % feat_dim, 1.0);
        let extra = (2 + graph.degree(i) / 2).min(feat_dim);
        for c in index::sample(&mut rng, feat_dim, extra) {
            features.set(i, c, 1.0);
        }
    }
    Ok(Dataset {
        graph,
        features,
        labels: Some(vec![0; n]),
        id_map: IdMap::identity(n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionConfig {
    pub num_cliques: usize,
    pub clique_size: usize,
    pub feature_swap_fraction: f64,
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            num_cliques: 5,
            clique_size: 5,
            feature_swap_fraction: 1.0,
            seed: 0,
        }
    }
}

/// What an injection did, for reporting and recount checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionSummary {
    pub cliques: Vec<Vec<usize>>,
    pub edges_added: usize,
    /// `(member, donor)` pairs whose feature row was replaced.
    pub swaps: Vec<(usize, usize)>,
}

fn within_two_hops(g: &SparseGraph, src: usize) -> Vec<bool> {
    let mut seen = vec![false; g.num_nodes()];
    seen[src] = true;
    let mut queue = VecDeque::from([(src, 0)]);
    while let Some((u, d)) = queue.pop_front() {
        if d == 2 {
            continue;
        }
        for &v in g.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back((v, d + 1));
            }
        }
    }
    seen
}

/// Plants cliques on disjoint random node sets and swaps member features
/// with nodes more than two hops away. Every clique member gets label 1;
/// existing labels and edges are kept.
pub fn inject_anomalies(ds: &Dataset, cfg: &InjectionConfig) -> Result<(Dataset, InjectionSummary)> {
    let n = ds.graph.num_nodes();
    if cfg.clique_size < 2 {
        return Err(Error::Input("clique_size must be at least 2".into()));
    }
    if !(0.0..=1.0).contains(&cfg.feature_swap_fraction) {
        return Err(Error::Input("feature_swap_fraction must lie in [0, 1]".into()));
    }
    let total = cfg.num_cliques * cfg.clique_size;
    if total > n {
        return Err(Error::Input(format!(
            "{} cliques of {} need {total} nodes, graph has {n}",
            cfg.num_cliques, cfg.clique_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen = index::sample(&mut rng, n, total).into_vec();
    let cliques: Vec<Vec<usize>> = chosen.chunks(cfg.clique_size).map(<[usize]>::to_vec).collect();

    let mut added = Vec::new();
    for clique in &cliques {
        for (a, &u) in clique.iter().enumerate() {
            for &v in &clique[a + 1..] {
                if !ds.graph.has_edge(u, v) {
                    added.push((u, v));
                }
            }
        }
    }

    let per_clique = (cfg.feature_swap_fraction * cfg.clique_size as f64).ceil() as usize;
    let mut features = ds.features.clone();
    let mut swaps = Vec::new();
    for clique in &cliques {
        for &member in clique.iter().take(per_clique) {
            let near = within_two_hops(&ds.graph, member);
            let mut candidates: Vec<usize> = (0..n).filter(|&v| !near[v]).collect();
            if candidates.is_empty() {
                candidates = (0..n).filter(|&v| v != member).collect();
            }
            let donor = candidates[rng.gen_range(0..candidates.len())];
            features.row_mut(member).copy_from_slice(ds.features.row(donor));
            swaps.push((member, donor));
        }
    }

    let mut labels = ds.labels.clone().unwrap_or_else(|| vec![0; n]);
    for &v in &chosen {
        labels[v] = 1;
    }
    let out = Dataset {
        graph: ds.graph.with_added_edges(&added)?,
        features,
        labels: Some(labels),
        id_map: ds.id_map.clone(),
    };
    Ok((
        out,
        InjectionSummary {
            cliques,
            edges_added: added.len(),
            swaps,
        },
    ))
}
