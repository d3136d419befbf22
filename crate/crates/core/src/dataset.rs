//! Node-classification datasets: features, sensitive attribute, labels and
//! train/validation/test splits, plus CSV/edge-list ingestion.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Matrix;

/// Binary sensitive attribute per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sensitive(Vec<u8>);

impl Sensitive {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::Data(format!(
                "sensitive value {v} at node {i} is not binary"
            )));
        }
        Ok(Sensitive(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    /// The attribute with groups swapped.
    pub fn flipped(&self) -> Sensitive {
        Sensitive(self.0.iter().map(|v| 1 - v).collect())
    }

    pub fn as_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Binary class labels; `None` marks an unlabeled node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels(Vec<Option<u8>>);

impl Labels {
    pub fn new(values: Vec<Option<u8>>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.filter(|&v| v > 1).map(|v| (i, v)))
        {
            return Err(Error::Data(format!("label {v} at node {i} is not binary")));
        }
        Ok(Labels(values))
    }

    pub fn fully_labeled(values: Vec<u8>) -> Result<Self> {
        Labels::new(values.into_iter().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<u8> {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[Option<u8>] {
        &self.0
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i].is_some()).collect()
    }
}

/// Disjoint train/validation/test node masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

/// Split membership as sorted node-id lists, the on-disk form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    pub fn to_ids(&self) -> SplitIds {
        let ids = |m: &[bool]| (0..m.len()).filter(|&i| m[i]).collect();
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }

    pub fn from_ids(num_nodes: usize, ids: &SplitIds) -> Result<Self> {
        let mask = |list: &[usize]| -> Result<Vec<bool>> {
            let mut m = vec![false; num_nodes];
            for &i in list {
                if i >= num_nodes {
                    return Err(Error::Data(format!("split node {i} out of range")));
                }
                m[i] = true;
            }
            Ok(m)
        };
        let splits = SplitMasks {
            train: mask(&ids.train)?,
            val: mask(&ids.val)?,
            test: mask(&ids.test)?,
        };
        splits.check_disjoint()?;
        Ok(splits)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_ids())?)
    }

    pub fn from_json(num_nodes: usize, text: &str) -> Result<Self> {
        let ids: SplitIds = serde_json::from_str(text)?;
        Self::from_ids(num_nodes, &ids)
    }

    fn check_disjoint(&self) -> Result<()> {
        for i in 0..self.train.len() {
            let hits = [self.train[i], self.val[i], self.test[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            if hits > 1 {
                return Err(Error::Data(format!("node {i} appears in several splits")));
            }
        }
        Ok(())
    }

    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Matrix,
    pub sensitive: Sensitive,
    pub labels: Labels,
    pub splits: Option<SplitMasks>,
    /// Feature column holding the sensitive attribute, if it is also a feature.
    pub sensitive_col: Option<usize>,
    /// Original node id for each dense index.
    pub node_ids: Vec<i64>,
}

impl Dataset {
    /// Assembles a dataset and checks that all components agree in length.
    pub fn new(
        graph: Graph,
        features: Matrix,
        sensitive: Sensitive,
        labels: Labels,
        sensitive_col: Option<usize>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n || sensitive.len() != n || labels.len() != n {
            return Err(Error::Data(format!(
                "component lengths disagree: graph {n}, features {}, sensitive {}, labels {}",
                features.rows(),
                sensitive.len(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Data("feature matrix has non-finite entries".into()));
        }
        if let Some(c) = sensitive_col {
            if c >= features.cols() {
                return Err(Error::Data(format!("sensitive column {c} out of range")));
            }
        }
        Ok(Dataset {
            graph,
            features,
            sensitive,
            labels,
            splits: None,
            sensitive_col,
            node_ids: (0..n as i64).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn with_splits(mut self, splits: SplitMasks) -> Result<Self> {
        let n = self.num_nodes();
        if splits.train.len() != n || splits.val.len() != n || splits.test.len() != n {
            return Err(Error::Data("split masks do not match node count".into()));
        }
        splits.check_disjoint()?;
        if let Some(i) = (0..n).find(|&i| splits.train[i] && self.labels.get(i).is_none()) {
            return Err(Error::Data(format!("training node {i} has no label")));
        }
        self.splits = Some(splits);
        Ok(self)
    }

    pub fn splits(&self) -> Result<&SplitMasks> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no splits".into()))
    }

    /// Columns that take part in counterfactual matching.
    pub fn matching_exclusions(&self) -> Vec<usize> {
        self.sensitive_col.into_iter().collect()
    }

    /// Original-id table, `dense_index -> original id`.
    pub fn id_table(&self) -> BTreeMap<usize, i64> {
        self.node_ids.iter().copied().enumerate().collect()
    }
}

/// Column layout of a node CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub id_column: String,
    pub sensitive_column: String,
    pub label_column: String,
    /// Also append the sensitive attribute as the last feature column.
    pub sensitive_as_feature: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id_column: "id".into(),
            sensitive_column: "sensitive".into(),
            label_column: "label".into(),
            sensitive_as_feature: false,
        }
    }
}

fn parse_binary(field: &str, what: &str, row: usize) -> Result<u8> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("row {row}: cannot parse {what} value {field:?}")))?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Data(format!(
            "row {row}: non-binary {what} value {field:?}"
        )))
    }
}

/// Reads a node CSV and an edge list into a dataset.
pub fn load_dataset(node_file: &Path, edge_file: &Path, schema: &Schema) -> Result<Dataset> {
    let nodes = std::fs::File::open(node_file)?;
    let edges = std::fs::File::open(edge_file)?;
    load_dataset_from_readers(nodes, edges, schema)
}

/// [`load_dataset`] over arbitrary readers.
///
/// Node ids are remapped to `0..N` in file order. Edges are symmetrized and
/// deduplicated; self-loops are dropped.
pub fn load_dataset_from_readers<N: Read, E: Read>(
    nodes: N,
    edges: E,
    schema: &Schema,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(nodes);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("node file has no `{name}` column")))
    };
    let id_pos = position(&schema.id_column)?;
    let s_pos = position(&schema.sensitive_column)?;
    let y_pos = position(&schema.label_column)?;
    let feature_pos: Vec<usize> = (0..headers.len())
        .filter(|&c| c != id_pos && c != s_pos && c != y_pos)
        .collect();

    let mut id_map: HashMap<i64, usize> = HashMap::new();
    let mut node_ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut sensitive = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2;
        let id: i64 = record[id_pos]
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: bad node id {:?}", &record[id_pos])))?;
        if id_map.insert(id, node_ids.len()).is_some() {
            return Err(Error::Data(format!("duplicate node id {id}")));
        }
        node_ids.push(id);
        for &c in &feature_pos {
            let v: f64 = record[c].parse().map_err(|_| {
                Error::Data(format!("row {row}: bad feature value {:?}", &record[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("row {row}: non-finite feature value")));
            }
            rows.push(v);
        }
        let s = parse_binary(&record[s_pos], "sensitive", row)?;
        if schema.sensitive_as_feature {
            rows.push(f64::from(s));
        }
        sensitive.push(s);
        let label = record[y_pos].trim();
        labels.push(if label.is_empty() {
            None
        } else {
            Some(parse_binary(label, "label", row)?)
        });
    }
    let n = node_ids.len();
    let d = feature_pos.len() + usize::from(schema.sensitive_as_feature);
    let features = Matrix::from_vec(n, d, rows)?;

    let mut edge_list = Vec::new();
    for (line_no, line) in BufReader::new(edges).lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::Data(format!(
                "edge line {}: expected `src dst`",
                line_no + 1
            )));
        };
        let parse = |t: &str| -> Result<i64> {
            t.parse()
                .map_err(|_| Error::Data(format!("edge line {}: bad id {t:?}", line_no + 1)))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        let lookup = |id: i64| -> Result<usize> {
            id_map.get(&id).copied().ok_or(Error::EndpointOutOfRange {
                src: a.max(0) as usize,
                dst: b.max(0) as usize,
                num_nodes: n,
            })
        };
        edge_list.push((lookup(a)?, lookup(b)?));
    }
    let graph = Graph::from_undirected_edges(n, &edge_list)?;
    let sensitive_col = schema.sensitive_as_feature.then_some(d - 1);
    let mut ds = Dataset::new(
        graph,
        features,
        Sensitive::new(sensitive)?,
        Labels::new(labels)?,
        sensitive_col,
    )?;
    ds.node_ids = node_ids;
    Ok(ds)
}

/// Writes a dataset in the node-CSV / edge-list format read by [`load_dataset`].
pub fn write_dataset(ds: &Dataset, node_file: &Path, edge_file: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(node_file)?;
    let feature_cols: Vec<usize> = (0..ds.num_features())
        .filter(|&c| Some(c) != ds.sensitive_col)
        .collect();
    let mut header = vec!["id".to_string()];
    header.extend(feature_cols.iter().map(|c| format!("x{c}")));
    header.push("sensitive".into());
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..ds.num_nodes() {
        let mut rec = vec![ds.node_ids[i].to_string()];
        rec.extend(feature_cols.iter().map(|&c| format!("{:?}", ds.features.get(i, c))));
        rec.push(ds.sensitive.get(i).to_string());
        rec.push(ds.labels.get(i).map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut out = String::new();
    for (a, b) in ds.graph.undirected_edges() {
        out.push_str(&format!("{}\t{}\n", ds.node_ids[a], ds.node_ids[b]));
    }
    std::fs::write(edge_file, out)?;
    Ok(())
}

/// Standardizes every column not in `exclude` to zero mean and unit
/// population standard deviation. Zero-variance columns become all zero.
pub fn standardize_features(x: &Matrix, exclude: &[usize]) -> Matrix {
    let mut out = x.clone();
    let n = x.rows();
    if n == 0 {
        return out;
    }
    for c in 0..x.cols() {
        if exclude.contains(&c) {
            continue;
        }
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for (r, v) in col.iter().enumerate() {
            let z = if std > 0.0 && std.is_finite() {
                (v - mean) / std
            } else {
                0.0
            };
            out.set(r, c, z);
        }
    }
    out
}

/// Split proportions; the remainder of labeled nodes is left unassigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

/// Shuffles labeled nodes with a seeded RNG and cuts them into
/// train/validation/test by `floor(ratio * n_labeled)`.
pub fn make_splits(labels: &Labels, ratios: SplitRatios, seed: u64) -> Result<SplitMasks> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || train + val + test > 1.0 + 1e-12
    {
        return Err(Error::Config(format!(
            "split ratios ({train}, {val}, {test}) must be in [0, 1] and sum to at most 1"
        )));
    }
    let mut labeled = labels.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled nodes to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    let m = labeled.len() as f64;
    let n_train = (train * m).floor() as usize;
    let n_val = (val * m).floor() as usize;
    let n_test = ((test * m).floor() as usize).min(labeled.len() - n_train - n_val);
    let n = labels.len();
    let mut splits = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for &i in &labeled[..n_train] {
        splits.train[i] = true;
    }
    for &i in &labeled[n_train..n_train + n_val] {
        splits.val[i] = true;
    }
    for &i in &labeled[n_train + n_val..n_train + n_val + n_test] {
        splits.test[i] = true;
    }
    Ok(splits)
}
