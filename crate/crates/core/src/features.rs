//! Node feature vectors: NDJSON embedding tables produced by an external
//! encoder, or seeded hash features for offline runs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{NodeId, NodeKind, SentenceGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("graph `{graph_id}` node {node}: expected {expected} values, found {found}")]
    DimensionMismatch {
        graph_id: String,
        node: NodeId,
        expected: usize,
        found: usize,
    },
    #[error("graph `{graph_id}` node {node}: non-finite value")]
    NonFiniteValue { graph_id: String, node: NodeId },
    #[error("no vector for node {0}")]
    MissingNodeVector(NodeId),
    #[error("graph `{0}` has no teacher label")]
    MissingTeacherLabel(String),
    #[error("hash embedding dimension must be at least 8, got {0}")]
    DimensionTooSmall(usize),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FeatureError {
    fn from(e: std::io::Error) -> Self {
        FeatureError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub graph_id: String,
    pub dim: usize,
    pub vectors: BTreeMap<NodeId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn to_json(&self) -> String {
        let vectors: serde_json::Map<String, Value> = self
            .vectors
            .iter()
            .map(|(id, v)| (id.to_string(), Value::from(v.clone())))
            .collect();
        serde_json::json!({
            "graph_id": self.graph_id,
            "dim": self.dim,
            "vectors": vectors,
        })
        .to_string()
    }
}

fn parse_table(line: usize, text: &str) -> Result<EmbeddingTable, FeatureError> {
    let malformed = |reason: String| FeatureError::MalformedRecord { line, reason };
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let graph_id = value
        .get("graph_id")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing string `graph_id`".into()))?
        .to_string();
    let dim = value
        .get("dim")
        .and_then(Value::as_u64)
        .filter(|&d| d > 0)
        .ok_or_else(|| malformed("`dim` must be a positive integer".into()))? as usize;
    let raw = value
        .get("vectors")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("missing object `vectors`".into()))?;
    let mut vectors = BTreeMap::new();
    for (key, entry) in raw {
        let node: NodeId = key
            .parse()
            .map_err(|_| malformed(format!("vector key `{key}` is not a node id")))?;
        let items = entry
            .as_array()
            .ok_or_else(|| malformed(format!("vector for node {node} is not an array")))?;
        if items.len() != dim {
            return Err(FeatureError::DimensionMismatch {
                graph_id,
                node,
                expected: dim,
                found: items.len(),
            });
        }
        let mut vector = Vec::with_capacity(dim);
        for item in items {
            let x = match item {
                Value::Number(n) => n.as_f64(),
                // Non-finite floats have no JSON literal; encoders emit them as strings.
                Value::String(s) => s.parse::<f64>().ok().filter(|x| !x.is_finite()),
                _ => None,
            }
            .ok_or_else(|| malformed(format!("node {node}: `{item}` is not a number")))?;
            if !x.is_finite() {
                return Err(FeatureError::NonFiniteValue { graph_id, node });
            }
            vector.push(x);
        }
        vectors.insert(node, vector);
    }
    Ok(EmbeddingTable { graph_id, dim, vectors })
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<Vec<EmbeddingTable>, FeatureError> {
    let mut tables = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tables.push(parse_table(i + 1, &line)?);
    }
    Ok(tables)
}

pub fn load_embeddings(path: &std::path::Path) -> Result<Vec<EmbeddingTable>, FeatureError> {
    let file = std::fs::File::open(path)?;
    read_embeddings(std::io::BufReader::new(file))
}

pub fn write_embeddings<W: Write>(mut out: W, tables: &[EmbeddingTable]) -> std::io::Result<()> {
    for t in tables {
        writeln!(out, "{}", t.to_json())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub graph_id: String,
    pub teacher_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_probs: Option<Vec<f64>>,
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<TeacherRecord>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TeacherRecord = serde_json::from_str(&line).map_err(|e| FeatureError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn seed_from(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

const SPECIAL_NOISE: f64 = 0.05;

/// Deterministic stand-in features. Word nodes get a unit vector derived from
/// (seed, surface); special nodes get a one-hot on their constituent id plus
/// small seeded noise.
pub fn hash_embed(g: &SentenceGraph, dim: usize, seed: u64) -> Result<EmbeddingTable, FeatureError> {
    if dim < 8 {
        return Err(FeatureError::DimensionTooSmall(dim));
    }
    let seed_bytes = seed.to_le_bytes();
    let vectors = g
        .nodes()
        .iter()
        .map(|node| {
            let v = match node.kind {
                NodeKind::Word => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"word", &seed_bytes, node.surface.as_bytes()]));
                    unit_gaussian(&mut rng, dim)
                }
                NodeKind::Special(kind) => {
                    let id = kind.id();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[b"special", &seed_bytes, &[id]]));
                    let mut v: Vec<f64> = (0..dim).map(|_| SPECIAL_NOISE * rng.sample::<f64, _>(StandardNormal)).collect();
                    v[(id as usize - 1) % dim] += 1.0;
                    v
                }
            };
            (node.id, v)
        })
        .collect();
    Ok(EmbeddingTable {
        graph_id: g.sentence_id.clone(),
        dim,
        vectors,
    })
}

/// A graph with one feature row per node, ready for the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturedGraph {
    pub graph: SentenceGraph,
    /// Row `i` holds the features of node `i`.
    pub features: Array2<f64>,
    pub teacher_label: usize,
    pub gold_label: Option<usize>,
}

impl FeaturedGraph {
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn id(&self) -> &str {
        &self.graph.sentence_id
    }
}

pub fn assign_features(g: &SentenceGraph, table: &EmbeddingTable) -> Result<FeaturedGraph, FeatureError> {
    let teacher_label = g
        .teacher_label
        .ok_or_else(|| FeatureError::MissingTeacherLabel(g.sentence_id.clone()))?;
    let mut features = Array2::zeros((g.len(), table.dim));
    for node in g.nodes() {
        let v = table.vectors.get(&node.id).ok_or(FeatureError::MissingNodeVector(node.id))?;
        if v.len() != table.dim {
            return Err(FeatureError::DimensionMismatch {
                graph_id: table.graph_id.clone(),
                node: node.id,
                expected: table.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FeatureError::NonFiniteValue {
                graph_id: table.graph_id.clone(),
                node: node.id,
            });
        }
        for (j, &x) in v.iter().enumerate() {
            features[[node.id, j]] = x;
        }
    }
    Ok(FeaturedGraph {
        graph: g.clone(),
        features,
        teacher_label,
        gold_label: g.gold_label,
    })
}
