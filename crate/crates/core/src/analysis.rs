//! What the explanations say: words recovered from each explanation
//! subgraph, structural graph statistics, and correlations between them.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::{Correctness, Explanation, Verdict};
use crate::graph::{NodeId, SentenceGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("subgraph node {0} is not in the graph")]
    SubgraphOutsideGraph(NodeId),
    #[error("subgraph is empty")]
    EmptySubgraph,
    #[error("{0} pruned components intersect the subgraph; the graph is not a strict hierarchy")]
    AmbiguousCluster(usize),
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("correlation needs at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for AnalysisError {
    fn from(e: csv::Error) -> Self {
        AnalysisError::Csv(e.to_string())
    }
}

/// Lowercase word list; matching lowercases the candidate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn builtin() -> &'static Stopwords {
        static BUILTIN: OnceLock<Stopwords> = OnceLock::new();
        BUILTIN.get_or_init(|| Stopwords::from_text(include_str!("../data/stopwords_en.txt")))
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub surface: String,
    /// Constituent names from the root down to the word's parent.
    pub chain: Vec<String>,
}

impl WordEntry {
    /// The nearest two ancestors, outermost first, joined for reports.
    pub fn short_chain(&self) -> String {
        let start = self.chain.len().saturating_sub(2);
        self.chain[start..].join(" > ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticResult {
    pub graph_id: String,
    pub words: Vec<WordEntry>,
    pub predicted_class: Option<usize>,
    pub verdict: Option<Verdict>,
    pub correctness: Option<Correctness>,
}

/// Words under the cluster holding `subgraph`, after pruning every node
/// closer to the root than the subgraph's shallowest node. Words come out in
/// breadth-first order from the cluster's top, stopwords removed.
pub fn extract_semantic_labels(
    g: &SentenceGraph,
    subgraph: &BTreeSet<NodeId>,
    stopwords: &Stopwords,
) -> Result<SemanticResult, AnalysisError> {
    if let Some(&bad) = subgraph.iter().find(|&&v| !g.contains(v)) {
        return Err(AnalysisError::SubgraphOutsideGraph(bad));
    }
    let depth = g.depths();
    let d_min = subgraph
        .iter()
        .map(|&v| depth[v])
        .min()
        .ok_or(AnalysisError::EmptySubgraph)?;
    // In a tree each surviving component is the subtree of one node at depth d_min.
    let top_of = |mut v: NodeId| {
        while depth[v] > d_min {
            v = g.parent(v).expect("non-root nodes have parents");
        }
        v
    };
    let tops: BTreeSet<NodeId> = subgraph.iter().map(|&v| top_of(v)).collect();
    if tops.len() > 1 {
        return Err(AnalysisError::AmbiguousCluster(tops.len()));
    }
    let top = *tops.iter().next().expect("subgraph is non-empty");

    let mut words = Vec::new();
    let mut queue = VecDeque::from([top]);
    while let Some(v) = queue.pop_front() {
        let node = g.node(v);
        if node.is_word() && !stopwords.contains(&node.surface) {
            words.push(WordEntry {
                surface: node.surface.clone(),
                chain: g.ancestor_chain(v).iter().map(|c| c.name().to_string()).collect(),
            });
        }
        queue.extend(g.children(v).iter().copied());
    }
    Ok(SemanticResult {
        graph_id: g.sentence_id.clone(),
        words,
        predicted_class: None,
        verdict: None,
        correctness: None,
    })
}

/// Runs extraction on an explanation and copies its verdict and correctness.
pub fn semantic_labels_for(
    g: &SentenceGraph,
    e: &Explanation,
    stopwords: &Stopwords,
) -> Result<SemanticResult, AnalysisError> {
    let mut r = extract_semantic_labels(g, &e.subgraph_set(), stopwords)?;
    r.predicted_class = Some(e.predicted_class);
    r.verdict = Some(e.verdict);
    r.correctness = Some(e.correctness);
    Ok(r)
}

/// Undirected adjacency lists.
pub type Adjacency = Vec<Vec<usize>>;

pub fn undirected(g: &SentenceGraph) -> Adjacency {
    (0..g.len()).map(|v| g.neighbors(v).to_vec()).collect()
}

fn bfs_distances(adj: &Adjacency, s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have distances");
        for &u in &adj[v] {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

pub fn is_connected(adj: &Adjacency) -> bool {
    adj.is_empty() || bfs_distances(adj, 0).iter().all(Option::is_some)
}

/// Brandes betweenness on an undirected graph, counting each unordered pair once.
pub fn betweenness(adj: &Adjacency) -> Vec<f64> {
    let n = adj.len();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0; n];
        let mut dist: Vec<i64> = vec![-1; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb.iter().map(|c| c / 2.0).collect()
}

/// Closeness `(n - 1) / sum of distances`; 0 for a lone node.
pub fn closeness(adj: &Adjacency) -> Result<Vec<f64>, AnalysisError> {
    let n = adj.len();
    (0..n)
        .map(|v| {
            let dist = bfs_distances(adj, v);
            let mut total = 0usize;
            for d in dist {
                total += d.ok_or(AnalysisError::DisconnectedGraph)?;
            }
            Ok(if total == 0 { 0.0 } else { (n - 1) as f64 / total as f64 })
        })
        .collect()
}

/// Unit-norm principal eigenvector by power iteration on `A + I`, which
/// shares eigenvectors with `A` but converges on bipartite graphs.
pub fn eigenvector_centrality(adj: &Adjacency) -> Vec<f64> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    for _ in 0..1000 {
        let mut next: Vec<f64> = (0..n).map(|v| x[v] + adj[v].iter().map(|&u| x[u]).sum::<f64>()).collect();
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        next.iter_mut().for_each(|a| *a /= norm);
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change < 1e-10 {
            break;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralRecord {
    pub graph_id: String,
    pub node_count: usize,
    pub edge_count: usize,
    pub degree_mean: f64,
    pub degree_max: f64,
    pub betweenness_mean: f64,
    pub betweenness_max: f64,
    pub closeness_mean: f64,
    pub closeness_max: f64,
    pub eigenvector_mean: f64,
    pub eigenvector_max: f64,
    pub predicted_class: Option<usize>,
    pub correctness: Option<Correctness>,
}

/// Numeric columns used for correlations, in record order.
pub const METRICS: [&str; 10] = [
    "node_count",
    "edge_count",
    "degree_mean",
    "degree_max",
    "betweenness_mean",
    "betweenness_max",
    "closeness_mean",
    "closeness_max",
    "eigenvector_mean",
    "eigenvector_max",
];

impl StructuralRecord {
    pub fn values(&self) -> [f64; 10] {
        [
            self.node_count as f64,
            self.edge_count as f64,
            self.degree_mean,
            self.degree_max,
            self.betweenness_mean,
            self.betweenness_max,
            self.closeness_mean,
            self.closeness_max,
            self.eigenvector_mean,
            self.eigenvector_max,
        ]
    }
}

fn mean_max(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (mean, xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Statistics of an undirected graph given as adjacency lists.
pub fn metrics_of(graph_id: &str, adj: &Adjacency) -> Result<StructuralRecord, AnalysisError> {
    if !is_connected(adj) {
        return Err(AnalysisError::DisconnectedGraph);
    }
    let degrees: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
    let (degree_mean, degree_max) = mean_max(&degrees);
    let (betweenness_mean, betweenness_max) = mean_max(&betweenness(adj));
    let (closeness_mean, closeness_max) = mean_max(&closeness(adj)?);
    let (eigenvector_mean, eigenvector_max) = mean_max(&eigenvector_centrality(adj));
    Ok(StructuralRecord {
        graph_id: graph_id.to_string(),
        node_count: adj.len(),
        edge_count: adj.iter().map(Vec::len).sum::<usize>() / 2,
        degree_mean,
        degree_max,
        betweenness_mean,
        betweenness_max,
        closeness_mean,
        closeness_max,
        eigenvector_mean,
        eigenvector_max,
        predicted_class: None,
        correctness: None,
    })
}

/// Statistics of the direction-blind view of a sentence graph.
pub fn structural_metrics(g: &SentenceGraph) -> Result<StructuralRecord, AnalysisError> {
    metrics_of(&g.sentence_id, &undirected(g))
}

/// Pearson correlations between every pair of metric columns. Constant
/// columns have no correlation and hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub records: usize,
}

/// Pearson correlation from running co-moments; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut mx, mut my, mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let (dx, dy) = (a - mx, b - my);
        mx += dx / n;
        my += dy / n;
        cxx += dx * (a - mx);
        cyy += dy * (b - my);
        cxy += dx * (b - my);
    }
    if cxx <= 0.0 || cyy <= 0.0 {
        return None;
    }
    Some((cxy / (cxx.sqrt() * cyy.sqrt())).clamp(-1.0, 1.0))
}

pub fn correlation_matrix(records: &[StructuralRecord]) -> Result<CorrelationMatrix, AnalysisError> {
    if records.len() < 3 {
        return Err(AnalysisError::TooFewRecords(records.len()));
    }
    let columns: Vec<Vec<f64>> = (0..METRICS.len())
        .map(|j| records.iter().map(|r| r.values()[j]).collect())
        .collect();
    let k = columns.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j {
                pearson(&columns[i], &columns[i]).map(|_| 1.0)
            } else {
                pearson(&columns[i], &columns[j])
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: METRICS.iter().map(|s| s.to_string()).collect(),
        values,
        records: records.len(),
    })
}

impl CorrelationMatrix {
    /// Square CSV with a `metric` header column; missing values print as `null`.
    pub fn to_csv(&self) -> Result<String, AnalysisError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or("null".to_string(), |x| format!("{x:.6}"))));
            w.write_record(&rec)?;
        }
        into_string(w)
    }

    /// Heatmap with blue for negative and red for positive; missing cells are grey.
    pub fn to_svg(&self, title: &str) -> String {
        let cell = 28;
        let left = 130;
        let top = 40;
        let k = self.names.len();
        let (w, h) = (left + cell * k + 10, top + cell * k + 130);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape_xml(title));
        for (i, row) in self.values.iter().enumerate() {
            let y = top + cell * i;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 4,
                y + cell / 2 + 3,
                self.names[i]
            );
            for (j, v) in row.iter().enumerate() {
                let x = left + cell * j;
                let (fill, label) = match v {
                    Some(r) => (heat(*r), format!("{r:.2}")),
                    None => ("rgb(200,200,200)".to_string(), "null".to_string()),
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"><title>{} / {}: {label}</title></rect>"#,
                    self.names[i], self.names[j]
                );
            }
        }
        for (j, name) in self.names.iter().enumerate() {
            let x = left + cell * j + cell / 2;
            let y = top + cell * k + 6;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" transform="rotate(60 {x} {y})">{name}</text>"#
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn heat(r: f64) -> String {
    let t = (r.abs() * 255.0).round() as u8;
    let fade = 255 - t;
    if r >= 0.0 {
        format!("rgb(255,{fade},{fade})")
    } else {
        format!("rgb({fade},{fade},255)")
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, AnalysisError> {
    let bytes = w.into_inner().map_err(|e| AnalysisError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AnalysisError::Csv(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub class: Option<usize>,
    pub correctness: Option<Correctness>,
    pub chain: String,
    pub word: String,
    pub count: usize,
}

/// Word counts grouped by class, correctness and short parent chain. Within a
/// group, higher counts come first and ties go alphabetically.
pub fn frequency_report(results: &[SemanticResult]) -> Vec<FrequencyRow> {
    type Key = (Option<usize>, Option<Correctness>, String, String);
    let mut counts: BTreeMap<Key, usize> = BTreeMap::new();
    for r in results {
        for w in &r.words {
            *counts
                .entry((r.predicted_class, r.correctness, w.short_chain(), w.surface.clone()))
                .or_default() += 1;
        }
    }
    let mut rows: Vec<FrequencyRow> = counts
        .into_iter()
        .map(|((class, correctness, chain, word), count)| FrequencyRow {
            class,
            correctness,
            chain,
            word,
            count,
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.class, a.correctness, &a.chain)
            .cmp(&(b.class, b.correctness, &b.chain))
            .then(b.count.cmp(&a.count))
            .then(a.word.cmp(&b.word))
    });
    rows
}

fn correctness_str(c: Option<Correctness>) -> &'static str {
    match c {
        Some(Correctness::Correct) => "correct",
        Some(Correctness::Incorrect) => "incorrect",
        Some(Correctness::Unknown) | None => "unknown",
    }
}

fn opt_class(c: Option<usize>) -> String {
    c.map_or_else(String::new, |c| c.to_string())
}

pub fn words_csv(rows: &[FrequencyRow]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "correctness", "chain", "word", "count"])?;
    for r in rows {
        w.write_record([
            opt_class(r.class),
            correctness_str(r.correctness).to_string(),
            r.chain.clone(),
            r.word.clone(),
            r.count.to_string(),
        ])?;
    }
    into_string(w)
}

pub fn metrics_csv(records: &[StructuralRecord]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["graph_id", "class", "correctness"];
    header.extend(METRICS);
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![r.graph_id.clone(), opt_class(r.predicted_class), correctness_str(r.correctness).into()];
        rec.extend(r.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    into_string(w)
}

/// Groups records by (class, correctness) for per-group correlation.
pub fn group_records(records: &[StructuralRecord]) -> BTreeMap<(Option<usize>, &'static str), Vec<StructuralRecord>> {
    let mut groups: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.predicted_class, correctness_str(r.correctness)))
            .or_default()
            .push(r.clone());
    }
    groups
}
