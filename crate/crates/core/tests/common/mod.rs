//! Generators and independent reference implementations shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treexplain::corpus::{generate_corpus, CorpusConfig};
use treexplain::explain::CoalitionGame;
use ndarray::Array2;
use treexplain::features::{assign_features, hash_embed, FeaturedGraph};
use treexplain::gcn::{Activation, GcnModel, PreparedGraph};
use treexplain::graph::{tree_to_graph, GraphNode, NodeId, NodeKind, SentenceGraph};
use treexplain::treebank::{parse_bracketed, Constituent, UnknownLabelPolicy};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random out-tree on `n` nodes; childless nodes other than the root are words.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> SentenceGraph {
    let parent: Vec<Option<usize>> = (0..n).map(|v| (v > 0).then(|| rng.random_range(0..v))).collect();
    let has_child: Vec<bool> = (0..n).map(|v| parent.contains(&Some(v))).collect();
    let mut pos = 0;
    let nodes = (0..n)
        .map(|id| {
            if has_child[id] || id == 0 {
                let kind = Constituent::ALL[rng.random_range(0..Constituent::ALL.len())];
                GraphNode {
                    id,
                    kind: NodeKind::Special(kind),
                    surface: kind.name().into(),
                    position: None,
                }
            } else {
                pos += 1;
                GraphNode {
                    id,
                    kind: NodeKind::Word,
                    surface: format!("w{}", rng.random_range(0..6)),
                    position: Some(pos - 1),
                }
            }
        })
        .collect();
    let edges = (1..n).map(|v| (parent[v].unwrap(), v)).collect();
    SentenceGraph::new("rand", nodes, edges, 0).unwrap()
}

const PHRASES: &[&str] = &["S", "NP", "VP", "PP", "ADJP", "ADVP", "SBAR", "QP", "NP-SBJ", "FOO"];
const POS: &[&str] = &["DT", "NN", "VBZ", "IN", "JJ", "CD"];
const WORDS: &[&str] = &["the", "cat", "of", "runs", "big", "three", "a", "dog", "and", "in", "-LRB-"];

fn random_phrase(rng: &mut ChaCha8Rng, depth: usize, out: &mut String) {
    let label = PHRASES[rng.random_range(0..PHRASES.len())];
    out.push('(');
    out.push_str(label);
    let kids = rng.random_range(1..=3);
    for _ in 0..kids {
        out.push(' ');
        if depth < 4 && rng.random_bool(0.45) {
            random_phrase(rng, depth + 1, out);
        } else {
            let tag = POS[rng.random_range(0..POS.len())];
            let word = WORDS[rng.random_range(0..WORDS.len())];
            out.push_str(&format!("({tag} {word})"));
        }
    }
    out.push(')');
}

/// Random bracketed sentence whose top node is always a phrase.
pub fn random_bracketed(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    random_phrase(rng, 0, &mut s);
    s
}

/// Expected graph from a recursive walk over the raw bracket text: pre-order
/// ids, preterminals skipped, unknown tags mapped to the fallback.
pub fn reference_conversion(text: &str) -> (Vec<String>, Vec<(usize, usize)>) {
    #[derive(Debug)]
    enum T {
        Node(String, Vec<T>),
        Word(String),
    }
    fn parse(tokens: &[String], i: &mut usize) -> T {
        if tokens[*i] == "(" {
            *i += 1;
            let label = if tokens[*i] != "(" && tokens[*i] != ")" {
                *i += 1;
                tokens[*i - 1].clone()
            } else {
                String::new()
            };
            let mut kids = Vec::new();
            while tokens[*i] != ")" {
                kids.push(parse(tokens, i));
            }
            *i += 1;
            T::Node(label, kids)
        } else {
            *i += 1;
            T::Word(tokens[*i - 1].clone())
        }
    }
    fn name(tag: &str) -> String {
        let base = tag.split(['-', '=', '|']).next().unwrap();
        let id = match base {
            "S" => 1,
            "NP" => 2,
            "VP" => 3,
            "PP" => 4,
            "ADJP" => 5,
            "ADVP" => 6,
            "SBAR" => 7,
            "QP" => 23,
            _ => 24,
        };
        Constituent::from_id(id).unwrap().name().to_string()
    }
    fn walk(t: &T, parent: Option<usize>, is_top: bool, out: &mut (Vec<String>, Vec<(usize, usize)>)) {
        match t {
            T::Word(w) => {
                let id = out.0.len();
                out.0.push(format!("word:{w}"));
                if let Some(p) = parent {
                    out.1.push((p, id));
                }
            }
            T::Node(label, kids) => {
                if !is_top && kids.len() == 1 && matches!(kids[0], T::Word(_)) {
                    return walk(&kids[0], parent, false, out);
                }
                let id = out.0.len();
                out.0.push(format!("special:{}", name(label)));
                if let Some(p) = parent {
                    out.1.push((p, id));
                }
                for k in kids {
                    walk(k, Some(id), false, out);
                }
            }
        }
    }
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let tokens: Vec<String> = spaced.split_whitespace().map(String::from).collect();
    let tree = parse(&tokens, &mut 0);
    let mut out = (Vec::new(), Vec::new());
    walk(&tree, None, true, &mut out);
    out
}

pub fn describe(g: &SentenceGraph) -> (Vec<String>, Vec<(usize, usize)>) {
    let nodes = g
        .nodes()
        .iter()
        .map(|n| match n.kind {
            NodeKind::Word => format!("word:{}", n.surface),
            NodeKind::Special(c) => format!("special:{}", c.name()),
        })
        .collect();
    (nodes, g.edges().to_vec())
}

/// Textbook Shapley value of `players` as one bloc: average marginal gain
/// over every ordering of the bloc and the other nodes of the universe.
pub fn exact_bloc_shapley<G: CoalitionGame>(
    g: &SentenceGraph,
    game: &G,
    players: &BTreeSet<NodeId>,
    radius: usize,
) -> f64 {
    let seeds: Vec<NodeId> = players.iter().copied().collect();
    let others: Vec<NodeId> = g
        .neighborhood(&seeds, radius)
        .into_iter()
        .filter(|v| !players.contains(v))
        .collect();
    // Token usize::MAX stands for the bloc.
    let mut items: Vec<usize> = others.clone();
    items.push(usize::MAX);
    let mut total = 0.0;
    let mut count = 0usize;
    permute(&mut items, 0, &mut |order| {
        let mut keep = vec![false; g.len()];
        for &t in order.iter().take_while(|&&t| t != usize::MAX) {
            keep[t] = true;
        }
        let before = game.value(&keep);
        for &p in players {
            keep[p] = true;
        }
        total += game.value(&keep) - before;
        count += 1;
    });
    total / count as f64
}

fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Every weakly connected node set with size in `lo..=hi`.
pub fn connected_sets(g: &SentenceGraph, lo: usize, hi: usize) -> Vec<BTreeSet<NodeId>> {
    let mut out = BTreeSet::new();
    let mut frontier: BTreeSet<BTreeSet<NodeId>> = (0..g.len()).map(|v| BTreeSet::from([v])).collect();
    for size in 1..=hi {
        if size >= lo {
            out.extend(frontier.iter().cloned());
        }
        let mut next = BTreeSet::new();
        for s in &frontier {
            for &v in s {
                for &u in g.neighbors(v) {
                    if !s.contains(&u) {
                        let mut t = s.clone();
                        t.insert(u);
                        next.insert(t);
                    }
                }
            }
        }
        frontier = next;
    }
    out.into_iter().collect()
}

/// Grows a connected node set of size `k` from a random start.
pub fn random_connected_set(rng: &mut ChaCha8Rng, g: &SentenceGraph, k: usize) -> BTreeSet<NodeId> {
    let mut set = BTreeSet::from([rng.random_range(0..g.len())]);
    while set.len() < k.min(g.len()) {
        let frontier: Vec<NodeId> = set
            .iter()
            .flat_map(|&v| g.neighbors(v).iter().copied())
            .filter(|u| !set.contains(u))
            .collect();
        set.insert(frontier[rng.random_range(0..frontier.len())]);
    }
    set
}

/// Label extraction written out step by step: distances from the root,
/// pruning, component search, cluster filter, breadth-first collection,
/// word filter, stopword filter.
pub fn literal_extraction(
    g: &SentenceGraph,
    subgraph: &BTreeSet<NodeId>,
    stopwords: &BTreeSet<String>,
) -> Result<Vec<String>, String> {
    let root = g.root();
    let bfs = |from: NodeId| -> HashMap<NodeId, usize> {
        let mut d = HashMap::from([(from, 0)]);
        let mut q = VecDeque::from([from]);
        while let Some(v) = q.pop_front() {
            for &c in g.children(v) {
                let next = d[&v] + 1;
                if let std::collections::hash_map::Entry::Vacant(e) = d.entry(c) {
                    e.insert(next);
                    q.push_back(c);
                }
            }
        }
        d
    };
    let dist_from_root = bfs(root);
    let mut dist = HashMap::new();
    for &v in subgraph {
        dist.insert(v, dist_from_root[&v]);
    }
    let d_min = *dist.values().min().ok_or("empty")?;

    let mut alive: BTreeSet<NodeId> = (0..g.len()).collect();
    for v in 0..g.len() {
        if dist_from_root[&v] < d_min {
            alive.remove(&v);
        }
    }
    let edges: Vec<(NodeId, NodeId)> = g
        .edges()
        .iter()
        .copied()
        .filter(|(a, b)| alive.contains(a) && alive.contains(b))
        .collect();

    // Union-find components.
    let mut parent: HashMap<NodeId, NodeId> = alive.iter().map(|&v| (v, v)).collect();
    fn find(p: &mut HashMap<NodeId, NodeId>, v: NodeId) -> NodeId {
        let up = p[&v];
        if up == v {
            return v;
        }
        let r = find(p, up);
        p.insert(v, r);
        r
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra, rb);
        }
    }
    let mut clusters: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
    for &v in &alive {
        let r = find(&mut parent, v);
        clusters.entry(r).or_default().insert(v);
    }
    let mut remaining: Vec<BTreeSet<NodeId>> = clusters.into_values().collect();
    remaining.retain(|c| !c.is_disjoint(subgraph));
    if remaining.len() != 1 {
        return Err(format!("{} clusters", remaining.len()));
    }
    let cluster = remaining.pop().unwrap();

    // Breadth-first from the cluster node nearest the root, over cluster edges.
    let start = *cluster.iter().min_by_key(|&&v| (dist_from_root[&v], v)).unwrap();
    let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for &(a, b) in &edges {
        if cluster.contains(&a) {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
    }
    let mut labels = Vec::new();
    let mut seen = BTreeSet::from([start]);
    let mut q = VecDeque::from([start]);
    while let Some(v) = q.pop_front() {
        labels.push(v);
        for &u in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(u) {
                q.push_back(u);
            }
        }
    }
    Ok(labels
        .into_iter()
        .filter(|&v| g.node(v).is_word())
        .map(|v| g.node(v).surface.clone())
        .filter(|w| !stopwords.contains(&w.to_lowercase()))
        .collect())
}

/// Parsed, converted and hash-featured synthetic corpus.
pub fn featured_corpus(size: usize, seed: u64, dim: usize) -> Vec<FeaturedGraph> {
    generate_corpus(&CorpusConfig {
        size,
        seed,
        teacher_noise: 0.0,
    })
    .iter()
    .map(|r| {
        let mut t = parse_bracketed(&r.tree).unwrap();
        t.sentence_id = r.id.clone();
        t.gold_label = r.gold_label;
        t.teacher_label = r.teacher_label;
        let g = tree_to_graph(&t, UnknownLabelPolicy::MapToNotAConstituent).unwrap();
        assign_features(&g, &hash_embed(&g, dim, seed).unwrap()).unwrap()
    })
    .collect()
}

/// Undirected Brandes-free betweenness: for every pair, count shortest
/// paths through each node by enumerating all simple shortest paths.
pub fn brute_betweenness(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let dist = |s: usize| {
        let mut d = vec![usize::MAX; n];
        d[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &u in &adj[v] {
                if d[u] == usize::MAX {
                    d[u] = d[v] + 1;
                    q.push_back(u);
                }
            }
        }
        d
    };
    let all: Vec<Vec<usize>> = (0..n).map(dist).collect();
    let mut out = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![vec![s]];
            while let Some(p) = stack.pop() {
                let v = *p.last().unwrap();
                if v == t {
                    paths.push(p);
                    continue;
                }
                for &u in &adj[v] {
                    if all[s][u] == all[s][v] + 1 && all[u][t] + all[s][u] == all[s][t] {
                        let mut q = p.clone();
                        q.push(u);
                        stack.push(q);
                    }
                }
            }
            for p in &paths {
                for &v in &p[1..p.len() - 1] {
                    out[v] += 1.0 / paths.len() as f64;
                }
            }
        }
    }
    out
}

/// Pearson correlation by the two-pass textbook formula.
pub fn two_pass_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn star(n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for v in 1..n {
        adj[0].push(v);
        adj[v].push(0);
    }
    adj
}

pub fn path(n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for v in 1..n {
        adj[v - 1].push(v);
        adj[v].push(v - 1);
    }
    adj
}

pub fn cycle(n: usize) -> Vec<Vec<usize>> {
    let mut adj = path(n);
    adj[0].push(n - 1);
    adj[n - 1].push(0);
    adj
}

/// Maximum absolute gap between two slices.
pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Closed-form betweenness, closeness and eigenvector centrality for
/// stars, paths and cycles of size `n`. Returns the worst gap found.
pub fn closed_form_gap(n: usize) -> f64 {
    use treexplain::analysis::{betweenness, closeness, eigenvector_centrality};
    let nf = n as f64;
    let mut worst: f64 = 0.0;

    let s = star(n);
    let mut b = vec![0.0; n];
    b[0] = (nf - 1.0) * (nf - 2.0) / 2.0;
    let mut c = vec![(nf - 1.0) / (2.0 * nf - 3.0); n];
    c[0] = 1.0;
    let mut e = vec![1.0 / (2.0 * (nf - 1.0)).sqrt(); n];
    e[0] = 1.0 / 2f64.sqrt();
    worst = worst
        .max(max_gap(&betweenness(&s), &b))
        .max(max_gap(&closeness(&s).unwrap(), &c))
        .max(max_gap(&eigenvector_centrality(&s), &e));

    let p = path(n);
    let b: Vec<f64> = (0..n).map(|i| (i * (n - 1 - i)) as f64).collect();
    let c: Vec<f64> = (0..n)
        .map(|i| (nf - 1.0) / ((i * (i + 1) / 2 + (n - 1 - i) * (n - i) / 2) as f64))
        .collect();
    worst = worst.max(max_gap(&betweenness(&p), &b)).max(max_gap(&closeness(&p).unwrap(), &c));

    let cy = cycle(n);
    let bc = if n % 2 == 1 {
        (nf - 1.0) * (nf - 3.0) / 8.0
    } else {
        (nf - 2.0) * (nf - 2.0) / 8.0
    };
    let dist_sum = if n % 2 == 1 { (nf * nf - 1.0) / 4.0 } else { nf * nf / 4.0 };
    worst = worst
        .max(max_gap(&betweenness(&cy), &vec![bc; n]))
        .max(max_gap(&closeness(&cy).unwrap(), &vec![(nf - 1.0) / dist_sum; n]))
        .max(max_gap(&eigenvector_centrality(&cy), &vec![1.0 / nf.sqrt(); n]));
    worst
}

/// Random graph with uniform features in [-1, 1).
pub fn random_featured(rng: &mut ChaCha8Rng, n: usize, dim: usize, label: usize) -> FeaturedGraph {
    let graph = random_graph(rng, n);
    let features = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    FeaturedGraph {
        graph,
        features,
        teacher_label: label,
        gold_label: Some(label),
    }
}

/// Worst relative gap between analytic and central-difference gradients
/// of the training loss on two random graphs.
pub fn gradient_check(activation: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10);
    let graphs: Vec<_> = (0..2).map(|i| random_featured(&mut rng, n, 5, i % 3)).collect();
    let prepared: Vec<_> = graphs.iter().map(PreparedGraph::new).collect();
    let batch: Vec<_> = prepared.iter().zip(&graphs).map(|(p, g)| (p, g.teacher_label)).collect();
    let mut model = GcnModel::new(5, &[4, 3], &[3], 3, activation, seed);
    // Non-zero biases keep ReLU pre-activations off the kink at 0.
    let jittered: Vec<f64> = model.parameters().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    model.set_parameters(&jittered);
    let l2 = 0.01;
    let (_, grads) = model.loss_and_gradients(&batch, l2);
    let analytic = grads.parameters();
    let params = model.parameters();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        model.set_parameters(&p);
        let up = model.loss(&batch, l2);
        p[i] -= 2.0 * h;
        model.set_parameters(&p);
        let down = model.loss(&batch, l2);
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    model.set_parameters(&params);
    worst
}
