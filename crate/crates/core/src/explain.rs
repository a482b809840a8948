//! Subgraph explanations: Monte Carlo tree search over connected node sets,
//! each scored by the Shapley value of the set acting as one player inside
//! its local neighborhood.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeaturedGraph;
use crate::gcn::{softmax, GcnError, GcnModel, MaskMode, PreparedGraph};
use crate::graph::{NodeId, SentenceGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("player set is empty")]
    EmptyPlayerSet,
    #[error("graph has {nodes} nodes, fewer than min_atoms = {min_atoms}")]
    GraphTooSmall { nodes: usize, min_atoms: usize },
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("invalid explainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] GcnError),
}

/// A value function over node coalitions: `keep[v]` is true for visible nodes.
pub trait CoalitionGame {
    fn value(&self, keep: &[bool]) -> f64;
}

impl<F: Fn(&[bool]) -> f64> CoalitionGame for F {
    fn value(&self, keep: &[bool]) -> f64 {
        self(keep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Softmax probability of the target class.
    #[default]
    Probability,
    /// Raw class score before the softmax.
    Logit,
}

/// The trained classifier seen as a coalition game for one target class.
pub struct GcnGame<'a> {
    model: &'a GcnModel,
    prepared: PreparedGraph<'a>,
    class: usize,
    score: ScoreMode,
    mask: MaskMode,
}

impl<'a> GcnGame<'a> {
    pub fn new(model: &'a GcnModel, fg: &'a FeaturedGraph, class: usize, score: ScoreMode, mask: MaskMode) -> Self {
        GcnGame {
            model,
            prepared: PreparedGraph::new(fg),
            class,
            score,
            mask,
        }
    }
}

impl CoalitionGame for GcnGame<'_> {
    fn value(&self, keep: &[bool]) -> f64 {
        let logits = self.model.logits_masked(&self.prepared, Some(keep), self.mask);
        match self.score {
            ScoreMode::Logit => logits[self.class],
            ScoreMode::Probability => softmax(&logits)[self.class],
        }
    }
}

/// Memoizes coalition values by visible-node bitmask.
pub struct CachedGame<G> {
    inner: G,
    cache: RefCell<HashMap<Vec<u64>, f64>>,
}

impl<G: CoalitionGame> CachedGame<G> {
    pub fn new(inner: G) -> Self {
        CachedGame {
            inner,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.cache.borrow().len()
    }
}

impl<G: CoalitionGame> CoalitionGame for CachedGame<G> {
    fn value(&self, keep: &[bool]) -> f64 {
        let mut key = vec![0u64; keep.len().div_ceil(64)];
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            key[i / 64] |= 1 << (i % 64);
        }
        if let Some(&v) = self.cache.borrow().get(&key) {
            return v;
        }
        let v = self.inner.value(keep);
        self.cache.borrow_mut().insert(key, v);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    /// Enumerate when the non-player universe is at most the exhaustive limit.
    #[default]
    Auto,
    Exhaustive,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapleyParams {
    pub local_radius: usize,
    pub samples: usize,
    pub mode: ShapleyMode,
    pub exhaustive_limit: usize,
    pub seed: u64,
}

impl Default for ShapleyParams {
    fn default() -> Self {
        ShapleyParams {
            local_radius: 1,
            samples: 5,
            mode: ShapleyMode::Auto,
            exhaustive_limit: 12,
            seed: 0,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn set_seed(seed: u64, players: &BTreeSet<NodeId>) -> u64 {
    players.iter().fold(splitmix(seed), |acc, &v| splitmix(acc ^ v as u64))
}

/// Shapley weights `s! (m - s)! / (m + 1)!` for coalition sizes `s = 0..=m`.
fn bloc_weights(m: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=m + 1)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    (0..=m).map(|s| fact[s] * fact[m - s] / fact[m + 1]).collect()
}

/// Shapley value of `players` acting as a single player among the nodes
/// within `local_radius` hops of them. Nodes outside that universe stay hidden.
pub fn shapley_score<G: CoalitionGame + ?Sized>(
    g: &SentenceGraph,
    game: &G,
    players: &BTreeSet<NodeId>,
    params: &ShapleyParams,
) -> Result<f64, ExplainError> {
    if players.is_empty() {
        return Err(ExplainError::EmptyPlayerSet);
    }
    if let Some(&bad) = players.iter().find(|&&v| !g.contains(v)) {
        return Err(ExplainError::UnknownNode(bad));
    }
    let seeds: Vec<NodeId> = players.iter().copied().collect();
    let others: Vec<NodeId> = g
        .neighborhood(&seeds, params.local_radius)
        .into_iter()
        .filter(|v| !players.contains(v))
        .collect();
    let m = others.len();
    let mut keep = vec![false; g.len()];
    let marginal = |coalition: &mut dyn Iterator<Item = NodeId>, keep: &mut Vec<bool>| {
        keep.fill(false);
        for v in coalition {
            keep[v] = true;
        }
        let without = game.value(keep);
        for &p in players {
            keep[p] = true;
        }
        game.value(keep) - without
    };

    let exhaustive = match params.mode {
        ShapleyMode::Exhaustive => true,
        ShapleyMode::Sampling => false,
        ShapleyMode::Auto => m <= params.exhaustive_limit,
    };
    if exhaustive {
        let weights = bloc_weights(m);
        let mut total = 0.0;
        for mask in 0u64..(1u64 << m) {
            let mut members = others.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &v)| v);
            total += weights[mask.count_ones() as usize] * marginal(&mut members, &mut keep);
        }
        return Ok(total);
    }

    let samples = params.samples.max(1);
    let base = set_seed(params.seed, players);
    let mut total = 0.0;
    // Tokens 0..m are the other nodes, m is the player bloc.
    let mut order: Vec<usize> = (0..=m).collect();
    for k in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(base ^ (k as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut before = order.iter().take_while(|&&t| t != m).map(|&t| others[t]);
        total += marginal(&mut before, &mut keep);
    }
    Ok(total / samples as f64)
}

fn int_in(name: &str, v: usize, lo: usize, hi: usize) -> Result<(), ExplainError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(ExplainError::InvalidConfig(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

/// Explainer hyperparameters; the searchable fields carry their valid ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgraphXConfig {
    pub num_hops: usize,
    pub rollout: usize,
    pub min_atoms: usize,
    pub c_exploration: f64,
    pub expand_atoms: usize,
    pub local_radius: usize,
    pub sample_num: usize,
    pub max_nodes: usize,
    pub rng_seed: u64,
    pub score_mode: ScoreMode,
    pub mask_mode: MaskMode,
    pub shapley_mode: ShapleyMode,
    pub exhaustive_limit: usize,
    /// Margin within which masked and unmasked scores count as tied.
    pub tie_epsilon: f64,
}

impl Default for SubgraphXConfig {
    fn default() -> Self {
        SubgraphXConfig {
            num_hops: 3,
            rollout: 100,
            min_atoms: 3,
            c_exploration: 10.0,
            expand_atoms: 1,
            local_radius: 2,
            sample_num: 5,
            max_nodes: 6,
            rng_seed: 0,
            score_mode: ScoreMode::Probability,
            mask_mode: MaskMode::ZeroFeatures,
            shapley_mode: ShapleyMode::Auto,
            exhaustive_limit: 12,
            tie_epsilon: 0.0,
        }
    }
}

impl SubgraphXConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        int_in("num_hops", self.num_hops, 1, 5)?;
        int_in("rollout", self.rollout, 50, 300)?;
        int_in("min_atoms", self.min_atoms, 1, 10)?;
        int_in("expand_atoms", self.expand_atoms, 1, 5)?;
        int_in("local_radius", self.local_radius, 1, 5)?;
        int_in("sample_num", self.sample_num, 1, 5)?;
        int_in("max_nodes", self.max_nodes, 2, 40)?;
        if !(0.1..=30.0).contains(&self.c_exploration) {
            return Err(ExplainError::InvalidConfig(format!(
                "c_exploration = {} outside [0.1, 30]",
                self.c_exploration
            )));
        }
        if self.max_nodes < self.min_atoms {
            return Err(ExplainError::InvalidConfig(format!(
                "max_nodes = {} is smaller than min_atoms = {}",
                self.max_nodes, self.min_atoms
            )));
        }
        if !(self.tie_epsilon >= 0.0) {
            return Err(ExplainError::InvalidConfig("tie_epsilon must be non-negative".into()));
        }
        Ok(())
    }

    pub fn shapley_params(&self) -> ShapleyParams {
        ShapleyParams {
            local_radius: self.local_radius,
            samples: self.sample_num,
            mode: self.shapley_mode,
            exhaustive_limit: self.exhaustive_limit,
            seed: self.rng_seed,
        }
    }
}

struct SearchNode {
    set: Vec<NodeId>,
    reward: f64,
    visits: u32,
    total: f64,
    children: Option<Vec<usize>>,
    /// Traversals of each child edge; states reached by several paths share
    /// their own visit count, so this is kept per edge.
    edge_visits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub subgraph: BTreeSet<NodeId>,
    pub reward: f64,
    pub root_set: BTreeSet<NodeId>,
    /// Visits of the search root; equals the rollout count.
    pub root_visits: u32,
    /// Traversals from the search root into each of its children.
    pub root_child_visits: Vec<u32>,
    pub states: usize,
}

/// Largest weak component of `set` (ties go to the one holding the smallest id).
fn largest_component(g: &SentenceGraph, set: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut best = BTreeSet::new();
    for &start in set {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if set.contains(&u) && comp.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen.extend(comp.iter().copied());
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Hop distances from `from` inside the subgraph induced by `set`.
fn distances_within(g: &SentenceGraph, set: &BTreeSet<NodeId>, from: NodeId) -> HashMap<NodeId, usize> {
    let mut dist = HashMap::from([(from, 0)]);
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        for &u in g.neighbors(v) {
            if set.contains(&u) && !dist.contains_key(&u) {
                dist.insert(u, d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Connected children of `set`: for each node `v`, drop `v`, keep the largest
/// remaining component, then keep trimming the leaf nearest `v` until
/// `expand_atoms` nodes are gone. Children never shrink below `min_atoms`.
fn child_sets(g: &SentenceGraph, set: &[NodeId], expand_atoms: usize, min_atoms: usize) -> Vec<Vec<NodeId>> {
    if set.len() <= min_atoms {
        return Vec::new();
    }
    let target = expand_atoms.min(set.len() - min_atoms);
    let full: BTreeSet<NodeId> = set.iter().copied().collect();
    let inner_degree = |v: NodeId, within: &BTreeSet<NodeId>| g.neighbors(v).iter().filter(|u| within.contains(u)).count();
    let mut candidates: Vec<NodeId> = set.to_vec();
    candidates.sort_by_key(|&v| (std::cmp::Reverse(inner_degree(v, &full)), v));

    let mut out: Vec<Vec<NodeId>> = Vec::new();
    let mut seen = BTreeSet::new();
    for v in candidates {
        let mut rest = full.clone();
        rest.remove(&v);
        let mut child = largest_component(g, &rest);
        if full.len() - child.len() < target {
            let dist = distances_within(g, &full, v);
            while full.len() - child.len() < target {
                let leaf = child
                    .iter()
                    .copied()
                    .filter(|&u| inner_degree(u, &child) <= 1)
                    .min_by_key(|u| (dist.get(u).copied().unwrap_or(usize::MAX), *u));
                match leaf {
                    Some(u) => {
                        child.remove(&u);
                    }
                    None => break,
                }
            }
        }
        if child.len() < min_atoms || child.is_empty() {
            continue;
        }
        let child: Vec<NodeId> = child.into_iter().collect();
        if seen.insert(child.clone()) {
            out.push(child);
        }
    }
    out
}

/// Start of the search: nodes within `num_hops` of the highest-degree node,
/// widened hop by hop while it holds fewer than `min_atoms` nodes.
pub fn search_root(g: &SentenceGraph, num_hops: usize, min_atoms: usize) -> BTreeSet<NodeId> {
    let center = (0..g.len())
        .max_by_key(|&v| (g.degree(v), std::cmp::Reverse(v)))
        .expect("graphs are non-empty");
    let mut hops = num_hops;
    loop {
        let set = g.neighborhood(&[center], hops);
        if set.len() >= min_atoms || set.len() == g.len() {
            return set;
        }
        hops += 1;
    }
}

/// Monte Carlo tree search for the connected node set with the highest
/// Shapley reward whose size lies in `[min_atoms, max_nodes]`.
pub fn mcts_search<G: CoalitionGame + ?Sized>(
    g: &SentenceGraph,
    game: &G,
    cfg: &SubgraphXConfig,
) -> Result<SearchResult, ExplainError> {
    cfg.validate()?;
    if g.len() < cfg.min_atoms {
        return Err(ExplainError::GraphTooSmall {
            nodes: g.len(),
            min_atoms: cfg.min_atoms,
        });
    }
    let params = cfg.shapley_params();
    let root_set = search_root(g, cfg.num_hops, cfg.min_atoms);

    let mut arena: Vec<SearchNode> = Vec::new();
    let mut index: HashMap<Vec<NodeId>, usize> = HashMap::new();
    let mut intern = |set: Vec<NodeId>, arena: &mut Vec<SearchNode>| -> Result<usize, ExplainError> {
        if let Some(&i) = index.get(&set) {
            return Ok(i);
        }
        let players: BTreeSet<NodeId> = set.iter().copied().collect();
        let reward = shapley_score(g, game, &players, &params)?;
        arena.push(SearchNode {
            set: set.clone(),
            reward,
            visits: 0,
            total: 0.0,
            children: None,
            edge_visits: Vec::new(),
        });
        index.insert(set, arena.len() - 1);
        Ok(arena.len() - 1)
    };
    let root = intern(root_set.iter().copied().collect(), &mut arena)?;

    for _ in 0..cfg.rollout {
        let mut path = vec![root];
        let mut cur = root;
        loop {
            if arena[cur].children.is_none() {
                let sets = child_sets(g, &arena[cur].set, cfg.expand_atoms, cfg.min_atoms);
                let mut kids = Vec::with_capacity(sets.len());
                for s in sets {
                    kids.push(intern(s, &mut arena)?);
                }
                arena[cur].edge_visits = vec![0; kids.len()];
                arena[cur].children = Some(kids);
            }
            let kids = arena[cur].children.as_ref().expect("expanded above");
            if kids.is_empty() {
                break;
            }
            let unvisited = (0..kids.len())
                .filter(|&j| arena[kids[j]].visits == 0)
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if arena[kids[b]].reward >= arena[kids[j]].reward => Some(b),
                    _ => Some(j),
                });
            let slot = unvisited.unwrap_or_else(|| {
                let ln_parent = (arena[cur].visits.max(1) as f64).ln();
                let ucb = |j: usize| {
                    let n = arena[kids[j]].visits as f64;
                    arena[kids[j]].total / n + cfg.c_exploration * (ln_parent / n).sqrt()
                };
                (0..kids.len())
                    .fold(None, |best: Option<usize>, j| match best {
                        Some(b) if ucb(b) >= ucb(j) => Some(b),
                        _ => Some(j),
                    })
                    .expect("children are non-empty")
            });
            let next = kids[slot];
            arena[cur].edge_visits[slot] += 1;
            path.push(next);
            cur = next;
        }
        let value = arena[cur].reward;
        for &i in &path {
            arena[i].visits += 1;
            arena[i].total += value;
        }
    }

    let best = arena
        .iter()
        .filter(|n| (cfg.min_atoms..=cfg.max_nodes).contains(&n.set.len()))
        .min_by(|a, b| {
            b.reward
                .total_cmp(&a.reward)
                .then(a.set.len().cmp(&b.set.len()))
                .then(a.set.cmp(&b.set))
        })
        .ok_or_else(|| ExplainError::InvalidConfig("search found no subgraph within the size limits".into()))?;
    let root_child_visits = arena[root].edge_visits.clone();
    Ok(SearchResult {
        subgraph: best.set.iter().copied().collect(),
        reward: best.reward,
        root_set,
        root_visits: arena[root].visits,
        root_child_visits,
        states: arena.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub s_masked: f64,
    pub s_unmasked: f64,
    pub s_masked_raw: f64,
    pub s_unmasked_raw: f64,
}

/// Shapley importance of `subgraph` and of its complement, clamped to [0, 1].
/// An empty complement scores 0.
pub fn score_pair<G: CoalitionGame + ?Sized>(
    g: &SentenceGraph,
    game: &G,
    subgraph: &BTreeSet<NodeId>,
    params: &ShapleyParams,
) -> Result<ScorePair, ExplainError> {
    let s_masked_raw = shapley_score(g, game, subgraph, params)?;
    let complement: BTreeSet<NodeId> = (0..g.len()).filter(|v| !subgraph.contains(v)).collect();
    let s_unmasked_raw = if complement.is_empty() {
        0.0
    } else {
        shapley_score(g, game, &complement, params)?
    };
    Ok(ScorePair {
        s_masked: s_masked_raw.clamp(0.0, 1.0),
        s_unmasked: s_unmasked_raw.clamp(0.0, 1.0),
        s_masked_raw,
        s_unmasked_raw,
    })
}

pub fn fidelity(s_masked: f64, s_unmasked: f64) -> f64 {
    1.0 - (s_masked - s_unmasked).abs()
}

/// Fraction of the graph left out of the explanation.
pub fn sparsity(g: &SentenceGraph, subgraph: &BTreeSet<NodeId>) -> f64 {
    1.0 - subgraph.len() as f64 / g.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Essential,
    Noisy,
}

/// Essential when the masked score wins by more than `tie_epsilon`; everything
/// else, ties included, is noisy.
pub fn classify_explanation(s_masked: f64, s_unmasked: f64, tie_epsilon: f64) -> Verdict {
    if s_masked > s_unmasked + tie_epsilon {
        Verdict::Essential
    } else {
        Verdict::Noisy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    Correct,
    Incorrect,
    Unknown,
}

impl Correctness {
    pub fn of(predicted: usize, reference: Option<usize>) -> Self {
        match reference {
            Some(r) if r == predicted => Correctness::Correct,
            Some(_) => Correctness::Incorrect,
            None => Correctness::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub graph_id: String,
    pub predicted_class: usize,
    pub subgraph: Vec<NodeId>,
    pub s_masked: f64,
    pub s_unmasked: f64,
    pub fidelity: f64,
    pub sparsity: f64,
    pub verdict: Verdict,
    pub correctness: Correctness,
    pub s_masked_raw: f64,
    pub s_unmasked_raw: f64,
}

impl Explanation {
    pub fn subgraph_set(&self) -> BTreeSet<NodeId> {
        self.subgraph.iter().copied().collect()
    }
}

/// Searches and scores an explanation for any coalition game.
pub fn explain_with_game<G: CoalitionGame + ?Sized>(
    g: &SentenceGraph,
    game: &G,
    predicted_class: usize,
    reference: Option<usize>,
    cfg: &SubgraphXConfig,
) -> Result<Explanation, ExplainError> {
    let found = mcts_search(g, game, cfg)?;
    let pair = score_pair(g, game, &found.subgraph, &cfg.shapley_params())?;
    Ok(Explanation {
        graph_id: g.sentence_id.clone(),
        predicted_class,
        subgraph: found.subgraph.iter().copied().collect(),
        s_masked: pair.s_masked,
        s_unmasked: pair.s_unmasked,
        fidelity: fidelity(pair.s_masked, pair.s_unmasked),
        sparsity: sparsity(g, &found.subgraph),
        verdict: classify_explanation(pair.s_masked, pair.s_unmasked, cfg.tie_epsilon),
        correctness: Correctness::of(predicted_class, reference),
        s_masked_raw: pair.s_masked_raw,
        s_unmasked_raw: pair.s_unmasked_raw,
    })
}

/// Explains the model's prediction on one graph. Correctness is judged
/// against the gold label when present.
pub fn explain_graph(model: &GcnModel, fg: &FeaturedGraph, cfg: &SubgraphXConfig) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    let predicted = model.predict(fg)?;
    let game = CachedGame::new(GcnGame::new(model, fg, predicted, cfg.score_mode, cfg.mask_mode));
    explain_with_game(&fg.graph, &game, predicted, fg.gold_label, cfg)
}

/// Explains every graph; output order follows input order.
pub fn explain_all(
    model: &GcnModel,
    graphs: &[FeaturedGraph],
    cfg: &SubgraphXConfig,
) -> Result<Vec<Explanation>, ExplainError> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        graphs.par_iter().map(|fg| explain_graph(model, fg, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        graphs.iter().map(|fg| explain_graph(model, fg, cfg)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Exemplars {
    /// Correct prediction with the strongest essential subgraph.
    pub essential: Option<usize>,
    /// Correct prediction whose subgraph adds the most noise.
    pub noise: Option<usize>,
    /// Incorrect prediction with the strongest essential subgraph.
    pub wrong: Option<usize>,
    /// Incorrect prediction whose subgraph the model neglected most.
    pub neglected: Option<usize>,
}

fn argmax_by(explanations: &[Explanation], pick: impl Fn(&Explanation) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in explanations.iter().enumerate() {
        if let Some(score) = pick(e) {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Indices of the four diagnostic exemplars; the first index wins ties.
pub fn select_exemplars(explanations: &[Explanation]) -> Exemplars {
    let slot = |correctness: Correctness, verdict: Verdict| {
        argmax_by(explanations, |e| {
            (e.correctness == correctness && e.verdict == verdict).then_some(match verdict {
                Verdict::Essential => e.s_masked,
                Verdict::Noisy => e.s_unmasked,
            })
        })
    };
    Exemplars {
        essential: slot(Correctness::Correct, Verdict::Essential),
        noise: slot(Correctness::Correct, Verdict::Noisy),
        wrong: slot(Correctness::Incorrect, Verdict::Essential),
        neglected: slot(Correctness::Incorrect, Verdict::Noisy),
    }
}
