//! Seeded synthetic treebank with a planted class signal: every class-1
//! sentence holds a quantifier phrase under a noun phrase, and no class-0
//! sentence holds one anywhere.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::treebank::TreeRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub size: usize,
    pub seed: u64,
    /// Chance that a teacher label is flipped away from the gold label.
    pub teacher_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            size: 500,
            seed: 7,
            teacher_noise: 0.0,
        }
    }
}

const DT: &[&str] = &["the", "a", "this", "every", "that"];
const NN: &[&str] = &[
    "team", "market", "player", "company", "season", "report", "game", "network", "coach", "price", "city", "device",
];
const NNS: &[&str] = &["shares", "fans", "goals", "users", "points", "votes", "games", "stores"];
const JJ: &[&str] = &["new", "strong", "local", "late", "global", "quiet", "final", "major"];
const VBZ: &[&str] = &["wins", "reports", "loses", "expects", "opens", "leads", "plans", "sells"];
const VBD: &[&str] = &["won", "reported", "lost", "expected", "opened", "led"];
const IN: &[&str] = &["in", "after", "with", "for", "near", "over"];
const RB: &[&str] = &["quickly", "again", "early", "sharply", "finally"];
const CD: &[&str] = &["three", "forty", "two", "hundred", "million", "dozen", "seven"];
const QMOD: &[&str] = &["about", "nearly", "over", "almost"];

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Gen<'_> {
    fn word(&mut self, tag: &str, list: &[&str]) -> String {
        format!("({tag} {})", list.choose(self.rng).expect("word lists are non-empty"))
    }

    fn qp(&mut self) -> String {
        let mut parts = Vec::new();
        if self.rng.random_bool(0.5) {
            parts.push(self.word("RB", QMOD));
        }
        parts.push(self.word("CD", CD));
        if self.rng.random_bool(0.4) {
            parts.push(self.word("CD", CD));
        }
        format!("(QP {})", parts.join(" "))
    }

    fn np(&mut self, depth: usize, plant: bool) -> String {
        if plant {
            return format!("(NP {} {})", self.qp(), self.word("NNS", NNS));
        }
        let mut parts = vec![self.word("DT", DT)];
        if self.rng.random_bool(0.4) {
            if self.rng.random_bool(0.2) {
                parts.push(format!("(ADJP (RB very) {})", self.word("JJ", JJ)));
            } else {
                parts.push(self.word("JJ", JJ));
            }
        }
        parts.push(self.word("NN", NN));
        let head = format!("(NP {})", parts.join(" "));
        if depth < 2 && self.rng.random_bool(0.25) {
            format!("(NP {head} {})", self.pp(depth + 1, false))
        } else {
            head
        }
    }

    fn pp(&mut self, depth: usize, plant: bool) -> String {
        format!("(PP {} {})", self.word("IN", IN), self.np(depth + 1, plant))
    }

    fn vp(&mut self, depth: usize, plant_object: bool, plant_pp: bool) -> String {
        let verb = if self.rng.random_bool(0.5) {
            self.word("VBZ", VBZ)
        } else {
            self.word("VBD", VBD)
        };
        let mut parts = vec![verb];
        if plant_object || self.rng.random_bool(0.7) {
            parts.push(self.np(depth + 1, plant_object));
        }
        if plant_pp || self.rng.random_bool(0.35) {
            parts.push(self.pp(depth + 1, plant_pp));
        }
        if self.rng.random_bool(0.2) {
            parts.push(format!("(ADVP {})", self.word("RB", RB)));
        }
        format!("(VP {})", parts.join(" "))
    }

    fn sentence(&mut self, class: usize) -> String {
        // Where the quantifier phrase goes in a class-1 sentence.
        let site = if class == 1 { self.rng.random_range(1..=3) } else { 0 };
        let subject = self.np(1, site == 1);
        let vp = self.vp(1, site == 2, site == 3);
        if self.rng.random_bool(0.15) {
            let inner = self.np(1, false);
            let second = self.vp(1, false, false);
            format!("(S (S {subject} {vp}) (CC and) (S {inner} {second}))")
        } else {
            format!("(S {subject} {vp})")
        }
    }
}

/// Balanced two-class corpus; ids are `c0`, `c1`, ...
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<TreeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.size)
        .map(|i| {
            let class = i % 2;
            let tree = Gen { rng: &mut rng }.sentence(class);
            let teacher = if cfg.teacher_noise > 0.0 && rng.random_bool(cfg.teacher_noise.min(1.0)) {
                1 - class
            } else {
                class
            };
            TreeRecord {
                id: format!("c{i}"),
                tree,
                gold_label: Some(class),
                teacher_label: Some(teacher),
            }
        })
        .collect()
}

/// NDJSON, one tree record per line.
pub fn corpus_ndjson(records: &[TreeRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("tree records serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tree_to_graph;
    use crate::treebank::{parse_bracketed, read_trees, Constituent, UnknownLabelPolicy};

    #[test]
    fn deterministic_and_parseable() {
        let cfg = CorpusConfig {
            size: 60,
            ..CorpusConfig::default()
        };
        let a = generate_corpus(&cfg);
        assert_eq!(corpus_ndjson(&a), corpus_ndjson(&generate_corpus(&cfg)));
        let trees = read_trees(corpus_ndjson(&a).as_bytes()).unwrap();
        assert_eq!(trees.len(), 60);
        for (rec, tree) in a.iter().zip(&trees) {
            let g = tree_to_graph(tree, UnknownLabelPolicy::Reject).unwrap();
            let has_qp = g.nodes().iter().any(|n| n.special() == Some(Constituent::QuantifierPhrase));
            assert_eq!(has_qp, rec.gold_label == Some(1), "{}", rec.tree);
        }
    }

    #[test]
    fn teacher_noise_flips_some_labels() {
        let cfg = CorpusConfig {
            size: 400,
            teacher_noise: 0.2,
            ..CorpusConfig::default()
        };
        let flipped = generate_corpus(&cfg)
            .iter()
            .filter(|r| r.gold_label != r.teacher_label)
            .count();
        assert!((40..=120).contains(&flipped), "{flipped}");
        let t = parse_bracketed(&generate_corpus(&cfg)[0].tree).unwrap();
        assert!(!t.tokens().is_empty());
    }
}
