//! Browser demo: convert a bracketed sentence to its constituency graph,
//! explain a toy classifier on it, and report structural metrics.
//!
//! The functions here return JSON strings so they run the same natively and
//! in the browser; the `wasm32` build wraps them with `wasm-bindgen`.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use treexplain::analysis::{extract_semantic_labels, structural_metrics, Stopwords};
use treexplain::explain::{explain_with_game, ScoreMode, SubgraphXConfig};
use treexplain::graph::{tree_to_graph, NodeKind, SentenceGraph};
use treexplain::treebank::{parse_bracketed, Constituent, UnknownLabelPolicy};

fn graph_of(bracketed: &str) -> Result<SentenceGraph, String> {
    let tree = parse_bracketed(bracketed.trim()).map_err(|e| e.to_string())?;
    tree_to_graph(&tree, UnknownLabelPolicy::MapToNotAConstituent).map_err(|e| e.to_string())
}

fn graph_value(g: &SentenceGraph) -> Value {
    let depth = g.depths();
    let nodes: Vec<Value> = g
        .nodes()
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "word": n.is_word(),
                "label": n.surface,
                "depth": depth[n.id],
            })
        })
        .collect();
    json!({ "root": g.root(), "nodes": nodes, "edges": g.edges() })
}

/// Nodes, edges and depths of the sentence graph.
pub fn graph_json(bracketed: &str) -> Result<String, String> {
    Ok(graph_value(&graph_of(bracketed)?).to_string())
}

/// Degree, betweenness, closeness and eigenvector summaries.
pub fn metrics_json(bracketed: &str) -> Result<String, String> {
    let g = graph_of(bracketed)?;
    let rec = structural_metrics(&g).map_err(|e| e.to_string())?;
    serde_json::to_string(&rec).map_err(|e| e.to_string())
}

/// Stand-in classifier for "holds a quantity": full marks for a visible
/// quantifier phrase together with its noun phrase parent, partial marks
/// for the quantifier phrase alone.
fn quantity_score(g: &SentenceGraph, keep: &[bool]) -> f64 {
    let mut best: f64 = 0.1;
    for n in g.nodes() {
        if n.kind == NodeKind::Special(Constituent::QuantifierPhrase) && keep[n.id] {
            let parent_np = g
                .parent(n.id)
                .is_some_and(|p| keep[p] && g.node(p).special() == Some(Constituent::NounPhrase));
            best = best.max(if parent_np { 0.9 } else { 0.6 });
        }
    }
    best
}

/// Searches for the subgraph that best explains the toy classifier, then
/// lists the words under it.
pub fn explain_json(bracketed: &str, rollout: usize, max_nodes: usize) -> Result<String, String> {
    let g = graph_of(bracketed)?;
    let cfg = SubgraphXConfig {
        rollout,
        max_nodes,
        min_atoms: 2.min(g.len()),
        score_mode: ScoreMode::Logit,
        local_radius: 1,
        ..SubgraphXConfig::default()
    };
    let game = |keep: &[bool]| quantity_score(&g, keep);
    let all = vec![true; g.len()];
    let predicted = usize::from(quantity_score(&g, &all) > 0.5);
    let e = explain_with_game(&g, &game, predicted, None, &cfg).map_err(|e| e.to_string())?;
    let subgraph: BTreeSet<usize> = e.subgraph_set();
    let words = extract_semantic_labels(&g, &subgraph, Stopwords::builtin())
        .map(|r| r.words.into_iter().map(|w| w.surface).collect::<Vec<_>>())
        .unwrap_or_default();
    Ok(json!({
        "graph": graph_value(&g),
        "predicted_class": predicted,
        "subgraph": e.subgraph,
        "s_masked": e.s_masked,
        "s_unmasked": e.s_unmasked,
        "fidelity": e.fidelity,
        "sparsity": e.sparsity,
        "verdict": e.verdict,
        "words": words,
    })
    .to_string())
}

#[cfg(target_arch = "wasm32")]
mod web {
    use wasm_bindgen::prelude::*;

    fn js(r: Result<String, String>) -> Result<String, JsValue> {
        r.map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen(js_name = sentenceGraph)]
    pub fn sentence_graph(bracketed: &str) -> Result<String, JsValue> {
        js(super::graph_json(bracketed))
    }

    #[wasm_bindgen(js_name = structuralMetrics)]
    pub fn structural_metrics(bracketed: &str) -> Result<String, JsValue> {
        js(super::metrics_json(bracketed))
    }

    #[wasm_bindgen(js_name = explainSentence)]
    pub fn explain_sentence(bracketed: &str, rollout: usize, max_nodes: usize) -> Result<String, JsValue> {
        js(super::explain_json(bracketed, rollout, max_nodes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QP: &str = "(S (NP (QP (RB about) (CD forty)) (NNS fans)) (VP (VBD cheered)))";
    const PLAIN: &str = "(S (NP (DT the) (NN team)) (VP (VBZ wins)))";

    #[test]
    fn graph_lists_nodes_and_edges() {
        let v: Value = serde_json::from_str(&graph_json(PLAIN).unwrap()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 6);
        assert_eq!(v["edges"].as_array().unwrap().len(), 5);
        assert_eq!(v["nodes"][0]["label"], "SENTENCE");
    }

    #[test]
    fn metrics_report_counts() {
        let v: Value = serde_json::from_str(&metrics_json(PLAIN).unwrap()).unwrap();
        assert_eq!(v["node_count"], 6);
        assert_eq!(v["edge_count"], 5);
    }

    #[test]
    fn explanation_finds_the_quantity() {
        let v: Value = serde_json::from_str(&explain_json(QP, 60, 4).unwrap()).unwrap();
        assert_eq!(v["predicted_class"], 1);
        let g = graph_of(QP).unwrap();
        let sub: Vec<usize> = serde_json::from_value(v["subgraph"].clone()).unwrap();
        let has_qp = sub
            .iter()
            .any(|&i| g.node(i).special() == Some(Constituent::QuantifierPhrase));
        assert!(has_qp, "{sub:?}");
        assert_eq!(v["verdict"], "essential");
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(graph_json("(S (NP").is_err());
        // Rollouts outside the accepted range are rejected by validation.
        assert!(explain_json(QP, 5, 4).is_err());
    }
}
