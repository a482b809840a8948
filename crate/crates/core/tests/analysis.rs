mod common;

use std::collections::BTreeSet;

use common::{
    brute_betweenness, closed_form_gap, literal_extraction, max_gap, random_connected_set, random_graph, rng,
    two_pass_pearson,
};
use rand::seq::SliceRandom;
use rand::Rng;
use treexplain::analysis::{
    betweenness, closeness, correlation_matrix, extract_semantic_labels, frequency_report, metrics_of, pearson,
    structural_metrics, undirected, words_csv, AnalysisError, SemanticResult, Stopwords,
};
use treexplain::graph::tree_to_graph;
use treexplain::treebank::{parse_bracketed, UnknownLabelPolicy};

const STOP: &str = "w0\nw1\n";

fn stop_set() -> BTreeSet<String> {
    ["w0", "w1"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn extraction_matches_literal_procedure() {
    let stop = Stopwords::from_text(STOP);
    let mut r = rng(31);
    let (mut agreed_ok, mut agreed_err) = (0, 0);
    for _ in 0..300 {
        let n = r.random_range(3..25);
        let g = random_graph(&mut r, n);
        let subgraph = if r.random_bool(0.7) {
            let k = r.random_range(1..=n.min(6));
            random_connected_set(&mut r, &g, k)
        } else {
            let extra = r.random_range(0..n);
            (0..n).filter(|_| r.random_bool(0.2)).chain([extra]).collect()
        };
        let ours = extract_semantic_labels(&g, &subgraph, &stop);
        let oracle = literal_extraction(&g, &subgraph, &stop_set());
        match (ours, oracle) {
            (Ok(res), Ok(words)) => {
                let got: Vec<String> = res.words.iter().map(|w| w.surface.clone()).collect();
                assert_eq!(got, words, "{subgraph:?}");
                agreed_ok += 1;
            }
            (Err(AnalysisError::AmbiguousCluster(_)), Err(_)) => agreed_err += 1,
            (a, b) => panic!("disagreement on {subgraph:?}: {a:?} vs {b:?}"),
        }
    }
    assert!(agreed_ok > 100 && agreed_err > 10, "{agreed_ok} {agreed_err}");
}

#[test]
fn extraction_on_a_sentence() {
    let t = parse_bracketed("(S (NP (DT the) (NN cat)) (VP (VBZ sat) (PP (IN on) (NP (DT the) (NN mat)))))").unwrap();
    let g = tree_to_graph(&t, UnknownLabelPolicy::Reject).unwrap();
    let mat = g.nodes().iter().position(|n| n.surface == "mat").unwrap();
    let on = g.nodes().iter().position(|n| n.surface == "on").unwrap();
    // Pruning above `on` separates it from the noun phrase holding `mat`.
    assert!(matches!(
        extract_semantic_labels(&g, &BTreeSet::from([mat, on]), Stopwords::builtin()),
        Err(AnalysisError::AmbiguousCluster(2))
    ));
    let np = g.parent(mat).unwrap();
    let res = extract_semantic_labels(&g, &BTreeSet::from([np, mat]), Stopwords::builtin()).unwrap();
    let words: Vec<&str> = res.words.iter().map(|w| w.surface.as_str()).collect();
    assert_eq!(words, ["mat"]);
    assert_eq!(res.words[0].short_chain(), "PREPOSITIONAL PHRASE > NOUN PHRASE");
    assert!(extract_semantic_labels(&g, &BTreeSet::from([99]), Stopwords::builtin()).is_err());
}

#[test]
fn betweenness_matches_path_enumeration() {
    let mut r = rng(41);
    for _ in 0..40 {
        let n = r.random_range(2..14);
        let mut adj = undirected(&random_graph(&mut r, n));
        // Extra edges give multiple shortest paths.
        for _ in 0..r.random_range(0..4) {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        assert!(max_gap(&betweenness(&adj), &brute_betweenness(&adj)) < 1e-9);
    }
}

#[test]
fn closed_forms_hold() {
    for n in 3..12 {
        assert!(closed_form_gap(n) < 1e-8, "n = {n}");
    }
}

#[test]
fn closeness_rejects_disconnected() {
    let adj = vec![vec![1], vec![0], vec![]];
    assert!(matches!(closeness(&adj), Err(AnalysisError::DisconnectedGraph)));
    assert!(metrics_of("x", &adj).is_err());
}

#[test]
fn pearson_matches_two_pass() {
    let mut r = rng(51);
    for _ in 0..200 {
        let n = r.random_range(3..60);
        let scale = 10f64.powi(r.random_range(-3..6));
        let x: Vec<f64> = (0..n).map(|_| scale * r.random_range(0.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|a| 0.3 * a + scale * r.random_range(-1.0..1.0)).collect();
        let (a, b) = (pearson(&x, &y).unwrap(), two_pass_pearson(&x, &y).unwrap());
        assert!((a - b).abs() < 1e-12, "scale {scale}: {a} {b} gap {}", (a - b).abs());
    }
    assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
}

#[test]
fn pearson_survives_large_offsets() {
    // Shifting both columns by a constant leaves the correlation unchanged.
    let mut r = rng(52);
    let x: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|a| a + r.random_range(-1.0..1.0)).collect();
    let base = pearson(&x, &y).unwrap();
    let shift = |v: &[f64]| v.iter().map(|a| a + 1e6).collect::<Vec<_>>();
    assert!((pearson(&shift(&x), &shift(&y)).unwrap() - base).abs() < 1e-8);
}

#[test]
fn metrics_are_invariant_under_relabeling() {
    let mut r = rng(61);
    for _ in 0..30 {
        let n = r.random_range(2..20);
        let g = random_graph(&mut r, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let h = g.relabeled(&perm).unwrap();
        let (a, b) = (structural_metrics(&g).unwrap(), structural_metrics(&h).unwrap());
        assert!(max_gap(&a.values(), &b.values()) < 1e-9);

        let set = random_connected_set(&mut r, &g, 3.min(n));
        let mapped: BTreeSet<usize> = set.iter().map(|&v| perm[v]).collect();
        let stop = Stopwords::from_text(STOP);
        let wa = extract_semantic_labels(&g, &set, &stop).unwrap().words;
        let wb = extract_semantic_labels(&h, &mapped, &stop).unwrap().words;
        let bag = |w: &[treexplain::analysis::WordEntry]| {
            let mut v: Vec<String> = w.iter().map(|e| e.surface.clone()).collect();
            v.sort();
            v
        };
        assert_eq!(bag(&wa), bag(&wb));
    }
}

#[test]
fn correlation_matrix_is_symmetric_with_unit_diagonal() {
    let mut r = rng(71);
    let records: Vec<_> = (0..20)
        .map(|_| {
            let n = r.random_range(3..20);
            structural_metrics(&random_graph(&mut r, n)).unwrap()
        })
        .collect();
    let m = correlation_matrix(&records).unwrap();
    for i in 0..m.names.len() {
        for j in 0..m.names.len() {
            assert_eq!(m.values[i][j], m.values[j][i]);
        }
        if let Some(d) = m.values[i][i] {
            assert_eq!(d, 1.0);
        }
    }
    assert!(m.to_csv().unwrap().starts_with("metric,node_count"));
    assert!(m.to_svg("all").starts_with("<svg"));
    assert!(correlation_matrix(&records[..2]).is_err());
}

#[test]
fn frequency_rows_count_words() {
    let t = parse_bracketed("(S (NP (NN cats)) (VP (VBZ chase) (NP (NN cats))))").unwrap();
    let g = tree_to_graph(&t, UnknownLabelPolicy::Reject).unwrap();
    let mut res: SemanticResult = extract_semantic_labels(&g, &BTreeSet::from([0]), Stopwords::builtin()).unwrap();
    res.predicted_class = Some(1);
    let rows = frequency_report(&[res.clone(), res]);
    let cats = rows.iter().find(|r| r.word == "cats" && r.chain.ends_with("VERB PHRASE > NOUN PHRASE")).unwrap();
    assert_eq!(cats.count, 2);
    assert!(words_csv(&rows).unwrap().starts_with("class,correctness,chain,word,count\n"));
}
