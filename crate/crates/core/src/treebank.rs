//! Bracketed constituency trees and the constituent vocabulary used for
//! special graph nodes.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TreeNodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unbalanced brackets at byte {0}")]
    UnbalancedBrackets(usize),
    #[error("empty tree")]
    EmptyTree,
    #[error("word `{0}` is followed by a bracketed subtree inside the same constituent")]
    LeafWithChildren(String),
    #[error("constituent `{0}` has no children")]
    EmptyConstituent(String),
    #[error("unexpected input after the closing bracket at byte {0}")]
    TrailingInput(usize),
    #[error("unknown phrase label `{0}`")]
    UnknownLabel(String),
    #[error("malformed alias table line {line}: {reason}")]
    MalformedAlias { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TreeError {
    fn from(e: std::io::Error) -> Self {
        TreeError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: TreeNodeId,
    /// Phrase tag for internal nodes, word token for leaves.
    pub label: String,
    pub children: Vec<TreeNodeId>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstituencyTree {
    pub root: TreeNodeId,
    pub nodes: Vec<TreeNode>,
    pub sentence_id: String,
    pub gold_label: Option<usize>,
    pub teacher_label: Option<usize>,
}

impl ConstituencyTree {
    pub fn node(&self, id: TreeNodeId) -> &TreeNode {
        &self.nodes[id]
    }

    /// Leaf tokens in left-to-right order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.is_leaf() {
                out.push(node.label.as_str());
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        out
    }

    fn write_node(&self, id: TreeNodeId, out: &mut String) {
        let node = &self.nodes[id];
        if node.is_leaf() {
            out.push_str(&node.label);
            return;
        }
        out.push('(');
        out.push_str(&node.label);
        for &child in &node.children {
            out.push(' ');
            self.write_node(child, out);
        }
        out.push(')');
    }
}

impl fmt::Display for ConstituencyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracketed())
    }
}

#[derive(Debug, PartialEq)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token::Atom(&text[s..i]));
            }
            match ch {
                '(' => tokens.push(Token::Open(i)),
                ')' => tokens.push(Token::Close(i)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token::Atom(&text[s..]));
    }
    tokens
}

struct OpenFrame {
    id: TreeNodeId,
    label_seen: bool,
    has_word: bool,
    has_subtree: bool,
}

/// Parses a single bracketed tree such as `(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))`.
///
/// A constituent's first atom is its label; an opening bracket in label
/// position gives the constituent an empty label (the PTB `( (S ...))` wrapper).
/// Constituents hold either word tokens or bracketed children, never both.
pub fn parse_bracketed(text: &str) -> Result<ConstituencyTree, TreeError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(TreeError::EmptyTree);
    }
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stack: Vec<OpenFrame> = Vec::new();
    let mut root: Option<TreeNodeId> = None;

    for token in tokens {
        match token {
            Token::Open(pos) => {
                if root.is_some() {
                    return Err(TreeError::TrailingInput(pos));
                }
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    label: String::new(),
                    children: Vec::new(),
                });
                if let Some(parent) = stack.last_mut() {
                    parent.label_seen = true;
                    if parent.has_word {
                        let word = nodes[parent.id]
                            .children
                            .last()
                            .map(|&c| nodes[c].label.clone())
                            .unwrap_or_default();
                        return Err(TreeError::LeafWithChildren(word));
                    }
                    parent.has_subtree = true;
                    nodes[parent.id].children.push(id);
                }
                stack.push(OpenFrame {
                    id,
                    label_seen: false,
                    has_word: false,
                    has_subtree: false,
                });
            }
            Token::Close(pos) => {
                let frame = stack.pop().ok_or(TreeError::UnbalancedBrackets(pos))?;
                let node = &nodes[frame.id];
                if node.children.is_empty() {
                    if node.label.is_empty() {
                        return Err(TreeError::EmptyTree);
                    }
                    return Err(TreeError::EmptyConstituent(node.label.clone()));
                }
                if stack.is_empty() {
                    root = Some(frame.id);
                }
            }
            Token::Atom(atom) => {
                let Some(frame) = stack.last_mut() else {
                    return Err(TreeError::TrailingInput(atom.as_ptr() as usize - text.as_ptr() as usize));
                };
                if !frame.label_seen {
                    frame.label_seen = true;
                    nodes[frame.id].label = atom.to_string();
                    continue;
                }
                if frame.has_subtree {
                    return Err(TreeError::LeafWithChildren(atom.to_string()));
                }
                frame.has_word = true;
                let parent = frame.id;
                let id = nodes.len();
                nodes.push(TreeNode {
                    id,
                    label: atom.to_string(),
                    children: Vec::new(),
                });
                nodes[parent].children.push(id);
            }
        }
    }
    if !stack.is_empty() {
        return Err(TreeError::UnbalancedBrackets(text.len()));
    }
    let root = root.ok_or(TreeError::EmptyTree)?;
    Ok(ConstituencyTree {
        root,
        nodes,
        sentence_id: String::new(),
        gold_label: None,
        teacher_label: None,
    })
}

/// Constituent categories for special graph nodes. Id 22 does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constituent {
    Sentence,
    NounPhrase,
    VerbPhrase,
    PrepositionalPhrase,
    AdjectivePhrase,
    AdverbPhrase,
    SubordinateClause,
    Particle,
    Interjection,
    ConjunctionPhrase,
    ListMarker,
    UnlikeCoordinatedPhrase,
    Parenthetical,
    Fragment,
    InvertedSentence,
    SubordinateClauseQuestion,
    Question,
    WhAdjectivePhrase,
    WhAdverbPhrase,
    ReducedRelativeClause,
    NounPhraseNoHead,
    QuantifierPhrase,
    NotAConstituent,
}

impl Constituent {
    pub const ALL: [Constituent; 23] = [
        Constituent::Sentence,
        Constituent::NounPhrase,
        Constituent::VerbPhrase,
        Constituent::PrepositionalPhrase,
        Constituent::AdjectivePhrase,
        Constituent::AdverbPhrase,
        Constituent::SubordinateClause,
        Constituent::Particle,
        Constituent::Interjection,
        Constituent::ConjunctionPhrase,
        Constituent::ListMarker,
        Constituent::UnlikeCoordinatedPhrase,
        Constituent::Parenthetical,
        Constituent::Fragment,
        Constituent::InvertedSentence,
        Constituent::SubordinateClauseQuestion,
        Constituent::Question,
        Constituent::WhAdjectivePhrase,
        Constituent::WhAdverbPhrase,
        Constituent::ReducedRelativeClause,
        Constituent::NounPhraseNoHead,
        Constituent::QuantifierPhrase,
        Constituent::NotAConstituent,
    ];

    pub fn id(self) -> u8 {
        match self {
            Constituent::QuantifierPhrase => 23,
            Constituent::NotAConstituent => 24,
            other => other as u8 + 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1..=21 => Some(Self::ALL[id as usize - 1]),
            23 => Some(Constituent::QuantifierPhrase),
            24 => Some(Constituent::NotAConstituent),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Constituent::Sentence => "SENTENCE",
            Constituent::NounPhrase => "NOUN PHRASE",
            Constituent::VerbPhrase => "VERB PHRASE",
            Constituent::PrepositionalPhrase => "PREPOSITIONAL PHRASE",
            Constituent::AdjectivePhrase => "ADJECTIVE PHRASE",
            Constituent::AdverbPhrase => "ADVERB PHRASE",
            Constituent::SubordinateClause => "SUBORDINATE CLAUSE",
            Constituent::Particle => "PARTICLE",
            Constituent::Interjection => "INTERJECTION",
            Constituent::ConjunctionPhrase => "CONJUNCTION PHRASE",
            Constituent::ListMarker => "LIST MARKER",
            Constituent::UnlikeCoordinatedPhrase => "UNLIKE COORDINATED PHRASE",
            Constituent::Parenthetical => "PARENTHETICAL",
            Constituent::Fragment => "FRAGMENT",
            Constituent::InvertedSentence => "INVERTED SENTENCE",
            Constituent::SubordinateClauseQuestion => "SUBORDINATE CLAUSE QUESTION",
            Constituent::Question => "QUESTION",
            Constituent::WhAdjectivePhrase => "WH-ADJECTIVE PHRASE",
            Constituent::WhAdverbPhrase => "WH-ADVERB PHRASE",
            Constituent::ReducedRelativeClause => "REDUCED RELATIVE CLAUSE",
            Constituent::NounPhraseNoHead => "NOUN PHRASE (NO HEAD)",
            Constituent::QuantifierPhrase => "QUANTIFIER PHRASE",
            Constituent::NotAConstituent => "NOT A CONSTITUENT",
        }
    }
}

impl fmt::Display for Constituent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    /// Unknown tags become `NOT A CONSTITUENT`.
    #[default]
    MapToNotAConstituent,
    Reject,
}

const BUILTIN_ALIASES: &str = include_str!("../data/tag_aliases.tsv");

/// Phrase-tag alias table.
#[derive(Debug, Clone)]
pub struct LabelMap {
    aliases: HashMap<String, Constituent>,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LabelMap {
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_ALIASES).expect("bundled alias table is well formed")
    }

    pub fn from_tsv(text: &str) -> Result<Self, TreeError> {
        let mut aliases = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(tag), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(TreeError::MalformedAlias {
                    line: i + 1,
                    reason: "expected `TAG ID`".into(),
                });
            };
            let kind = id
                .parse::<u8>()
                .ok()
                .and_then(Constituent::from_id)
                .ok_or_else(|| TreeError::MalformedAlias {
                    line: i + 1,
                    reason: format!("`{id}` is not a constituent id"),
                })?;
            aliases.insert(tag.to_string(), kind);
        }
        Ok(Self { aliases })
    }

    /// Adds the aliases of `text` on top of this table.
    pub fn extend_from_tsv(&mut self, text: &str) -> Result<(), TreeError> {
        let extra = Self::from_tsv(text)?;
        self.aliases.extend(extra.aliases);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, Constituent)> {
        self.aliases.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Maps a raw phrase tag. Function tags and indices (`NP-SBJ-1`, `S=2`)
    /// are stripped before lookup.
    pub fn map_label(&self, raw: &str, policy: UnknownLabelPolicy) -> Result<Constituent, TreeError> {
        if let Some(&kind) = self.aliases.get(raw) {
            return Ok(kind);
        }
        if let Some(&kind) = self.aliases.get(base_tag(raw)) {
            return Ok(kind);
        }
        match policy {
            UnknownLabelPolicy::MapToNotAConstituent => Ok(Constituent::NotAConstituent),
            UnknownLabelPolicy::Reject => Err(TreeError::UnknownLabel(raw.to_string())),
        }
    }
}

fn base_tag(raw: &str) -> &str {
    if raw.starts_with('-') {
        return raw;
    }
    raw.split(['-', '=', '|']).next().unwrap_or(raw)
}

/// Maps a tag with the bundled alias table.
pub fn map_label(raw: &str, policy: UnknownLabelPolicy) -> Result<Constituent, TreeError> {
    static TABLE: std::sync::OnceLock<LabelMap> = std::sync::OnceLock::new();
    TABLE.get_or_init(LabelMap::builtin).map_label(raw, policy)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub tree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_label: Option<usize>,
}

/// Reads either one bracketed tree per line or NDJSON tree records; the
/// format is chosen from the first non-blank line.
pub fn read_trees<R: BufRead>(reader: R) -> Result<Vec<ConstituencyTree>, TreeError> {
    let mut trees = Vec::new();
    let mut ndjson: Option<bool> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let is_json = *ndjson.get_or_insert(trimmed.starts_with('{'));
        let malformed = |e: &dyn fmt::Display| TreeError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        };
        let tree = if is_json {
            let rec: TreeRecord = serde_json::from_str(trimmed).map_err(|e| malformed(&e))?;
            let mut tree = parse_bracketed(&rec.tree).map_err(|e| malformed(&e))?;
            tree.sentence_id = rec.id;
            tree.gold_label = rec.gold_label;
            tree.teacher_label = rec.teacher_label;
            tree
        } else {
            let mut tree = parse_bracketed(trimmed).map_err(|e| malformed(&e))?;
            tree.sentence_id = format!("s{}", trees.len());
            tree
        };
        trees.push(tree);
    }
    Ok(trees)
}

pub fn read_trees_file(path: &Path) -> Result<Vec<ConstituencyTree>, TreeError> {
    let file = std::fs::File::open(path)?;
    read_trees(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: &str = "(S (NP (DT the) (NN cat)) (VP (VBZ sleeps)))";

    #[test]
    fn parses_simple_tree() {
        let t = parse_bracketed(CAT).unwrap();
        let root = t.node(t.root);
        assert_eq!(root.label, "S");
        let labels: Vec<_> = root.children.iter().map(|&c| t.node(c).label.as_str()).collect();
        assert_eq!(labels, ["NP", "VP"]);
        assert_eq!(t.tokens(), ["the", "cat", "sleeps"]);
        assert_eq!(t.to_bracketed(), CAT);
    }

    #[test]
    fn rejects_unbalanced() {
        assert!(matches!(parse_bracketed("(S (NP"), Err(TreeError::UnbalancedBrackets(_))));
        assert!(matches!(parse_bracketed("(S x))"), Err(TreeError::UnbalancedBrackets(_))));
    }

    #[test]
    fn rejects_empty() {
        assert_eq!(parse_bracketed(""), Err(TreeError::EmptyTree));
        assert_eq!(parse_bracketed("   "), Err(TreeError::EmptyTree));
        assert_eq!(parse_bracketed("()"), Err(TreeError::EmptyTree));
    }

    #[test]
    fn rejects_mixed_nesting() {
        assert_eq!(
            parse_bracketed("(S (DT the (NN cat)))"),
            Err(TreeError::LeafWithChildren("the".into()))
        );
        assert_eq!(
            parse_bracketed("(S (NP (NN cat)) sleeps)"),
            Err(TreeError::LeafWithChildren("sleeps".into()))
        );
        assert_eq!(parse_bracketed("(S (NN))"), Err(TreeError::EmptyConstituent("NN".into())));
    }

    #[test]
    fn rejects_two_trees() {
        assert!(matches!(parse_bracketed("(S a) (S b)"), Err(TreeError::TrailingInput(_))));
        assert!(matches!(parse_bracketed("(S a) b"), Err(TreeError::TrailingInput(_))));
    }

    #[test]
    fn accepts_ptb_wrapper_and_escapes() {
        let t = parse_bracketed("( (S (NP (NNP -LRB-) (NN hi))))").unwrap();
        assert_eq!(t.node(t.root).label, "");
        assert_eq!(t.tokens(), ["-LRB-", "hi"]);
        assert_eq!(parse_bracketed(&t.to_bracketed()).unwrap(), t);
    }

    #[test]
    fn constituent_ids_skip_22() {
        let ids: Vec<u8> = Constituent::ALL.iter().map(|c| c.id()).collect();
        let expected: Vec<u8> = (1..=21).chain([23, 24]).collect();
        assert_eq!(ids, expected);
        assert_eq!(Constituent::from_id(22), None);
        for c in Constituent::ALL {
            assert_eq!(Constituent::from_id(c.id()), Some(c));
        }
    }

    #[test]
    fn maps_table_labels() {
        let p = UnknownLabelPolicy::MapToNotAConstituent;
        assert_eq!(map_label("S", p).unwrap().id(), 1);
        assert_eq!(map_label("S", p).unwrap().name(), "SENTENCE");
        assert_eq!(map_label("NP", p).unwrap().name(), "NOUN PHRASE");
        assert_eq!(map_label("NP", p).unwrap().id(), 2);
        assert_eq!(map_label("XQZ", p).unwrap(), Constituent::NotAConstituent);
        assert_eq!(map_label("XQZ", p).unwrap().id(), 24);
        assert_eq!(
            map_label("XQZ", UnknownLabelPolicy::Reject),
            Err(TreeError::UnknownLabel("XQZ".into()))
        );
        assert_eq!(map_label("NP-SBJ-1", UnknownLabelPolicy::Reject).unwrap(), Constituent::NounPhrase);
        assert_eq!(map_label("QP", p).unwrap().id(), 23);
    }

    #[test]
    fn builtin_aliases_are_injective() {
        let table = LabelMap::builtin();
        assert_eq!(table.len(), 23);
        let mut kinds: Vec<Constituent> = table.aliases().map(|(_, k)| k).collect();
        kinds.sort();
        kinds.dedup();
        assert_eq!(kinds.len(), 23);
    }

    #[test]
    fn alias_table_extension() {
        let mut table = LabelMap::builtin();
        table.extend_from_tsv("WHNP 2\n# comment\n").unwrap();
        assert_eq!(
            table.map_label("WHNP", UnknownLabelPolicy::Reject).unwrap(),
            Constituent::NounPhrase
        );
        assert!(LabelMap::from_tsv("NP 22").is_err());
        assert!(LabelMap::from_tsv("NP").is_err());
    }

    #[test]
    fn reads_both_input_formats() {
        let plain = format!("{CAT}\n\n(S (NP (NN hi)))\n");
        let trees = read_trees(plain.as_bytes()).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[1].sentence_id, "s1");

        let nd = r#"{"id":"a","tree":"(S (NP (NN hi)))","gold_label":1}"#;
        let trees = read_trees(nd.as_bytes()).unwrap();
        assert_eq!(trees[0].sentence_id, "a");
        assert_eq!(trees[0].gold_label, Some(1));

        let bad = "(S (NP (NN hi)))\n(S (NP";
        assert!(matches!(read_trees(bad.as_bytes()), Err(TreeError::MalformedRecord { line: 2, .. })));
    }
}
