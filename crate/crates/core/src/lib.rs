//! Constituency-tree graphs, a distilled graph convolutional classifier,
//! and Shapley-scored subgraph explanations with semantic and structural
//! analysis of what drives each prediction.

pub mod analysis;
pub mod corpus;
pub mod explain;
pub mod features;
pub mod gcn;
pub mod graph;
pub mod hpo;
pub mod treebank;
#[cfg(feature = "cli")]
pub mod pipeline;
