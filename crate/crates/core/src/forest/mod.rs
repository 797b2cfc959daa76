//! Honest trees grown with the weighted-MMD criterion.

mod config;
mod split;
mod tree;

pub use config::{ForestConfig, SplitMode};
pub use split::{group_split_weights, split_criterion, Embedding, SplitChoice, SplitProblem};
pub use tree::{build_tree, tree_weights, Node, Tree, TreeWeights};

pub(crate) use tree::keyed_uniform;
