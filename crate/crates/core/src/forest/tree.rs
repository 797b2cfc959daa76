use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ForestConfig, SplitMode};
use super::split::SplitProblem;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{FourierFeatures, KernelSpec};
use crate::rng::{self, mix64, unit_interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Populate-sample rows (dataset indices, ascending) that fell in this leaf.
    Leaf { members: Vec<usize> },
}

/// An honest tree. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Rows used to choose the splits.
    pub build_indices: Vec<usize>,
    /// Rows used to populate the leaves.
    pub populate_indices: Vec<usize>,
    pub mode: SplitMode,
}

/// Sparse signed weights of one tree at a query point.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeWeights {
    pub entries: Vec<(usize, f64)>,
}

impl TreeWeights {
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        for &(i, v) in &self.entries {
            w[i] += v;
        }
        w
    }
}

impl Tree {
    /// Index of the leaf `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] < *threshold { *left } else { *right },
                Node::Leaf { .. } => return id,
            }
        }
    }

    pub fn leaf_members(&self, x: &[f64]) -> &[usize] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { members } => members,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Checks the structural invariants against the training data: a proper
    /// binary tree whose leaves partition the populate sample, leaves meeting
    /// the `κ` floor, and α-regular splits of the build sample.
    pub fn check_invariants(&self, data: &Dataset, config: &ForestConfig) -> Result<(), String> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if id >= self.nodes.len() || std::mem::replace(&mut seen[id], true) {
                return Err(format!("node {id} is missing or reached twice"));
            }
            if let Node::Split { left, right, .. } = self.nodes[id] {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("unreachable nodes".into());
        }

        let kappa = config.min_leaf_per_arm;
        let mut members: Vec<usize> = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Leaf { members: m } = node {
                let t = m.iter().filter(|&&i| data.treated(i)).count();
                let ok = match self.mode {
                    SplitMode::CausalWeightedMmd => t >= kappa && m.len() - t >= kappa,
                    SplitMode::PlainMmd => m.len() >= kappa,
                };
                if !ok {
                    return Err(format!("leaf {id} has {t} treated of {} members", m.len()));
                }
                for &i in m {
                    if self.leaf_members(data.x().row(i)) != m.as_slice() {
                        return Err(format!("row {i} does not route to leaf {id}"));
                    }
                }
                members.extend_from_slice(m);
            }
        }
        members.sort_unstable();
        let mut populate = self.populate_indices.clone();
        populate.sort_unstable();
        if members != populate {
            return Err("leaves do not partition the populate sample".into());
        }

        // α-regularity on the build sample.
        let mut counts = vec![0usize; self.nodes.len()];
        for &i in &self.build_indices {
            let x = data.x().row(i);
            let mut id = 0;
            loop {
                counts[id] += 1;
                match &self.nodes[id] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => id = if x[*feature] < *threshold { *left } else { *right },
                    Node::Leaf { .. } => break,
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                let floor = config.alpha_regularity * counts[id] as f64;
                if (counts[*left] as f64) < floor || (counts[*right] as f64) < floor {
                    return Err(format!("split at node {id} is not alpha-regular"));
                }
            }
        }
        Ok(())
    }
}

/// Signed (causal) or unsigned (plain) weights of `tree` at `x`.
///
/// Causal mode: `+1 / #treated` on treated leaf members, `−1 / #control` on
/// control members. Plain mode: `1 / #members` on every member.
pub fn tree_weights(tree: &Tree, x: &[f64], data: &Dataset) -> TreeWeights {
    let members = tree.leaf_members(x);
    let entries = match tree.mode {
        SplitMode::CausalWeightedMmd => {
            let t = members.iter().filter(|&&i| data.treated(i)).count();
            let pos = 1.0 / t as f64;
            let neg = -1.0 / (members.len() - t) as f64;
            members
                .iter()
                .map(|&i| (i, if data.treated(i) { pos } else { neg }))
                .collect()
        }
        SplitMode::PlainMmd => {
            let v = 1.0 / members.len() as f64;
            members.iter().map(|&i| (i, v)).collect()
        }
    };
    TreeWeights { entries }
}

enum Grown {
    Leaf { build: Vec<usize> },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

enum Pruned {
    Leaf(Vec<usize>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Pruned>,
        right: Box<Pruned>,
    },
}

impl Pruned {
    fn collect_members(self, out: &mut Vec<usize>) {
        match self {
            Pruned::Leaf(m) => out.extend(m),
            Pruned::Split { left, right, .. } => {
                left.collect_members(out);
                right.collect_members(out);
            }
        }
    }
}

/// Splits `subsample` into build and populate halves, separately within each
/// treatment arm, using keyed pseudo-random ranks.
fn honest_partition(
    subsample: &[usize],
    data: &Dataset,
    keys: &[u64],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let salt = rng::derive_seed(seed, &[rng::TAG_HONESTY]);
    let mut build = Vec::new();
    let mut populate = Vec::new();
    for arm in [true, false] {
        let mut rows: Vec<(u64, usize)> = subsample
            .iter()
            .filter(|&&i| data.treated(i) == arm)
            .map(|&i| (mix64(salt ^ keys[i]), i))
            .collect();
        if rows.is_empty() {
            continue;
        }
        rows.sort_unstable();
        let cut = ((rows.len() as f64 * fraction).round() as usize).min(rows.len());
        build.extend(rows[..cut].iter().map(|&(_, i)| i));
        populate.extend(rows[cut..].iter().map(|&(_, i)| i));
    }
    build.sort_unstable();
    populate.sort_unstable();
    (build, populate)
}

/// Grows one honest tree on `subsample` (dataset rows).
///
/// The subsample is split into a build half, which chooses the splits, and a
/// populate half, which fills the leaves. Nodes are split greedily while an
/// admissible split exists. Afterwards any leaf whose populate members fall
/// below the `κ` floor is merged with its sibling until every leaf meets it.
pub fn build_tree(
    subsample: &[usize],
    data: &Dataset,
    keys: &[u64],
    kernel: &KernelSpec,
    config: &ForestConfig,
    seed: u64,
) -> Result<Tree> {
    let mode = config.split_mode;
    let (build, populate) = honest_partition(subsample, data, keys, config.honesty_fraction, seed);
    let mut tree_rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, &[rng::TAG_TREE]));
    let ff = FourierFeatures::sample(kernel, config.fourier_features, &mut tree_rng);
    let problem = SplitProblem::new(data, &build, keys, &ff, mode);

    // Grow on the build sample.
    let mut grown = vec![Grown::Leaf {
        build: (0..problem.len()).collect(),
    }];
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let Grown::Leaf { build: node } = &grown[id] else {
            continue;
        };
        let Some(choice) = problem.best_split(node, config, &mut tree_rng) else {
            continue;
        };
        let left = grown.len();
        grown.push(Grown::Leaf { build: choice.left });
        grown.push(Grown::Leaf { build: choice.right });
        grown[id] = Grown::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left,
            right: left + 1,
        };
        // Right first so the left subtree is grown first.
        stack.push(left + 1);
        stack.push(left);
    }

    // Populate.
    let mut leaf_members: Vec<Vec<usize>> = vec![Vec::new(); grown.len()];
    for &i in &populate {
        let x = data.x().row(i);
        let mut id = 0;
        while let Grown::Split {
            feature,
            threshold,
            left,
            right,
        } = grown[id]
        {
            id = if x[feature] < threshold { left } else { right };
        }
        leaf_members[id].push(i);
    }

    let kappa = config.min_leaf_per_arm;
    let deficient = |m: &[usize]| match mode {
        SplitMode::CausalWeightedMmd => {
            let t = m.iter().filter(|&&i| data.treated(i)).count();
            t < kappa || m.len() - t < kappa
        }
        SplitMode::PlainMmd => m.len() < kappa,
    };

    fn prune(
        id: usize,
        grown: &[Grown],
        members: &mut [Vec<usize>],
        deficient: &dyn Fn(&[usize]) -> bool,
    ) -> Pruned {
        match grown[id] {
            Grown::Leaf { .. } => Pruned::Leaf(std::mem::take(&mut members[id])),
            Grown::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let l = prune(left, grown, members, deficient);
                let r = prune(right, grown, members, deficient);
                let starved = |p: &Pruned| matches!(p, Pruned::Leaf(m) if deficient(m));
                if starved(&l) || starved(&r) {
                    let mut merged = Vec::new();
                    l.collect_members(&mut merged);
                    r.collect_members(&mut merged);
                    merged.sort_unstable();
                    Pruned::Leaf(merged)
                } else {
                    Pruned::Split {
                        feature,
                        threshold,
                        left: Box::new(l),
                        right: Box::new(r),
                    }
                }
            }
        }
    }

    let root = prune(0, &grown, &mut leaf_members, &deficient);
    if let Pruned::Leaf(m) = &root {
        if deficient(m) {
            return Err(Error::InsufficientData(format!(
                "tree root holds {} populate rows, below the per-arm floor of {kappa}",
                m.len()
            )));
        }
    }

    fn flatten(p: Pruned, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        match p {
            Pruned::Leaf(mut members) => {
                members.sort_unstable();
                nodes.push(Node::Leaf { members });
            }
            Pruned::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                nodes.push(Node::Leaf {
                    members: Vec::new(),
                });
                let l = flatten(*left, nodes);
                let r = flatten(*right, nodes);
                nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }
    let mut nodes = Vec::new();
    flatten(root, &mut nodes);

    Ok(Tree {
        nodes,
        build_indices: build,
        populate_indices: populate,
        mode,
    })
}

/// Keyed uniform draw for row `key` in stream `salt`; used for row-level
/// sampling decisions that must not depend on row order.
#[inline]
pub(crate) fn keyed_uniform(salt: u64, key: u64) -> f64 {
    unit_interval(mix64(salt ^ key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use rand::Rng;

    fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * p).map(|_| r.random::<f64>()).collect();
        let w: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[i * p] * 2.0 + if w[i] { 1.0 } else { 0.0 } + r.random::<f64>())
            .collect();
        Dataset::new(Matrix::new(n, p, x).unwrap(), w, Matrix::column(y)).unwrap()
    }

    #[test]
    fn minimal_subsample_gives_single_leaf() {
        // 2κ rows per arm: each half gets exactly κ per arm, so no split is
        // admissible.
        let kappa = 3;
        let n = 4 * kappa;
        let x = Matrix::column((0..n).map(|i| i as f64).collect());
        let w: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y = Matrix::column((0..n).map(|i| (i % 5) as f64).collect());
        let data = Dataset::new(x, w, y).unwrap();
        let cfg = ForestConfig {
            min_leaf_per_arm: kappa,
            ..Default::default()
        };
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let keys = data.row_keys();
        let rows: Vec<usize> = (0..n).collect();
        let tree = build_tree(&rows, &data, &keys, &spec, &cfg, 1).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.build_indices.len(), 2 * kappa);
        tree.check_invariants(&data, &cfg).unwrap();
    }

    #[test]
    fn starved_root_is_an_error() {
        let n = 10;
        let x = Matrix::column((0..n).map(|i| i as f64).collect());
        let w: Vec<bool> = (0..n).map(|i| i < 8).collect();
        let y = Matrix::column((0..n).map(|i| i as f64).collect());
        let data = Dataset::new(x, w, y).unwrap();
        let cfg = ForestConfig {
            min_leaf_per_arm: 2,
            ..Default::default()
        };
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let keys = data.row_keys();
        let rows: Vec<usize> = (0..n).collect();
        assert!(matches!(
            build_tree(&rows, &data, &keys, &spec, &cfg, 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn trees_are_deterministic_and_valid() {
        let data = random_dataset(200, 3, 5);
        let keys = data.row_keys();
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let rows: Vec<usize> = (0..200).collect();
        for mode in [SplitMode::CausalWeightedMmd, SplitMode::PlainMmd] {
            let cfg = ForestConfig {
                min_leaf_per_arm: 4,
                split_mode: mode,
                ..Default::default()
            };
            let a = build_tree(&rows, &data, &keys, &spec, &cfg, 42).unwrap();
            let b = build_tree(&rows, &data, &keys, &spec, &cfg, 42).unwrap();
            assert_eq!(a, b);
            assert!(a.num_leaves() > 1);
            a.check_invariants(&data, &cfg).unwrap();
        }
    }

    #[test]
    fn weights_by_hand() {
        let x = Matrix::column(vec![0.0, 0.0, 0.0, 1.0]);
        let y = Matrix::column(vec![0.0, 1.0, 2.0, 3.0]);
        let data = Dataset::new(x, vec![true, true, false, false], y).unwrap();
        let tree = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf {
                    members: vec![0, 1, 2],
                },
                Node::Leaf { members: vec![3] },
            ],
            build_indices: vec![],
            populate_indices: vec![0, 1, 2, 3],
            mode: SplitMode::CausalWeightedMmd,
        };
        let w = tree_weights(&tree, &[0.2], &data);
        assert_eq!(w.entries, vec![(0, 0.5), (1, 0.5), (2, -1.0)]);

        let plain = Tree {
            nodes: vec![Node::Leaf {
                members: vec![0, 1, 2, 3],
            }],
            mode: SplitMode::PlainMmd,
            ..tree
        };
        let w = tree_weights(&plain, &[0.2], &data);
        assert!(w.entries.iter().all(|&(_, v)| v == 0.25));
    }

    #[test]
    fn honest_halves_are_disjoint_and_stratified() {
        let data = random_dataset(101, 2, 9);
        let keys = data.row_keys();
        let rows: Vec<usize> = (0..101).collect();
        let (b, p) = honest_partition(&rows, &data, &keys, 0.5, 3);
        assert_eq!(b.len() + p.len(), 101);
        assert!(b.iter().all(|i| !p.contains(i)));
        let tb = b.iter().filter(|&&i| data.treated(i)).count() as i64;
        let tp = p.iter().filter(|&&i| data.treated(i)).count() as i64;
        assert!((tb - tp).abs() <= 1);
    }
}
