//! Labeled rooted trees: canonical forms, enumeration by leaf order or
//! height, automorphism-group sizes, and amplitudes.
//!
//! A tree is stored as its root node; the root's `label` is the label of the
//! edge connecting it to the distinguished output leaf `v_out` (which is
//! never stored). Children lists are kept sorted, so two trees are isomorphic
//! exactly when their representations are equal.
//!
//! Shape rule: every vertex that has children must have total valency ≥ 3
//! (children + parent edge), i.e. at least two children. The root may relax
//! this (`relax_root`) for the target-output diagnostic family, and the bare
//! two-vertex tree appears either as the order-one carrier (when the output
//! label is a permitted leaf label) or as the constant-term carrier (target
//! output).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::algebra::{factorial, MultiIndex};
use crate::moments::{CouplingSource, MomentsError};

/// A vertex: the label of its parent edge plus its (canonically sorted)
/// children.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TreeNode {
    pub label: usize,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf(label: usize) -> Self {
        TreeNode {
            label,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Sorts children recursively; after this, equality is isomorphism.
    pub fn canonicalize(&mut self) {
        for c in self.children.iter_mut() {
            c.canonicalize();
        }
        self.children.sort();
    }

    fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(|c| c.leaf_count()).sum()
        }
    }

    fn height(&self) -> usize {
        1 + self.children.iter().map(|c| c.height()).max().unwrap_or(0)
    }

    fn vertex_count(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(|c| c.vertex_count())
            .sum::<usize>()
    }

    fn aut(&self) -> u64 {
        let mut total = 1u64;
        let mut run = 1u64;
        for i in 0..self.children.len() {
            total *= self.children[i].aut();
            if i > 0 {
                if self.children[i] == self.children[i - 1] {
                    run += 1;
                } else {
                    total *= factorial(run);
                    run = 1;
                }
            }
        }
        total * factorial(run)
    }

    fn encode_into(&self, out: &mut String) {
        if self.is_leaf() {
            let _ = write!(out, "{}", self.label);
        } else {
            let _ = write!(out, "({}", self.label);
            for c in &self.children {
                out.push(' ');
                c.encode_into(out);
            }
            out.push(')');
        }
    }
}

/// A canonical labeled rooted tree with a distinguished output leaf.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct LabeledRootedTree {
    pub root: TreeNode,
}

impl LabeledRootedTree {
    pub fn new(mut root: TreeNode) -> Self {
        root.canonicalize();
        LabeledRootedTree { root }
    }

    /// Output edge label (root ↔ v_out).
    pub fn output(&self) -> usize {
        self.root.label
    }

    /// The bare two-vertex tree (root with no children).
    pub fn is_degenerate(&self) -> bool {
        self.root.is_leaf()
    }

    /// Number of non-output leaves. The bare tree counts its single vertex
    /// as a leaf.
    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    /// Longest simple path from v_out, in edges. The bare tree has height 1.
    pub fn height(&self) -> usize {
        self.root.height()
    }

    /// Vertices including v_out.
    pub fn vertex_count(&self) -> usize {
        1 + self.root.vertex_count()
    }

    /// Size of the automorphism group (label-preserving, v_out-fixing).
    ///
    /// Rooted automorphisms factor through permutations of identical
    /// (label, subtree) children, so the size is the product over vertices of
    /// the factorials of child multiplicities.
    pub fn aut_size(&self) -> u64 {
        self.root.aut()
    }

    /// Per-label counts of non-output leaves.
    pub fn leaf_label_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        fn walk(node: &TreeNode, counts: &mut BTreeMap<usize, usize>) {
            if node.is_leaf() {
                *counts.entry(node.label).or_insert(0) += 1;
            } else {
                for c in &node.children {
                    walk(c, counts);
                }
            }
        }
        walk(&self.root, &mut counts);
        counts
    }

    /// Leaf multi-index over constraint labels `1..=k` (slot `ℓ−1`).
    pub fn leaf_index(&self, k: usize) -> MultiIndex {
        let mut idx = MultiIndex::zero(k);
        for (label, count) in self.leaf_label_counts() {
            if (1..=k).contains(&label) {
                idx.0[label - 1] += count as u32;
            }
        }
        idx
    }

    /// Nested parenthesized form, e.g. `(1 1 (0 1 1))`.
    pub fn encoding(&self) -> String {
        let mut out = String::new();
        if self.root.is_leaf() {
            let _ = write!(out, "({})", self.root.label);
        } else {
            self.root.encode_into(&mut out);
        }
        out
    }

    /// `∏_v (deg v − 1)!` over all vertices (v_out contributes 1).
    pub fn degree_factorial_product(&self) -> u64 {
        fn walk(node: &TreeNode) -> u64 {
            factorial(node.children.len() as u64) * node.children.iter().map(walk).product::<u64>()
        }
        walk(&self.root)
    }
}

/// Which trees a family admits: label permissions, output, and shape options.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeFamilySpec {
    /// Number of constraint labels (dimension of the leaf multi-index).
    pub k: usize,
    /// Label of the output edge.
    pub output: usize,
    /// Labels permitted on leaf edges.
    pub leaf_labels: Vec<usize>,
    /// Labels permitted on internal edges.
    pub internal_labels: Vec<usize>,
    /// Allow the root to have a single child (valency 2). Used only by the
    /// target-output diagnostic family, where composed trees may pinch at
    /// the root.
    pub relax_root: bool,
    /// Include the bare two-vertex tree as the constant-term carrier (its
    /// single vertex is then weighted by the coupling of the output label).
    pub degenerate_constant: bool,
    /// Cap on vertex valency; `None` means bounded only by the leaf budget.
    pub max_vertex_degree: Option<usize>,
}

impl TreeFamilySpec {
    /// Moment-basis family for exponential-parameter output `j ∈ 0..=k`:
    /// leaves carry labels `1..=k`, internal edges `0..=k`.
    pub fn moment(k: usize, output: usize) -> Self {
        assert!(output <= k, "moment family outputs are 0..=k");
        TreeFamilySpec {
            k,
            output,
            leaf_labels: (1..=k).collect(),
            internal_labels: (0..=k).collect(),
            relax_root: false,
            degenerate_constant: false,
            max_vertex_degree: None,
        }
    }

    /// Cumulant-basis family for output `j ∈ 1..=k`: all non-output edges
    /// carry labels `1..=k`.
    pub fn cumulant(k: usize, output: usize) -> Self {
        assert!(
            (1..=k).contains(&output),
            "cumulant family outputs are 1..=k"
        );
        TreeFamilySpec {
            k,
            output,
            leaf_labels: (1..=k).collect(),
            internal_labels: (1..=k).collect(),
            relax_root: false,
            degenerate_constant: false,
            max_vertex_degree: None,
        }
    }

    /// Diagnostic moment-basis family for the target output `k+1`, with the
    /// root valency relaxed (composed trees may have a bivalent root).
    pub fn target_moment(k: usize) -> Self {
        TreeFamilySpec {
            k,
            output: k + 1,
            leaf_labels: (1..=k).collect(),
            internal_labels: (0..=k).collect(),
            relax_root: true,
            degenerate_constant: true,
            max_vertex_degree: None,
        }
    }

    /// Diagnostic cumulant-basis family for the target output `k+1`.
    pub fn target_cumulant(k: usize) -> Self {
        TreeFamilySpec {
            k,
            output: k + 1,
            leaf_labels: (1..=k).collect(),
            internal_labels: (1..=k).collect(),
            relax_root: true,
            degenerate_constant: true,
            max_vertex_degree: None,
        }
    }

    fn output_is_leaf_label(&self) -> bool {
        self.leaf_labels.contains(&self.output)
    }

    fn degree_ok(&self, children: usize) -> bool {
        match self.max_vertex_degree {
            Some(d) => children < d,
            None => true,
        }
    }
}

/// One representative per isomorphism type with `leaf_count ≤ max_order`.
///
/// Trees are generated directly in canonical form: children are chosen as
/// nondecreasing multisets over the subtree pools, so no deduplication pass
/// is needed. Results are sorted by (leaf count, canonical order).
pub fn enumerate_trees(spec: &TreeFamilySpec, max_order: usize) -> Vec<LabeledRootedTree> {
    let pools = subtree_pools(spec, max_order);
    let mut out: Vec<LabeledRootedTree> = Vec::new();

    if spec.degenerate_constant {
        out.push(LabeledRootedTree {
            root: TreeNode::leaf(spec.output),
        });
    }
    if spec.output_is_leaf_label() && max_order >= 1 {
        out.push(LabeledRootedTree {
            root: TreeNode::leaf(spec.output),
        });
    }
    // The two cases above are mutually exclusive for the shipped families.

    let candidates = flatten_pools(&pools);
    for total in 1..=max_order {
        let min_children = if spec.relax_root { 1 } else { 2 };
        for_each_child_multiset(&candidates, total, min_children, spec, &mut |children| {
            let mut root = TreeNode {
                label: spec.output,
                children: children.to_vec(),
            };
            root.children.sort();
            out.push(LabeledRootedTree { root });
        });
    }

    out.sort_by(|a, b| a.leaf_count().cmp(&b.leaf_count()).then_with(|| a.cmp(b)));
    out
}

/// One representative per isomorphism type with height ≤ `max_height`
/// (leaf counts unbounded; finite because vertex degrees must be capped).
pub fn enumerate_trees_by_height(
    spec: &TreeFamilySpec,
    max_height: usize,
) -> Vec<LabeledRootedTree> {
    let max_degree = spec
        .max_vertex_degree
        .expect("height enumeration requires a vertex degree cap");
    // exact-height pools: pools[h] lists subtrees of height exactly h+1
    let mut pools: Vec<Vec<TreeNode>> = Vec::new();
    if max_height >= 2 {
        pools.push(
            spec.leaf_labels
                .iter()
                .map(|&l| TreeNode::leaf(l))
                .collect(),
        );
        for h in 2..max_height {
            let mut level: Vec<TreeNode> = Vec::new();
            // children from heights ≤ h−1 with at least one of height h−1
            let lower: Vec<&TreeNode> = pools.iter().flatten().collect();
            let cutoff = pools[..h - 2].iter().map(Vec::len).sum::<usize>();
            for &label in &spec.internal_labels {
                for_each_bounded_multiset(&lower, 2, max_degree - 1, &mut |picked| {
                    if picked.iter().all(|&i| i < cutoff) {
                        return; // height would be < h
                    }
                    let mut node = TreeNode {
                        label,
                        children: picked.iter().map(|&i| lower[i].clone()).collect(),
                    };
                    node.children.sort();
                    level.push(node);
                });
            }
            pools.push(level);
        }
    }

    let mut out: Vec<LabeledRootedTree> = Vec::new();
    if max_height >= 1 && (spec.output_is_leaf_label() || spec.degenerate_constant) {
        out.push(LabeledRootedTree {
            root: TreeNode::leaf(spec.output),
        });
    }
    let all: Vec<&TreeNode> = pools.iter().flatten().collect();
    let min_children = if spec.relax_root { 1 } else { 2 };
    for_each_bounded_multiset(&all, min_children, max_degree - 1, &mut |picked| {
        let mut root = TreeNode {
            label: spec.output,
            children: picked.iter().map(|&i| all[i].clone()).collect(),
        };
        root.children.sort();
        out.push(LabeledRootedTree { root });
    });
    out.sort();
    out
}

/// Nondecreasing index multisets of size `min_count..=max_count` over the
/// candidate list; no budget constraint.
fn for_each_bounded_multiset(
    candidates: &[&TreeNode],
    min_count: usize,
    max_count: usize,
    f: &mut impl FnMut(&[usize]),
) {
    fn go(
        n: usize,
        start: usize,
        picked: &mut Vec<usize>,
        min_count: usize,
        max_count: usize,
        f: &mut impl FnMut(&[usize]),
    ) {
        if picked.len() >= min_count {
            f(picked);
        }
        if picked.len() == max_count {
            return;
        }
        for i in start..n {
            picked.push(i);
            go(n, i, picked, min_count, max_count, f);
            picked.pop();
        }
    }
    go(
        candidates.len(),
        0,
        &mut Vec::new(),
        min_count,
        max_count,
        f,
    );
}

/// pools[n−1] = canonical subtrees with exactly n leaves.
fn subtree_pools(spec: &TreeFamilySpec, max_order: usize) -> Vec<Vec<TreeNode>> {
    let mut pools: Vec<Vec<TreeNode>> = Vec::new();
    for n in 1..=max_order {
        let mut level: Vec<TreeNode> = Vec::new();
        if n == 1 {
            for &l in &spec.leaf_labels {
                level.push(TreeNode::leaf(l));
            }
        } else {
            let candidates = flatten_pools(&pools);
            for &label in &spec.internal_labels {
                for_each_child_multiset(&candidates, n, 2, spec, &mut |children| {
                    let mut node = TreeNode {
                        label,
                        children: children.to_vec(),
                    };
                    node.children.sort();
                    level.push(node);
                });
            }
        }
        pools.push(level);
    }
    pools
}

fn flatten_pools(pools: &[Vec<TreeNode>]) -> Vec<(usize, &TreeNode)> {
    let mut out = Vec::new();
    for (i, level) in pools.iter().enumerate() {
        for node in level {
            out.push((i + 1, node));
        }
    }
    out
}

/// Nondecreasing multisets of candidates whose leaf counts sum to exactly
/// `total`, with at least `min_children` members and the vertex degree cap.
fn for_each_child_multiset(
    candidates: &[(usize, &TreeNode)],
    total: usize,
    min_children: usize,
    spec: &TreeFamilySpec,
    f: &mut impl FnMut(&[TreeNode]),
) {
    fn go(
        candidates: &[(usize, &TreeNode)],
        start: usize,
        remaining: usize,
        min_children: usize,
        spec: &TreeFamilySpec,
        picked: &mut Vec<TreeNode>,
        f: &mut impl FnMut(&[TreeNode]),
    ) {
        if remaining == 0 {
            if picked.len() >= min_children {
                f(picked);
            }
            return;
        }
        if !spec.degree_ok(picked.len() + 1) {
            return;
        }
        for i in start..candidates.len() {
            let (leaves, node) = candidates[i];
            if leaves > remaining {
                continue;
            }
            picked.push(node.clone());
            go(
                candidates,
                i,
                remaining - leaves,
                min_children,
                spec,
                picked,
                f,
            );
            picked.pop();
        }
    }
    go(candidates, 0, total, min_children, spec, &mut Vec::new(), f);
}

/// Amplitude of a tree against a moment or cumulant table.
#[derive(Clone, Debug)]
pub struct Amplitude {
    /// Signed product of vertex couplings.
    pub value: f64,
    pub aut_size: u64,
    /// Leaf multi-index over the constraint labels.
    pub leaf_index: MultiIndex,
}

impl Amplitude {
    /// `value / |Aut|`, the tree's contribution to its coefficient.
    pub fn contribution(&self) -> f64 {
        self.value / self.aut_size as f64
    }
}

/// Computes the amplitude of `tree` under `spec`'s conventions.
///
/// Internal vertices of degree d with incident labels `i_1..i_d` contribute
/// `(−1)^{d+1} · table[{i_1..i_d}]`; with `rho_weighting` on, every non-output
/// leaf contributes a factor −1 (its ρ factor is recorded in the leaf
/// multi-index instead). The bare two-vertex tree is the order-one carrier
/// when the output is a permitted leaf label, and the constant carrier (value
/// = coupling of the output label alone) for the target family.
pub fn amplitude(
    tree: &LabeledRootedTree,
    spec: &TreeFamilySpec,
    table: &dyn CouplingSource,
    rho_weighting: bool,
) -> Result<Amplitude, MomentsError> {
    let aut_size = tree.aut_size();
    let leaf_index = tree.leaf_index(spec.k);

    if tree.is_degenerate() {
        if spec.output_is_leaf_label() {
            let value = if rho_weighting { -1.0 } else { 1.0 };
            return Ok(Amplitude {
                value,
                aut_size,
                leaf_index,
            });
        }
        let value = table.coupling(&[spec.output])?;
        return Ok(Amplitude {
            value,
            aut_size,
            leaf_index: MultiIndex::zero(spec.k),
        });
    }

    fn walk(
        node: &TreeNode,
        table: &dyn CouplingSource,
        rho_weighting: bool,
        value: &mut f64,
    ) -> Result<(), MomentsError> {
        if node.is_leaf() {
            if rho_weighting {
                *value = -*value;
            }
            return Ok(());
        }
        let mut labels: Vec<usize> = Vec::with_capacity(node.children.len() + 1);
        labels.push(node.label);
        for c in &node.children {
            labels.push(c.label);
        }
        let degree = labels.len();
        let sign = if (degree + 1).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        *value *= sign * table.coupling(&labels)?;
        for c in &node.children {
            walk(c, table, rho_weighting, value)?;
        }
        Ok(())
    }

    let mut value = 1.0;
    walk(&tree.root, table, rho_weighting, &mut value)?;
    if value == 0.0 {
        value = 0.0; // fold −0.0
    }
    Ok(Amplitude {
        value,
        aut_size,
        leaf_index,
    })
}

/// Evaluates `∏_{v ≠ v_out} w(incident labels of v)` with a caller-supplied
/// vertex weight; used to check contraction values against an independently
/// generated tree listing.
pub fn contraction_value(tree: &LabeledRootedTree, weight: &dyn Fn(&[usize]) -> f64) -> f64 {
    fn walk(node: &TreeNode, weight: &dyn Fn(&[usize]) -> f64) -> f64 {
        let mut labels: Vec<usize> = Vec::with_capacity(node.children.len() + 1);
        labels.push(node.label);
        for c in &node.children {
            labels.push(c.label);
        }
        let mut v = weight(&labels);
        for c in &node.children {
            v *= walk(c, weight);
        }
        v
    }
    walk(&tree.root, weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{CumulantTable, MomentTable};
    use crate::testutil;
    use std::collections::BTreeSet;

    fn by_index(trees: &[LabeledRootedTree], k: usize, idx: &MultiIndex) -> Vec<LabeledRootedTree> {
        trees
            .iter()
            .filter(|t| &t.leaf_index(k) == idx)
            .cloned()
            .collect()
    }

    #[test]
    fn binary_moment_order3_has_three_trees() {
        let spec = TreeFamilySpec::moment(1, 1);
        let trees = enumerate_trees(&spec, 3);
        let order3 = by_index(&trees, 1, &MultiIndex(vec![3]));
        let encodings: BTreeSet<String> = order3.iter().map(|t| t.encoding()).collect();
        assert_eq!(
            encodings,
            BTreeSet::from([
                "(1 1 1 1)".to_string(),
                "(1 (0 1 1) 1)".to_string(),
                "(1 1 (1 1 1))".to_string(),
            ])
        );
        // order 1: the bare tree only
        let order1 = by_index(&trees, 1, &MultiIndex(vec![1]));
        assert_eq!(order1.len(), 1);
        assert!(order1[0].is_degenerate());
    }

    #[test]
    fn binary_cumulant_order3_has_two_trees() {
        let spec = TreeFamilySpec::cumulant(1, 1);
        let trees = enumerate_trees(&spec, 3);
        let order3 = by_index(&trees, 1, &MultiIndex(vec![3]));
        assert_eq!(order3.len(), 2);
    }

    #[test]
    fn max_order_zero() {
        // Outputs 1..k admit nothing at order 0; the target family carries
        // its constant.
        let spec = TreeFamilySpec::moment(1, 1);
        assert!(enumerate_trees(&spec, 0).is_empty());
        let spec0 = TreeFamilySpec::moment(1, 0);
        assert!(enumerate_trees(&spec0, 0).is_empty());
        let target = TreeFamilySpec::target_moment(1);
        let trees = enumerate_trees(&target, 0);
        assert_eq!(trees.len(), 1);
        assert!(trees[0].is_degenerate());
    }

    #[test]
    fn no_zero_labeled_leaves_in_moment_trees() {
        let spec = TreeFamilySpec::moment(2, 0);
        for t in enumerate_trees(&spec, 4) {
            assert!(!t.leaf_label_counts().contains_key(&0), "{}", t.encoding());
        }
    }

    #[test]
    fn aut_sizes() {
        let star = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![TreeNode::leaf(1), TreeNode::leaf(1), TreeNode::leaf(1)],
        });
        assert_eq!(star.aut_size(), 6);

        let chain = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![
                TreeNode::leaf(1),
                TreeNode {
                    label: 0,
                    children: vec![TreeNode::leaf(1), TreeNode::leaf(1)],
                },
            ],
        });
        assert_eq!(chain.aut_size(), 2);

        let mixed = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![TreeNode::leaf(1), TreeNode::leaf(2)],
        });
        assert_eq!(mixed.aut_size(), 1);
    }

    #[test]
    fn canonical_under_child_permutation() {
        let a = LabeledRootedTree::new(TreeNode {
            label: 2,
            children: vec![
                TreeNode {
                    label: 1,
                    children: vec![TreeNode::leaf(2), TreeNode::leaf(1)],
                },
                TreeNode::leaf(1),
            ],
        });
        let b = LabeledRootedTree::new(TreeNode {
            label: 2,
            children: vec![
                TreeNode::leaf(1),
                TreeNode {
                    label: 1,
                    children: vec![TreeNode::leaf(1), TreeNode::leaf(2)],
                },
            ],
        });
        assert_eq!(a, b);
        assert_eq!(a.encoding(), b.encoding());
    }

    #[test]
    fn canonical_under_random_shuffles() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
        fn shuffle(node: &mut TreeNode, rng: &mut rand_chacha::ChaCha8Rng) {
            node.children.shuffle(rng);
            for c in node.children.iter_mut() {
                shuffle(c, rng);
            }
        }
        let spec = TreeFamilySpec::moment(2, 1);
        for tree in enumerate_trees(&spec, 4) {
            for _ in 0..3 {
                let mut root = tree.root.clone();
                shuffle(&mut root, &mut rng);
                let rebuilt = LabeledRootedTree::new(root);
                assert_eq!(rebuilt, tree);
                assert_eq!(rebuilt.encoding(), tree.encoding());
                assert_eq!(rebuilt.aut_size(), tree.aut_size());
            }
        }
    }

    #[test]
    fn rademacher_amplitudes() {
        let p = testutil::binary_rademacher();
        let moments = MomentTable::build(&p, 5);
        let cumulants = CumulantTable::build(&p, 5);
        let spec = TreeFamilySpec::moment(1, 1);

        let star = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![TreeNode::leaf(1), TreeNode::leaf(1), TreeNode::leaf(1)],
        });
        let a = amplitude(&star, &spec, &moments, true).unwrap();
        assert_eq!(a.value, 1.0);
        assert_eq!(a.aut_size, 6);
        assert!((a.contribution() - 1.0 / 6.0).abs() < 1e-15);
        // Without the leaf signs: the bare product of couplings.
        let plain = amplitude(&star, &spec, &moments, false).unwrap();
        assert_eq!(plain.value, -1.0);

        let chain = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![
                TreeNode::leaf(1),
                TreeNode {
                    label: 0,
                    children: vec![TreeNode::leaf(1), TreeNode::leaf(1)],
                },
            ],
        });
        let a = amplitude(&chain, &spec, &moments, true).unwrap();
        assert_eq!(a.value, -1.0);
        assert_eq!(a.aut_size, 2);
        assert!((a.contribution() + 0.5).abs() < 1e-15);

        let cspec = TreeFamilySpec::cumulant(1, 1);
        let a = amplitude(&star, &cspec, &cumulants, true).unwrap();
        assert_eq!(a.value, -2.0);
        assert!((a.contribution() + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn amplitude_rejects_out_of_range_labels() {
        let p = testutil::binary_rademacher();
        let cumulants = CumulantTable::build(&p, 4);
        let spec = TreeFamilySpec::cumulant(1, 1);
        // a moment-style tree with a 0-labeled internal edge has no cumulant
        let chain = LabeledRootedTree::new(TreeNode {
            label: 1,
            children: vec![
                TreeNode::leaf(1),
                TreeNode {
                    label: 0,
                    children: vec![TreeNode::leaf(1), TreeNode::leaf(1)],
                },
            ],
        });
        assert!(amplitude(&chain, &spec, &cumulants, true).is_err());
    }

    /// Brute-force automorphism count: all vertex bijections fixing v_out
    /// that preserve labeled adjacency.
    fn brute_aut(tree: &LabeledRootedTree) -> u64 {
        // Vertex 0 is v_out; flatten the rest.
        #[derive(Clone)]
        struct Flat {
            edges: BTreeSet<(usize, usize, usize)>, // (min, max, label)
            n: usize,
        }
        fn flatten(
            node: &TreeNode,
            parent: usize,
            next: &mut usize,
            edges: &mut BTreeSet<(usize, usize, usize)>,
        ) {
            let me = *next;
            *next += 1;
            edges.insert((parent.min(me), parent.max(me), node.label));
            for c in &node.children {
                flatten(c, me, next, edges);
            }
        }
        let mut edges = BTreeSet::new();
        let mut next = 1;
        flatten(&tree.root, 0, &mut next, &mut edges);
        let flat = Flat { edges, n: next };

        let mut perm: Vec<usize> = (0..flat.n).collect();
        let mut count = 0u64;
        // Heap's algorithm over vertices 1..n (v_out fixed at 0).
        fn heaps(k: usize, perm: &mut Vec<usize>, flat: &Flat, count: &mut u64) {
            if k == 1 {
                let ok = flat.edges.iter().all(|&(u, v, l)| {
                    let (pu, pv) = (perm[u], perm[v]);
                    flat.edges.contains(&(pu.min(pv), pu.max(pv), l))
                });
                if ok {
                    *count += 1;
                }
                return;
            }
            for i in 0..k {
                heaps(k - 1, perm, flat, count);
                if k.is_multiple_of(2) {
                    perm.swap(i + 1, k);
                } else {
                    perm.swap(1, k);
                }
            }
        }
        let movable = flat.n - 1;
        if movable == 0 {
            return 1;
        }
        heaps(movable, &mut perm, &flat, &mut count);
        count
    }

    /// Brute-force count of distinct ordered (planar) arrangements.
    fn brute_ordered_count(tree: &LabeledRootedTree) -> u64 {
        fn orderings(node: &TreeNode) -> BTreeSet<String> {
            if node.is_leaf() {
                return BTreeSet::from([format!("{}", node.label)]);
            }
            let child_sets: Vec<Vec<String>> = node
                .children
                .iter()
                .map(|c| orderings(c).into_iter().collect())
                .collect();
            let mut out = BTreeSet::new();
            let idx: Vec<usize> = (0..node.children.len()).collect();
            permute_indices(&idx, &mut |order| {
                let mut combos: Vec<String> = vec![String::new()];
                for &ci in order {
                    let mut next = Vec::new();
                    for prefix in &combos {
                        for variant in &child_sets[ci] {
                            next.push(format!("{prefix} {variant}"));
                        }
                    }
                    combos = next;
                }
                for c in combos {
                    out.insert(format!("({}{})", node.label, c));
                }
            });
            out
        }
        fn permute_indices(idx: &[usize], f: &mut impl FnMut(&[usize])) {
            let mut v = idx.to_vec();
            loop {
                f(&v);
                if !next_perm(&mut v) {
                    break;
                }
            }
        }
        orderings(&tree.root).len() as u64
    }

    fn next_perm(v: &mut [usize]) -> bool {
        if v.len() < 2 {
            return false;
        }
        let mut i = v.len() - 1;
        while i > 0 && v[i - 1] >= v[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = v.len() - 1;
        while v[j] <= v[i - 1] {
            j -= 1;
        }
        v.swap(i - 1, j);
        v[i..].reverse();
        true
    }

    #[test]
    fn aut_and_orbit_stabilizer_against_brute_force() {
        // k=2 moment spec, all outputs, trees with ≤ 8 vertices.
        for output in 0..=2 {
            let spec = TreeFamilySpec::moment(2, output);
            for tree in enumerate_trees(&spec, 4) {
                if tree.vertex_count() > 8 {
                    continue;
                }
                let fast = tree.aut_size();
                let brute = brute_aut(&tree);
                assert_eq!(fast, brute, "aut mismatch for {}", tree.encoding());
                let ordered = brute_ordered_count(&tree);
                assert_eq!(
                    ordered * fast,
                    tree.degree_factorial_product(),
                    "orbit-stabilizer failed for {}",
                    tree.encoding()
                );
            }
        }
    }

    /// Enumeration completeness: brute-force generation of parent-array trees
    /// with all labelings, canonicalized and deduplicated, must match.
    #[test]
    fn enumeration_complete_small() {
        let cases = [
            (TreeFamilySpec::moment(1, 1), 4, 8),
            (TreeFamilySpec::moment(2, 2), 3, 6),
            (TreeFamilySpec::cumulant(2, 1), 4, 8),
            (TreeFamilySpec::target_moment(1), 3, 6),
        ];
        for (spec, max_order, max_vertices) in cases {
            let ours: BTreeSet<String> = enumerate_trees(&spec, max_order)
                .iter()
                .filter(|t| t.vertex_count() <= max_vertices)
                .map(|t| t.encoding())
                .collect();
            let brute = brute_force_trees(&spec, max_vertices, max_order);
            assert_eq!(ours, brute, "spec {spec:?}");
        }
    }

    fn brute_force_trees(
        spec: &TreeFamilySpec,
        max_vertices: usize,
        max_order: usize,
    ) -> BTreeSet<String> {
        let mut found = BTreeSet::new();
        // Parent arrays over non-v_out vertices; vertex 0 is the root.
        for v in 1..=max_vertices - 1 {
            let mut parents = vec![0usize; v];
            loop {
                let mut children: Vec<Vec<usize>> = vec![Vec::new(); v];
                for i in 1..v {
                    children[parents[i]].push(i);
                }
                let label_sets: Vec<&[usize]> = (0..v)
                    .map(|i| {
                        if i == 0 {
                            std::slice::from_ref(&spec.output)
                        } else if children[i].is_empty() {
                            spec.leaf_labels.as_slice()
                        } else {
                            spec.internal_labels.as_slice()
                        }
                    })
                    .collect();
                let mut assignment = vec![0usize; v];
                assign_labels(0, &label_sets, &mut assignment, &mut |labels| {
                    let root_ok = children[0].is_empty()
                        || children[0].len() >= if spec.relax_root { 1 } else { 2 };
                    let inner_ok = (1..v).all(|i| children[i].is_empty() || children[i].len() >= 2);
                    if !(root_ok && inner_ok) {
                        return;
                    }
                    fn build(i: usize, children: &[Vec<usize>], labels: &[usize]) -> TreeNode {
                        TreeNode {
                            label: labels[i],
                            children: children[i]
                                .iter()
                                .map(|&c| build(c, children, labels))
                                .collect(),
                        }
                    }
                    let tree = LabeledRootedTree::new(build(0, &children, labels));
                    let include = if tree.is_degenerate() {
                        spec.degenerate_constant || (spec.output_is_leaf_label() && max_order >= 1)
                    } else {
                        tree.leaf_count() <= max_order
                    };
                    if include {
                        found.insert(tree.encoding());
                    }
                });
                // next parent array
                let mut pos = v;
                loop {
                    if pos == 1 {
                        pos = 0;
                        break;
                    }
                    pos -= 1;
                    if parents[pos] + 1 < pos {
                        parents[pos] += 1;
                        for p in parents.iter_mut().skip(pos + 1) {
                            *p = 0;
                        }
                        break;
                    }
                }
                if pos == 0 {
                    break;
                }
            }
        }
        found
    }

    fn assign_labels(
        i: usize,
        sets: &[&[usize]],
        assignment: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if i == sets.len() {
            f(assignment);
            return;
        }
        for &l in sets[i] {
            assignment[i] = l;
            assign_labels(i + 1, sets, assignment, f);
        }
    }
}
