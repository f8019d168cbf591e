//! Multi-scale overlapping regions and pixel labeling.
//!
//! A [`RegionForest`] holds several bottom-up merge trees built over one
//! shared set of superpixel leaves. Every region is scored for every class;
//! a superpixel takes the class of the best calibrated (region, class) pair
//! over all regions that contain it. [`label_image_fast`] finds that pair by
//! pushing the running maximum from each root down to the leaves, which
//! costs `O(R * C)` per image. [`label_image_naive`] evaluates the definition
//! directly and serves as the oracle.
//!
//! Ties resolve deterministically: a candidate replaces the incumbent only
//! when its calibrated score is strictly greater. Within one region the
//! lowest class id wins, an ancestor wins over its descendants, and an
//! earlier tree in `roots` wins over a later one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{sigmoid_from_logit, CalibrationParams};
use crate::dataset::{ClassId, RegionId, Superpixel, SuperpixelId};
use crate::error::{Error, Result};

/// A region. The node's id is its index in [`RegionForest::nodes`].
#[derive(Clone, Debug, PartialEq)]
pub struct RegionNode {
    /// Empty for leaves.
    pub children: Vec<RegionId>,
    /// Set for leaves only.
    pub leaf: Option<SuperpixelId>,
    pub pixel_count: u64,
    /// Sorted superpixels covered by this region.
    pub superpixels: Vec<SuperpixelId>,
}

impl RegionNode {
    pub fn is_leaf(&self) -> bool {
        self.leaf.is_some()
    }
}

/// Structure of a node without the cached coverage, used to build forests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeShape {
    Leaf(SuperpixelId),
    Internal(Vec<RegionId>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionForest {
    pub nodes: Vec<RegionNode>,
    /// One root per hierarchy.
    pub roots: Vec<RegionId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForestViolation {
    NoRoots,
    RootOutOfRange {
        root: RegionId,
    },
    ChildOutOfRange {
        node: RegionId,
        child: RegionId,
    },
    LeafOutOfRange {
        node: RegionId,
        superpixel: SuperpixelId,
    },
    LeafWithChildren {
        node: RegionId,
    },
    EmptyInternal {
        node: RegionId,
    },
    DuplicateLeaf {
        superpixel: SuperpixelId,
        nodes: (RegionId, RegionId),
    },
    MissingLeaf {
        superpixel: SuperpixelId,
    },
    Cycle {
        node: RegionId,
        tree: usize,
    },
    MultipleParents {
        node: RegionId,
        tree: usize,
    },
    SharedInternal {
        node: RegionId,
        trees: (usize, usize),
    },
    LeafNotCovered {
        superpixel: SuperpixelId,
        tree: usize,
    },
    Unreachable {
        node: RegionId,
    },
    PixelCountMismatch {
        node: RegionId,
        expected: u64,
        found: u64,
    },
    CoverageMismatch {
        node: RegionId,
    },
}

impl fmt::Display for ForestViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ForestViolation::*;
        match self {
            NoRoots => write!(f, "forest has no roots"),
            RootOutOfRange { root } => write!(f, "root {root} out of range"),
            ChildOutOfRange { node, child } => {
                write!(f, "node {node} references missing child {child}")
            }
            LeafOutOfRange { node, superpixel } => {
                write!(f, "leaf {node} references missing superpixel {superpixel}")
            }
            LeafWithChildren { node } => write!(f, "leaf {node} has children"),
            EmptyInternal { node } => write!(f, "internal node {node} has no children"),
            DuplicateLeaf { superpixel, nodes } => write!(
                f,
                "superpixel {superpixel} has two leaves ({} and {})",
                nodes.0, nodes.1
            ),
            MissingLeaf { superpixel } => write!(f, "superpixel {superpixel} has no leaf"),
            Cycle { node, tree } => write!(f, "cycle through node {node} in tree {tree}"),
            MultipleParents { node, tree } => {
                write!(f, "node {node} has several parents in tree {tree}")
            }
            SharedInternal { node, trees } => write!(
                f,
                "internal node {node} shared by trees {} and {}",
                trees.0, trees.1
            ),
            LeafNotCovered { superpixel, tree } => {
                write!(f, "superpixel {superpixel} not reached from tree {tree}")
            }
            Unreachable { node } => write!(f, "node {node} unreachable from any root"),
            PixelCountMismatch {
                node,
                expected,
                found,
            } => write!(
                f,
                "node {node} has pixel count {found}, children sum to {expected}"
            ),
            CoverageMismatch { node } => write!(
                f,
                "node {node} superpixel set is not the disjoint union of its children"
            ),
        }
    }
}

impl RegionForest {
    /// Builds a forest from its structure, filling in pixel counts and
    /// superpixel coverage, and validates the result.
    pub fn build(
        shapes: Vec<NodeShape>,
        roots: Vec<RegionId>,
        superpixel_pixels: &[u64],
    ) -> std::result::Result<Self, Vec<ForestViolation>> {
        let mut nodes: Vec<RegionNode> = shapes
            .into_iter()
            .map(|shape| match shape {
                NodeShape::Leaf(sp) => RegionNode {
                    children: Vec::new(),
                    leaf: Some(sp),
                    pixel_count: 0,
                    superpixels: Vec::new(),
                },
                NodeShape::Internal(children) => RegionNode {
                    children,
                    leaf: None,
                    pixel_count: 0,
                    superpixels: Vec::new(),
                },
            })
            .collect();

        let superpixels: Vec<Superpixel> = superpixel_pixels
            .iter()
            .enumerate()
            .map(|(id, &pixel_count)| Superpixel {
                id,
                pixel_count,
                gt_histogram: Default::default(),
            })
            .collect();

        // Structural problems first; coverage cannot be computed through them.
        let structural = structural_violations(&nodes, &roots, &superpixels);
        if !structural.is_empty() {
            return Err(structural);
        }

        for node in postorder(&nodes, &roots) {
            let (pixels, mut cover) = match nodes[node].leaf {
                Some(sp) => (superpixel_pixels[sp], vec![sp]),
                None => {
                    let mut pixels = 0;
                    let mut cover = Vec::new();
                    for &child in &nodes[node].children {
                        pixels += nodes[child].pixel_count;
                        cover.extend_from_slice(&nodes[child].superpixels);
                    }
                    (pixels, cover)
                }
            };
            cover.sort_unstable();
            nodes[node].pixel_count = pixels;
            nodes[node].superpixels = cover;
        }

        let forest = RegionForest { nodes, roots };
        let violations = validate_forest(&forest, &superpixels);
        if violations.is_empty() {
            Ok(forest)
        } else {
            Err(violations)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn superpixel_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn shapes(&self) -> Vec<NodeShape> {
        self.nodes
            .iter()
            .map(|n| match n.leaf {
                Some(sp) => NodeShape::Leaf(sp),
                None => NodeShape::Internal(n.children.clone()),
            })
            .collect()
    }

    /// Parents of every node, one entry per tree the node belongs to.
    pub fn parents(&self) -> Vec<Vec<RegionId>> {
        let mut parents = vec![Vec::new(); self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &child in &node.children {
                parents[child].push(id);
            }
        }
        parents
    }

    /// Leaf node of every superpixel.
    pub fn leaf_nodes(&self) -> Vec<RegionId> {
        let mut leaves = vec![usize::MAX; self.superpixel_count()];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(sp) = node.leaf {
                leaves[sp] = id;
            }
        }
        leaves
    }
}

/// Nodes in an order where children precede parents. Assumes an acyclic
/// structure with valid references.
fn postorder(nodes: &[RegionNode], roots: &[RegionId]) -> Vec<RegionId> {
    let mut done = vec![false; nodes.len()];
    let mut order = Vec::with_capacity(nodes.len());
    for &root in roots {
        let mut stack = vec![(root, false)];
        while let Some((node, expanded)) = stack.pop() {
            if done[node] {
                continue;
            }
            if expanded {
                done[node] = true;
                order.push(node);
            } else {
                stack.push((node, true));
                for &child in nodes[node].children.iter().rev() {
                    if !done[child] {
                        stack.push((child, false));
                    }
                }
            }
        }
    }
    order
}

fn structural_violations(
    nodes: &[RegionNode],
    roots: &[RegionId],
    superpixels: &[Superpixel],
) -> Vec<ForestViolation> {
    use ForestViolation::*;
    let mut violations = Vec::new();
    let n = nodes.len();

    if roots.is_empty() {
        violations.push(NoRoots);
    }
    for &root in roots {
        if root >= n {
            violations.push(RootOutOfRange { root });
        }
    }

    let mut leaf_of = vec![None; superpixels.len()];
    for (id, node) in nodes.iter().enumerate() {
        match node.leaf {
            Some(sp) => {
                if !node.children.is_empty() {
                    violations.push(LeafWithChildren { node: id });
                }
                if sp >= superpixels.len() {
                    violations.push(LeafOutOfRange {
                        node: id,
                        superpixel: sp,
                    });
                } else if let Some(first) = leaf_of[sp] {
                    violations.push(DuplicateLeaf {
                        superpixel: sp,
                        nodes: (first, id),
                    });
                } else {
                    leaf_of[sp] = Some(id);
                }
            }
            None => {
                if node.children.is_empty() {
                    violations.push(EmptyInternal { node: id });
                }
                for &child in &node.children {
                    if child >= n {
                        violations.push(ChildOutOfRange { node: id, child });
                    }
                }
            }
        }
    }
    for (sp, leaf) in leaf_of.iter().enumerate() {
        if leaf.is_none() {
            violations.push(MissingLeaf { superpixel: sp });
        }
    }

    // Walk every tree: detect cycles, nodes with two parents in one tree,
    // internal nodes shared between trees, and leaves a tree misses.
    const UNSEEN: u8 = 0;
    const OPEN: u8 = 1;
    const CLOSED: u8 = 2;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut reached = vec![false; n];
    for (tree, &root) in roots.iter().enumerate() {
        if root >= n {
            continue;
        }
        let mut state = vec![UNSEEN; n];
        let mut stack = vec![(root, false)];
        state[root] = OPEN;
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                state[node] = CLOSED;
                continue;
            }
            reached[node] = true;
            if !nodes[node].is_leaf() {
                match owner[node] {
                    Some(other) if other != tree => violations.push(SharedInternal {
                        node,
                        trees: (other, tree),
                    }),
                    _ => owner[node] = Some(tree),
                }
            }
            stack.push((node, true));
            for &child in &nodes[node].children {
                if child >= n {
                    continue;
                }
                match state[child] {
                    UNSEEN => {
                        state[child] = OPEN;
                        stack.push((child, false));
                    }
                    OPEN if is_on_path(&stack, child) => {
                        violations.push(Cycle { node: child, tree })
                    }
                    _ => violations.push(MultipleParents { node: child, tree }),
                }
            }
        }
        for (sp, leaf) in leaf_of.iter().enumerate() {
            if let Some(leaf) = *leaf {
                if state[leaf] == UNSEEN {
                    violations.push(LeafNotCovered {
                        superpixel: sp,
                        tree,
                    });
                }
            }
        }
    }
    if !roots.is_empty() && roots.iter().all(|&r| r < n) {
        for (node, &seen) in reached.iter().enumerate() {
            if !seen {
                violations.push(Unreachable { node });
            }
        }
    }
    violations
}

/// True when `node` is an ancestor on the current DFS path, i.e. it was
/// expanded but not yet closed.
fn is_on_path(stack: &[(RegionId, bool)], node: RegionId) -> bool {
    stack.iter().any(|&(n, expanded)| expanded && n == node)
}

/// Checks every forest invariant against the image's superpixels and returns
/// all violations found.
pub fn validate_forest(forest: &RegionForest, superpixels: &[Superpixel]) -> Vec<ForestViolation> {
    let mut violations = structural_violations(&forest.nodes, &forest.roots, superpixels);
    if !violations.is_empty() {
        return violations;
    }
    for (id, node) in forest.nodes.iter().enumerate() {
        let (expected_pixels, mut expected_cover) = match node.leaf {
            Some(sp) => (superpixels[sp].pixel_count, vec![sp]),
            None => {
                let mut pixels = 0u64;
                let mut cover = Vec::new();
                for &child in &node.children {
                    pixels += forest.nodes[child].pixel_count;
                    cover.extend_from_slice(&forest.nodes[child].superpixels);
                }
                (pixels, cover)
            }
        };
        if expected_pixels != node.pixel_count {
            violations.push(ForestViolation::PixelCountMismatch {
                node: id,
                expected: expected_pixels,
                found: node.pixel_count,
            });
        }
        expected_cover.sort_unstable();
        let disjoint = expected_cover.windows(2).all(|w| w[0] != w[1]);
        if !disjoint || expected_cover != node.superpixels {
            violations.push(ForestViolation::CoverageMismatch { node: id });
        }
    }
    violations
}

/// Raw classifier scores, regions by classes, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    regions: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(regions: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != regions * classes {
            return Err(Error::DimensionMismatch {
                expected: regions * classes,
                found: values.len(),
                context: "score matrix entries".into(),
            });
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(ScoreMatrix {
            regions,
            classes,
            values,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, region: RegionId, class: ClassId) -> f64 {
        self.values[region * self.classes + class]
    }

    pub fn row(&self, region: RegionId) -> &[f64] {
        &self.values[region * self.classes..(region + 1) * self.classes]
    }

    pub fn column(&self, class: ClassId) -> impl Iterator<Item = f64> + '_ {
        (0..self.regions).map(move |r| self.get(r, class))
    }
}

/// Class of every superpixel of one image, indexed by `SuperpixelId`.
pub type Labeling = Vec<ClassId>;

/// Winning class of a superpixel together with its calibrated score, kept as
/// the logit `-(a * s + b)` so that comparisons do not saturate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafDecision {
    pub class: ClassId,
    pub logit: f64,
}

impl LeafDecision {
    pub fn calibrated_score(&self) -> f64 {
        sigmoid_from_logit(self.logit)
    }

    fn beats(&self, incumbent: &LeafDecision) -> bool {
        self.logit > incumbent.logit
    }
}

/// Best class of each region on its own.
fn region_bests(scores: &ScoreMatrix, params: &CalibrationParams) -> Vec<LeafDecision> {
    (0..scores.regions())
        .map(|r| {
            let row = scores.row(r);
            let mut best = LeafDecision {
                class: 0,
                logit: params.logit(0, row[0]),
            };
            for (class, &score) in row.iter().enumerate().skip(1) {
                let candidate = LeafDecision {
                    class,
                    logit: params.logit(class, score),
                };
                if candidate.beats(&best) {
                    best = candidate;
                }
            }
            best
        })
        .collect()
}

fn check_inputs(forest: &RegionForest, scores: &ScoreMatrix, params: &CalibrationParams) {
    assert_eq!(
        scores.regions(),
        forest.nodes.len(),
        "score matrix rows must match region count"
    );
    assert_eq!(
        scores.classes(),
        params.len(),
        "score matrix columns must match class count"
    );
    assert!(scores.classes() > 0, "at least one class is required");
}

/// Top-down maximum propagation. Returns the winning decision per superpixel.
pub fn propagate_max(
    forest: &RegionForest,
    scores: &ScoreMatrix,
    params: &CalibrationParams,
) -> Vec<LeafDecision> {
    check_inputs(forest, scores, params);
    let own = region_bests(scores, params);
    let mut result: Vec<Option<LeafDecision>> = vec![None; forest.superpixel_count()];
    let mut stack: Vec<(RegionId, LeafDecision)> = Vec::new();
    for &root in &forest.roots {
        stack.push((root, own[root]));
        while let Some((node, incoming)) = stack.pop() {
            let best = if own[node].beats(&incoming) {
                own[node]
            } else {
                incoming
            };
            let region = &forest.nodes[node];
            match region.leaf {
                Some(sp) => {
                    let slot = &mut result[sp];
                    match slot {
                        Some(prev) if !best.beats(prev) => {}
                        _ => *slot = Some(best),
                    }
                }
                None => stack.extend(region.children.iter().map(|&c| (c, best))),
            }
        }
    }
    result
        .into_iter()
        .map(|d| d.expect("valid forest reaches every superpixel"))
        .collect()
}

/// Labels every superpixel of an image by propagating the best calibrated
/// (class, score) pair from each root down to the leaves.
pub fn label_image_fast(
    forest: &RegionForest,
    scores: &ScoreMatrix,
    params: &CalibrationParams,
) -> Labeling {
    propagate_max(forest, scores, params)
        .into_iter()
        .map(|d| d.class)
        .collect()
}

/// (tree, depth) of every node: the first tree in root order that reaches
/// it, and its depth there.
fn node_precedence(forest: &RegionForest) -> Vec<(usize, usize)> {
    let mut rank = vec![(usize::MAX, usize::MAX); forest.nodes.len()];
    for (tree, &root) in forest.roots.iter().enumerate() {
        let mut frontier = vec![root];
        let mut depth = 0;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for node in frontier {
                if rank[node].0 == usize::MAX {
                    rank[node] = (tree, depth);
                }
                next.extend_from_slice(&forest.nodes[node].children);
            }
            frontier = next;
            depth += 1;
        }
    }
    rank
}

/// Direct evaluation of the labeling rule: for each superpixel, every region
/// whose coverage contains it, every class, keep the best.
pub fn label_image_naive(
    forest: &RegionForest,
    scores: &ScoreMatrix,
    params: &CalibrationParams,
) -> Labeling {
    check_inputs(forest, scores, params);
    let precedence = node_precedence(forest);
    (0..forest.superpixel_count())
        .map(|sp| {
            let mut containing: Vec<RegionId> = (0..forest.nodes.len())
                .filter(|&r| forest.nodes[r].superpixels.binary_search(&sp).is_ok())
                .collect();
            containing.sort_by_key(|&r| precedence[r]);
            let mut best: Option<(f64, ClassId)> = None;
            for r in containing {
                for class in 0..scores.classes() {
                    let logit = params.logit(class, scores.get(r, class));
                    if best.is_none_or(|(top, _)| logit > top) {
                        best = Some((logit, class));
                    }
                }
            }
            best.expect("every superpixel has a leaf region").1
        })
        .collect()
}

/// All regions containing a superpixel: its leaf and every ancestor in every
/// tree, sorted by id.
pub fn regions_containing(forest: &RegionForest, sp: SuperpixelId) -> Result<Vec<RegionId>> {
    let leaf =
        forest
            .nodes
            .iter()
            .position(|n| n.leaf == Some(sp))
            .ok_or(Error::UnknownSuperpixel {
                superpixel: sp,
                count: forest.superpixel_count(),
            })?;
    let parents = forest.parents();
    let mut found = vec![leaf];
    let mut frontier = vec![leaf];
    while let Some(node) = frontier.pop() {
        for &parent in &parents[node] {
            found.push(parent);
            frontier.push(parent);
        }
    }
    found.sort_unstable();
    found.dedup();
    Ok(found)
}
