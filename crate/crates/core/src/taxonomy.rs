//! Class taxonomy trees.
//!
//! A taxonomy is a rooted tree whose leaves are the classes. Internal nodes
//! (including the root) are *parents*; each parent owns one softmax over its
//! children in the hierarchical output layer. Child order is the order in
//! which edges were supplied, and it fixes the row of each child inside its
//! parent's weight matrix.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy has no edges")]
    EmptyInput,
    #[error("node `{0}` has more than one parent")]
    ChildHasTwoParents(String),
    #[error("edge `{0}` -> `{1}` appears twice")]
    DuplicateEdge(String, String),
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("multiple roots: `{0}` and `{1}`")]
    MultipleRoots(String, String),
    #[error("taxonomy needs at least two leaf classes, found {0}")]
    TooFewLeaves(usize),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read taxonomy `{path}`: {msg}")]
    Io { path: String, msg: String },
}

/// Dense node index, contiguous `0..N` within one tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaxonomyTree {
    names: Vec<String>,
    by_name: HashMap<String, NodeId>,
    root: NodeId,
    parent_of: Vec<Option<NodeId>>,
    children_of: Vec<Vec<NodeId>>,
    /// Position of each node inside its parent's child list.
    child_slot: Vec<usize>,
    leaves: Vec<NodeId>,
    leaf_pos: Vec<Option<usize>>,
    parents: Vec<NodeId>,
    parent_pos: Vec<Option<usize>>,
    depth: Vec<usize>,
    edges: Vec<(NodeId, NodeId)>,
}

impl TaxonomyTree {
    /// Builds and validates a tree from `(parent, child)` name pairs.
    ///
    /// Node ids are assigned in order of first appearance, reading each edge
    /// parent first. Children keep the order of their edges.
    pub fn build_from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self, TaxonomyError> {
        if edges.is_empty() {
            return Err(TaxonomyError::EmptyInput);
        }
        let mut names: Vec<String> = Vec::new();
        let mut by_name: HashMap<String, NodeId> = HashMap::new();
        let mut intern = |name: &str, names: &mut Vec<String>| -> NodeId {
            if let Some(&id) = by_name.get(name) {
                return id;
            }
            let id = NodeId(names.len());
            names.push(name.to_string());
            by_name.insert(name.to_string(), id);
            id
        };

        let mut id_edges = Vec::with_capacity(edges.len());
        let mut parent_of: Vec<Option<NodeId>> = Vec::new();
        for (p, c) in edges {
            let p = intern(p.as_ref(), &mut names);
            let c = intern(c.as_ref(), &mut names);
            parent_of.resize(names.len(), None);
            if p == c {
                return Err(TaxonomyError::CycleDetected(names[p.0].clone()));
            }
            match parent_of[c.0] {
                Some(existing) if existing == p => {
                    return Err(TaxonomyError::DuplicateEdge(
                        names[p.0].clone(),
                        names[c.0].clone(),
                    ))
                }
                Some(_) => return Err(TaxonomyError::ChildHasTwoParents(names[c.0].clone())),
                None => parent_of[c.0] = Some(p),
            }
            id_edges.push((p, c));
        }
        let n = names.len();
        let roots: Vec<NodeId> = (0..n).filter(|&i| parent_of[i].is_none()).map(NodeId).collect();
        let root = match roots.as_slice() {
            [] => {
                // Every node has a parent, so every node lies on or below a cycle.
                return Err(TaxonomyError::CycleDetected(names[id_edges[0].0 .0].clone()));
            }
            [r] => *r,
            [a, b, ..] => {
                return Err(TaxonomyError::MultipleRoots(
                    names[a.0].clone(),
                    names[b.0].clone(),
                ))
            }
        };

        let mut children_of: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut child_slot = vec![0usize; n];
        for &(p, c) in &id_edges {
            child_slot[c.0] = children_of[p.0].len();
            children_of[p.0].push(c);
        }

        // Breadth-first from the root; anything unreached hangs off a cycle.
        let mut depth = vec![usize::MAX; n];
        depth[root.0] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &c in &children_of[u.0] {
                depth[c.0] = depth[u.0] + 1;
                queue.push_back(c);
            }
        }
        if let Some(lost) = (0..n).find(|&i| depth[i] == usize::MAX) {
            return Err(TaxonomyError::CycleDetected(names[lost].clone()));
        }

        let leaves: Vec<NodeId> = (0..n).filter(|&i| children_of[i].is_empty()).map(NodeId).collect();
        if leaves.len() < 2 {
            return Err(TaxonomyError::TooFewLeaves(leaves.len()));
        }
        let mut leaf_pos = vec![None; n];
        for (k, l) in leaves.iter().enumerate() {
            leaf_pos[l.0] = Some(k);
        }
        let parents: Vec<NodeId> = (0..n).filter(|&i| !children_of[i].is_empty()).map(NodeId).collect();
        let mut parent_pos = vec![None; n];
        for (k, p) in parents.iter().enumerate() {
            parent_pos[p.0] = Some(k);
        }

        Ok(Self {
            names,
            by_name,
            root,
            parent_of,
            children_of,
            child_slot,
            leaves,
            leaf_pos,
            parents,
            parent_pos,
            depth,
            edges: id_edges,
        })
    }

    /// Parses the `parent<TAB>child` text format. `#` starts a comment line;
    /// blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(c), None) if !p.is_empty() && !c.is_empty() => {
                    edges.push((p.to_string(), c.to_string()))
                }
                _ => {
                    return Err(TaxonomyError::Parse {
                        line: i + 1,
                        msg: "expected `parent<TAB>child`".into(),
                    })
                }
            }
        }
        Self::build_from_edges(&edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Serialises back to the text format, preserving edge order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (p, c) in &self.edges {
            out.push_str(&self.names[p.0]);
            out.push('\t');
            out.push_str(&self.names[c.0]);
            out.push('\n');
        }
        out
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|(p, c)| (self.names[p.0].clone(), self.names[c.0].clone()))
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.0]
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.parent_of[id.0]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children_of[id.0]
    }

    /// Fan-out `J_p`; zero for leaves.
    pub fn fan_out(&self, id: NodeId) -> usize {
        self.children_of[id.0].len()
    }

    /// Index of `id` within its parent's children (0 for the root).
    pub fn child_slot(&self, id: NodeId) -> usize {
        self.child_slot[id.0]
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id.0]
    }

    pub fn max_depth(&self) -> usize {
        self.leaves.iter().map(|l| self.depth[l.0]).max().unwrap_or(0)
    }

    /// Leaves in ascending id order; this is the class order used everywhere.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn num_classes(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.leaf_pos[id.0].is_some()
    }

    /// Class index of a leaf.
    pub fn leaf_index(&self, id: NodeId) -> Option<usize> {
        self.leaf_pos.get(id.0).copied().flatten()
    }

    pub fn leaf_by_name(&self, name: &str) -> Option<usize> {
        self.node(name).and_then(|id| self.leaf_index(id))
    }

    pub fn leaf_name(&self, class: usize) -> &str {
        self.name(self.leaves[class])
    }

    /// Parent nodes (fan-out > 0) in ascending id order.
    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn num_parents(&self) -> usize {
        self.parents.len()
    }

    pub fn parent_index(&self, id: NodeId) -> Option<usize> {
        self.parent_pos.get(id.0).copied().flatten()
    }

    /// The `(parent, child)` pairs from the root down to `leaf`.
    pub fn path_from_root(&self, leaf: NodeId) -> Result<Vec<(NodeId, NodeId)>, TaxonomyError> {
        if leaf.0 >= self.num_nodes() || !self.is_leaf(leaf) {
            let name = self.names.get(leaf.0).cloned().unwrap_or_else(|| leaf.to_string());
            return Err(TaxonomyError::NotALeaf(name));
        }
        let mut path = Vec::with_capacity(self.depth[leaf.0]);
        let mut node = leaf;
        while let Some(p) = self.parent_of[node.0] {
            path.push((p, node));
            node = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Depth-1 tree with the same root name and the same leaves in order.
    pub fn flat_view(&self) -> TaxonomyTree {
        let root = self.name(self.root);
        let edges: Vec<(&str, &str)> = self.leaves.iter().map(|&l| (root, self.name(l))).collect();
        TaxonomyTree::build_from_edges(&edges).expect("flat view of a valid tree is valid")
    }

    pub fn is_flat(&self) -> bool {
        self.parents.len() == 1
    }

    /// Random tree with depth at most `max_depth` and between one and
    /// `max_fan_out` children per parent; the root always has two or more.
    /// Nodes below the root become leaves with probability `leaf_prob`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, max_fan_out: usize, leaf_prob: f64) -> TaxonomyTree {
        assert!(max_depth >= 1 && max_fan_out >= 2, "need depth >= 1 and fan-out >= 2");
        let mut edges = Vec::new();
        let mut next = 1;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            let lo = if depth == 0 { 2 } else { 1 };
            for _ in 0..rng.gen_range(lo..=max_fan_out) {
                let child = next;
                next += 1;
                edges.push((format!("n{node}"), format!("n{child}")));
                if depth + 1 < max_depth && !rng.gen_bool(leaf_prob) {
                    stack.push((child, depth + 1));
                }
            }
        }
        TaxonomyTree::build_from_edges(&edges).expect("generated edges form a tree")
    }
}
