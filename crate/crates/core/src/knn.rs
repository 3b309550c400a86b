//! Exact m-nearest-neighbour search over embedding rows.
//!
//! Two interchangeable backends: an exhaustive scan and a k-d tree. Both
//! compute squared distances with the same summation order and break ties by
//! ascending id, so their outputs agree bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kge::EmbeddingModel;

/// Entity count at which `Auto` switches to the tree.
pub const DEFAULT_TREE_THRESHOLD: usize = 1_000;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    BruteForce,
    PartitionTree,
    Auto,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute-force" | "brute" => Ok(Backend::BruteForce),
            "partition-tree" | "kd-tree" | "tree" => Ok(Backend::PartitionTree),
            "auto" => Ok(Backend::Auto),
            _ => Err(Error::UnknownVariant {
                kind: "neighbour backend",
                value: s.to_owned(),
            }),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::BruteForce => "brute-force",
            Backend::PartitionTree => "partition-tree",
            Backend::Auto => "auto",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub id: u32,
    pub distance: f64,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// `(squared distance, id)` with a total order.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate(f64, u32);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
struct KdTree {
    nodes: Vec<Node>,
    /// Point ids permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
}

impl KdTree {
    fn build(points: &[f64], dim: usize, n: usize) -> Self {
        let mut tree = KdTree {
            nodes: Vec::new(),
            order: (0..n as u32).collect(),
        };
        if n > 0 {
            tree.build_node(points, dim, 0, n);
        }
        tree
    }

    fn build_node(&mut self, points: &[f64], dim: usize, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let coord = |id: u32, d: usize| points[id as usize * dim + d];
        let ids = &self.order[start..end];
        let mut split_dim = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for d in 0..dim {
            let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &id| {
                let x = coord(id, d);
                (lo.min(x), hi.max(x))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                split_dim = d;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            coord(a, split_dim)
                .total_cmp(&coord(b, split_dim))
                .then(a.cmp(&b))
        });
        let value = coord(self.order[start + mid], split_dim);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(points, dim, start, start + mid);
        let right = self.build_node(points, dim, start + mid, end);
        self.nodes[slot] = Node::Split {
            dim: split_dim,
            value,
            left,
            right,
        };
        slot
    }
}

struct Search<'a> {
    points: &'a [f64],
    dim: usize,
    query: &'a [f64],
    m: usize,
    exclude: &'a [u32],
    heap: BinaryHeap<Candidate>,
}

impl Search<'_> {
    fn offer(&mut self, id: u32) {
        if self.exclude.contains(&id) {
            return;
        }
        let row = &self.points[id as usize * self.dim..(id as usize + 1) * self.dim];
        let c = Candidate(squared_distance(row, self.query), id);
        if self.heap.len() < self.m {
            self.heap.push(c);
        } else if c < *self.heap.peek().expect("heap is full") {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn visit(&mut self, tree: &KdTree, node: usize) {
        match tree.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &tree.order[start..end] {
                    self.offer(id);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = self.query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(tree, near);
                // `<=` so equal-distance points with smaller ids are still found
                let bound = diff * diff;
                if self.heap.len() < self.m || bound <= self.heap.peek().expect("non-empty").0 {
                    self.visit(tree, far);
                }
            }
        }
    }
}

/// Immutable nearest-neighbour index over the rows of one embedding table.
#[derive(Clone, Debug)]
pub struct NeighbourIndex {
    backend: Backend,
    dim: usize,
    points: Vec<f64>,
    tree: Option<KdTree>,
    fingerprint: u64,
}

impl NeighbourIndex {
    /// Index over the model's entity table.
    pub fn build(model: &EmbeddingModel, backend: Backend) -> Result<Self> {
        Self::build_with_threshold(model, backend, DEFAULT_TREE_THRESHOLD)
    }

    pub fn build_with_threshold(model: &EmbeddingModel, backend: Backend, threshold: usize) -> Result<Self> {
        let params = model.parameters();
        Self::from_points(params.entity.clone(), params.width, backend, threshold, model.fingerprint())
    }

    /// Index over the model's relation table (predicate-neighbour search).
    pub fn build_relations(model: &EmbeddingModel, backend: Backend) -> Result<Self> {
        let params = model.parameters();
        Self::from_points(
            params.relation.clone(),
            params.width,
            backend,
            DEFAULT_TREE_THRESHOLD,
            model.fingerprint(),
        )
    }

    /// `points` is row-major with `dim` columns.
    pub fn from_points(
        points: Vec<f64>,
        dim: usize,
        backend: Backend,
        threshold: usize,
        fingerprint: u64,
    ) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: points.len(),
            });
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::Config("cannot index an empty table".into()));
        }
        if let Some(pos) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding { entity: pos / dim });
        }
        let backend = match backend {
            Backend::Auto if n >= threshold => Backend::PartitionTree,
            Backend::Auto => Backend::BruteForce,
            other => other,
        };
        let tree = (backend == Backend::PartitionTree).then(|| KdTree::build(&points, dim, n));
        Ok(NeighbourIndex {
            backend,
            dim,
            points,
            tree,
            fingerprint,
        })
    }

    /// Resolved backend (never `Auto`).
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn point(&self, id: u32) -> &[f64] {
        &self.points[id as usize * self.dim..(id as usize + 1) * self.dim]
    }

    /// The `m` rows closest to `point`, ascending by distance then id.
    pub fn query(&self, point: &[f64], m: usize, exclude: &[u32]) -> Result<Vec<Neighbour>> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        if m == 0 {
            return Err(Error::Config("neighbour count must be at least 1".into()));
        }
        let mut found: Vec<Candidate> = match &self.tree {
            Some(tree) => {
                let mut search = Search {
                    points: &self.points,
                    dim: self.dim,
                    query: point,
                    m,
                    exclude,
                    heap: BinaryHeap::with_capacity(m + 1),
                };
                if !tree.nodes.is_empty() {
                    search.visit(tree, 0);
                }
                search.heap.into_vec()
            }
            None => {
                let mut all: Vec<Candidate> = (0..self.len() as u32)
                    .filter(|id| !exclude.contains(id))
                    .map(|id| Candidate(squared_distance(self.point(id), point), id))
                    .collect();
                if all.len() > m {
                    all.select_nth_unstable(m - 1);
                    all.truncate(m);
                }
                all
            }
        };
        found.sort_unstable();
        Ok(found
            .into_iter()
            .map(|Candidate(sq, id)| Neighbour {
                id,
                distance: sq.sqrt(),
            })
            .collect())
    }
}
