//! Similarity graph over a scene's frames and waypoint extraction.
//!
//! Edges connect frames whose cosine similarity exceeds a threshold
//! (strictly). Weighted variants use `w = √(1 − s)`, so paths through
//! highly similar frames are cheap. The pose graph links frames whose
//! ground-truth positions are at most one metre apart.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{Store, StoreError};
use crate::scalar::{dot, Scalar};

pub const SPARSE_THRESHOLD: f64 = 0.75;
pub const DENSE_THRESHOLD: f64 = 0.40;
pub const POSE_RADIUS_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("pose graph needs a pose for every node (missing for record {0})")]
    MissingPose(usize),
    #[error("record {0} is not a node of this graph")]
    UnknownNode(usize),
    #[error("affinity matrix is malformed: {0}")]
    BadAffinity(&'static str),
    #[error("context size must be at least 2 and match the previous context")]
    BadContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphVariant {
    /// Sparse weighted: s > 0.75, w = √(1 − s).
    #[serde(rename = "SWG")]
    Swg,
    /// Sparse binary: s > 0.75, w = 1.
    #[serde(rename = "SBG")]
    Sbg,
    /// Dense weighted: s > 0.40, w = √(1 − s).
    #[serde(rename = "DWG")]
    Dwg,
    /// Pose graph: distance ≤ 1 m, w = 1.
    #[serde(rename = "PG")]
    Pg,
}

impl GraphVariant {
    pub fn default_threshold(self) -> f64 {
        match self {
            GraphVariant::Swg | GraphVariant::Sbg => SPARSE_THRESHOLD,
            GraphVariant::Dwg => DENSE_THRESHOLD,
            GraphVariant::Pg => POSE_RADIUS_M,
        }
    }

    fn weighted(self) -> bool {
        matches!(self, GraphVariant::Swg | GraphVariant::Dwg)
    }

    pub fn name(self) -> &'static str {
        match self {
            GraphVariant::Swg => "SWG",
            GraphVariant::Sbg => "SBG",
            GraphVariant::Dwg => "DWG",
            GraphVariant::Pg => "PG",
        }
    }
}

impl std::str::FromStr for GraphVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SWG" => Ok(GraphVariant::Swg),
            "SBG" => Ok(GraphVariant::Sbg),
            "DWG" => Ok(GraphVariant::Dwg),
            "PG" => Ok(GraphVariant::Pg),
            _ => Err(format!("unknown graph variant {s:?}")),
        }
    }
}

/// Dense pairwise similarity among the records of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity<T> {
    pub nodes: Vec<usize>,
    /// Row-major `n × n`.
    pub values: Vec<T>,
}

impl<T: Scalar> Affinity<T> {
    pub fn get(&self, a: usize, b: usize) -> T {
        self.values[a * self.nodes.len() + b]
    }
}

pub fn build_affinity<T: Scalar>(store: &Store<T>, scene: &str) -> Result<Affinity<T>, GraphError> {
    let nodes = store.partition(scene)?.to_vec();
    let n = nodes.len();
    let mut values = vec![T::one(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = store.similarity(nodes[i], nodes[j]);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(Affinity { nodes, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub f64);

/// Undirected weighted graph over record indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "GraphFile", into = "GraphFile")]
pub struct SimilarityGraph {
    pub variant: GraphVariant,
    pub threshold: f64,
    nodes: Vec<usize>,
    /// Each undirected edge once, `i < j`, in record indices.
    edges: Vec<Edge>,
    position: HashMap<usize, usize>,
    /// Adjacency by node position: `(neighbour position, weight)`, sorted by
    /// neighbour position.
    adj: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    variant: GraphVariant,
    threshold: f64,
    nodes: Vec<usize>,
    edges: Vec<Edge>,
}

impl From<GraphFile> for SimilarityGraph {
    fn from(f: GraphFile) -> Self {
        SimilarityGraph::from_edges(f.variant, f.threshold, f.nodes, f.edges)
    }
}

impl From<SimilarityGraph> for GraphFile {
    fn from(g: SimilarityGraph) -> Self {
        GraphFile {
            variant: g.variant,
            threshold: g.threshold,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl SimilarityGraph {
    /// Assemble from an edge list in record indices. Self loops are dropped
    /// and each pair is kept once.
    pub fn from_edges(variant: GraphVariant, threshold: f64, nodes: Vec<usize>, edges: Vec<Edge>) -> Self {
        let position: HashMap<usize, usize> = nodes.iter().enumerate().map(|(p, &r)| (r, p)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        let mut canon = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for Edge(a, b, w) in edges {
            if a == b {
                continue;
            }
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((a, b)) {
                continue;
            }
            let (pa, pb) = match (position.get(&a), position.get(&b)) {
                (Some(&pa), Some(&pb)) => (pa, pb),
                _ => continue,
            };
            adj[pa].push((pb, w));
            adj[pb].push((pa, w));
            canon.push(Edge(a, b, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(p, _)| p);
        }
        Self {
            variant,
            threshold,
            nodes,
            edges: canon,
            position,
            adj,
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, record: usize) -> bool {
        self.position.contains_key(&record)
    }

    /// Weight of edge `(a, b)` in record indices, if present.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let (pa, pb) = (*self.position.get(&a)?, *self.position.get(&b)?);
        self.adj[pa]
            .binary_search_by_key(&pb, |&(p, _)| p)
            .ok()
            .map(|i| self.adj[pa][i].1)
    }

    /// Neighbours of a record with edge weights, in record indices.
    pub fn neighbours(&self, record: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let list = self
            .position
            .get(&record)
            .map(|&p| self.adj[p].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&(p, w)| (self.nodes[p], w))
    }

    fn pos(&self, record: usize) -> Result<usize, GraphError> {
        self.position
            .get(&record)
            .copied()
            .ok_or(GraphError::UnknownNode(record))
    }
}

fn edge_for(variant: GraphVariant, threshold: f64, s: f64) -> Option<f64> {
    if s > threshold {
        Some(if variant.weighted() {
            (1.0 - s).max(0.0).sqrt()
        } else {
            1.0
        })
    } else {
        None
    }
}

fn pose_edges(nodes: &[usize], poses: &[[f64; 2]], radius: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let (a, b) = (poses[i], poses[j]);
            if (a[0] - b[0]).hypot(a[1] - b[1]) <= radius {
                edges.push(Edge(nodes[i], nodes[j], 1.0));
            }
        }
    }
    edges
}

/// Threshold a dense affinity matrix into a graph. `poses`, aligned with
/// `affinity.nodes`, is required for [`GraphVariant::Pg`] and ignored
/// otherwise. `threshold` overrides the variant default.
pub fn build_graph<T: Scalar>(
    affinity: &Affinity<T>,
    variant: GraphVariant,
    threshold: Option<f64>,
    poses: Option<&[[f64; 2]]>,
) -> Result<SimilarityGraph, GraphError> {
    let n = affinity.nodes.len();
    if affinity.values.len() != n * n {
        return Err(GraphError::BadAffinity("shape"));
    }
    let threshold = threshold.unwrap_or_else(|| variant.default_threshold());
    let edges = if variant == GraphVariant::Pg {
        let poses = poses.ok_or(GraphError::MissingPose(affinity.nodes.first().copied().unwrap_or(0)))?;
        if poses.len() != n {
            return Err(GraphError::BadAffinity("pose count"));
        }
        pose_edges(&affinity.nodes, poses, threshold)
    } else {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if let Some(w) = edge_for(variant, threshold, affinity.get(i, j).as_f64()) {
                    edges.push(Edge(affinity.nodes[i], affinity.nodes[j], w));
                }
            }
        }
        edges
    };
    Ok(SimilarityGraph::from_edges(
        variant,
        threshold,
        affinity.nodes.clone(),
        edges,
    ))
}

/// Build a scene graph straight from the store, one row at a time, without
/// materializing the dense affinity. Rows are computed in parallel.
pub fn build_scene_graph<T: Scalar>(
    store: &Store<T>,
    scene: &str,
    variant: GraphVariant,
    threshold: Option<f64>,
) -> Result<SimilarityGraph, GraphError> {
    let nodes = store.partition(scene)?.to_vec();
    let threshold = threshold.unwrap_or_else(|| variant.default_threshold());
    let edges = if variant == GraphVariant::Pg {
        let poses = nodes
            .iter()
            .map(|&r| store.meta(r).eval_pose().ok_or(GraphError::MissingPose(r)))
            .collect::<Result<Vec<_>, _>>()?;
        pose_edges(&nodes, &poses, threshold)
    } else {
        nodes
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, &a)| {
                let va = store.vector(a);
                nodes[i + 1..].iter().filter_map(move |&b| {
                    edge_for(variant, threshold, dot(va, store.vector(b)).as_f64()).map(|w| Edge(a, b, w))
                })
            })
            .collect()
    };
    Ok(SimilarityGraph::from_edges(variant, threshold, nodes, edges))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub found: bool,
    pub nodes: Vec<usize>,
    pub cost: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Label {
    dist: f64,
    hops: u32,
}

impl Label {
    fn key(&self) -> (f64, u32) {
        (self.dist, self.hops)
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, u32, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on (dist, hops, position)
        o.0.partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| o.1.cmp(&self.1))
            .then_with(|| o.2.cmp(&self.2))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Shortest distances from every node to one target (Dijkstra from the
/// target). One tree answers path queries from any source.
///
/// Labels are `(cost, hop count)` compared lexicographically. A path is
/// traced from the source by stepping to the smallest-index neighbour that
/// lies on an optimal labelled path, which yields, among minimum-cost
/// paths with the fewest hops, the lexicographically smallest node
/// sequence.
#[derive(Debug, Clone)]
pub struct ShortestPathTree<'g> {
    graph: &'g SimilarityGraph,
    target: usize,
    labels: Vec<Option<(f64, u32)>>,
}

const REL_TOL: f64 = 1e-12;

impl<'g> ShortestPathTree<'g> {
    pub fn to_target(graph: &'g SimilarityGraph, target: usize) -> Result<Self, GraphError> {
        let t = graph.pos(target)?;
        let n = graph.nodes.len();
        let mut best: Vec<Option<Label>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        best[t] = Some(Label { dist: 0.0, hops: 0 });
        heap.push(HeapItem(0.0, 0, t));
        while let Some(HeapItem(d, h, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &(v, w) in &graph.adj[u] {
                if done[v] {
                    continue;
                }
                let cand = Label {
                    dist: d + w,
                    hops: h + 1,
                };
                let improve = match best[v] {
                    None => true,
                    Some(cur) => cand.key().partial_cmp(&cur.key()) == Some(Ordering::Less),
                };
                if improve {
                    best[v] = Some(cand);
                    heap.push(HeapItem(cand.dist, cand.hops, v));
                }
            }
        }
        Ok(Self {
            graph,
            target,
            labels: best.into_iter().map(|l| l.map(|l| l.key())).collect(),
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Cost from `record` to the target, `None` when disconnected.
    pub fn distance(&self, record: usize) -> Result<Option<f64>, GraphError> {
        Ok(self.labels[self.graph.pos(record)?].map(|l| l.0))
    }

    pub fn path_from(&self, source: usize) -> Result<PathResult, GraphError> {
        let g = self.graph;
        let mut u = g.pos(source)?;
        let Some((_, mut hops)) = self.labels[u] else {
            return Ok(PathResult {
                found: false,
                nodes: Vec::new(),
                cost: f64::INFINITY,
            });
        };
        let mut nodes = vec![g.nodes[u]];
        let mut cost = 0.0;
        while hops > 0 {
            let (du, _) = self.labels[u].unwrap();
            let next = g.adj[u]
                .iter()
                .filter_map(|&(v, w)| {
                    let (dv, hv) = self.labels[v]?;
                    let tight = hv + 1 == hops && (dv + w - du).abs() <= REL_TOL * du.abs().max(1.0);
                    tight.then_some((v, w))
                })
                .min_by_key(|&(v, _)| g.nodes[v]);
            // A node with hop label h always has a neighbour that produced it.
            let (v, w) = next.expect("shortest-path labels are consistent");
            cost += w;
            nodes.push(g.nodes[v]);
            u = v;
            hops -= 1;
        }
        Ok(PathResult {
            found: true,
            nodes,
            cost,
        })
    }
}

/// Minimum-cost path between two records.
pub fn shortest_path(graph: &SimilarityGraph, source: usize, target: usize) -> Result<PathResult, GraphError> {
    graph.pos(source)?;
    ShortestPathTree::to_target(graph, target)?.path_from(source)
}

/// Write a found path into a context of `size` slots.
///
/// The path is read as `P = [r_obs, interior…, r_goal]`. When `P` is longer
/// than the context, both endpoints are kept and `size − 2` interior nodes
/// are sampled uniformly without replacement, preserving path order.
/// Otherwise `P` fills the leading slots and the rest keep `previous`. When
/// no path exists only the first two slots are replaced by `r_obs` and
/// `r_goal`.
///
/// Returns the new slots and how many leading slots were refreshed.
pub fn path_to_context<R: Rng + ?Sized>(
    path: &PathResult,
    r_obs: usize,
    r_goal: usize,
    size: usize,
    previous: &[usize],
    rng: &mut R,
) -> Result<(Vec<usize>, usize), GraphError> {
    if size < 2 || previous.len() != size {
        return Err(GraphError::BadContext);
    }
    let mut out = previous.to_vec();
    if !path.found {
        out[0] = r_obs;
        out[1] = r_goal;
        return Ok((out, 2));
    }
    let interior: &[usize] = if path.nodes.len() >= 2 {
        &path.nodes[1..path.nodes.len() - 1]
    } else {
        &[]
    };
    let full = interior.len() + 2;
    if full > size {
        let mut picks = sample(rng, interior.len(), size - 2).into_vec();
        picks.sort_unstable();
        out[0] = r_obs;
        for (slot, &i) in picks.iter().enumerate() {
            out[slot + 1] = interior[i];
        }
        out[size - 1] = r_goal;
        Ok((out, size))
    } else {
        out[0] = r_obs;
        out[1..=interior.len()].copy_from_slice(interior);
        out[full - 1] = r_goal;
        Ok((out, full))
    }
}
