//! Skeleton connectivity per keypoint channel: edges, bone parents, and the
//! symmetrically normalised adjacency used by the graph convolutions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, DataError};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub node_count: usize,
    /// Undirected pairs, including any configured extra links.
    pub edges: Vec<(usize, usize)>,
    /// child -> parent; `None` marks forest roots.
    pub bone_parent: Vec<Option<usize>>,
    /// `D^{-1/2} (A + I) D^{-1/2}`, shape `[N, N]`.
    pub normalized_adjacency: Tensor,
}

impl SkeletonGraph {
    pub fn new(
        node_count: usize,
        skeleton_edges: &[(usize, usize)],
        extra_links: &[(usize, usize)],
        bone_parents: &[(usize, usize)],
    ) -> Result<Self, DataError> {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &(a, b) in skeleton_edges.iter().chain(extra_links) {
            if a >= node_count || b >= node_count {
                return Err(DataError::InvalidGraph(format!(
                    "edge ({a}, {b}) out of bounds for {node_count} nodes"
                )));
            }
            edges.push((a, b));
        }

        let mut bone_parent = vec![None; node_count];
        for &(child, parent) in bone_parents {
            if child >= node_count || parent >= node_count {
                return Err(DataError::InvalidGraph(format!(
                    "bone parent ({child} -> {parent}) out of bounds"
                )));
            }
            if bone_parent[child].is_some() {
                return Err(DataError::InvalidGraph(format!(
                    "node {child} has two bone parents"
                )));
            }
            bone_parent[child] = Some(parent);
        }
        // forest check: following parents must terminate
        for start in 0..node_count {
            let mut node = start;
            for _ in 0..=node_count {
                match bone_parent[node] {
                    Some(p) => node = p,
                    None => break,
                }
                if node == start {
                    return Err(DataError::InvalidGraph(format!(
                        "bone parents contain a cycle through node {start}"
                    )));
                }
            }
        }

        let normalized_adjacency = normalized_adjacency(node_count, &edges);
        Ok(Self {
            node_count,
            edges,
            bone_parent,
            normalized_adjacency,
        })
    }
}

fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let degrees: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().sum())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (degrees[i] * degrees[j]).sqrt();
        }
    }
    Tensor::new(vec![n, n], a).expect("adjacency is square")
}

/// The three distinct skeleton topologies (left and right hands share one).
#[derive(Debug, Clone)]
pub struct ChannelGraphs {
    pub body: SkeletonGraph,
    pub hand: SkeletonGraph,
    pub mouth: SkeletonGraph,
}

impl ChannelGraphs {
    pub fn for_channel(&self, ch: Channel) -> &SkeletonGraph {
        match ch {
            Channel::Body => &self.body,
            Channel::LeftHand | Channel::RightHand => &self.hand,
            Channel::Mouth => &self.mouth,
        }
    }

    /// Built-in layout: COCO-style 17-point body, 21-point hands, and a
    /// 40-point mouth as two lip rings. The default extra body links connect
    /// each wrist to the opposite elbow and to the nose.
    pub fn default_layout() -> Self {
        let body = SkeletonGraph::new(17, &BODY_EDGES, &BODY_EXTRA_LINKS, &BODY_PARENTS)
            .expect("built-in body layout is valid");
        let hand = SkeletonGraph::new(21, &hand_edges(), &[], &hand_parents())
            .expect("built-in hand layout is valid");
        let (mouth_edges, mouth_parents) = mouth_layout();
        let mouth = SkeletonGraph::new(40, &mouth_edges, &[], &mouth_parents)
            .expect("built-in mouth layout is valid");
        Self { body, hand, mouth }
    }

    /// Load edge/extra-link/bone-parent overrides from a JSON config file.
    pub fn from_config_file(path: &Path) -> Result<Self, DataError> {
        let body = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: GraphConfigFile = serde_json::from_str(&body).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let build = |nodes: usize, sec: &GraphSection| {
            SkeletonGraph::new(nodes, &sec.edges, &sec.extra_links, &sec.bone_parents)
        };
        Ok(Self {
            body: build(17, &cfg.body)?,
            hand: build(21, &cfg.hand)?,
            mouth: build(40, &cfg.mouth)?,
        })
    }
}

/// Serializable connectivity (extra links folded into `edges`); checkpoints
/// carry these so a model reloads with the exact graphs it trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelGraphSpecs {
    pub body: GraphSpec,
    pub hand: GraphSpec,
    pub mouth: GraphSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub bone_parents: Vec<(usize, usize)>,
}

impl ChannelGraphs {
    pub fn to_specs(&self) -> ChannelGraphSpecs {
        let spec = |g: &SkeletonGraph| GraphSpec {
            node_count: g.node_count,
            edges: g.edges.clone(),
            bone_parents: g
                .bone_parent
                .iter()
                .enumerate()
                .filter_map(|(child, p)| p.map(|parent| (child, parent)))
                .collect(),
        };
        ChannelGraphSpecs {
            body: spec(&self.body),
            hand: spec(&self.hand),
            mouth: spec(&self.mouth),
        }
    }

    pub fn from_specs(specs: &ChannelGraphSpecs) -> Result<Self, DataError> {
        let build = |s: &GraphSpec| SkeletonGraph::new(s.node_count, &s.edges, &[], &s.bone_parents);
        Ok(Self {
            body: build(&specs.body)?,
            hand: build(&specs.hand)?,
            mouth: build(&specs.mouth)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphConfigFile {
    body: GraphSection,
    hand: GraphSection,
    mouth: GraphSection,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphSection {
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    extra_links: Vec<(usize, usize)>,
    bone_parents: Vec<(usize, usize)>,
}

// COCO-17 keypoints: 0 nose, 1/2 eyes, 3/4 ears, 5/6 shoulders, 7/8 elbows,
// 9/10 wrists, 11/12 hips, 13/14 knees, 15/16 ankles.
const BODY_EDGES: [(usize, usize); 18] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

// wrist <-> opposite elbow and wrist <-> nose
const BODY_EXTRA_LINKS: [(usize, usize); 4] = [(9, 8), (10, 7), (9, 0), (10, 0)];

const BODY_PARENTS: [(usize, usize); 16] = [
    (1, 0),
    (2, 0),
    (3, 1),
    (4, 2),
    (5, 0),
    (6, 0),
    (7, 5),
    (8, 6),
    (9, 7),
    (10, 8),
    (11, 5),
    (12, 6),
    (13, 11),
    (14, 12),
    (15, 13),
    (16, 14),
];

// 21-point hand: wrist 0, then four joints per finger, plus palm links
// between finger bases.
fn hand_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for finger in 0..5 {
        let base = 1 + finger * 4;
        edges.push((0, base));
        for j in 0..3 {
            edges.push((base + j, base + j + 1));
        }
    }
    edges.extend_from_slice(&[(5, 9), (9, 13), (13, 17)]);
    edges
}

fn hand_parents() -> Vec<(usize, usize)> {
    let mut parents = Vec::new();
    for finger in 0..5 {
        let base = 1 + finger * 4;
        parents.push((base, 0));
        for j in 0..3 {
            parents.push((base + j + 1, base + j));
        }
    }
    parents
}

// 40-point mouth: outer lip ring 0..20, inner lip ring 20..40, joined at the
// ring starts.
fn mouth_layout() -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut edges = Vec::new();
    let mut parents = Vec::new();
    for ring in 0..2 {
        let base = ring * 20;
        for i in 0..20 {
            edges.push((base + i, base + (i + 1) % 20));
            if i > 0 {
                parents.push((base + i, base + i - 1));
            }
        }
    }
    edges.push((0, 20));
    parents.push((20, 0));
    (edges, parents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_pair_normalises_to_half() {
        let g = SkeletonGraph::new(2, &[(0, 1)], &[], &[(1, 0)]).unwrap();
        assert_eq!(g.normalized_adjacency.values(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn default_layout_is_consistent() {
        let graphs = ChannelGraphs::default_layout();
        assert_eq!(graphs.body.node_count, 17);
        assert_eq!(graphs.hand.node_count, 21);
        assert_eq!(graphs.mouth.node_count, 40);
        for g in [&graphs.body, &graphs.hand, &graphs.mouth] {
            assert!(g.normalized_adjacency.all_finite());
            let n = g.node_count;
            let adj = g.normalized_adjacency.values();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(adj[i * n + j], adj[j * n + i]);
                }
            }
        }
    }

    #[test]
    fn parent_cycles_are_rejected() {
        let err = SkeletonGraph::new(3, &[(0, 1)], &[], &[(0, 1), (1, 2), (2, 0)]).unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }
}
