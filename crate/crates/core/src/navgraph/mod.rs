//! Topological navigation graph.
//!
//! Nodes are discrete places roughly one node-spacing apart. Directed edges
//! are either `Move` edges (walkable, carrying a bearing) or `Elevator` edges
//! that jump between floors of one building. Metric node positions are kept
//! for plotting and synthetic rendering only; nothing in the transition logic
//! reads them.

mod generate;
mod io;
mod paths;

use std::fmt;

use thiserror::Error;

pub use generate::{
    generate_campus, generate_grid, generate_grid_campus, generate_random_lattice, BuildingSpec, CampusParams,
};
pub use io::{load_graph, parse_graph, save_graph, write_graph};
pub use paths::{
    all_pairs_stats, bfs_hops, shortest_path_length, visitation_counts, DistanceMatrix, PairStats,
    UNREACHABLE,
};

/// Nodes within this path distance of an elevator carry elevator edges.
pub const ELEVATOR_REACH_M: f64 = 4.0;

/// Vertical distance between floors, used for node positions only.
pub const FLOOR_HEIGHT_M: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Metres; x eastward, y northward, z floor height.
    pub position: [f64; 3],
    pub floor: u32,
    pub building: Option<u8>,
    /// Set by graph construction: true iff the node carries elevator edges.
    pub is_elevator_adjacent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeKind {
    /// Bearing in degrees, clockwise from east, quantised to 0.1°.
    Move { bearing_deg: f64 },
    Elevator { destination_floor: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
    pub length_m: f64,
}

impl Edge {
    pub fn is_move(&self) -> bool {
        matches!(self.kind, EdgeKind::Move { .. })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invariant violated ({invariant}): {detail}")]
    Invariant { invariant: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl GraphError {
    fn invariant(invariant: &'static str, detail: impl Into<String>) -> Self {
        GraphError::Invariant {
            invariant,
            detail: detail.into(),
        }
    }
}

/// Quantise a bearing to 0.1° in `[0, 360)`.
pub fn quantize_bearing(deg: f64) -> f64 {
    let tenths = (deg * 10.0).round().rem_euclid(3600.0);
    tenths / 10.0
}

/// Heading quadrant (0..4) whose ±45° sector contains `deg`.
pub fn bearing_quadrant(deg: f64) -> u8 {
    (((deg.rem_euclid(360.0) + 45.0) / 90.0).floor() as u32 % 4) as u8
}

fn angle_diff_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Immutable topological map.
#[derive(Debug, Clone)]
pub struct NavGraph {
    nodes: Vec<Node>,
    adjacency: Vec<Vec<Edge>>,
    node_spacing_m: f64,
    forward: Vec<[Option<NodeId>; 4]>,
    elevators: Vec<Vec<(u32, NodeId)>>,
    floor_count: u32,
}

impl NavGraph {
    /// Builds and validates a graph. Node ids must be dense and in order;
    /// `is_elevator_adjacent` flags are recomputed from the edges.
    pub fn new(mut nodes: Vec<Node>, edges: Vec<Edge>, node_spacing_m: f64) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::invariant("non-empty", "graph has no nodes"));
        }
        if !(node_spacing_m.is_finite() && node_spacing_m > 0.0) {
            return Err(GraphError::invariant(
                "positive spacing",
                format!("node spacing {node_spacing_m} must be positive"),
            ));
        }
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(GraphError::invariant(
                    "dense node ids",
                    format!("node at position {i} has id {}", node.id),
                ));
            }
        }

        let mut adjacency: Vec<Vec<Edge>> = vec![Vec::new(); n];
        for mut e in edges {
            if e.from.index() >= n || e.to.index() >= n {
                return Err(GraphError::invariant(
                    "edge endpoints exist",
                    format!("dangling edge {} -> {}", e.from, e.to),
                ));
            }
            if e.from == e.to {
                return Err(GraphError::invariant("no self loops", format!("edge {} -> {}", e.from, e.to)));
            }
            match &mut e.kind {
                EdgeKind::Move { bearing_deg } => {
                    if !bearing_deg.is_finite() {
                        return Err(GraphError::invariant(
                            "finite bearing",
                            format!("edge {} -> {}", e.from, e.to),
                        ));
                    }
                    *bearing_deg = quantize_bearing(*bearing_deg);
                    e.length_m = node_spacing_m;
                }
                EdgeKind::Elevator { destination_floor } => {
                    let (a, b) = (&nodes[e.from.index()], &nodes[e.to.index()]);
                    if b.floor != *destination_floor {
                        return Err(GraphError::invariant(
                            "elevator destination floor",
                            format!(
                                "edge {} -> {} targets floor {} but node {} is on floor {}",
                                e.from, e.to, destination_floor, e.to, b.floor
                            ),
                        ));
                    }
                    if a.floor == b.floor || a.building.is_none() || a.building != b.building {
                        return Err(GraphError::invariant(
                            "elevator edges join floors of one building",
                            format!("edge {} -> {}", e.from, e.to),
                        ));
                    }
                    e.length_m = node_spacing_m;
                }
            }
            adjacency[e.from.index()].push(e);
        }

        for list in adjacency.iter_mut() {
            list.sort_by_key(|e| e.to);
            for w in list.windows(2) {
                if w[0].to == w[1].to {
                    return Err(GraphError::invariant(
                        "no parallel edges",
                        format!("duplicate edge {} -> {}", w[0].from, w[0].to),
                    ));
                }
            }
        }

        // Move edges must come in mutually traversable pairs.
        for list in &adjacency {
            for e in list {
                if let EdgeKind::Move { bearing_deg } = e.kind {
                    let back = adjacency[e.to.index()].iter().find(|r| r.to == e.from && r.is_move());
                    match back {
                        Some(Edge {
                            kind: EdgeKind::Move { bearing_deg: rb },
                            ..
                        }) if angle_diff_deg(*rb, bearing_deg + 180.0) <= 1.0 => {}
                        Some(_) => {
                            return Err(GraphError::invariant(
                                "reverse bearing consistency",
                                format!("edge {} -> {} and its reverse differ from 180°", e.from, e.to),
                            ))
                        }
                        None => {
                            return Err(GraphError::invariant(
                                "mutual traversability",
                                format!("move edge {} -> {} has no reverse", e.from, e.to),
                            ))
                        }
                    }
                }
            }
        }

        let mut forward = vec![[None; 4]; n];
        let mut elevators = vec![Vec::new(); n];
        for (i, list) in adjacency.iter().enumerate() {
            for e in list {
                match e.kind {
                    EdgeKind::Move { bearing_deg } => {
                        let q = bearing_quadrant(bearing_deg) as usize;
                        if forward[i][q].is_some() {
                            return Err(GraphError::invariant(
                                "unique forward edge",
                                format!("node {i} has two move edges within ±45° of {}°", q * 90),
                            ));
                        }
                        forward[i][q] = Some(e.to);
                    }
                    EdgeKind::Elevator { destination_floor } => {
                        if elevators[i].iter().any(|&(f, _)| f == destination_floor) {
                            return Err(GraphError::invariant(
                                "unique elevator destination",
                                format!("node {i} has two elevator edges to floor {destination_floor}"),
                            ));
                        }
                        elevators[i].push((destination_floor, e.to));
                    }
                }
            }
            elevators[i].sort_unstable();
        }

        for (node, lifts) in nodes.iter_mut().zip(&elevators) {
            node.is_elevator_adjacent = !lifts.is_empty();
        }
        let floor_count = nodes.iter().map(|n| n.floor).max().unwrap_or(0) + 1;

        let graph = NavGraph {
            nodes,
            adjacency,
            node_spacing_m,
            forward,
            elevators,
            floor_count,
        };
        let components = graph.component_count();
        if components != 1 {
            return Err(GraphError::invariant(
                "connected",
                format!("graph has {components} components"),
            ));
        }
        Ok(graph)
    }

    /// Number of weakly connected components, or 2 if the graph is weakly
    /// connected but some node cannot reach node 0 (one-way edges).
    fn component_count(&self) -> usize {
        let n = self.nodes.len();
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in self.all_edges() {
            undirected[e.from.index()].push(e.to.index());
            undirected[e.to.index()].push(e.from.index());
            reverse[e.to.index()].push(e.from.index());
        }
        let flood = |adj: &[Vec<usize>], start: usize, seen: &mut [bool]| {
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        };
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if !seen[s] {
                count += 1;
                flood(&undirected, s, &mut seen);
            }
        }
        if count > 1 {
            return count;
        }
        let reaches_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; n];
            flood(adj, 0, &mut seen);
            seen.iter().all(|&x| x)
        };
        let forward: Vec<Vec<usize>> = self
            .adjacency
            .iter()
            .map(|l| l.iter().map(|e| e.to.index()).collect())
            .collect();
        if reaches_all(&forward) && reaches_all(&reverse) {
            1
        } else {
            2
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// Outgoing edges sorted by target id.
    pub fn edges(&self, id: NodeId) -> &[Edge] {
        &self.adjacency[id.index()]
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.adjacency.iter().flatten()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn node_spacing_m(&self) -> f64 {
        self.node_spacing_m
    }

    /// Number of distinct floor indices (`max floor + 1`).
    pub fn floor_count(&self) -> u32 {
        self.floor_count
    }

    /// Target of the move edge within ±45° of heading quadrant `q`.
    #[inline]
    pub fn forward_target(&self, id: NodeId, q: u8) -> Option<NodeId> {
        self.forward[id.index()][q as usize]
    }

    /// Target of the elevator edge to `floor`, if any.
    #[inline]
    pub fn elevator_target(&self, id: NodeId, floor: u32) -> Option<NodeId> {
        self.elevators[id.index()]
            .iter()
            .find(|&&(f, _)| f == floor)
            .map(|&(_, t)| t)
    }

    pub fn elevator_links(&self, id: NodeId) -> &[(u32, NodeId)] {
        &self.elevators[id.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(i: u32, x: f64) -> Node {
        Node {
            id: NodeId(i),
            position: [x, 0.0, 0.0],
            floor: 0,
            building: None,
            is_elevator_adjacent: false,
        }
    }

    fn mv(a: u32, b: u32, bearing: f64) -> Edge {
        Edge {
            from: NodeId(a),
            to: NodeId(b),
            kind: EdgeKind::Move { bearing_deg: bearing },
            length_m: 1.0,
        }
    }

    #[test]
    fn quadrant_sectors() {
        assert_eq!(bearing_quadrant(0.0), 0);
        assert_eq!(bearing_quadrant(44.9), 0);
        assert_eq!(bearing_quadrant(45.0), 1);
        assert_eq!(bearing_quadrant(359.0), 0);
        assert_eq!(bearing_quadrant(180.0), 2);
        assert_eq!(bearing_quadrant(-90.0), 3);
    }

    #[test]
    fn quantization_wraps() {
        assert_eq!(quantize_bearing(359.97), 0.0);
        assert_eq!(quantize_bearing(-90.0), 270.0);
        assert_eq!(quantize_bearing(12.345), 12.3);
    }

    #[test]
    fn missing_reverse_edge_is_rejected() {
        let err = NavGraph::new(vec![node(0, 0.0), node(1, 1.0)], vec![mv(0, 1, 0.0)], 1.0).unwrap_err();
        assert!(matches!(err, GraphError::Invariant { invariant: "mutual traversability", .. }));
    }

    #[test]
    fn inconsistent_reverse_bearing_is_rejected() {
        let err = NavGraph::new(
            vec![node(0, 0.0), node(1, 1.0)],
            vec![mv(0, 1, 0.0), mv(1, 0, 90.0)],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Invariant { invariant: "reverse bearing consistency", .. }));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = NavGraph::new(
            vec![node(0, 0.0), node(1, 1.0), node(2, 5.0)],
            vec![mv(0, 1, 0.0), mv(1, 0, 180.0)],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Invariant { invariant: "connected", .. }));
    }

    #[test]
    fn two_forward_edges_in_one_sector_are_rejected() {
        let nodes = vec![node(0, 0.0), node(1, 1.0), node(2, 1.0)];
        let edges = vec![mv(0, 1, 0.0), mv(1, 0, 180.0), mv(0, 2, 10.0), mv(2, 0, 190.0)];
        let err = NavGraph::new(nodes, edges, 1.0).unwrap_err();
        assert!(matches!(err, GraphError::Invariant { invariant: "unique forward edge", .. }));
    }

    #[test]
    fn elevator_must_stay_within_building() {
        let mut a = node(0, 0.0);
        a.building = Some(0);
        let mut b = node(1, 0.0);
        b.floor = 1;
        b.building = Some(1);
        let lift = |x: u32, y: u32, f: u32| Edge {
            from: NodeId(x),
            to: NodeId(y),
            kind: EdgeKind::Elevator { destination_floor: f },
            length_m: 1.0,
        };
        let err = NavGraph::new(vec![a, b], vec![lift(0, 1, 1), lift(1, 0, 0)], 1.0).unwrap_err();
        assert!(matches!(err, GraphError::Invariant { .. }));
    }
}
