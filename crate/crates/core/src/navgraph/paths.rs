use std::collections::VecDeque;

use super::{NavGraph, NodeId};

/// Hop count marking an unreachable node.
pub const UNREACHABLE: u32 = u32::MAX;

/// Breadth-first hop counts from `source` over all outgoing edges. Every edge,
/// elevator edges included, costs one hop.
pub fn bfs_hops(graph: &NavGraph, source: NodeId) -> Vec<u32> {
    let mut hops = vec![UNREACHABLE; graph.node_count()];
    bfs_tree(graph, source, &mut hops, None);
    hops
}

/// BFS expanding neighbours in ascending id order; the first discoverer of a
/// node becomes its parent. Returns the visit order.
fn bfs_tree(graph: &NavGraph, source: NodeId, hops: &mut [u32], mut parent: Option<&mut [u32]>) -> Vec<u32> {
    hops.fill(UNREACHABLE);
    if let Some(p) = parent.as_deref_mut() {
        p.fill(UNREACHABLE);
    }
    let mut order = Vec::with_capacity(graph.node_count());
    let mut queue = VecDeque::new();
    hops[source.index()] = 0;
    queue.push_back(source.0);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        let next = hops[u as usize] + 1;
        // adjacency lists are sorted by target id
        for e in graph.edges(NodeId(u)) {
            let v = e.to.index();
            if hops[v] == UNREACHABLE {
                hops[v] = next;
                if let Some(p) = parent.as_deref_mut() {
                    p[v] = u;
                }
                queue.push_back(v as u32);
            }
        }
    }
    order
}

/// Minimal path length in metres, `None` if unreachable.
pub fn shortest_path_length(graph: &NavGraph, a: NodeId, b: NodeId) -> Option<f64> {
    if a == b {
        return Some(0.0);
    }
    let h = bfs_hops(graph, a)[b.index()];
    (h != UNREACHABLE).then(|| h as f64 * graph.node_spacing_m())
}

/// Dense all-pairs hop matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    spacing_m: f64,
    hops: Vec<u32>,
}

impl DistanceMatrix {
    pub fn new(graph: &NavGraph) -> Self {
        let n = graph.node_count();
        let mut hops = vec![UNREACHABLE; n * n];
        for (s, row) in hops.chunks_exact_mut(n).enumerate() {
            bfs_tree(graph, NodeId(s as u32), row, None);
        }
        DistanceMatrix {
            n,
            spacing_m: graph.node_spacing_m(),
            hops,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }

    #[inline]
    pub fn hops(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a.index() * self.n + b.index()]
    }

    /// Row of hop counts from `a`.
    pub fn row(&self, a: NodeId) -> &[u32] {
        &self.hops[a.index() * self.n..(a.index() + 1) * self.n]
    }

    #[inline]
    pub fn meters(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let h = self.hops(a, b);
        (h != UNREACHABLE).then(|| h as f64 * self.spacing_m)
    }

    /// Longest finite shortest path, in hops.
    pub fn max_hops(&self) -> u32 {
        self.hops.iter().copied().filter(|&h| h != UNREACHABLE).max().unwrap_or(0)
    }

    pub fn max_m(&self) -> f64 {
        self.max_hops() as f64 * self.spacing_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub pairs: u64,
    pub mean_m: f64,
    /// Population standard deviation.
    pub std_m: f64,
    /// Longest optimal path (the curriculum's `L_max`).
    pub max_m: f64,
    pub bucket_m: f64,
    /// Count of pairs per `[k·bucket_m, (k+1)·bucket_m)` bucket.
    pub histogram: Vec<u64>,
}

/// Statistics over all unordered pairs of distinct nodes.
pub fn all_pairs_stats(distances: &DistanceMatrix, bucket_m: f64) -> PairStats {
    let n = distances.node_count();
    let spacing = distances.spacing_m();
    let mut counts_by_hops: Vec<u64> = Vec::new();
    for a in 0..n {
        let row = distances.row(NodeId(a as u32));
        for &h in &row[a + 1..] {
            if h == UNREACHABLE {
                continue;
            }
            let h = h as usize;
            if counts_by_hops.len() <= h {
                counts_by_hops.resize(h + 1, 0);
            }
            counts_by_hops[h] += 1;
        }
    }
    let pairs: u64 = counts_by_hops.iter().sum();
    let (mut sum, mut max_h) = (0.0, 0usize);
    for (h, &c) in counts_by_hops.iter().enumerate() {
        sum += c as f64 * h as f64 * spacing;
        if c > 0 {
            max_h = h;
        }
    }
    let mean = if pairs > 0 { sum / pairs as f64 } else { 0.0 };
    let mut var = 0.0;
    for (h, &c) in counts_by_hops.iter().enumerate() {
        let d = h as f64 * spacing - mean;
        var += c as f64 * d * d;
    }
    let std = if pairs > 0 { (var / pairs as f64).sqrt() } else { 0.0 };

    let bucket_m = if bucket_m > 0.0 { bucket_m } else { 1.0 };
    let max_m = max_h as f64 * spacing;
    let mut histogram = vec![0u64; (max_m / bucket_m).floor() as usize + 1];
    for (h, &c) in counts_by_hops.iter().enumerate() {
        if c > 0 {
            let b = ((h as f64 * spacing) / bucket_m).floor() as usize;
            histogram[b] += c;
        }
    }
    PairStats {
        pairs,
        mean_m: mean,
        std_m: std,
        max_m,
        bucket_m,
        histogram,
    }
}

/// For each node, the number of unordered pairs `{a, b}` (a < b) whose
/// chosen shortest path from `a` to `b` passes through it, endpoints
/// included. Paths come from a BFS rooted at the lower id expanding
/// neighbours lowest-id first.
pub fn visitation_counts(graph: &NavGraph) -> Vec<u64> {
    let n = graph.node_count();
    let mut counts = vec![0u64; n];
    let mut hops = vec![UNREACHABLE; n];
    let mut parent = vec![UNREACHABLE; n];
    let mut below = vec![0u64; n];
    for a in 0..n {
        let order = bfs_tree(graph, NodeId(a as u32), &mut hops, Some(&mut parent));
        // below[v] = number of targets b > a whose tree path runs through v
        below.fill(0);
        for &v in order.iter().rev() {
            let v = v as usize;
            if v > a {
                below[v] += 1;
            }
            let p = parent[v];
            if p != UNREACHABLE {
                below[p as usize] += below[v];
            }
        }
        for v in 0..n {
            counts[v] += below[v];
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::super::{generate_grid, Edge, EdgeKind, Node};
    use super::*;

    pub(crate) fn path_graph(n: usize) -> NavGraph {
        let nodes = (0..n)
            .map(|i| Node {
                id: NodeId(i as u32),
                position: [i as f64, 0.0, 0.0],
                floor: 0,
                building: None,
                is_elevator_adjacent: false,
            })
            .collect();
        let mut edges = Vec::new();
        for i in 1..n as u32 {
            edges.push(Edge {
                from: NodeId(i - 1),
                to: NodeId(i),
                kind: EdgeKind::Move { bearing_deg: 0.0 },
                length_m: 1.0,
            });
            edges.push(Edge {
                from: NodeId(i),
                to: NodeId(i - 1),
                kind: EdgeKind::Move { bearing_deg: 180.0 },
                length_m: 1.0,
            });
        }
        NavGraph::new(nodes, edges, 1.0).unwrap()
    }

    #[test]
    fn identity_distance_is_zero() {
        let g = path_graph(4);
        assert_eq!(shortest_path_length(&g, NodeId(2), NodeId(2)), Some(0.0));
    }

    #[test]
    fn three_node_path_stats() {
        let g = path_graph(3);
        let s = all_pairs_stats(&DistanceMatrix::new(&g), 1.0);
        assert_eq!(s.pairs, 3);
        assert!((s.mean_m - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.max_m, 2.0);
        assert_eq!(s.histogram, vec![0, 2, 1]);
    }

    #[test]
    fn three_node_path_visitation() {
        assert_eq!(visitation_counts(&path_graph(3)), vec![2, 3, 2]);
    }

    #[test]
    fn single_node_visitation_is_zero() {
        assert_eq!(visitation_counts(&path_graph(1)), vec![0]);
    }

    #[test]
    fn grid_corners_are_18_apart() {
        let g = generate_grid(10, 10, 1.0).unwrap();
        assert_eq!(shortest_path_length(&g, NodeId(0), NodeId(99)), Some(18.0));
        assert_eq!(DistanceMatrix::new(&g).max_m(), 18.0);
    }
}
