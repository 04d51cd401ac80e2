use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Edge, EdgeKind, GraphError, NavGraph, Node, NodeId, ELEVATOR_REACH_M, FLOOR_HEIGHT_M};

/// Lattice steps in heading-quadrant order: east, south, west, north.
const STEPS: [(i32, i32); 4] = [(1, 0), (0, -1), (-1, 0), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildingSpec {
    /// Lattice coordinates of the ground-floor elevator node.
    pub x: i32,
    pub y: i32,
    /// Total floors including the ground floor.
    pub floors: u32,
    /// Hop radius of the footprint replicated on upper floors; never smaller
    /// than the elevator reach.
    pub footprint_hops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampusParams {
    pub corridors: u32,
    pub buildings: u32,
    pub floors_per_building: u32,
    pub nodes_per_corridor: u32,
    pub spacing_m: f64,
}

impl Default for CampusParams {
    fn default() -> Self {
        CampusParams {
            corridors: 4,
            buildings: 2,
            floors_per_building: 3,
            nodes_per_corridor: 25,
            spacing_m: 1.0,
        }
    }
}

#[derive(Default)]
struct Lattice {
    cells: Vec<(i32, i32, u32)>,
    building: Vec<Option<u8>>,
    index: HashMap<(i32, i32, u32), u32>,
    moves: BTreeSet<(u32, u32)>,
    lifts: Vec<(u32, u32)>,
}

impl Lattice {
    fn node(&mut self, x: i32, y: i32, floor: u32) -> u32 {
        if let Some(&i) = self.index.get(&(x, y, floor)) {
            return i;
        }
        let i = self.cells.len() as u32;
        self.cells.push((x, y, floor));
        self.building.push(None);
        self.index.insert((x, y, floor), i);
        i
    }

    fn link(&mut self, a: u32, b: u32) {
        if a != b {
            self.moves.insert((a.min(b), a.max(b)));
        }
    }

    fn neighbours(&self, i: u32) -> impl Iterator<Item = u32> + '_ {
        let (x, y, f) = self.cells[i as usize];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let j = *self.index.get(&(x + dx, y + dy, f))?;
            self.moves.contains(&(i.min(j), i.max(j))).then_some(j)
        })
    }

    fn ball(&self, center: u32, radius: u32) -> Vec<(u32, u32)> {
        let mut dist = HashMap::new();
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        dist.insert(center, 0u32);
        queue.push_back(center);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            out.push((u, d));
            if d == radius {
                continue;
            }
            let mut next: Vec<u32> = self.neighbours(u).collect();
            next.sort_unstable();
            for v in next {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        out
    }

    fn add_building(&mut self, id: u8, center: u32, floors: u32, footprint_hops: u32, reach_hops: u32) -> Result<(), GraphError> {
        let footprint = self.ball(center, footprint_hops.max(reach_hops));
        for &(u, _) in &footprint {
            if self.building[u as usize].is_some() {
                return Err(GraphError::Parameter(format!(
                    "building {id} overlaps the footprint of another building"
                )));
            }
            self.building[u as usize] = Some(id);
        }
        let mut copies: Vec<Vec<u32>> = vec![footprint.iter().map(|&(u, _)| u).collect()];
        for f in 1..floors {
            let mut layer = Vec::with_capacity(footprint.len());
            for &(u, _) in &footprint {
                let (x, y, _) = self.cells[u as usize];
                let v = self.node(x, y, f);
                self.building[v as usize] = Some(id);
                layer.push(v);
            }
            copies.push(layer);
        }
        let pos: HashMap<u32, usize> = footprint.iter().enumerate().map(|(k, &(u, _))| (u, k)).collect();
        for (k, &(u, _)) in footprint.iter().enumerate() {
            let ground: Vec<u32> = self.neighbours(u).filter(|v| pos.contains_key(v)).collect();
            for v in ground {
                let kv = pos[&v];
                for layer in copies.iter().skip(1) {
                    let (a, b) = (layer[k], layer[kv]);
                    self.link(a, b);
                }
            }
        }
        for (k, &(_, d)) in footprint.iter().enumerate() {
            if d > reach_hops {
                continue;
            }
            for fa in 0..floors as usize {
                for fb in 0..floors as usize {
                    if fa != fb {
                        self.lifts.push((copies[fa][k], copies[fb][k]));
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self, spacing_m: f64) -> Result<NavGraph, GraphError> {
        let nodes = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, &(x, y, f))| Node {
                id: NodeId(i as u32),
                position: [x as f64 * spacing_m, y as f64 * spacing_m, f as f64 * FLOOR_HEIGHT_M],
                floor: f,
                building: self.building[i],
                is_elevator_adjacent: false,
            })
            .collect();
        let mut edges = Vec::with_capacity(self.moves.len() * 2 + self.lifts.len());
        for &(a, b) in &self.moves {
            let (ax, ay, _) = self.cells[a as usize];
            let (bx, by, _) = self.cells[b as usize];
            let q = STEPS
                .iter()
                .position(|&s| s == (bx - ax, by - ay))
                .expect("lattice edges join 4-neighbours");
            let bearing = q as f64 * 90.0;
            edges.push(Edge {
                from: NodeId(a),
                to: NodeId(b),
                kind: EdgeKind::Move { bearing_deg: bearing },
                length_m: spacing_m,
            });
            edges.push(Edge {
                from: NodeId(b),
                to: NodeId(a),
                kind: EdgeKind::Move {
                    bearing_deg: (bearing + 180.0) % 360.0,
                },
                length_m: spacing_m,
            });
        }
        for &(a, b) in &self.lifts {
            edges.push(Edge {
                from: NodeId(a),
                to: NodeId(b),
                kind: EdgeKind::Elevator {
                    destination_floor: self.cells[b as usize].2,
                },
                length_m: spacing_m,
            });
        }
        NavGraph::new(nodes, edges, spacing_m)
    }
}

fn check_spacing(spacing_m: f64) -> Result<(), GraphError> {
    if spacing_m.is_finite() && spacing_m > 0.0 {
        Ok(())
    } else {
        Err(GraphError::Parameter(format!("spacing {spacing_m} must be positive")))
    }
}

fn reach_hops(spacing_m: f64) -> u32 {
    ((ELEVATOR_REACH_M / spacing_m) + 1e-9).floor().max(0.0) as u32
}

fn grid_lattice(width: u32, height: u32) -> Lattice {
    let mut lat = Lattice::default();
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            lat.node(x, y, 0);
        }
    }
    for y in 0..height as i32 {
        for x in 0..width as i32 {
            let i = lat.node(x, y, 0);
            if x + 1 < width as i32 {
                let j = lat.node(x + 1, y, 0);
                lat.link(i, j);
            }
            if y + 1 < height as i32 {
                let j = lat.node(x, y + 1, 0);
                lat.link(i, j);
            }
        }
    }
    lat
}

/// 4-connected grid. Node id is `y * width + x`; bearings are exactly
/// 0/90/180/270 (east, south, west, north).
pub fn generate_grid(width: u32, height: u32, spacing_m: f64) -> Result<NavGraph, GraphError> {
    if width < 2 || height < 2 {
        return Err(GraphError::Parameter(format!(
            "grid dimensions {width}x{height}: both must be at least 2"
        )));
    }
    check_spacing(spacing_m)?;
    grid_lattice(width, height).finish(spacing_m)
}

/// Random connected subgraph of a `width` x `height` grid: a random
/// spanning tree plus every other grid edge with probability `extra_edge_p`.
/// Deterministic in `seed`.
pub fn generate_random_lattice(
    seed: u64,
    width: u32,
    height: u32,
    extra_edge_p: f64,
    spacing_m: f64,
) -> Result<NavGraph, GraphError> {
    if width == 0 || height == 0 || width * height < 2 {
        return Err(GraphError::Parameter(format!("lattice {width}x{height} needs at least 2 nodes")));
    }
    if !(0.0..=1.0).contains(&extra_edge_p) {
        return Err(GraphError::Parameter(format!("edge probability {extra_edge_p} outside [0, 1]")));
    }
    check_spacing(spacing_m)?;
    let full = grid_lattice(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lat = Lattice::default();
    for &(x, y, f) in &full.cells {
        lat.node(x, y, f);
    }
    let n = full.cells.len();
    let mut seen = vec![false; n];
    let start = rng.random_range(0..n as u32);
    seen[start as usize] = true;
    let mut stack = vec![start];
    while let Some(&u) = stack.last() {
        let open: Vec<u32> = full.neighbours(u).filter(|&v| !seen[v as usize]).collect();
        if open.is_empty() {
            stack.pop();
            continue;
        }
        let v = open[rng.random_range(0..open.len())];
        seen[v as usize] = true;
        lat.link(u, v);
        stack.push(v);
    }
    for &(a, b) in &full.moves {
        if !lat.moves.contains(&(a, b)) && rng.random::<f64>() < extra_edge_p {
            lat.link(a, b);
        }
    }
    lat.finish(spacing_m)
}

/// Grid with multi-floor buildings on top. Upper floors replicate the
/// ground-floor footprint around each building's elevator node; nodes within
/// [`ELEVATOR_REACH_M`] of the elevator link to the same spot on every other
/// floor.
pub fn generate_grid_campus(
    width: u32,
    height: u32,
    spacing_m: f64,
    buildings: &[BuildingSpec],
) -> Result<NavGraph, GraphError> {
    if width < 2 || height < 2 {
        return Err(GraphError::Parameter(format!(
            "grid dimensions {width}x{height}: both must be at least 2"
        )));
    }
    check_spacing(spacing_m)?;
    let mut lat = grid_lattice(width, height);
    let reach = reach_hops(spacing_m);
    for (b, spec) in buildings.iter().enumerate() {
        if spec.floors == 0 {
            return Err(GraphError::Parameter("building needs at least one floor".into()));
        }
        let center = *lat.index.get(&(spec.x, spec.y, 0)).ok_or_else(|| {
            GraphError::Parameter(format!("building anchor ({}, {}) is outside the grid", spec.x, spec.y))
        })?;
        lat.add_building(b as u8, center, spec.floors, spec.footprint_hops, reach)?;
    }
    lat.finish(spacing_m)
}

/// Random corridor network on an integer lattice with optional buildings.
///
/// Corridors are straight runs of `nodes_per_corridor` nodes; each one after
/// the first starts from a random existing node in a random direction, and
/// crossings merge into shared intersection nodes. Deterministic in `seed`.
pub fn generate_campus(seed: u64, params: &CampusParams) -> Result<NavGraph, GraphError> {
    let CampusParams {
        corridors,
        buildings,
        floors_per_building: floors,
        nodes_per_corridor,
        spacing_m,
    } = *params;
    if corridors == 0 || nodes_per_corridor == 0 || floors == 0 {
        return Err(GraphError::Parameter(
            "corridor count, nodes per corridor and floors must be positive".into(),
        ));
    }
    if floors > 1 && buildings == 0 {
        return Err(GraphError::Parameter("multiple floors need at least one building".into()));
    }
    if buildings > u8::MAX as u32 {
        return Err(GraphError::Parameter(format!("too many buildings: {buildings}")));
    }
    check_spacing(spacing_m)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lat = Lattice::default();
    let mut prev = lat.node(0, 0, 0);
    for k in 1..nodes_per_corridor as i32 {
        let next = lat.node(k, 0, 0);
        lat.link(prev, next);
        prev = next;
    }
    for _ in 1..corridors {
        let start = rng.random_range(0..lat.cells.len()) as u32;
        let (dx, dy) = STEPS[rng.random_range(0..4)];
        let (sx, sy, _) = lat.cells[start as usize];
        let mut prev = start;
        for k in 1..nodes_per_corridor as i32 {
            let next = lat.node(sx + dx * k, sy + dy * k, 0);
            lat.link(prev, next);
            prev = next;
        }
    }

    let reach = reach_hops(spacing_m);
    let footprint = reach;
    let ground = lat.cells.len() as u32;
    let mut centers: Vec<u32> = Vec::new();
    let mut attempts = 0;
    while centers.len() < buildings as usize {
        attempts += 1;
        if attempts > 10_000 {
            return Err(GraphError::Parameter(format!(
                "could not place {buildings} non-overlapping buildings"
            )));
        }
        let c = rng.random_range(0..ground);
        let near: Vec<u32> = lat.ball(c, 2 * footprint + 1).iter().map(|&(u, _)| u).collect();
        if centers.iter().any(|o| near.contains(o)) {
            continue;
        }
        centers.push(c);
    }
    if floors > 1 || buildings > 0 {
        for (b, &c) in centers.iter().enumerate() {
            lat.add_building(b as u8, c, floors, footprint, reach)?;
        }
    }
    lat.finish(spacing_m)
}
