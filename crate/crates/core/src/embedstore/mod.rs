//! Precomputed observation embeddings.
//!
//! A store holds, for every recorded frame, `R` rotation variants each
//! carrying an embedding `phi` and its brightness Jacobian `jac`. Frames are
//! grouped into per-node pools (frames within 0.5 m path distance of the
//! node) and, inside a pool, by heading quadrant so an agent facing a given
//! direction sees frames looking that way.

mod encoder;
mod io;
mod precompute;

use std::collections::VecDeque;

use thiserror::Error;

use crate::navgraph::{bearing_quadrant, NavGraph, NodeId};

pub use encoder::{brightness_jacobian, synth_encode, Pose, SynthEncoder};
pub use io::{load_store, read_store_bytes, save_store, write_store_bytes, STORE_MAGIC, STORE_VERSION};
pub use precompute::{precompute, FrameSource, PrecomputeParams};

/// Frames within this path distance of a node belong to its pool.
pub const POOL_RADIUS_M: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no frames to embed")]
    EmptyFrames,
    #[error("bad magic {0:?}, expected \"EMBS\"")]
    Magic([u8; 4]),
    #[error("unsupported store version {0}")]
    Version(u32),
    #[error("store file truncated: {0}")]
    Truncated(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeta {
    pub frame: FrameId,
    pub anchor_node: NodeId,
    /// Signed offset along the path from the anchor node, metres.
    pub offset_m: f32,
    pub yaw_deg: f32,
}

/// Borrowed view of one `(frame, variant)` record.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingRecord<'a> {
    pub frame: FrameId,
    pub rotation_variant: u32,
    pub phi: &'a [f32],
    pub jac: &'a [f32],
}

#[derive(Debug, Clone, Default, PartialEq)]
struct NodePools {
    all: Vec<Vec<u32>>,
    by_heading: Vec<[Vec<u32>; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rotations: u32,
    frames: Vec<FrameMeta>,
    /// Frame-major, variant-minor; each record is `phi` then `jac`.
    data: Vec<f32>,
    pools: NodePools,
}

impl EmbeddingStore {
    /// Assembles a store and builds node pools against `graph`.
    pub fn new(
        dim: usize,
        rotations: u32,
        frames: Vec<FrameMeta>,
        data: Vec<f32>,
        graph: &NavGraph,
    ) -> Result<Self, StoreError> {
        if dim == 0 || rotations == 0 {
            return Err(StoreError::Dimension(format!(
                "dim {dim} and rotations {rotations} must be positive"
            )));
        }
        if frames.is_empty() {
            return Err(StoreError::EmptyFrames);
        }
        let expect = frames.len() * rotations as usize * 2 * dim;
        if data.len() != expect {
            return Err(StoreError::Dimension(format!(
                "expected {expect} values for {} frames, got {}",
                frames.len(),
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::Invariant(format!("non-finite value at index {k}")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.frame.0 as usize != i {
                return Err(StoreError::Invariant(format!("frame {i} carries id {}", f.frame.0)));
            }
            if !graph.contains(f.anchor_node) {
                return Err(StoreError::Invariant(format!(
                    "frame {i} anchored at unknown node {}",
                    f.anchor_node
                )));
            }
            if !(f.offset_m.abs() as f64 <= graph.node_spacing_m() + 1e-6) {
                return Err(StoreError::Invariant(format!(
                    "frame {i} offset {} exceeds node spacing",
                    f.offset_m
                )));
            }
        }
        let pools = build_pools(&frames, graph)?;
        Ok(EmbeddingStore {
            dim,
            rotations,
            frames,
            data,
            pools,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rotations_per_frame(&self) -> u32 {
        self.rotations
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[FrameMeta] {
        &self.frames
    }

    pub fn node_count(&self) -> usize {
        self.pools.all.len()
    }

    pub(crate) fn raw(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn offset(&self, frame: u32, variant: u32) -> usize {
        (frame as usize * self.rotations as usize + variant as usize) * 2 * self.dim
    }

    #[inline]
    pub fn record(&self, frame: FrameId, variant: u32) -> EmbeddingRecord<'_> {
        let o = self.offset(frame.0, variant);
        EmbeddingRecord {
            frame,
            rotation_variant: variant,
            phi: &self.data[o..o + self.dim],
            jac: &self.data[o + self.dim..o + 2 * self.dim],
        }
    }

    /// All frames within [`POOL_RADIUS_M`] of `node`.
    pub fn node_pool(&self, node: NodeId) -> &[u32] {
        &self.pools.all[node.index()]
    }

    /// Pool frames whose yaw lies within ±45° of heading quadrant `q`; the
    /// whole node pool when no frame faces that way.
    #[inline]
    pub fn heading_pool(&self, node: NodeId, q: u8) -> &[u32] {
        let sub = &self.pools.by_heading[node.index()][q as usize];
        if sub.is_empty() {
            &self.pools.all[node.index()]
        } else {
            sub
        }
    }

    pub fn mean_pool_size(&self) -> f64 {
        let total: usize = self.pools.all.iter().map(Vec::len).sum();
        total as f64 / self.pools.all.len().max(1) as f64
    }
}

fn build_pools(frames: &[FrameMeta], graph: &NavGraph) -> Result<NodePools, StoreError> {
    let n = graph.node_count();
    let spacing = graph.node_spacing_m();
    let mut all: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut by_heading: Vec<[Vec<u32>; 4]> = vec![Default::default(); n];
    let mut dist = vec![u32::MAX; n];
    let mut touched = Vec::new();
    for f in frames {
        let off = f.offset_m.abs() as f64;
        let slack = POOL_RADIUS_M - off + 1e-6;
        if slack < 0.0 {
            return Err(StoreError::Invariant(format!(
                "frame {} lies {} m from its anchor, outside every node pool",
                f.frame.0, off
            )));
        }
        let max_hops = (slack / spacing).floor() as u32;
        let q = bearing_quadrant(f.yaw_deg as f64) as usize;
        // breadth-first over walkable edges up to the remaining radius
        let mut queue = VecDeque::new();
        dist[f.anchor_node.index()] = 0;
        touched.push(f.anchor_node.index());
        queue.push_back(f.anchor_node);
        while let Some(u) = queue.pop_front() {
            all[u.index()].push(f.frame.0);
            by_heading[u.index()][q].push(f.frame.0);
            let d = dist[u.index()];
            if d == max_hops {
                continue;
            }
            for e in graph.edges(u).iter().filter(|e| e.is_move()) {
                if dist[e.to.index()] == u32::MAX {
                    dist[e.to.index()] = d + 1;
                    touched.push(e.to.index());
                    queue.push_back(e.to);
                }
            }
        }
        for i in touched.drain(..) {
            dist[i] = u32::MAX;
        }
    }
    Ok(NodePools { all, by_heading })
}
