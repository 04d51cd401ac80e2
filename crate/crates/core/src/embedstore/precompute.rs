use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::encoder::{brightness_jacobian, Pose, SynthEncoder};
use super::{EmbeddingStore, FrameId, FrameMeta, StoreError, POOL_RADIUS_M};
use crate::navgraph::{NavGraph, NodeId};

/// Heading quadrants rendered for every synthetic viewpoint.
const HEADINGS: [f32; 4] = [0.0, 90.0, 180.0, 270.0];
const BRIGHTNESS_MEAN: f64 = 0.5;
const BRIGHTNESS_SPREAD: f64 = 0.1;

#[derive(Debug, Clone)]
pub enum FrameSource {
    /// Viewpoints spread along every walkable edge, each rendered at the four
    /// heading quadrants.
    Synthetic { frames_per_edge: u32 },
    /// Externally supplied frame metadata.
    Given(Vec<FrameMeta>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecomputeParams {
    pub rotations: u32,
    pub dim: usize,
    pub seed: u64,
    pub max_rotation_deg: f64,
    pub fd_delta: f64,
}

impl Default for PrecomputeParams {
    fn default() -> Self {
        PrecomputeParams {
            rotations: 5,
            dim: 64,
            seed: 0,
            max_rotation_deg: 8.0,
            fd_delta: 1e-3,
        }
    }
}

fn frame_seed(seed: u64, frame: u32) -> u64 {
    // splitmix64 of (seed, frame)
    let mut z = seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Viewpoint positions plus the frame metadata they expand to.
fn synthetic_frames(graph: &NavGraph, frames_per_edge: u32) -> (Vec<FrameMeta>, Vec<[f64; 3]>) {
    let spacing = graph.node_spacing_m();
    let mut metas = Vec::new();
    let mut positions = Vec::new();
    let mut push = |anchor: NodeId, offset: f64, pos: [f64; 3], metas: &mut Vec<FrameMeta>| {
        for yaw in HEADINGS {
            metas.push(FrameMeta {
                frame: FrameId(metas.len() as u32),
                anchor_node: anchor,
                offset_m: offset as f32,
                yaw_deg: yaw,
            });
            positions.push(pos);
        }
    };
    let mut covered = vec![false; graph.node_count()];
    for e in graph.all_edges().filter(|e| e.is_move() && e.from < e.to) {
        let pa = graph.node(e.from).position;
        let pb = graph.node(e.to).position;
        for k in 0..frames_per_edge {
            let t = (k as f64 + 0.5) / frames_per_edge as f64;
            let pos = [0, 1, 2].map(|i| pa[i] + t * (pb[i] - pa[i]));
            let from_a = t * spacing;
            let from_b = (1.0 - t) * spacing;
            // anchored at the nearer endpoint; sign points toward the higher id
            if from_a <= from_b && from_a <= POOL_RADIUS_M {
                push(e.from, from_a, pos, &mut metas);
                covered[e.from.index()] = true;
            } else if from_b < from_a && from_b <= POOL_RADIUS_M {
                push(e.to, -from_b, pos, &mut metas);
                covered[e.to.index()] = true;
            }
        }
    }
    // nodes without walkable edges get viewpoints at the node itself
    let at_node = frames_per_edge.div_ceil(2).max(1);
    for n in graph.nodes() {
        if !covered[n.id.index()] {
            for _ in 0..at_node {
                push(n.id, 0.0, n.position, &mut metas);
            }
        }
    }
    (metas, positions)
}

/// Embeds every frame at `rotations` yaw variants. Variant 0 is unrotated;
/// the others are drawn uniformly in `±max_rotation_deg`. Each frame uses its
/// own generator, so the output does not depend on the worker count.
pub fn precompute(
    graph: &NavGraph,
    source: FrameSource,
    params: &PrecomputeParams,
) -> Result<EmbeddingStore, StoreError> {
    if params.rotations < 1 {
        return Err(StoreError::Parameter("at least one rotation per frame".into()));
    }
    if !(params.fd_delta > 0.0) {
        return Err(StoreError::Parameter(format!("fd_delta {} must be positive", params.fd_delta)));
    }
    let encoder = SynthEncoder::new(params.dim, params.seed)?;
    let (frames, positions) = match source {
        FrameSource::Synthetic { frames_per_edge } => {
            if frames_per_edge == 0 {
                return Err(StoreError::Parameter("frames_per_edge must be positive".into()));
            }
            synthetic_frames(graph, frames_per_edge)
        }
        FrameSource::Given(frames) => {
            let positions = frames
                .iter()
                .map(|f| {
                    if !graph.contains(f.anchor_node) {
                        return [0.0; 3];
                    }
                    let p = graph.node(f.anchor_node).position;
                    let yaw = (f.yaw_deg as f64).to_radians();
                    // offsets are taken along the viewing direction
                    [p[0] + f.offset_m as f64 * yaw.cos(), p[1] - f.offset_m as f64 * yaw.sin(), p[2]]
                })
                .collect();
            (frames, positions)
        }
    };
    if frames.is_empty() {
        return Err(StoreError::EmptyFrames);
    }

    let dim = params.dim;
    let r = params.rotations as usize;
    let per_frame = r * 2 * dim;
    let mut data = vec![0.0f32; frames.len() * per_frame];
    data.par_chunks_mut(per_frame)
        .zip(frames.par_iter().zip(positions.par_iter()))
        .try_for_each(|(chunk, (meta, pos))| -> Result<(), StoreError> {
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(params.seed, meta.frame.0));
            let brightness = BRIGHTNESS_MEAN + (rng.random::<f64>() * 2.0 - 1.0) * BRIGHTNESS_SPREAD;
            for v in 0..r {
                let rot = if v == 0 {
                    0.0
                } else {
                    (rng.random::<f64>() * 2.0 - 1.0) * params.max_rotation_deg
                };
                let pose = Pose {
                    x: pos[0],
                    y: pos[1],
                    z: pos[2],
                    yaw_deg: meta.yaw_deg as f64 + rot,
                };
                let phi = encoder.encode(&pose, brightness);
                let jac = brightness_jacobian(|b| encoder.encode(&pose, b), brightness, params.fd_delta)?;
                let rec = &mut chunk[v * 2 * dim..(v + 1) * 2 * dim];
                for (o, x) in rec[..dim].iter_mut().zip(&phi) {
                    *o = *x as f32;
                }
                for (o, x) in rec[dim..].iter_mut().zip(&jac) {
                    *o = *x as f32;
                }
            }
            Ok(())
        })?;
    EmbeddingStore::new(dim, params.rotations, frames, data, graph)
}
