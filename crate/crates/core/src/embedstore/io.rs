//! Binary store layout, all little-endian:
//!
//! ```text
//! "EMBS" | u32 version | u32 frame_count | u32 rotations | u32 dim
//! frame_count × (u32 anchor_node, f32 offset_m, f32 yaw_deg)
//! frame_count × rotations × (dim × f32 phi, dim × f32 jac)
//! ```

use std::fs;
use std::path::Path;

use super::{EmbeddingStore, FrameId, FrameMeta, StoreError};
use crate::navgraph::{NavGraph, NodeId};

pub const STORE_MAGIC: [u8; 4] = *b"EMBS";
pub const STORE_VERSION: u32 = 1;

pub fn write_store_bytes(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + store.frame_count() * 12 + store.raw().len() * 4);
    out.extend_from_slice(&STORE_MAGIC);
    for v in [
        STORE_VERSION,
        store.frame_count() as u32,
        store.rotations_per_frame(),
        store.dim() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in store.frames() {
        out.extend_from_slice(&f.anchor_node.0.to_le_bytes());
        out.extend_from_slice(&f.offset_m.to_le_bytes());
        out.extend_from_slice(&f.yaw_deg.to_le_bytes());
    }
    for x in store.raw() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take4(&mut self, what: &str) -> Result<[u8; 4], StoreError> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| StoreError::Truncated(format!("{what} at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("four bytes"))
    }

    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        self.take4(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32, StoreError> {
        self.take4(what).map(f32::from_le_bytes)
    }
}

pub fn read_store_bytes(bytes: &[u8], graph: &NavGraph) -> Result<EmbeddingStore, StoreError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take4("magic")?;
    if magic != STORE_MAGIC {
        return Err(StoreError::Magic(magic));
    }
    let version = r.u32("version")?;
    if version != STORE_VERSION {
        return Err(StoreError::Version(version));
    }
    let frame_count = r.u32("frame count")? as usize;
    let rotations = r.u32("rotations")?;
    let dim = r.u32("dim")? as usize;
    let values = frame_count
        .checked_mul(rotations as usize)
        .and_then(|x| x.checked_mul(2 * dim))
        .ok_or_else(|| StoreError::Dimension("header sizes overflow".into()))?;
    let needed = 20 + frame_count * 12 + values * 4;
    if bytes.len() < needed {
        return Err(StoreError::Truncated(format!(
            "{} bytes, header implies {needed}",
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(frame_count);
    for i in 0..frame_count {
        frames.push(FrameMeta {
            frame: FrameId(i as u32),
            anchor_node: NodeId(r.u32("anchor")?),
            offset_m: r.f32("offset")?,
            yaw_deg: r.f32("yaw")?,
        });
    }
    let mut data = Vec::with_capacity(values);
    for _ in 0..values {
        data.push(r.f32("record")?);
    }
    if r.pos != bytes.len() {
        return Err(StoreError::Dimension(format!(
            "{} trailing bytes after records",
            bytes.len() - r.pos
        )));
    }
    EmbeddingStore::new(dim, rotations, frames, data, graph)
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    fs::write(path, write_store_bytes(store)).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))
}

/// Reads a store file and builds its node pools against `graph`.
pub fn load_store(path: impl AsRef<Path>, graph: &NavGraph) -> Result<EmbeddingStore, StoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
    read_store_bytes(&bytes, graph)
}

#[cfg(test)]
mod tests {
    use super::super::{precompute, FrameSource, PrecomputeParams};
    use super::*;
    use crate::navgraph::generate_grid;

    fn small() -> (NavGraph, EmbeddingStore) {
        let g = generate_grid(3, 2, 1.0).unwrap();
        let p = PrecomputeParams {
            rotations: 2,
            dim: 5,
            seed: 3,
            ..Default::default()
        };
        let s = precompute(&g, FrameSource::Synthetic { frames_per_edge: 4 }, &p).unwrap();
        (g, s)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (g, s) = small();
        let bytes = write_store_bytes(&s);
        let back = read_store_bytes(&bytes, &g).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_store_bytes(&back), bytes);
    }

    #[test]
    fn wrong_magic() {
        let (g, s) = small();
        let mut bytes = write_store_bytes(&s);
        bytes[0] = b'X';
        assert!(matches!(read_store_bytes(&bytes, &g), Err(StoreError::Magic(_))));
    }

    #[test]
    fn truncation_detected() {
        let (g, s) = small();
        let bytes = write_store_bytes(&s);
        assert!(matches!(
            read_store_bytes(&bytes[..bytes.len() - 3], &g),
            Err(StoreError::Truncated(_))
        ));
        assert!(matches!(read_store_bytes(&bytes[..10], &g), Err(StoreError::Truncated(_))));
    }

    #[test]
    fn header_dim_field() {
        let (g, s) = small();
        let bytes = write_store_bytes(&s);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
        let _ = g;
    }

    #[test]
    fn version_mismatch() {
        let (g, s) = small();
        let mut bytes = write_store_bytes(&s);
        bytes[4] = 9;
        assert_eq!(read_store_bytes(&bytes, &g).unwrap_err(), StoreError::Version(9));
    }
}
