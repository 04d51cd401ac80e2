//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "AGNT" | u32 version | u32 D | u32 N_a | u32 N_nodes | u32 width
//! f64 beta1 | f64 beta2 | f64 eps | u64 adam_step | u64 P
//! P × f64 params | P × f64 first moment | P × f64 second moment
//! ```
//!
//! Parameters follow the tensor order documented on the agent module.

use std::fs;
use std::path::Path;

use super::{Adam, AdamConfig, AgentConfig, AgentError, AgentParams, Layout};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AGNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: AgentParams<T>,
    pub adam: Adam<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn fresh(params: AgentParams<T>, adam: AdamConfig) -> Self {
        let adam = Adam::new(params.len(), adam);
        Checkpoint { params, adam }
    }

    pub fn cast<U: Scalar>(&self) -> Checkpoint<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        Checkpoint {
            params: self.params.cast(),
            adam: Adam {
                cfg: self.adam.cfg,
                m: conv(&self.adam.m),
                v: conv(&self.adam.v),
                t: self.adam.t,
            },
        }
    }
}

pub fn write_checkpoint_bytes<T: Scalar>(ck: &Checkpoint<T>) -> Vec<u8> {
    let c = &ck.params.cfg;
    let n = ck.params.len();
    let mut out = Vec::with_capacity(64 + 24 * n);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, c.obs_dim as u32, c.n_actions as u32, c.n_nodes as u32, c.width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [ck.adam.cfg.beta1, ck.adam.cfg.beta2, ck.adam.cfg.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ck.adam.t.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for x in ck.params.data.iter().chain(&ck.adam.m).chain(&ck.adam.v) {
        out.extend_from_slice(&x.f64().to_le_bytes());
    }
    out
}

fn take<const N: usize>(bytes: &[u8], pos: &mut usize, what: &str) -> Result<[u8; N], AgentError> {
    let chunk = bytes
        .get(*pos..*pos + N)
        .ok_or_else(|| AgentError::Truncated(format!("{what} at byte {pos}")))?;
    *pos += N;
    Ok(chunk.try_into().expect("length checked"))
}

pub fn read_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, AgentError> {
    let mut pos = 0;
    let magic = take::<4>(bytes, &mut pos, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(AgentError::Magic(magic));
    }
    let mut u32s = [0u32; 5];
    for (i, v) in u32s.iter_mut().enumerate() {
        *v = u32::from_le_bytes(take::<4>(bytes, &mut pos, "header")?);
        if i == 0 && *v != CHECKPOINT_VERSION {
            return Err(AgentError::Version(*v));
        }
    }
    let cfg = AgentConfig {
        obs_dim: u32s[1] as usize,
        n_actions: u32s[2] as usize,
        n_nodes: u32s[3] as usize,
        width: u32s[4] as usize,
    };
    cfg.validate()?;
    let mut f = [0f64; 3];
    for v in &mut f {
        *v = f64::from_le_bytes(take::<8>(bytes, &mut pos, "adam config")?);
    }
    let t = u64::from_le_bytes(take::<8>(bytes, &mut pos, "adam step")?);
    let n = u64::from_le_bytes(take::<8>(bytes, &mut pos, "parameter count")?) as usize;
    let expect = Layout::new(&cfg).total;
    if n != expect {
        return Err(AgentError::Shape(format!("checkpoint holds {n} parameters, dimensions imply {expect}")));
    }
    if bytes.len() - pos != 3 * 8 * n {
        return Err(AgentError::Truncated(format!(
            "{} payload bytes, expected {}",
            bytes.len() - pos,
            24 * n
        )));
    }
    let mut read = |len: usize| -> Result<Vec<T>, AgentError> {
        (0..len)
            .map(|_| take::<8>(bytes, &mut pos, "tensor").map(|b| T::of(f64::from_le_bytes(b))))
            .collect()
    };
    let data = read(n)?;
    let m = read(n)?;
    let v = read(n)?;
    Ok(Checkpoint {
        params: AgentParams::from_vec(cfg, data)?,
        adam: Adam {
            cfg: AdamConfig {
                beta1: f[0],
                beta2: f[1],
                eps: f[2],
            },
            m,
            v,
            t,
        },
    })
}

pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<(), AgentError> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint_bytes(ck)).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, AgentError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint_bytes(&bytes)
}
