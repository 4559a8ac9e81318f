//! Versioned binary container for trained states.
//!
//! One checkpoint file holds every parameter tensor of a [`StudentState`]
//! with shape headers, plus the session provenance: seed, task index, a
//! hash of the training configuration, and the κ estimate. All numbers are
//! little-endian; tensors are row-major `f64`. The exact layout (version 1):
//!
//! ```text
//! magic     4  b"CGCL"
//! version   u32
//! seed      u64
//! task      u32
//! cfg_hash  u64
//! kappa     f64
//! slope     f64      δ_κ negative-side slope
//! scale     f64      curvature readout scale
//! count     u32      number of tensors
//! tensor*   u16 name_len, name bytes, u32 rows, u32 cols, rows·cols × f64
//! ```
//!
//! Biases travel as `1×d` rows. Writes go to a sibling temp file first and
//! are renamed into place, so a crash can truncate only the temp file,
//! never a checkpoint. Serialization is bit-exact: saving the same state
//! twice produces identical bytes, and a load round-trips to equality.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::curvature::CurvNetParams;
use crate::distill::{DistillConfig, StudentState};
use crate::encoder::RgcnLayerParams;
use crate::manifold::Curvature;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CGCL";
const VERSION: u32 = 1;

/// Provenance carried by a checkpoint next to the state itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub seed: u64,
    pub task_index: u32,
    pub config_hash: u64,
}

/// Stable fingerprint of a training configuration (FNV-1a over its debug
/// form) — enough to detect "evaluated under a different config than
/// trained" mixups, not a cryptographic commitment.
pub fn config_hash(cfg: &DistillConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in format!("{cfg:?}").as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, t: &Array2<f64>) {
    let name_bytes = name.as_bytes();
    buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(name_bytes);
    buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a state with its provenance and atomically replaces `path`.
pub fn save(
    path: &Path,
    state: &StudentState,
    seed: u64,
    task_index: u32,
    config_hash: u64,
) -> Result<()> {
    let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
    for (i, layer) in state.layers.iter().enumerate() {
        tensors.push((format!("layer{i}.w"), layer.w.clone()));
        tensors.push((format!("layer{i}.theta"), layer.theta.clone()));
    }
    tensors.push(("curvnet.m1".into(), state.curvnet.m1.clone()));
    tensors.push(("curvnet.m2".into(), state.curvnet.m2.clone()));
    tensors.push(("intra.w".into(), state.intra_w.clone()));
    tensors.push((
        "intra.b".into(),
        state.intra_b.clone().insert_axis(ndarray::Axis(0)),
    ));
    tensors.push(("inter.w".into(), state.inter_w.clone()));
    tensors.push((
        "inter.b".into(),
        state.inter_b.clone().insert_axis(ndarray::Axis(0)),
    ));

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&task_index.to_le_bytes());
    buf.extend_from_slice(&config_hash.to_le_bytes());
    buf.extend_from_slice(&state.kappa.value().to_le_bytes());
    buf.extend_from_slice(&state.leaky_slope.to_le_bytes());
    buf.extend_from_slice(&state.curvnet.kappa_scale.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        push_tensor(&mut buf, name, t);
    }

    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointInvalid {
                detail: format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.data.len()
                ),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint back into a state plus its provenance.
pub fn load(path: &Path) -> Result<(StudentState, CheckpointMeta)> {
    let data = fs::read(path)?;
    let mut c = Cursor { data: &data, pos: 0 };

    if c.take(4)? != MAGIC {
        return Err(Error::CheckpointInvalid {
            detail: "bad magic — not a checkpoint file".into(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointInvalid {
            detail: format!("unsupported version {version} (this build reads {VERSION})"),
        });
    }
    let seed = c.u64()?;
    let task_index = c.u32()?;
    let cfg_hash = c.u64()?;
    let kappa = c.f64()?;
    let leaky_slope = c.f64()?;
    let kappa_scale = c.f64()?;
    let count = c.u32()? as usize;

    let mut tensors: Vec<(String, Array2<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::CheckpointInvalid {
                detail: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let mut flat = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            flat.push(c.f64()?);
        }
        let arr = Array2::from_shape_vec((rows, cols), flat).map_err(|e| {
            Error::CheckpointInvalid {
                detail: format!("tensor {name}: {e}"),
            }
        })?;
        tensors.push((name, arr));
    }
    if c.pos != data.len() {
        return Err(Error::CheckpointInvalid {
            detail: format!("{} trailing bytes after the last tensor", data.len() - c.pos),
        });
    }

    let find = |name: &str| -> Result<Array2<f64>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::CheckpointInvalid {
                detail: format!("missing tensor {name}"),
            })
    };

    let mut layers = Vec::new();
    let mut i = 0usize;
    while tensors.iter().any(|(n, _)| n == &format!("layer{i}.w")) {
        let w = find(&format!("layer{i}.w"))?;
        let theta = find(&format!("layer{i}.theta"))?;
        layers.push(RgcnLayerParams::new(w, theta).map_err(|e| Error::CheckpointInvalid {
            detail: format!("layer {i}: {e}"),
        })?);
        i += 1;
    }
    if layers.len() < 2 {
        return Err(Error::CheckpointInvalid {
            detail: format!("encoder needs at least two layers, found {}", layers.len()),
        });
    }
    let curvnet = CurvNetParams::new(find("curvnet.m1")?, find("curvnet.m2")?, kappa_scale)
        .map_err(|e| Error::CheckpointInvalid {
            detail: format!("curvature network: {e}"),
        })?;
    let intra_w = find("intra.w")?;
    let intra_b = find("intra.b")?.row(0).to_owned();
    let inter_w = find("inter.w")?;
    let inter_b = find("inter.b")?.row(0).to_owned();

    let state = StudentState {
        layers,
        curvnet,
        intra_w,
        intra_b,
        inter_w,
        inter_b,
        leaky_slope,
        kappa: Curvature::new(kappa).map_err(|_| Error::CheckpointInvalid {
            detail: format!("illegal curvature {kappa}"),
        })?,
    };
    Ok((
        state,
        CheckpointMeta {
            version,
            seed,
            task_index,
            config_hash: cfg_hash,
        },
    ))
}
