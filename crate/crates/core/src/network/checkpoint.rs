//! Checkpoint container: `SKCK`, a little-endian `u32` header length, a JSON
//! header, then one `SKT1` record per parameter (canonical order) followed
//! by one per optimizer velocity (header order).

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::tensor::io::{atomic_write, read_tensor, write_tensor};
use crate::tensor::{BackboneSpec, SgdMomentum};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub id: String,
    pub shape: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub iteration: u64,
    /// True when trained with λ = 0 (classification only).
    pub fsds_mode: bool,
    pub backbone: BackboneSpec,
    /// Echo of the configuration that produced the checkpoint.
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub velocities: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: NetworkParams,
    pub optimizer: SgdMomentum,
}

pub fn save_checkpoint(
    path: &Path,
    params: &NetworkParams,
    optimizer: &SgdMomentum,
    iteration: u64,
    fsds_mode: bool,
    config: serde_json::Value,
) -> Result<()> {
    let entry = |id: &str, t: &crate::tensor::Tensor| TensorEntry {
        id: id.to_string(),
        shape: t.shape(),
    };
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        iteration,
        fsds_mode,
        backbone: params.spec.clone(),
        config,
        tensors: params
            .parameters()
            .iter()
            .map(|p| entry(&p.id, &p.value))
            .collect(),
        velocities: optimizer.velocities().map(|(id, v)| entry(id, v)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params.parameters() {
        write_tensor(&mut buf, &p.value)?;
    }
    for (_, v) in optimizer.velocities() {
        write_tensor(&mut buf, v)?;
    }
    atomic_write(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let bad = |d: String| Error::format(path, d);
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
    let len = u32::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(bad("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&r[..len]).map_err(|e| bad(e.to_string()))?;
    r = &r[len..];
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }

    let mut params = NetworkParams::init(&header.backbone, 0)?;
    {
        let slots = params.parameters_mut();
        if slots.len() != header.tensors.len() {
            return Err(bad(format!(
                "{} tensors for a network with {} parameters",
                header.tensors.len(),
                slots.len()
            )));
        }
        for (slot, entry) in slots.into_iter().zip(&header.tensors) {
            let t = read_tensor(&mut r).map_err(|e| bad(format!("tensor {}: {e}", entry.id)))?;
            if slot.id != entry.id || slot.value.shape() != entry.shape || t.shape() != entry.shape
            {
                return Err(bad(format!(
                    "tensor {} {:?} does not fit parameter {} {:?}",
                    entry.id,
                    t.shape(),
                    slot.id,
                    slot.value.shape()
                )));
            }
            slot.value = t;
        }
    }
    let mut optimizer = SgdMomentum::new();
    for entry in &header.velocities {
        let t = read_tensor(&mut r).map_err(|e| bad(format!("velocity {}: {e}", entry.id)))?;
        if t.shape() != entry.shape {
            return Err(bad(format!("velocity {} shape {:?}", entry.id, t.shape())));
        }
        optimizer.set_velocity(entry.id.clone(), t);
    }
    if !r.is_empty() {
        return Err(bad(format!("{} trailing bytes", r.len())));
    }
    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut params = NetworkParams::init(&BackboneSpec::desk(1), 9).unwrap();
        params.fusion[2].value.data_mut()[1] = 0.25;
        let mut opt = SgdMomentum::new();
        opt.set_velocity("fuse0", Tensor::full([1, 1, 1, 4], 0.5));
        save_checkpoint(
            &path,
            &params,
            &opt,
            42,
            true,
            serde_json::json!({"lambda": 0.0}),
        )
        .unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.header.iteration, 42);
        assert!(ck.header.fsds_mode);
        assert_eq!(ck.params, params);
        assert_eq!(ck.optimizer.velocity("fuse0"), opt.velocity("fuse0"));
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let params = NetworkParams::init(&BackboneSpec::desk(1), 9).unwrap();
        save_checkpoint(
            &path,
            &params,
            &SgdMomentum::new(),
            0,
            false,
            serde_json::Value::Null,
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }
}
