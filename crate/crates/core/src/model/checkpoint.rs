//! Binary checkpoint container.
//!
//! ```text
//! magic "CMLMCKPT" | version u32 | config_len u64 | config JSON
//! | tensor_count u32 | per tensor: name_len u32, name, ndim u32, dims u64*, f64 data
//! | sha256 of everything above
//! ```
//! All integers and floats little-endian; tensors in declared layout order.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ParamLayout, Params, Transformer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CMLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint(model: &Transformer, out: &mut impl Write) -> Result<(), ModelError> {
    let mut buf = Vec::with_capacity(model.params.data.len() * 8 + 4096);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| bad(e.to_string()))?;
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(model.layout.tensors.len() as u32).to_le_bytes());
    for t in &model.layout.tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &dim in &t.shape {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for x in &model.params.data[t.range()] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    out.write_all(&buf)?;
    out.write_all(&digest)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Transformer, ModelError> {
    let mut all = Vec::new();
    input.read_to_end(&mut all)?;
    if all.len() < 32 {
        return Err(bad("truncated"));
    }
    let (body, digest) = all.split_at(all.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config_len = c.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(config_len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate_instantiable()?;
    let layout = ParamLayout::new(&config);
    let count = c.u32()? as usize;
    if count != layout.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {count}", layout.tensors.len())));
    }
    let mut params = Params::zeros(&layout);
    for spec in &layout.tensors {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != spec.name {
            return Err(bad(format!("expected tensor {}, found {name}", spec.name)));
        }
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != spec.shape {
            return Err(bad(format!("tensor {name}: shape {shape:?} != {:?}", spec.shape)));
        }
        let raw = c.take(spec.len() * 8)?;
        for (dst, chunk) in params.data[spec.range()].iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if c.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    params.check_finite()?;
    Transformer::from_params(config, params)
}

pub fn save_checkpoint(model: &Transformer, path: &Path) -> Result<(), ModelError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Transformer, ModelError> {
    read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn round_trip_and_corruption() {
        let mut cfg = ModelConfig::preset(Preset::Tiny, 40);
        cfg.embed_dim = 16;
        cfg.ffn_embed_dim = 64;
        let model = Transformer::new(cfg, 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.config, model.config);

        let mut corrupt = bytes.clone();
        corrupt[100] ^= 1;
        assert!(read_checkpoint(&mut corrupt.as_slice()).unwrap_err().to_string().contains("checksum"));
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
