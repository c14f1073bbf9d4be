//! Binary checkpoints: `MAGIC`, version, a JSON header, then a table of
//! `name → shape → little-endian f32 payload` entries.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Outpainter};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"DGOUTPNT";
pub const VERSION: u32 = 1;
const DISC_PREFIX: &str = "disc.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_len(buf: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::InvalidInput(format!("length {n} exceeds u32")))?;
    put_u32(buf, v);
    Ok(())
}

pub fn encode(model: &Outpainter<f32>, step: u64) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&CheckpointHeader { model: model.config.clone(), step })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_len(&mut buf, header.len())?;
    buf.extend_from_slice(&header);
    let entries: Vec<(&str, &ArrayD<f32>)> = model.g_params.iter().chain(model.d_params.iter()).collect();
    put_len(&mut buf, entries.len())?;
    for (name, value) in entries {
        put_len(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_len(&mut buf, value.ndim())?;
        for &d in value.shape() {
            put_len(&mut buf, d)?;
        }
        for v in value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut v = vec![0; n];
        self.0
            .read_exact(&mut v)
            .map_err(|_| Error::Corrupt("checkpoint truncated".into()))?;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        let remaining = self.0.get_ref().len() - self.0.position() as usize;
        if n > remaining.max(64) * 8 {
            return Err(Error::Corrupt(format!("implausible length {n}")));
        }
        Ok(n)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Outpainter<f32>, CheckpointHeader)> {
    let mut r = Reader(Cursor::new(bytes));
    if r.bytes(MAGIC.len())? != MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::IncompatibleCheckpoint(format!("version {version}, expected {VERSION}")));
    }
    let hlen = r.len()?;
    let header: CheckpointHeader = serde_json::from_slice(&r.bytes(hlen)?)
        .map_err(|e| Error::IncompatibleCheckpoint(format!("header: {e}")))?;
    let mut model = Outpainter::<f32>::new(header.model.clone(), 0)
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    let count = r.len()?;
    let expected = model.g_params.len() + model.d_params.len();
    if count != expected {
        return Err(Error::IncompatibleCheckpoint(format!("{count} tensors, architecture has {expected}")));
    }
    for _ in 0..count {
        let nlen = r.len()?;
        let name = String::from_utf8(r.bytes(nlen)?).map_err(|_| Error::Corrupt("tensor name not UTF-8".into()))?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length matches shape");
        let store: &mut ParamStore<f32> =
            if name.starts_with(DISC_PREFIX) { &mut model.d_params } else { &mut model.g_params };
        if store.id(&name).is_none() {
            return Err(Error::IncompatibleCheckpoint(format!("unknown tensor {name}")));
        }
        store.set(&name, value).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    }
    if r.0.position() as usize != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after tensor table".into()));
    }
    Ok((model, header))
}

pub fn save_checkpoint(model: &Outpainter<f32>, step: u64, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(model, step)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Outpainter<f32>, CheckpointHeader)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}
