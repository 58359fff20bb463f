//! Binary checkpoints: the magic `ARTKCKPT`, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ARTKCKPT";
const FORMAT: &str = "artkit-ckpt/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

/// A loaded checkpoint: parameters plus free-form metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, name, t) in store.iter() {
        let nbytes = t.len() * 4;
        tensors.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.to_string(),
        meta: meta.clone(),
        tensors,
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(offset);
    for (_, _, t) in store.iter() {
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.format != FORMAT {
        return Err(TensorError::Checkpoint(format!("unsupported format {:?}", header.format)));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut params = ParamStore::new();
    for e in header.tensors {
        let expected = e.shape.iter().product::<usize>() * 4;
        if e.nbytes != expected || e.offset + e.nbytes > data.len() {
            return Err(TensorError::Checkpoint(format!("tensor {} has inconsistent extent", e.name)));
        }
        let values = data[e.offset..e.offset + e.nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.add(e.name, Tensor::new(&e.shape, values)?)?;
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.params, &self.meta)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn round_trip_preserves_f32_values() {
        let mut rng = Rng::seed(9);
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::randn(&[3, 4], 1.0, &mut rng)).unwrap();
        store.add("a.b", Tensor::zeros(&[1, 4])).unwrap();
        let meta = serde_json::json!({"d_z": 32});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store, &meta).unwrap();
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.meta, meta);
        let a = store.get(store.id("a.w").unwrap());
        let b = ck.params.get(ck.params.id("a.w").unwrap());
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
        assert_eq!(ck.to_bytes().unwrap(), buf);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_checkpoint(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).is_err());
    }
}
