//! Parameter files: the model spec plus every named tensor.
//!
//! ```text
//! magic     8 bytes "FMPARAM\n"
//! version   u32 LE  1
//! spec      u32 LE length + UTF-8 JSON model spec
//! count     u32 LE
//! per tensor  u16 LE name length + UTF-8 name, u8 rank, rank × u32 LE dims,
//!             values as f64 LE
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netspec::{ModelSpec, Network};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"FMPARAM\n";
const VERSION: u32 = 1;

pub fn save_params(path: &Path, spec: &ModelSpec, store: &ParamStore) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = spec.to_json()?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let t = store.get(id);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos as u64, detail: format!("truncated: need {n} bytes") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Rebuilds the network described in the file and fills in its parameters.
pub fn load_params(path: &Path) -> Result<(Network, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad magic".into() });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format { offset: 8, detail: format!("unsupported version {version}") });
    }
    let len = c.u32()? as usize;
    let at = c.pos;
    let json = std::str::from_utf8(c.take(len)?)
        .map_err(|_| Error::Format { offset: at as u64, detail: "spec is not UTF-8".into() })?;
    let spec = ModelSpec::from_json(json)?;
    let mut store = ParamStore::new();
    let net = Network::new(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let count = c.u32()? as usize;
    if count != store.len() {
        return Err(Error::Format { offset: c.pos as u64 - 4, detail: format!("{count} tensors, model has {}", store.len()) });
    }
    for _ in 0..count {
        let at = c.pos;
        let n = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8_lossy(c.take(n)?).into_owned();
        let id = store
            .id_of(&name)
            .ok_or_else(|| Error::Format { offset: at as u64, detail: format!("unknown tensor `{name}`") })?;
        let rank = c.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        if shape != store.get(id).shape() {
            return Err(Error::Format { offset: at as u64, detail: format!("tensor `{name}` has shape {shape:?}") });
        }
        let total: usize = shape.iter().product();
        let raw = c.take(total * 8)?;
        let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        store.set(id, Tensor::new(shape, values)?)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Format { offset: c.pos as u64, detail: "trailing bytes".into() });
    }
    Ok((net, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{build, Geometry, ModelKind};

    #[test]
    fn round_trip_and_truncation() {
        let spec = build(ModelKind::Cbmf, Geometry::new(2, 32, 8)).unwrap();
        let mut store = ParamStore::new();
        Network::new(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.bin");
        save_params(&p, &spec, &store).unwrap();
        let (net, back) = load_params(&p).unwrap();
        assert_eq!(net.spec(), &spec);
        let all: Vec<_> = store.ids().collect();
        assert_eq!(store.checksum(all.iter().copied()), back.checksum(all.iter().copied()));
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_params(&p), Err(Error::Format { .. })));
    }
}
