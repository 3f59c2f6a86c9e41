//! Binary parameter checkpoints: magic `V2GF`, version, then named 32-bit
//! float tensors, all little-endian.

use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"V2GF";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = store.shape(id);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in store.get(id) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut store = ParamStore::default();
    while r.pos < bytes.len() {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = r.take(count * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        if store.find(&name).is_some() {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
        store.add(name, shape, data);
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let mut s = ParamStore::default();
        s.add("a.w0", vec![2, 3], vec![0.1, -2.0, 3.5, 1e-8, 7.0, -0.25]);
        s.add("b", vec![1], vec![42.0]);
        let bytes = encode_checkpoint(&s);
        assert_eq!(&bytes[..4], b"V2GF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        let mut q = s.clone();
        q.quantize_f32();
        assert_eq!(back, q);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut s = ParamStore::default();
        s.add("x", vec![4], vec![1.0; 4]);
        let bytes = encode_checkpoint(&s);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2], Path::new("mem")).is_err());
        assert!(decode_checkpoint(b"NOPE\x01\0\0\0", Path::new("mem")).is_err());
    }
}
