//! Named tensor blobs, shared by checkpoints and embedder weight files.
//!
//! A blob is a `u32` name length, the UTF-8 name, a dtype tag byte
//! (`0` = f64, `1` = f32), a `u32` rank, one `u64` per dimension, and the
//! row-major little-endian values. A tensor file is the magic bytes, a `u64`
//! blob count, then the blobs.

use std::path::Path;

use mwgan_autograd::Tensor;

use crate::error::{Error, Result};

pub const TENSOR_FILE_MAGIC: &[u8; 8] = b"MWTENS01";

const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;

pub(crate) fn write_blob(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(DTYPE_F64);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct BlobReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    pub(crate) fn blob(&mut self) -> Option<(String, Tensor)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).ok()?;
        let dtype = self.take(1)?[0];
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Option<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?;
        let data = match dtype {
            DTYPE_F64 => self.take(len.checked_mul(8)?)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            DTYPE_F32 => {
                self.take(len.checked_mul(4)?)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
            _ => return None,
        };
        Some((name, Tensor::new(&shape, data)))
    }
}

pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf = TENSOR_FILE_MAGIC.to_vec();
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (n, t) in tensors {
        write_blob(&mut buf, n, t);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    let mut r = BlobReader::new(&bytes);
    if r.take(8) != Some(TENSOR_FILE_MAGIC.as_slice()) {
        return Err(bad("not a tensor file"));
    }
    let n = r.u64().ok_or_else(|| bad("truncated header"))?;
    let out = (0..n).map(|_| r.blob().ok_or_else(|| bad("truncated or malformed blob"))).collect::<Result<Vec<_>>>()?;
    if !r.at_end() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let ts = vec![("a".to_string(), Tensor::new(&[2, 1], vec![1.5, -0.25])), ("b".to_string(), Tensor::scalar(3.0))];
        save_tensors(&p, &ts).unwrap();
        assert_eq!(load_tensors(&p).unwrap(), ts);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load_tensors(&p).is_err());
    }
}
