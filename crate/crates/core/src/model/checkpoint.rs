//! Versioned binary checkpoint.
//!
//! Layout (little endian): magic `DPNWCKPT`, `u32` version, `u32` block count,
//! then per block a `u32` name length, the UTF-8 name, `u64` rows, `u64` cols
//! and `rows * cols` `f64` values. Values are stored bit-for-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::{ModelDims, ModelParams, BLOCK_NAMES};

const MAGIC: &[u8; 8] = b"DPNWCKPT";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_params() * 8 + 256);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(BLOCK_NAMES.len() as u32).to_le_bytes());
    for ((name, block), (rows, cols)) in BLOCK_NAMES
        .iter()
        .zip(params.blocks())
        .zip(params.block_shapes())
    {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_blocks = r.u32()? as usize;
    if n_blocks != BLOCK_NAMES.len() {
        return Err(Error::Checkpoint(format!("expected 6 blocks, found {n_blocks}")));
    }
    let mut shapes = Vec::with_capacity(n_blocks);
    let mut values = Vec::with_capacity(n_blocks);
    for expected in BLOCK_NAMES {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        if name != expected {
            return Err(Error::Checkpoint(format!(
                "expected block {expected:?}, found {name:?}"
            )));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("block shape overflows".into()))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>(),
        );
        shapes.push((rows, cols));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last block".into()));
    }
    let dims = ModelDims {
        vocab_size: shapes[0].0,
        token_dim: shapes[0].1,
        dim: shapes[2].1,
        num_basis: shapes[5].0,
    };
    dims.validate()?;
    let mut params = ModelParams::zeros(dims);
    if params.block_shapes().to_vec() != shapes {
        return Err(Error::Checkpoint(format!("inconsistent block shapes {shapes:?}")));
    }
    for (dst, src) in params.blocks_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn model() -> ModelParams {
        let dims = ModelDims {
            vocab_size: 11,
            token_dim: 5,
            dim: 4,
            num_basis: 3,
        };
        ModelParams::init(dims, &mut rng_from_seed(17)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = model();
        p.basis.basis.as_mut_slice()[0] = -0.0;
        p.news.pool_query[1] = f64::MIN_POSITIVE / 3.0;
        let bytes = to_bytes(&p);
        let q = from_bytes(&bytes).unwrap();
        let bits = |m: &ModelParams| m.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(to_bytes(&q), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = model();
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&model());
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
