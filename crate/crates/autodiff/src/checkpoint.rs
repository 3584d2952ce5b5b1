//! `FLCKPT01` checkpoint container.
//!
//! Layout (little-endian): magic `FLCKPT01`, `u32` parameter count, then per
//! parameter a `u16` name length, the UTF-8 name, a `u8` rank, `rank` x `u32`
//! dims and the `f32` values.

use std::io::{Read, Write};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::tensor::{Tensor, MAX_RANK};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLCKPT01";

pub fn write_checkpoint<W: Write>(params: &ParamStore<f32>, mut out: W) -> Result<()> {
    let count = u32::try_from(params.len()).map_err(|_| AutodiffError::Checkpoint("too many parameters".into()))?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&count.to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| AutodiffError::Checkpoint(format!("name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| AutodiffError::Checkpoint("dimension exceeds u32".into()))?;
            out.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => AutodiffError::Checkpoint(format!("truncated while reading {what}")),
        _ => AutodiffError::Io(e),
    })
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 8];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut input, &mut b4, "parameter count")?;
    let count = u32::from_le_bytes(b4);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(&mut input, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(&mut input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| AutodiffError::Checkpoint("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(&mut input, &mut rank, "rank")?;
        if rank[0] as usize > MAX_RANK {
            return Err(AutodiffError::Checkpoint(format!("rank {} too large", rank[0])));
        }
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            read_exact(&mut input, &mut b4, "dims")?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (1 << 31))
            .ok_or_else(|| AutodiffError::Checkpoint(format!("`{name}` is too large")))?;
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut input, &mut raw, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if store.find(&name).is_some() {
            return Err(AutodiffError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        store.add(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}
