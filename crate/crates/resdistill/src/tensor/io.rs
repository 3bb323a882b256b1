//! Flat binary tensor layout used by checkpoints and attention dumps.
//!
//! Layout: magic `ATD1`, rank (u8), extents as little-endian u64, dtype code
//! (u8: 0 = f32, 1 = f64), then the row-major little-endian payload.

use std::io::{Read, Write};

use super::{Elem, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"ATD1";

pub fn write_tensor<E: Elem>(w: &mut impl Write, t: &Tensor<E>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.numel() * E::BYTES);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.push(E::DTYPE);
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<E: Elem>(r: &mut impl Read) -> Result<Tensor<E>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated tensor header".into()))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad tensor magic {magic:?}, expected {TENSOR_MAGIC:?}"
        )));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::Checkpoint("truncated tensor header".into()))?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)
            .map_err(|_| Error::Checkpoint("truncated tensor extents".into()))?;
        shape.push(u64::from_le_bytes(d) as usize);
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)
        .map_err(|_| Error::Checkpoint("truncated tensor header".into()))?;
    if dtype[0] != E::DTYPE {
        return Err(Error::Checkpoint(format!(
            "dtype code {} does not match expected {}",
            dtype[0],
            E::DTYPE
        )));
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * E::BYTES];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Checkpoint("truncated tensor payload".into()))?;
    let data = payload.chunks_exact(E::BYTES).map(E::read_le).collect();
    Tensor::from_vec(&shape, data)
}
