//! Binary tensor format used for all weights and dataset tensors.
//!
//! Layout, all little-endian:
//!   magic `"TSR1"` | u32 rank | rank x u32 dims | f32 data
//!
//! Round-trips are bit-exact: the f32 payload is written verbatim.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TSR1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("bad tensor magic {magic:?}, expected TSR1")));
    }
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Data(format!("unreasonable tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = vec![0.0f32; numel];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Tensor::new(data, &shape)
}

pub fn save_tensor<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
