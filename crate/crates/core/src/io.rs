//! Binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "NNCP"  u16 version  u16 order  order x u64 dims  prod(dims) x f64
//! ```
//!
//! The payload is in [`DenseTensor`] order (first index fastest). A factor
//! matrix is stored as an order-2 tensor of shape `rows x R`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix};

pub const MAGIC: &[u8; 4] = b"NNCP";
pub const VERSION: u16 = 1;

pub fn encode_tensor(x: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * x.order() + 8 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(x.order() as u16).to_le_bytes());
    for &d in x.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, no room for the magic", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated("header ends before the order field".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let order = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 8 * order;
    if bytes.len() < header {
        return Err(Error::Truncated(format!("header needs {} bytes, file has {}", header, bytes.len())));
    }
    let dims64: Vec<u64> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let payload = &bytes[header..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::Truncated(format!("payload of {} bytes is not whole doubles", payload.len())));
    }
    let expected = dims64.iter().fold(1u128, |acc, &d| acc.saturating_mul(d as u128));
    let found = (payload.len() / 8) as u64;
    if expected != found as u128 {
        return Err(Error::PayloadMismatch { expected, found });
    }
    let dims = dims64
        .into_iter()
        .map(|d| usize::try_from(d).map_err(|_| Error::InvalidShape(format!("dimension {} too large", d))))
        .collect::<Result<Vec<usize>>>()?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseTensor::new(dims, data)
}

pub fn write_tensor(path: impl AsRef<Path>, x: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_tensor(x))?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

/// Reads only the dimensions from a tensor file's header.
pub fn read_dims(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let mut f = File::open(path)?;
    let mut head = [0u8; 8];
    f.read_exact(&mut head)
        .map_err(|_| Error::Truncated("file shorter than the fixed header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let order = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut raw = vec![0u8; 8 * order];
    f.read_exact(&mut raw)
        .map_err(|_| Error::Truncated("header ends inside the dimension list".into()))?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")) as usize)
        .collect())
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let x = DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec())?;
    write_tensor(path, &x)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let x = read_tensor(path)?;
    if x.order() != 2 {
        return Err(Error::InvalidShape(format!("expected a matrix, file holds order {}", x.order())));
    }
    let (rows, cols) = (x.dims()[0], x.dims()[1]);
    Ok(Matrix::from_vec(rows, cols, x.into_data()))
}

/// One weight per line, printed with enough digits to read back exactly.
pub fn write_lambda(path: impl AsRef<Path>, lambda: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in lambda {
        writeln!(w, "{}", v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_lambda(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| Error::InvalidShape(format!("`{}` is not a number", t)))?,
        );
    }
    Ok(out)
}
