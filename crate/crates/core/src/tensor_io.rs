//! The `DTNS` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "DTNS"
//! version u32      1
//! dtype   u32      1 = f32, 2 = i64
//! rank    u32
//! dims    rank x u64
//! payload row-major elements
//! ```
//!
//! Several containers may be concatenated in one stream; [`read_tensor`]
//! consumes exactly one.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    I64 = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        check_len(&dims, data.len())?;
        Ok(Self { dims, data: TensorData::F32(data) })
    }

    pub fn i64(dims: Vec<u64>, data: Vec<i64>) -> Result<Self> {
        check_len(&dims, data.len())?;
        Ok(Self { dims, data: TensorData::I64(data) })
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::I64(_) => Err(Error::Format("expected f32 tensor, found i64".into())),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Format("expected i64 tensor, found f32".into())),
        }
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r as usize, *c as usize)),
            other => Err(Error::Format(format!("expected rank-2 tensor, found dims {other:?}"))),
        }
    }
}

fn check_len(dims: &[u64], len: usize) -> Result<()> {
    let expected = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
    match expected {
        Some(n) if n == len as u64 => Ok(()),
        _ => Err(Error::Shape(format!("dims {dims:?} do not match {len} elements"))),
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.dtype() as u32).to_le_bytes())?;
    w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
    for d in &t.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    match &t.data {
        TensorData::F32(v) => {
            buf.reserve(v.len() * 4);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::I64(v) => {
            buf.reserve(v.len() * 8);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let dtype = match read_u32(r)? {
        1 => DType::F32,
        2 => DType::I64,
        code => return Err(Error::Format(format!("unknown dtype code {code}"))),
    };
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible rank {rank}")));
    }
    let dims = (0..rank).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))? as usize;
    let width = match dtype {
        DType::F32 => 4,
        DType::I64 => 8,
    };
    let mut raw = vec![0u8; count * width];
    r.read_exact(&mut raw)?;
    let data = match dtype {
        DType::F32 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::I64 => TensorData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(Tensor { dims, data })
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::i64(vec![1, 2], vec![-1, 7]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"DTNS");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&(-1i64).to_le_bytes());
        expected.extend_from_slice(&7i64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::f32(vec![1], vec![0.5]).unwrap()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn length_must_match_dims() {
        assert!(Tensor::f32(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn concatenated_round_trip(
            a in proptest::collection::vec(-1e6f32..1e6, 0..40),
            b in proptest::collection::vec(any::<i64>(), 0..40),
        ) {
            let ta = Tensor::f32(vec![a.len() as u64], a).unwrap();
            let tb = Tensor::i64(vec![1, b.len() as u64], b).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &ta).unwrap();
            write_tensor(&mut buf, &tb).unwrap();
            let mut cur = buf.as_slice();
            prop_assert_eq!(read_tensor(&mut cur).unwrap(), ta);
            prop_assert_eq!(read_tensor(&mut cur).unwrap(), tb);
            prop_assert!(cur.is_empty());
        }
    }
}
