//! Binary tensor fixture format.
//!
//! Layout: `b"ERTF"`, version `u8`, dtype `u8` (0 = f32, 1 = f64), rank `u8`, one `u32` LE per
//! extent, then the raw little-endian element data in row-major order.

use std::path::Path;

use super::{with_dtype, DType, Element, Tensor};
use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 4] = b"ERTF";
const VERSION: u8 = 1;

pub fn encode_fixture(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.numel() * t.dtype().size_of());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(t.dtype().code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    with_dtype!(t.dtype(), T => {
        for &v in t.data::<T>().expect("dtype") {
            v.write_le(&mut out);
        }
    });
    out
}

pub fn decode_fixture(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor fixture",
            bytes.len() - used
        )));
    }
    Ok(t)
}

/// Decode one fixture from the front of `bytes`, returning it and the bytes consumed.
pub(crate) fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let trunc = || Error::Format("truncated tensor fixture".into());
    if bytes.len() < 7 {
        return Err(trunc());
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad tensor fixture magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported fixture version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5])?;
    let rank = bytes[6] as usize;
    let mut pos = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let raw = bytes.get(pos..pos + 4).ok_or_else(trunc)?;
        shape.push(u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize);
        pos += 4;
    }
    let numel: usize = shape.iter().product();
    let size = dtype.size_of();
    let raw = bytes.get(pos..pos + numel * size).ok_or_else(trunc)?;
    let t = with_dtype!(dtype, T => {
        let data: Vec<T> = raw.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(shape, data)?
    });
    Ok((t, pos + numel * size))
}

pub fn write_fixture(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fixture(t)).map_err(io_err(path))
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_fixture(&std::fs::read(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new([2, 1], vec![1.0f32, -2.0]).unwrap();
        let b = encode_fixture(&t);
        assert_eq!(&b[..7], b"ERTF\x01\x00\x02");
        assert_eq!(&b[7..15], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 23);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::new([3], vec![1.0f64, 2., 3.]).unwrap();
        let b = encode_fixture(&t);
        assert!(decode_fixture(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_fixture(&bad).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode_fixture(&extra).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            shape in proptest::collection::vec(1usize..4, 1..5),
            f64_mode in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let vals: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0).collect();
            let dtype = if f64_mode { DType::F64 } else { DType::F32 };
            let t = Tensor::from_f64(shape, &vals, dtype).unwrap();
            let back = decode_fixture(&encode_fixture(&t)).unwrap();
            prop_assert!(back.bitwise_eq(&t));
        }
    }
}
