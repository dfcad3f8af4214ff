//! Binary tensor container.
//!
//! Layout (all little-endian):
//!
//! | bytes          | content                       |
//! |----------------|-------------------------------|
//! | 4              | magic `FPDE`                  |
//! | 4              | version, `u32`                |
//! | 1              | dtype, `u8` (0 = f32)         |
//! | 1              | rank, `u8`                    |
//! | 4 × rank       | extents, `u32` each           |
//! | 4 × numel      | payload, row-major `f32`      |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPDE";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::InvalidParam(format!("rank {} too large to encode", t.rank())))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32, rank])?;
    for &e in t.shape() {
        let e = u32::try_from(e)
            .map_err(|_| Error::InvalidParam(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected FPDE")));
    }
    let mut word = [0u8; 4];
    read_exact(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mut head = [0u8; 2];
    read_exact(&mut r, &mut head, "dtype/rank")?;
    let [dtype, rank] = head;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        read_exact(&mut r, &mut word, "extent")?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format(format!("extents {shape:?} overflow")))?;
    let mut payload = vec![0u8; numel * 4];
    read_exact(&mut r, &mut payload, "payload")?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
    t.ensure_finite("tensor payload")?;
    Ok(t)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated container ({what})")),
        _ => Error::Io(e),
    })
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(10 + 4 * t.rank() + 4 * t.len());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail for valid tensors");
    buf
}

/// Decodes exactly one tensor; trailing bytes are an error.
pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = to_bytes(&t);
        assert_eq!(&b[0..4], b"FPDE");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(b[8], 0);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..14], &2u32.to_le_bytes());
        assert_eq!(&b[14..18], &1u32.to_le_bytes());
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
        assert_eq!(&b[22..26], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 26);
    }

    #[test]
    fn rejects_non_finite_payload() {
        let t = Tensor::new(vec![3], vec![0.0, 1.0, 2.0]).unwrap();
        let mut b = to_bytes(&t);
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(Error::NonFinite(_))));
        b[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_corrupt_headers() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let good = to_bytes(&t);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[8] = 7;
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_byte_identical(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32 ^ seed) as f32).sin() * 1e3).collect();
            let t = Tensor::new(shape, data).unwrap();
            let bytes = to_bytes(&t);
            let back = from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(to_bytes(&back), bytes);
        }
    }
}
