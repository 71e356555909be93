//! The `GTD1` binary tensor format and 8-bit PNG frame previews.
//!
//! Layout: the ASCII magic `GTD1`, a little-endian `u32` order `D`, `D`
//! little-endian `u64` dimensions, then the row-major `f64` payload in
//! little-endian byte order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GTD1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &n in t.shape() {
        w.write_all(&(n as u64).to_le_bytes())?;
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
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let order = u32::from_le_bytes(b4) as usize;
    if order == 0 || order > 32 {
        return Err(Error::Format(format!("implausible tensor order {order}")));
    }
    let mut shape = Vec::with_capacity(order);
    let mut b8 = [0u8; 8];
    for _ in 0..order {
        r.read_exact(&mut b8)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * t.order() + 8 * t.len());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(t)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

/// Linear 8-bit scaling of a 2D tensor; returns the `(min, max)` used.
pub fn to_gray8(t: &Tensor) -> Result<(Vec<u8>, f64, f64)> {
    if t.order() != 2 {
        return Err(Error::InvalidArgument("PNG export needs a 2D tensor".into()));
    }
    let (lo, hi) = t.min_max();
    let span = hi - lo;
    let pixels = t
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    Ok((pixels, lo, hi))
}

/// Grayscale PNG bytes of a 2D tensor (rows = first axis), linearly
/// scaled; returns the bytes and the `(min, max)` used.
pub fn encode_png(t: &Tensor) -> Result<(Vec<u8>, f64, f64)> {
    let (pixels, lo, hi) = to_gray8(t)?;
    let (h, w) = (t.shape()[0] as u32, t.shape()[1] as u32);
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok((bytes, lo, hi))
}

/// Writes a grayscale PNG of a 2D tensor.
pub fn save_png(path: impl AsRef<Path>, t: &Tensor) -> Result<(f64, f64)> {
    let (bytes, lo, hi) = encode_png(t)?;
    std::fs::write(path, bytes)?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0, -0.5]).unwrap();
        let bytes = encode_tensor(&t);
        assert_eq!(&bytes[..4], b"GTD1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[32..40], &(-0.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 40);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode_tensor(&t);
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn gray8_scaling() {
        let t = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        let (px, lo, hi) = to_gray8(&t).unwrap();
        assert_eq!((lo, hi), (-1.0, 1.0));
        assert_eq!(px, vec![0, 128, 255]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn roundtrip_is_bit_exact(
                shape in prop::collection::vec(1usize..5, 1..4),
                seed in any::<u64>(),
            ) {
                let len: usize = shape.iter().product();
                let data: Vec<f64> = (0..len)
                    .map(|i| f64::from_bits(seed.rotate_left(i as u32) ^ (i as u64)))
                    .collect();
                let t = Tensor::from_vec(&shape, data).unwrap();
                let back = decode_tensor(&encode_tensor(&t)).unwrap();
                prop_assert_eq!(back.shape(), t.shape());
                for (a, b) in back.data().iter().zip(t.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
