//! Flat binary image payloads: magic `VBR1`, then height, width and channels
//! as little-endian u32, then `h·w·c` little-endian f32 values in HWC order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VBR1";

pub fn encode_payload(image: &Tensor) -> Result<Vec<u8>> {
    if image.rank() != 3 {
        return Err(Error::shape(format!("payload must be [h,w,c], got {:?}", image.shape())));
    }
    let mut out = Vec::with_capacity(16 + 4 * image.numel());
    out.extend_from_slice(MAGIC);
    for &d in image.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_payload(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "missing VBR1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n = shape.iter().product::<usize>();
    if n == 0 || bytes.len() != 16 + 4 * n {
        return Err(Error::format(
            path,
            format!("dims {shape:?} do not match {} payload bytes", bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn read_payload(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_payload(&bytes, path)
}

pub fn write_payload(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_payload(image)?).map_err(|e| Error::io(path, e))
}

/// Reverse the width axis of an `[h,w,c]` or `[N,h,w,c]` tensor.
pub fn mirror_width(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    if r < 3 {
        return Err(Error::shape(format!("mirror needs [..,h,w,c], got {:?}", x.shape())));
    }
    let (w, c) = (x.shape()[r - 2], x.shape()[r - 1]);
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(w * c) {
        for col in (0..w).rev() {
            out.extend_from_slice(&row[col * c..(col + 1) * c]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
