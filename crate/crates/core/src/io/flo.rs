use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::{Scalar, Tensor};

/// The `.flo` tag, stored as a little-endian `f32` (bytes `PIEH`).
pub const FLO_MAGIC: f32 = 202021.25;

fn fmt_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset, msg: msg.into() })
}

/// Header, then interleaved `(u, v)` as `f32` in row-major order.
pub fn encode_flo<T: Scalar>(flow: &FlowField<T>) -> Result<Vec<u8>> {
    let (h, w) = flow.dims();
    if !flow.tensor().all_finite() {
        return Err(Error::NonFinite("flow written to .flo".into()));
    }
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for r in 0..h {
        for c in 0..w {
            let (u, v) = flow.at(r, c);
            out.extend_from_slice(&(u.f64() as f32).to_le_bytes());
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField<f32>> {
    let word = |off: usize| -> Result<[u8; 4]> {
        match bytes.get(off..off + 4) {
            Some(b) => Ok([b[0], b[1], b[2], b[3]]),
            None => fmt_err(off, format!("file ends at {} bytes inside the header", bytes.len())),
        }
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return fmt_err(0, format!("bad magic {magic} (expected {FLO_MAGIC})"));
    }
    let w = i32::from_le_bytes(word(4)?);
    let h = i32::from_le_bytes(word(8)?);
    if w <= 0 {
        return fmt_err(4, format!("nonpositive width {w}"));
    }
    if h <= 0 {
        return fmt_err(8, format!("nonpositive height {h}"));
    }
    let (w, h) = (w as usize, h as usize);
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format { offset: 4, msg: "dimensions overflow".into() })?;
    let payload = &bytes[12..];
    if payload.len() != need {
        return fmt_err(12 + payload.len().min(need), format!("payload is {} bytes, expected {need}", payload.len()));
    }
    let n = w * h;
    let mut data = vec![0f32; 2 * n];
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        data[n + i] = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
    }
    FlowField::new(Tensor::from_vec(&[2, h, w], data)?)
}

pub fn write_flo<T: Scalar>(flow: &FlowField<T>, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_flo(flow)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField<f32>> {
    decode_flo(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_layout() {
        let bytes = encode_flo(&FlowField::<f64>::zeros(2, 2).unwrap()).unwrap();
        assert_eq!(bytes.len(), 12 + 32);
        assert_eq!(&bytes[0..4], b"PIEH");
        assert!(bytes[12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn interleaving_is_row_major() {
        let t = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_flo(&FlowField::new(t).unwrap()).unwrap();
        let vals: Vec<f32> = bytes[12..].chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        assert_eq!(vals, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn corrupted_magic_names_offset() {
        let mut bytes = encode_flo(&FlowField::<f64>::zeros(1, 1).unwrap()).unwrap();
        bytes[0] ^= 0xff;
        match decode_flo(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
