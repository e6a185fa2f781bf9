use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn fmt_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset, msg: msg.into() })
}

fn quantize(v: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("intensity {v} outside [0, 1]")));
    }
    Ok((v * 255.0).round() as u8)
}

fn encode(magic: &str, h: usize, w: usize, planes: &[&[f64]]) -> Result<Vec<u8>> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        for p in planes {
            out.push(quantize(p[i])?);
        }
    }
    Ok(out)
}

/// Binary P5 from an `[H,W]` or `[1,H,W]` image with values in `[0, 1]`.
pub fn encode_pgm(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let (h, w) = crate::keypoints::image_dims(image)?;
    encode("P5", h, w, &[image.data()])
}

/// Binary P6 from a `[3,H,W]` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor<f64>) -> Result<Vec<u8>> {
    let [3, h, w] = image.shape() else {
        return Err(Error::ShapeMismatch(format!("PPM needs [3,H,W], got {:?}", image.shape())));
    };
    let n = h * w;
    let d = image.data();
    encode("P6", *h, *w, &[&d[..n], &d[n..2 * n], &d[2 * n..]])
}

struct Header {
    channels: usize,
    w: usize,
    h: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return fmt_err(0, "expected P5 or P6 magic"),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return fmt_err(pos, "header ends early"),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return fmt_err(pos, "expected a decimal header field");
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::Format { offset: start, msg: format!("header field {text} too large") })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return fmt_err(pos, "expected one whitespace byte after maxval"),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return fmt_err(3, format!("zero image dimension {w}x{h}"));
    }
    if maxval == 0 || maxval > 255 {
        return fmt_err(pos, format!("unsupported maxval {maxval} (8-bit only)"));
    }
    Ok(Header { channels, w, h, maxval, data_start: pos })
}

/// Decodes P5 to `[H,W]` or P6 to `[3,H,W]`, scaled to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let hd = parse_header(bytes)?;
    let n = hd.w.checked_mul(hd.h).and_then(|n| n.checked_mul(hd.channels));
    let Some(n) = n else { return fmt_err(3, "dimensions overflow") };
    let payload = &bytes[hd.data_start..];
    if payload.len() < n {
        return fmt_err(bytes.len(), format!("payload is {} bytes, expected {n}", payload.len()));
    }
    let plane = hd.w * hd.h;
    let mut data = vec![0.0; n];
    for (i, &b) in payload[..n].iter().enumerate() {
        if b as usize > hd.maxval {
            return fmt_err(hd.data_start + i, format!("sample {b} exceeds maxval {}", hd.maxval));
        }
        let (px, ch) = (i / hd.channels, i % hd.channels);
        data[ch * plane + px] = b as f64 / hd.maxval as f64;
    }
    if hd.channels == 1 {
        Tensor::from_vec(&[hd.h, hd.w], data)
    } else {
        Tensor::from_vec(&[3, hd.h, hd.w], data)
    }
}

pub fn write_pgm(image: &Tensor<f64>, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_pgm(image)?)
}

pub fn write_ppm(image: &Tensor<f64>, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_ppm(image)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let t = decode_pnm(&fs::read(path)?)?;
    if t.shape().len() != 2 {
        return fmt_err(0, "expected a P5 (grayscale) file");
    }
    Ok(t)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let t = decode_pnm(&fs::read(path)?)?;
    if t.shape().len() != 3 {
        return fmt_err(0, "expected a P6 (color) file");
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_square_bytes() {
        let b = encode_pgm(&Tensor::zeros(&[4, 4]).unwrap()).unwrap();
        assert_eq!(&b[..11], b"P5\n4 4\n255\n");
        assert_eq!(b.len(), 11 + 16);
        assert!(b[11..].iter().all(|&x| x == 0));
    }

    #[test]
    fn quantization_bound() {
        let img = Tensor::create(&[5, 7], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 2 }).unwrap();
        let back = decode_pnm(&encode_pgm(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) <= 1.0 / 255.0);
        let rgb = Tensor::create(&[3, 2, 3], crate::Init::Uniform { low: 0.0, high: 1.0, seed: 3 }).unwrap();
        let back = decode_pnm(&encode_ppm(&rgb).unwrap()).unwrap();
        assert_eq!(back.shape(), &[3, 2, 3]);
        assert!(back.max_abs_diff(&rgb) <= 1.0 / 255.0);
    }

    #[test]
    fn comments_and_whitespace() {
        let plain = b"P5\n2 1\n255\n\x10\x20".to_vec();
        let commented = b"P5 # made by hand\n#another\n 2\t1\n# max\n255\n\x10\x20".to_vec();
        let a = decode_pnm(&plain).unwrap();
        let b = decode_pnm(&commented).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn malformed_headers_and_overflow() {
        assert!(decode_pnm(b"P4\n1 1\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\n1\n").is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\0\0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n100\n\xff").is_err());
        assert!(encode_pgm(&Tensor::full(&[1, 1], 1.5).unwrap()).is_err());
    }
}
