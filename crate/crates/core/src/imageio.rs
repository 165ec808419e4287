//! Binary image files: 16-bit PGM for raw slices, PFM for float images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PGM_MAXVAL: u16 = u16::MAX;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits a netpbm-style header into `count` whitespace-separated tokens,
/// skipping `#` comments. Returns the tokens and the offset of the raster,
/// which starts after exactly one whitespace byte.
fn header_tokens(bytes: &[u8], count: usize) -> std::result::Result<(Vec<String>, usize), String> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err("missing raster".into());
    }
    Ok((tokens, i + 1))
}

fn dims_from(tokens: &[String]) -> std::result::Result<(usize, usize), String> {
    let parse = |s: &String| s.parse::<usize>().map_err(|_| format!("bad dimension {s:?}"));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    Ok((h, w))
}

/// Binary PGM with maxval 65535, big-endian samples.
pub fn encode_pgm16(pixels: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w] = pixels.shape() else {
        return Err(Error::invalid(format!("PGM needs a 2-D image, got {:?}", pixels.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n{PGM_MAXVAL}\n").into_bytes();
    out.reserve(2 * h * w);
    for &v in pixels.data() {
        if !(0.0..=PGM_MAXVAL as f32).contains(&v) || v.fract() != 0.0 {
            return Err(Error::invalid(format!("pixel {v} is not an integer in 0..=65535")));
        }
        out.extend_from_slice(&(v as u16).to_be_bytes());
    }
    Ok(out)
}

/// Accepts 8-bit (maxval < 256) and 16-bit binary PGM.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    if !bytes.starts_with(b"P5") {
        return Err("not a binary PGM (expected P5)".into());
    }
    let (tokens, off) = header_tokens(bytes, 4)?;
    let (h, w) = dims_from(&tokens)?;
    let maxval: u32 = tokens[3].parse().map_err(|_| format!("bad maxval {:?}", tokens[3]))?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[off..];
    if raster.len() != h * w * bps {
        return Err(format!("raster holds {} bytes, expected {}", raster.len(), h * w * bps));
    }
    let data: Vec<f32> = if bps == 1 {
        raster.iter().map(|&b| b as f32).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32).collect()
    };
    if data.iter().any(|&v| v > maxval as f32) {
        return Err(format!("sample exceeds maxval {maxval}"));
    }
    Tensor::from_vec(&[h, w], data).map_err(|e| e.to_string())
}

pub fn write_pgm16(path: &Path, pixels: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_pgm16(pixels)?)
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    decode_pgm(&read_file(path)?).map_err(|r| Error::format(path, r))
}

/// Grayscale PFM, little-endian, rows stored bottom to top.
pub fn encode_pfm(pixels: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w] = pixels.shape() else {
        return Err(Error::invalid(format!("PFM needs a 2-D image, got {:?}", pixels.shape())));
    };
    let (h, w) = (*h, *w);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for row in pixels.data().chunks_exact(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    if !bytes.starts_with(b"Pf") {
        return Err("not a grayscale PFM (expected Pf)".into());
    }
    let (tokens, off) = header_tokens(bytes, 4)?;
    let (h, w) = dims_from(&tokens)?;
    let scale: f32 = tokens[3].parse().map_err(|_| format!("bad scale {:?}", tokens[3]))?;
    if scale == 0.0 {
        return Err("zero PFM scale".into());
    }
    let raster = &bytes[off..];
    if raster.len() != h * w * 4 {
        return Err(format!("raster holds {} bytes, expected {}", raster.len(), h * w * 4));
    }
    let rows: Vec<&[u8]> = raster.chunks_exact(w * 4).collect();
    let mut data = Vec::with_capacity(h * w);
    for row in rows.iter().rev() {
        for c in row.chunks_exact(4) {
            let b = [c[0], c[1], c[2], c[3]];
            data.push(if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) });
        }
    }
    Tensor::from_vec(&[h, w], data).map_err(|e| e.to_string())
}

pub fn write_pfm(path: &Path, pixels: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_pfm(pixels)?)
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    decode_pfm(&read_file(path)?).map_err(|r| Error::format(path, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Tensor<f32> {
        Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 255.0, 256.0, 40000.0, 65535.0]).unwrap()
    }

    #[test]
    fn pgm_round_trip_is_exact() {
        let bytes = encode_pgm16(&img()).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img());
    }

    #[test]
    fn pgm_rejects_bad_input() {
        let bytes = encode_pgm16(&img()).unwrap();
        assert!(decode_pgm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_pgm(&bytes[..5]).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        let frac = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        assert!(encode_pgm16(&frac).is_err());
        let big = Tensor::from_vec(&[1, 1], vec![70000.0]).unwrap();
        assert!(encode_pgm16(&big).is_err());
    }

    #[test]
    fn pgm_header_comments_and_8_bit() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\xff";
        let t = decode_pgm(bytes).unwrap();
        assert_eq!(t.data(), &[7.0, 255.0]);
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let t = Tensor::from_vec(&[3, 2], vec![-1.5, 0.0, 1e-7, 3.25, -0.0, 123456.78]).unwrap();
        let bytes = encode_pfm(&t).unwrap();
        assert_eq!(decode_pfm(&bytes).unwrap(), t);
        assert!(decode_pfm(&bytes[..bytes.len() - 3]).is_err());
    }
}
