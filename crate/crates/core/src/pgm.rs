//! 8-bit binary PGM dumps of feature sequences.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Encodes `x` (one frame per row) as a P5 image with feature bins as rows
/// and frames as columns. Values are min-max scaled to 0..=255; a constant
/// input maps to 127.
pub fn encode_pgm(x: &Tensor2) -> Result<Vec<u8>> {
    if !x.is_finite() {
        return Err(Error::Numeric("cannot render a non-finite matrix".into()));
    }
    let (frames, bins) = x.shape();
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for b in 0..bins {
        for f in 0..frames {
            let v = x[(f, b)];
            let px = if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round() as u8
            } else {
                127
            };
            out.push(px);
        }
    }
    Ok(out)
}

pub fn dump_pgm(x: &Tensor2, path: &Path) -> Result<()> {
    let bytes = encode_pgm(x)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a P5 header, returning `(width, height, maxval, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let bad = || Error::Numeric("malformed PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    let pixels = bytes.get(pos + 1..).ok_or_else(bad)?;
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, max, pixels))
}
