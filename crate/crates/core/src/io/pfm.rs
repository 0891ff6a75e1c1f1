//! Grayscale Portable Float Map.
//!
//! Header `Pf\n<width> <height>\n-1.0\n`, then `width * height` little-endian
//! `f32` values, bottom row first. Grid row 0 (the southern edge) is the
//! bottom row, so values are written in grid order. Values are stored as
//! `f32`; grids holding `f32`-representable values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Grid, GridSpec};

pub fn to_bytes(grid: &Grid) -> Vec<u8> {
    let spec = &grid.spec;
    let mut out = format!("Pf\n{} {}\n-1.0\n", spec.width, spec.height).into_bytes();
    out.reserve(grid.values.len() * 4);
    for &v in &grid.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_pfm(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(grid)).map_err(|e| Error::io(path, e))
}

/// Reads the dimensions and values (grid order) of a PFM without a georeference.
pub fn read_pfm_raw(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Reads a PFM and attaches `spec`, which must agree with the stored size.
pub fn read_pfm(path: impl AsRef<Path>, spec: &GridSpec) -> Result<Grid> {
    let (w, h, values) = read_pfm_raw(path)?;
    if w != spec.width || h != spec.height {
        return Err(Error::SpecMismatch(format!(
            "PFM is {w}x{h} but the manifest says {}x{}",
            spec.width, spec.height
        )));
    }
    Grid::from_values(*spec, values)
}

/// Splits off one whitespace-terminated header token.
pub(crate) fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()
}

pub fn from_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| Error::MalformedPfm(m.to_string());
    let mut pos = 0;
    match header_token(bytes, &mut pos) {
        Some("Pf") => {}
        Some("PF") => return Err(bad("color PFM (`PF`) is not supported")),
        _ => return Err(bad("missing `Pf` magic")),
    }
    let mut dim = || -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .filter(|&d: &usize| d > 0)
            .ok_or_else(|| bad("invalid dimensions"))
    };
    let w = dim()?;
    let h = dim()?;
    let scale: f64 = header_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .filter(|s: &f64| *s != 0.0 && s.is_finite())
        .ok_or_else(|| bad("invalid scale"))?;
    // exactly one whitespace byte separates the header from the data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() != n * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 4, data.len())));
    }
    let little = scale < 0.0;
    let values = data
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            v as f64
        })
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    Ok((w, h, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let spec = GridSpec::new(3, 2, 0.0, 0.0, 1.0).unwrap();
        let g = Grid::from_values(spec, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = to_bytes(&g);
        assert!(b.starts_with(b"Pf\n3 2\n-1.0\n"));
        assert_eq!(b.len(), 12 + 24);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(from_bytes(&b).unwrap(), (3, 2, g.values));
    }

    #[test]
    fn big_endian_input_accepted() {
        let mut b = b"Pf\n1 1\n1.0\n".to_vec();
        b.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(from_bytes(&b).unwrap(), (1, 1, vec![2.5]));
    }

    #[test]
    fn malformed() {
        assert!(matches!(from_bytes(b"P6\n1 1\n255\nabc"), Err(Error::MalformedPfm(_))));
        assert!(matches!(from_bytes(b"PF\n1 1\n-1.0\n"), Err(Error::MalformedPfm(_))));
        assert!(matches!(from_bytes(b"Pf\n2 2\n-1.0\n\0\0\0\0"), Err(Error::MalformedPfm(_))));
        assert!(matches!(from_bytes(b"Pf\n0 2\n-1.0\n"), Err(Error::MalformedPfm(_))));
        assert!(matches!(from_bytes(b"Pf\n1 1\n0\n\0\0\0\0"), Err(Error::MalformedPfm(_))));
    }

    #[test]
    fn spec_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pfm");
        let spec = GridSpec::new(4, 3, 0.0, 0.0, 1.0).unwrap();
        write_pfm(&Grid::zeros(spec), &p).unwrap();
        assert_eq!(read_pfm(&p, &spec).unwrap(), Grid::zeros(spec));
        let other = GridSpec::new(3, 4, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(read_pfm(&p, &other), Err(Error::SpecMismatch(_))));
    }
}
