//! Binary PPM (`P6`, maxval 255) for the orthophoto.
//!
//! Rows are written top-to-bottom, i.e. grid row `height - 1` (north) first.
//! Channels use the same rounding as PLY colors.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::pfm::header_token;
use crate::io::{dequantize_channel, quantize_channel};
use crate::types::{GridSpec, Rgb, RgbGrid};

pub fn to_bytes(img: &RgbGrid) -> Vec<u8> {
    let spec = &img.spec;
    let mut out = format!("P6\n{} {}\n255\n", spec.width, spec.height).into_bytes();
    out.reserve(spec.len() * 3);
    for v in (0..spec.height).rev() {
        for u in 0..spec.width {
            let c = img.get(u, v);
            out.extend(c.iter().map(|&ch| quantize_channel(ch)));
        }
    }
    out
}

pub fn write_ppm(img: &RgbGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(img)).map_err(|e| Error::io(path, e))
}

/// Dimensions and pixels in grid order.
pub fn from_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<Rgb>)> {
    let bad = |m: &str| Error::MalformedPpm(m.to_string());
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some("P6") {
        return Err(bad("missing `P6` magic"));
    }
    let mut num = || -> Result<usize> {
        // skip comment lines between header tokens
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        header_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("invalid header number"))
    };
    let w = num()?;
    let h = num()?;
    let maxval = num()?;
    if w == 0 || h == 0 {
        return Err(bad("zero dimension"));
    }
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} unsupported (need 255)")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() != n * 3 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 3, data.len())));
    }
    let mut values = vec![[0.0; 3]; n];
    for (k, px) in data.chunks_exact(3).enumerate() {
        let (row_from_top, u) = (k / w, k % w);
        let v = h - 1 - row_from_top;
        values[v * w + u] = [
            dequantize_channel(px[0]),
            dequantize_channel(px[1]),
            dequantize_channel(px[2]),
        ];
    }
    Ok((w, h, values))
}

pub fn read_ppm_raw(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Rgb>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn read_ppm(path: impl AsRef<Path>, spec: &GridSpec) -> Result<RgbGrid> {
    let (w, h, values) = read_ppm_raw(path)?;
    if w != spec.width || h != spec.height {
        return Err(Error::SpecMismatch(format!(
            "PPM is {w}x{h} but the manifest says {}x{}",
            spec.width, spec.height
        )));
    }
    RgbGrid::from_values(*spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn north_row_comes_first() {
        let spec = GridSpec::new(2, 2, 0.0, 0.0, 1.0).unwrap();
        let mut img = RgbGrid::filled(spec, [0.0; 3]);
        img.set(0, 1, [1.0, 0.0, 0.0]);
        let b = to_bytes(&img);
        assert!(b.starts_with(b"P6\n2 2\n255\n"));
        assert_eq!(&b[11..14], &[255, 0, 0]);
        let (_, _, back) = from_bytes(&b).unwrap();
        assert_eq!(back, img.values);
    }

    #[test]
    fn header_comments_allowed() {
        let mut b = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        b.extend_from_slice(&[0, 128, 255]);
        let (w, h, v) = from_bytes(&b).unwrap();
        assert_eq!((w, h), (1, 1));
        assert_eq!(v[0], [0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn malformed() {
        assert!(matches!(from_bytes(b"P3\n1 1\n255\n0 0 0"), Err(Error::MalformedPpm(_))));
        assert!(matches!(from_bytes(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(Error::MalformedPpm(_))));
        assert!(matches!(from_bytes(b"P6\n2 1\n255\n\0\0\0"), Err(Error::MalformedPpm(_))));
    }
}
