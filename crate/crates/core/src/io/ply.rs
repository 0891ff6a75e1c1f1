//! ASCII PLY point clouds.
//!
//! Writer layout:
//!
//! ```text
//! ply
//! format ascii 1.0
//! element vertex <N>
//! property float x
//! property float y
//! property float z
//! property uchar red        \
//! property uchar green       | only when the cloud has colors
//! property uchar blue       /
//! property uchar class      <- only when the cloud has classes (0 trunk, 1 foliage)
//! end_header
//! <x> <y> <z> [<r> <g> <b>] [<class>]
//! ```
//!
//! Coordinates are written as the shortest decimal that round-trips the
//! `f32` value. The reader accepts any ASCII PLY whose first element is
//! `vertex` with scalar properties, ignoring properties it does not know.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{dequantize_channel, quantize_channel};
use crate::types::{PointClass, PointCloud, Vec3};

/// Serialises a cloud to PLY text.
pub fn to_string(cloud: &PointCloud) -> Result<String> {
    cloud.validate()?;
    let mut s = String::with_capacity(64 + cloud.len() * 32);
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.classes.is_some() {
        s.push_str("property uchar class\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.positions.iter().enumerate() {
        write!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).unwrap();
        if let Some(colors) = &cloud.colors {
            let c = colors[i];
            write!(
                s,
                " {} {} {}",
                quantize_channel(c[0]),
                quantize_channel(c[1]),
                quantize_channel(c[2])
            )
            .unwrap();
        }
        if let Some(classes) = &cloud.classes {
            write!(s, " {}", classes[i].code()).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_string(cloud)?).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    Class,
    Other,
}

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

/// Parses PLY text.
pub fn from_str(text: &str) -> Result<PointCloud> {
    let err = |line: usize, msg: &str| Error::MalformedPly {
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(err(n, "missing `ply` magic")),
        None => return Err(err(1, "empty file")),
    }

    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut seen_other_element = false;
    let mut fields: Vec<Field> = Vec::new();
    // Single-precision columns are parsed as f32 so the written decimal maps
    // back to the same value.
    let mut single: Vec<bool> = Vec::new();
    let mut format_ok = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => format_ok = true,
            ["format", ..] => return Err(err(n, "only `format ascii 1.0` is supported")),
            ["element", "vertex", c] => {
                if count.is_some() || seen_other_element {
                    return Err(err(n, "`vertex` must be the first and only vertex element"));
                }
                count = Some(c.parse().map_err(|_| err(n, "invalid vertex count"))?);
                in_vertex = true;
            }
            ["element", _, _] => {
                in_vertex = false;
                seen_other_element = true;
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(err(n, "list properties on vertices are not supported"));
                }
            }
            ["property", ty, name] => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(err(n, &format!("unknown property type `{ty}`")));
                }
                if in_vertex {
                    single.push(matches!(*ty, "float" | "float32"));
                    fields.push(match *name {
                        "x" => Field::X,
                        "y" => Field::Y,
                        "z" => Field::Z,
                        "red" => Field::Red,
                        "green" => Field::Green,
                        "blue" => Field::Blue,
                        "class" => Field::Class,
                        _ => Field::Other,
                    });
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(n, &format!("unexpected header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(err(text.lines().count().max(1), "missing `end_header`"));
    }
    if !format_ok {
        return Err(err(2, "missing `format ascii 1.0`"));
    }
    let count = count.ok_or_else(|| err(1, "no `element vertex` declared"))?;
    let col = |f: Field| fields.iter().position(|&g| g == f);
    let (Some(cx), Some(cy), Some(cz)) = (col(Field::X), col(Field::Y), col(Field::Z)) else {
        return Err(err(1, "vertex element needs x, y and z"));
    };
    let rgb = match (col(Field::Red), col(Field::Green), col(Field::Blue)) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(err(1, "color needs all of red, green and blue")),
    };
    let cclass = col(Field::Class);

    let mut positions = Vec::with_capacity(count);
    let mut colors = rgb.map(|_| Vec::with_capacity(count));
    let mut classes = cclass.map(|_| Vec::with_capacity(count));
    for _ in 0..count {
        let (n, line) = lines
            .next()
            .ok_or_else(|| err(text.lines().count() + 1, "fewer vertices than declared"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != fields.len() {
            return Err(err(n, &format!("expected {} values, found {}", fields.len(), toks.len())));
        }
        let float = |i: usize| -> Result<f64> {
            let bad = |_| err(n, &format!("invalid number `{}`", toks[i]));
            let v: f64 = if single[i] {
                toks[i].parse::<f32>().map(f64::from).map_err(bad)?
            } else {
                toks[i].parse().map_err(bad)?
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(n, "non-finite coordinate"))
            }
        };
        let byte = |i: usize| -> Result<u8> {
            toks[i]
                .parse()
                .map_err(|_| err(n, &format!("invalid uchar `{}`", toks[i])))
        };
        positions.push(Vec3::new(float(cx)?, float(cy)?, float(cz)?));
        if let (Some(out), Some([r, g, b])) = (colors.as_mut(), rgb) {
            out.push([
                dequantize_channel(byte(r)?),
                dequantize_channel(byte(g)?),
                dequantize_channel(byte(b)?),
            ]);
        }
        if let (Some(out), Some(c)) = (classes.as_mut(), cclass) {
            let code = byte(c)?;
            out.push(PointClass::from_code(code).ok_or_else(|| err(n, &format!("unknown class {code}")))?);
        }
    }
    for (n, line) in lines {
        if !line.trim().is_empty() && !seen_other_element {
            return Err(err(n, "trailing data after the last vertex"));
        }
    }
    Ok(PointCloud {
        positions,
        colors,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud() {
        let text = to_string(&PointCloud::default()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert_eq!(from_str(&text).unwrap(), PointCloud::default());
    }

    #[test]
    fn colors_and_classes_survive() {
        let cloud = PointCloud {
            positions: vec![Vec3::new(0.5, -1.25, 3.0), Vec3::new(1e-3f32 as f64, 2.0, 0.0)],
            colors: Some(vec![[1.0, 0.5, 0.0], [0.2, 0.4, 0.6]]),
            classes: Some(vec![PointClass::Trunk, PointClass::Foliage]),
        };
        let text = to_string(&cloud).unwrap();
        assert!(text.contains("0.5 -1.25 3 255 128 0 0\n"));
        let back = from_str(&text).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.classes, cloud.classes);
        assert_eq!(back.colors.as_ref().unwrap()[0], [1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(to_string(&back).unwrap(), text);
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        let good = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 5 6\n";
        assert_eq!(from_str(good).unwrap().len(), 2);

        let bad_value = good.replace("4 5 6", "4 five 6");
        match from_str(&bad_value) {
            Err(Error::MalformedPly { line, .. }) => assert_eq!(line, 9),
            other => panic!("unexpected {other:?}"),
        }
        let short = good.replace("4 5 6\n", "");
        assert!(matches!(from_str(&short), Err(Error::MalformedPly { .. })));
        let binary = good.replace("ascii", "binary_little_endian");
        match from_str(&binary) {
            Err(Error::MalformedPly { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(from_str("plx\n"), Err(Error::MalformedPly { line: 1, .. })));
        let no_z = good.replace("property float z\n", "").replace("1 2 3", "1 2").replace("4 5 6", "4 5");
        assert!(matches!(from_str(&no_z), Err(Error::MalformedPly { .. })));
    }

    #[test]
    fn reader_ignores_unknown_properties() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty float intensity\nend_header\n1.5 2.5 3.5 0.7\n";
        let c = from_str(text).unwrap();
        assert_eq!(c.positions, vec![Vec3::new(1.5, 2.5, 3.5)]);
        assert!(c.colors.is_none());
    }
}
