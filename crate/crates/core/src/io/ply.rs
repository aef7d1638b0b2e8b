//! Binary little-endian PLY for labeled clouds.
//!
//! Written vertices carry `x y z` (float32), `red green blue` (uint8, a
//! deterministic color per label) and `label` (uint32). The reader accepts any
//! scalar vertex layout containing `x`, `y`, `z`; `label` defaults to 0.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lift::{CloudPoint, LabeledCloud};

/// Viewer color for a label; 0 is mid gray.
pub fn label_color(label: u32) -> [u8; 3] {
    if label == 0 {
        return [128, 128, 128];
    }
    // splitmix32-style scramble so neighboring ids get unrelated colors
    let mut x = label.wrapping_mul(0x9E37_79B9);
    x ^= x >> 16;
    x = x.wrapping_mul(0x85EB_CA6B);
    x ^= x >> 13;
    x = x.wrapping_mul(0xC2B2_AE35);
    x ^= x >> 16;
    let [r, g, b, _] = x.to_le_bytes();
    [r | 0x20, g | 0x20, b | 0x20]
}

pub fn write_ply(cloud: &LabeledCloud, path: &Path) -> Result<()> {
    if cloud.points.len() != cloud.labels.len() {
        return Err(Error::MalformedInput(format!(
            "{} points but {} labels",
            cloud.points.len(),
            cloud.labels.len()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uint label\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
        let mut rec = [0u8; 19];
        rec[0..4].copy_from_slice(&p.x.to_le_bytes());
        rec[4..8].copy_from_slice(&p.y.to_le_bytes());
        rec[8..12].copy_from_slice(&p.z.to_le_bytes());
        rec[12..15].copy_from_slice(&label_color(l));
        rec[15..19].copy_from_slice(&l.to_le_bytes());
        w.write_all(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_f64(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn read_f32(self, b: &[u8]) -> f32 {
        match self {
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()),
            other => other.read_f64(b) as f32,
        }
    }
}

struct Layout {
    vertices: usize,
    stride: usize,
    xyz: [(usize, Scalar); 3],
    label: Option<(usize, Scalar)>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Layout> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    // Split the header into lines up to and including `end_header`.
    let mut lines: Vec<String> = Vec::new();
    let mut offset = 0;
    while let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') {
        let line = String::from_utf8_lossy(&bytes[offset..offset + end])
            .trim_end_matches('\r')
            .to_string();
        offset += end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done || lines.len() > 10_000 {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(perr(1, "missing 'ply' magic".into()));
    }
    if lines.last().map(String::as_str) != Some("end_header") {
        return Err(perr(lines.len() + 1, "header ended without end_header".into()));
    }
    let line_no = lines.len();

    let mut vertices: Option<usize> = None;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut stride = 0usize;
    let mut props: Vec<(String, usize, Scalar)> = Vec::new();
    let mut format_ok = false;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let n = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, ver] => {
                if *fmt != "binary_little_endian" {
                    return Err(perr(n, format!("unsupported format {fmt:?}")));
                }
                if *ver != "1.0" {
                    return Err(perr(n, format!("unsupported version {ver:?}")));
                }
                format_ok = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| perr(n, format!("bad element count {count:?}")))?;
                if *name == "vertex" {
                    if seen_vertex {
                        return Err(perr(n, "duplicate vertex element".into()));
                    }
                    vertices = Some(count);
                    in_vertex = true;
                    seen_vertex = true;
                } else {
                    if !seen_vertex && count > 0 {
                        return Err(perr(n, format!("element {name:?} precedes vertex data")));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(perr(n, "list properties on vertices are unsupported".into()));
                }
            }
            ["property", ty, name] => {
                let scalar =
                    Scalar::parse(ty).ok_or_else(|| perr(n, format!("unknown type {ty:?}")))?;
                if in_vertex {
                    props.push((name.to_string(), stride, scalar));
                    stride += scalar.size();
                }
            }
            _ => return Err(perr(n, format!("unrecognized header line {line:?}"))),
        }
    }
    if !format_ok {
        return Err(perr(line_no, "missing format line".into()));
    }
    let vertices = vertices.ok_or_else(|| perr(line_no, "no vertex element".into()))?;
    let find = |name: &str| {
        props
            .iter()
            .find(|(p, _, _)| p == name)
            .map(|(_, off, s)| (*off, *s))
    };
    let axis = |name: &str| find(name).ok_or_else(|| perr(line_no, format!("missing vertex property {name:?}")));
    let xyz = [axis("x")?, axis("y")?, axis("z")?];
    let label = find("label");
    if let Some((_, s)) = label {
        if !s.is_integer() {
            return Err(perr(line_no, "label property must be an integer type".into()));
        }
    }
    Ok(Layout {
        vertices,
        stride,
        xyz,
        label,
        body_offset: offset,
    })
}

pub fn read_ply(path: &Path) -> Result<LabeledCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let layout = parse_header(&bytes, path)?;
    let body = &bytes[layout.body_offset..];
    let need = layout.vertices.saturating_mul(layout.stride);
    if body.len() < need {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!(
                "truncated body: {} vertices need {need} bytes, found {}",
                layout.vertices,
                body.len()
            ),
        });
    }
    let mut points = Vec::with_capacity(layout.vertices);
    let mut labels = Vec::with_capacity(layout.vertices);
    for rec in body[..need].chunks_exact(layout.stride.max(1)).take(layout.vertices) {
        let [x, y, z] = layout.xyz.map(|(off, s)| s.read_f32(&rec[off..]));
        points.push(CloudPoint::new(x, y, z));
        let label = match layout.label {
            Some((off, s)) => {
                let v = s.read_f64(&rec[off..]);
                if v < 0.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 0,
                        msg: format!("negative label {v}"),
                    });
                }
                v as u32
            }
            None => 0,
        };
        labels.push(label);
    }
    Ok(LabeledCloud { points, labels })
}
