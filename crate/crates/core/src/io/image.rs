use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Decodes a single-channel PNG into (width, height, samples). 8-bit images
/// are widened to 16-bit sample values unchanged (not rescaled).
fn read_gray(path: &Path) -> Result<(u32, u32, Vec<u16>, png::BitDepth)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(png_err(
            path,
            format!("expected single-channel image, got {:?}", info.color_type),
        ));
    }
    let (w, h) = (info.width, info.height);
    let data = &buf[..info.buffer_size()];
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        png::BitDepth::Eight => data.iter().map(|&b| b as u16).collect(),
        other => return Err(png_err(path, format!("unsupported bit depth {other:?}"))),
    };
    Ok((w, h, samples, info.bit_depth))
}

pub fn read_png_u16(path: &Path) -> Result<(u32, u32, Vec<u16>)> {
    let (w, h, s, _) = read_gray(path)?;
    Ok((w, h, s))
}

pub fn read_png_u8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let (w, h, s, depth) = read_gray(path)?;
    if depth != png::BitDepth::Eight {
        return Err(png_err(path, "expected an 8-bit image"));
    }
    Ok((w, h, s.into_iter().map(|v| v as u8).collect()))
}

fn write_gray(path: &Path, width: u32, height: u32, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(data).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

pub fn write_png_u16(path: &Path, width: u32, height: u32, samples: &[u16]) -> Result<()> {
    if samples.len() != width as usize * height as usize {
        return Err(png_err(path, "sample count does not match dimensions"));
    }
    let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_gray(path, width, height, png::BitDepth::Sixteen, &bytes)
}

pub fn write_png_u8(path: &Path, width: u32, height: u32, samples: &[u8]) -> Result<()> {
    if samples.len() != width as usize * height as usize {
        return Err(png_err(path, "sample count does not match dimensions"));
    }
    write_gray(path, width, height, png::BitDepth::Eight, samples)
}
