//! Minimal PNG read/write used by the dataset converter and the heatmap
//! renderer. Pixels are exchanged as f32 in [0, 1], row-major, C channels.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Decodes an 8- or 16-bit gray/RGB/RGBA PNG into `(data, height, width,
/// channels)` with channels 1 or 3 (alpha is dropped).
pub fn read_png(path: &Path) -> Result<(Vec<f32>, usize, usize, usize)> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Data(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];

    let to_f32_8 = |v: u8| v as f32 / 255.0;
    let (in_ch, keep) = match info.color_type {
        png::ColorType::Grayscale => (1usize, 1usize),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported png color type {other:?}",
                path.display()
            )))
        }
    };
    let mut data = Vec::with_capacity(h * w * keep);
    match info.bit_depth {
        png::BitDepth::Eight => {
            for px in bytes.chunks(in_ch) {
                for c in 0..keep {
                    data.push(to_f32_8(px[c]));
                }
            }
        }
        png::BitDepth::Sixteen => {
            for px in bytes.chunks(in_ch * 2) {
                for c in 0..keep {
                    let v = u16::from_be_bytes([px[2 * c], px[2 * c + 1]]);
                    data.push(v as f32 / 65535.0);
                }
            }
        }
        other => {
            return Err(Error::Data(format!(
                "{}: unsupported png bit depth {other:?}",
                path.display()
            )))
        }
    }
    Ok((data, h, w, keep))
}

/// Writes `[0, 1]` pixel data as an 8-bit grayscale (channels = 1) or RGB
/// (channels = 3) PNG.
pub fn write_png(path: &Path, data: &[f32], height: usize, width: usize, channels: usize) -> Result<()> {
    if data.len() != height * width * channels || !(channels == 1 || channels == 3) {
        return Err(Error::shape("write_png", &[height, width, channels], &[data.len()]));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width as u32, height as u32);
    encoder.set_color(if channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}
