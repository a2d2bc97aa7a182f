//! 8-bit grayscale PGM (P5) and PNG reading, plus PGM/PNG writers.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};
use crate::tensor::{Scalar, Tensor};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads an 8-bit grayscale image, scaled to [0, 1].
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(path, &bytes)
    } else {
        Err(format_err(path, "expected binary PGM (P5) or PNG"))
    }
}

/// Reads an image, resizes it bilinearly to `resolution²` and replicates the
/// channel: `3×R×R`.
pub fn load_image<T: Scalar>(path: &Path, resolution: usize) -> Result<Tensor<T>> {
    let img = read_gray(path)?.resize(resolution, resolution);
    img.to_tensor().reshape(&[3, resolution, resolution])
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "malformed PGM header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("PGM maxval {maxval}; only 8-bit is supported")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "malformed PGM header"));
    }
    pos += 1;
    let pixels = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| format_err(path, "PGM pixel data is truncated"))?;
    let scale = maxval as f32;
    GrayImage::new(width, height, pixels.iter().map(|&p| f32::from(p) / scale).collect())
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(
            path,
            format!("PNG is {:?} at {:?}; need 8-bit grayscale", info.color_type, info.bit_depth),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let stride = frame.line_size;
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(stride).take(h) {
        data.extend(row[..w].iter().map(|&p| f32::from(p) / 255.0));
    }
    GrayImage::new(w, h, data)
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

pub fn write_png_gray(path: &Path, img: &GrayImage) -> Result<()> {
    write_png(path, img.width, img.height, png::ColorType::Grayscale, &img.to_u8())
}

pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_png(path, img.width, img.height, png::ColorType::Rgb, &img.data)
}
