//! 8-bit grayscale PNG images of scores and masks, with text metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded grayscale image and its text chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub text: Vec<(String, String)>,
}

/// Maps values in `[0, 1]` to gray levels; values outside are clamped.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn mask_to_gray(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|m| if *m { 255 } else { 0 }).collect()
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8], text: &[(&str, &str)]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Contract(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::format(path, format!("png encoding: {e}"));
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.to_string()).map_err(png_err)?;
    }
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(pixels).map_err(png_err)?;
    w.finish().map_err(png_err)
}

pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let png_err = |e: png::DecodingError| Error::format(path, format!("png decoding: {e}"));
    let mut reader = dec.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit grayscale"));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(width * height)];
    reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(width * height);
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect();
    Ok(GrayImage {
        width,
        height,
        pixels: buf,
        text,
    })
}
