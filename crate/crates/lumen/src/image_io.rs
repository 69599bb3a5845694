//! PNG encoding and decoding at the pixel boundary.
//!
//! Decoded images are normalized to 8-bit gray or RGB (alpha dropped,
//! palettes expanded) and scaled to `[0, 1]`. Encoding rounds `255·v` half
//! to even.

use std::io::Cursor;
use std::path::Path;

use lumen_core::{validate_image, DomainError, ImageTensor, LabelMap, PixelDims, RawPixels, SaliencyMap};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("png decode failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Sidecar written next to every image file the service produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub sha256: String,
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn encode_raw(height: usize, width: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>, ImageIoError> {
    let color = if image.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    encode_raw(image.height(), image.width(), color, &bytes)
}

/// Saliency as an 8-bit grayscale PNG.
pub fn encode_saliency_png(map: &SaliencyMap) -> Result<Vec<u8>, ImageIoError> {
    let bytes: Vec<u8> = map.values().iter().map(|&v| to_byte(v)).collect();
    encode_raw(map.height(), map.width(), png::ColorType::Grayscale, &bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor, ImageIoError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageIoError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let data = &buf[..info.buffer_size()];
    let (h, w) = (info.height as usize, info.width as usize);
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(ImageIoError::Unsupported("palette was not expanded".into()))
        }
    };
    let pixels: Vec<u8> = if src_channels == keep {
        data.to_vec()
    } else {
        data.chunks_exact(src_channels)
            .flat_map(|px| px[..keep].iter().copied())
            .collect()
    };
    Ok(validate_image(RawPixels::Bytes(&pixels), PixelDims::new(h, w, keep))?)
}

/// Reads a label-map PNG: 8/16-bit grayscale or palette indices become class ids.
pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap, ImageIoError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageIoError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let data = &buf[..info.buffer_size()];
    let (h, w) = (info.height as usize, info.width as usize);
    let labels: Vec<u32> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale | png::ColorType::Indexed, png::BitDepth::Eight) => {
            data.iter().map(|&b| b as u32).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect(),
        (ct, bd) => {
            return Err(ImageIoError::Unsupported(format!(
                "label map must be 8/16-bit gray or 8-bit indexed, got {ct:?} {bd:?}"
            )))
        }
    };
    Ok(LabelMap::new(h, w, labels)?)
}

/// Writes a label map as 8-bit grayscale (ids must fit in a byte).
pub fn encode_label_png(map: &LabelMap) -> Result<Vec<u8>, ImageIoError> {
    let bytes = map
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| ImageIoError::Unsupported(format!("label {l} > 255"))))
        .collect::<Result<Vec<u8>, _>>()?;
    encode_raw(map.height(), map.width(), png::ColorType::Grayscale, &bytes)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageIoError + '_ {
    move |source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes `image` as PNG at `path` plus a `<path>.json` metadata sidecar.
pub fn write_image(path: &Path, image: &ImageTensor) -> Result<ImageMeta, ImageIoError> {
    let bytes = encode_png(image)?;
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    let meta = ImageMeta {
        height: image.height(),
        width: image.width(),
        channels: image.channels(),
        bit_depth: 8,
        sha256: crate::store::blob_key(&bytes),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    std::fs::write(&side, json).map_err(io_err(&side))?;
    Ok(meta)
}

pub fn read_image(path: &Path) -> Result<ImageTensor, ImageIoError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_png(&bytes)
}
