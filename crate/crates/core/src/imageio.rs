//! File-boundary image handling. Internally everything is f64 in [0,1];
//! quantization to 8 bits happens exactly once, here. Images travel as
//! RGB PNG, masks as binary PGM (0 = missing, 255 = known).

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::maskgen::Mask;
use crate::tensor::Tensor;

fn img_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Image(e.to_string())
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Write a [1, 3, H, W] tensor as an 8-bit RGB PNG.
pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    let (b, c, h, w) = t.dims4()?;
    if b != 1 || c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "save_png wants [1,3,H,W], got {:?}",
            t.shape()
        )));
    }
    let d = t.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            bytes.push(quantize(d[ch * h * w + i]));
        }
    }
    let f = std::fs::File::create(path)?;
    image::codecs::png::PngEncoder::new(f)
        .write_image(&bytes, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(img_err)
}

/// Read an 8-bit RGB PNG into a [1, 3, H, W] tensor in [0,1].
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)?.decode().map_err(img_err)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            data[ch * h * w + i] = dequantize(raw[3 * i + ch]);
        }
    }
    Tensor::constant(&[1, 3, h, w], data)
}

/// Write a mask as binary (raw) PGM: 255 = known, 0 = missing.
pub fn save_pgm(mask: &Mask, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect();
    let f = std::fs::File::create(path)?;
    PnmEncoder::new(f)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            mask.w as u32,
            mask.h as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(img_err)
}

/// Read a binary-valued PGM mask; any sample other than 0 or 255 is an
/// error rather than a silent threshold.
pub fn load_pgm(path: &Path) -> Result<Mask> {
    let img = ImageReader::open(path)?.decode().map_err(img_err)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for &v in img.into_raw().iter() {
        match v {
            255 => data.push(1u8),
            0 => data.push(0u8),
            other => {
                return Err(Error::Image(format!(
                    "mask sample {other} is neither 0 nor 255"
                )))
            }
        }
    }
    Mask::from_bytes(h, w, data)
}
