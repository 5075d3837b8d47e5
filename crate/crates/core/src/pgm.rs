//! 8-bit binary PGM (P5) reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use crate::error::{Error, Result};

/// Grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn write(path: &Path, img: &Gray8) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(f)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(&img.pixels, img.width as u32, img.height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read(path: &Path) -> Result<Gray8> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = PnmDecoder::new(BufReader::new(f)).map_err(|e| Error::format(path, e.to_string()))?;
    if dec.color_type() != image::ColorType::L8 {
        return Err(Error::format(path, format!("expected 8-bit grayscale, got {:?}", dec.color_type())));
    }
    let (w, h) = dec.dimensions();
    let mut pixels = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut pixels)
        .map_err(|e| Error::format(path, format!("reading pixel data: {e}")))?;
    Ok(Gray8 {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}
