//! PNG input and output.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::{BinaryRaster, GrayRaster, RasterError};

fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

fn to_gray(img: DynamicImage) -> Result<GrayRaster, RasterError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf
            .pixels()
            .map(|p| composite_on_white(p.0[0], p.0[1]))
            .collect(),
        other => {
            // alpha composites over a white page
            let rgba = other.to_rgba8();
            rgba.pixels()
                .map(|p| {
                    let [r, g, b, a] = p.0;
                    composite_on_white(luminance(r, g, b), a)
                })
                .collect()
        }
    };
    GrayRaster::new(w, h, pixels)
}

fn composite_on_white(value: u8, alpha: u8) -> u8 {
    if alpha == 255 {
        return value;
    }
    let a = alpha as f64 / 255.0;
    (value as f64 * a + 255.0 * (1.0 - a)).round() as u8
}

/// Decodes PNG (or any format the `image` crate was built with) to luminance.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayRaster, RasterError> {
    to_gray(image::load_from_memory(bytes)?)
}

pub fn read_gray(path: &Path) -> Result<GrayRaster, RasterError> {
    let bytes = std::fs::read(path)?;
    decode_gray(&bytes)
}

/// 8-bit grayscale PNG with ink as 0 and background as 255.
pub fn encode_binary_png(img: &BinaryRaster) -> Result<Vec<u8>, RasterError> {
    let gray = img.to_gray();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, gray.pixels().to_vec())
        .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_binary_png(img: &BinaryRaster, path: &Path) -> Result<(), RasterError> {
    std::fs::write(path, encode_binary_png(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{binarize, ThresholdMode};

    #[test]
    fn binary_png_round_trip() {
        let mut img = BinaryRaster::blank(17, 9).unwrap();
        img.set(3, 4, true);
        img.set(16, 8, true);
        let bytes = encode_binary_png(&img).unwrap();
        let gray = decode_gray(&bytes).unwrap();
        assert_eq!(binarize(&gray, ThresholdMode::Otsu), img);
        assert_eq!(encode_binary_png(&img).unwrap(), bytes);
    }

    #[test]
    fn color_uses_weighted_luminance() {
        let rgb = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        let mut out = Cursor::new(Vec::new());
        rgb.write_to(&mut out, ImageFormat::Png).unwrap();
        let gray = decode_gray(&out.into_inner()).unwrap();
        assert_eq!(gray.pixels(), &[76, 29]);
    }
}
