//! PNG codec with the fixed sample↔pixel mapping.
//!
//! 16-bit sample v ↦ v/32767.5 − 1; 8-bit sample v ↦ v/127.5 − 1. Encoding is
//! always 16-bit: p ↦ round((p+1)·32767.5) half away from zero, clamped to
//! [0, 65535]. The mapping is symmetric about 0 and exact at both bounds, and
//! encode∘decode is the identity on valid 16-bit samples.

use super::{FaceImage, Modality, Volume};
use crate::error::{Error, Result};
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use std::io::Cursor;

pub const SCALE_16: f32 = 32767.5;
pub const SCALE_8: f32 = 127.5;

pub fn sample16_to_pixel(v: u16) -> f32 {
    v as f32 / SCALE_16 - 1.0
}

pub fn sample8_to_pixel(v: u8) -> f32 {
    v as f32 / SCALE_8 - 1.0
}

pub fn pixel_to_sample16(p: f32) -> u16 {
    let s = ((p + 1.0) * SCALE_16).round();
    s.clamp(0.0, 65535.0) as u16
}

/// Decode an 8- or 16-bit PNG. The channel count must match the modality
/// (Visible/Polar: 3 channels, S0: 1 channel).
pub fn decode_image(png_bytes: &[u8], modality: Modality) -> Result<FaceImage> {
    let dynimg = image::load_from_memory_with_format(png_bytes, ImageFormat::Png)
        .map_err(|e| Error::Codec(format!("png decode failed: {e}")))?;

    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let want = modality.channels();
    let mut img = FaceImage::new_zero(h, w, modality, "", "", Volume::I);

    match (&dynimg, want) {
        (DynamicImage::ImageRgb16(buf), 3) => {
            for (i, px) in buf.pixels().enumerate() {
                for c in 0..3 {
                    img.pixels[i * 3 + c] = sample16_to_pixel(px.0[c]);
                }
            }
        }
        (DynamicImage::ImageRgb8(buf), 3) => {
            for (i, px) in buf.pixels().enumerate() {
                for c in 0..3 {
                    img.pixels[i * 3 + c] = sample8_to_pixel(px.0[c]);
                }
            }
        }
        (DynamicImage::ImageLuma16(buf), 1) => {
            for (i, px) in buf.pixels().enumerate() {
                img.pixels[i] = sample16_to_pixel(px.0[0]);
            }
        }
        (DynamicImage::ImageLuma8(buf), 1) => {
            for (i, px) in buf.pixels().enumerate() {
                img.pixels[i] = sample8_to_pixel(px.0[0]);
            }
        }
        _ => {
            return Err(Error::Codec(format!(
                "png color type {:?} incompatible with {:?} ({} channels expected)",
                dynimg.color(),
                modality,
                want
            )));
        }
    }
    Ok(img)
}

/// Encode as a 16-bit PNG (RGB for 3 channels, grayscale for 1).
pub fn encode_image(img: &FaceImage) -> Result<Vec<u8>> {
    img.validate()?;
    let (w, h) = (img.width as u32, img.height as u32);
    let mut out = Cursor::new(Vec::new());
    match img.channels {
        3 => {
            let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(w, h);
            for (i, px) in buf.pixels_mut().enumerate() {
                for c in 0..3 {
                    px.0[c] = pixel_to_sample16(img.pixels[i * 3 + c]);
                }
            }
            buf.write_to(&mut out, ImageFormat::Png)?;
        }
        1 => {
            let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w, h);
            for (i, px) in buf.pixels_mut().enumerate() {
                px.0[0] = pixel_to_sample16(img.pixels[i]);
            }
            buf.write_to(&mut out, ImageFormat::Png)?;
        }
        other => {
            return Err(Error::Codec(format!("cannot encode {other}-channel image")));
        }
    }
    Ok(out.into_inner())
}
