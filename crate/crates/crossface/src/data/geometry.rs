//! Crop + resample registration.
//!
//! One convention everywhere: half-pixel centers. Output pixel (oy, ox)
//! samples the source at x0 + (ox + 0.5)·bw/out − 0.5 (likewise y), bilinear
//! between the four neighbors, coordinates clamped to the box. With an
//! identity-size crop the sample positions are exactly the source pixels.

use super::FaceImage;
use crate::error::{Error, Result};

/// Box is [x0, y0, x1, y1] in pixel coordinates, x1/y1 exclusive.
pub fn crop_register(img: &FaceImage, bx: [u32; 4], out_size: usize) -> Result<FaceImage> {
    let [x0, y0, x1, y1] = bx.map(|v| v as usize);
    if x1 <= x0 || y1 <= y0 || x1 > img.width || y1 > img.height {
        return Err(Error::InvalidArgument(format!(
            "box {:?} outside {}x{} image",
            bx, img.width, img.height
        )));
    }
    if out_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "out_size {} below minimum 8",
            out_size
        )));
    }
    let (bw, bh) = (x1 - x0, y1 - y0);
    let mut out = FaceImage::new_zero(
        out_size,
        out_size,
        img.modality,
        &img.subject_id,
        &img.range_tag,
        img.source_volume,
    );
    out.channels = img.channels;
    out.pixels = vec![0.0; out_size * out_size * img.channels];

    let sx = bw as f64 / out_size as f64;
    let sy = bh as f64 / out_size as f64;
    for oy in 0..out_size {
        let fy = y0 as f64 + (oy as f64 + 0.5) * sy - 0.5;
        let fy = fy.clamp(y0 as f64, (y1 - 1) as f64);
        let ty = fy.floor();
        let wy = (fy - ty) as f32;
        let iy0 = ty as usize;
        let iy1 = (iy0 + 1).min(y1 - 1);
        for ox in 0..out_size {
            let fx = x0 as f64 + (ox as f64 + 0.5) * sx - 0.5;
            let fx = fx.clamp(x0 as f64, (x1 - 1) as f64);
            let tx = fx.floor();
            let wx = (fx - tx) as f32;
            let ix0 = tx as usize;
            let ix1 = (ix0 + 1).min(x1 - 1);
            for c in 0..img.channels {
                let p00 = img.at(iy0, ix0, c);
                let p01 = img.at(iy0, ix1, c);
                let p10 = img.at(iy1, ix0, c);
                let p11 = img.at(iy1, ix1, c);
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bot = p10 * (1.0 - wx) + p11 * wx;
                out.set(oy, ox, c, top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Ok(out)
}
