//! Float image buffers and PNG import/export.
//!
//! Images are `ndarray::Array3<f32>` with shape `(height, width, 3)` and
//! values in `[0, 1]`. PNG export quantizes to 8 bits per channel and is
//! therefore lossy; round-trips are exact only for values on the 1/255 grid.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Allocate an all-zero `(h, w, 3)` image.
pub fn zeros(h: usize, w: usize) -> Array3<f32> {
    Array3::zeros((h, w, 3))
}

/// Allocate a constant-color `(h, w, 3)` image.
pub fn splat(h: usize, w: usize, rgb: [f32; 3]) -> Array3<f32> {
    let mut img = Array3::zeros((h, w, 3));
    for c in 0..3 {
        img.index_axis_mut(ndarray::Axis(2), c).fill(rgb[c]);
    }
    img
}

/// Load an 8-bit PNG as a float image in `[0, 1]`. Gray and RGBA inputs are
/// expanded/truncated to RGB.
pub fn load_png(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Array3::zeros((h, w, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Save a float image as an 8-bit PNG. Values are clamped to `[0, 1]` and
/// rounded to the nearest 1/255 step.
pub fn save_png(path: impl AsRef<Path>, img: &Array3<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.dim();
    if c != 3 {
        return Err(Error::Validation(format!(
            "save_png expects 3 channels, got {c}"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                quantize(img[[y, x, 0]]),
                quantize(img[[y, x, 1]]),
                quantize(img[[y, x, 2]]),
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resize to `(out_h, out_w)`. Edge-clamped sampling; the sample
/// grid aligns pixel centers of the two resolutions.
pub fn resize_bilinear(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, c) = img.dim();
    let mut out = Array3::zeros((out_h, out_w, c));
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        // Map output pixel center to input pixel-center coordinates.
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let top = img[[y0, x0, ch]] * (1.0 - wx) + img[[y0, x1, ch]] * wx;
                let bot = img[[y1, x0, ch]] * (1.0 - wx) + img[[y1, x1, ch]] * wx;
                out[[oy, ox, ch]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Mean over RGB channels -> `(h, w)` single-channel image.
pub fn mean_luma(img: &Array3<f32>) -> Array2<f32> {
    let (h, w, _) = img.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = (img[[y, x, 0]] + img[[y, x, 1]] + img[[y, x, 2]]) / 3.0;
        }
    }
    out
}

/// Elementwise check that two images share a shape, as a validation error.
pub fn check_same_shape(a: &Array3<f32>, b: &Array3<f32>, ctx: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "{ctx}: image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}
