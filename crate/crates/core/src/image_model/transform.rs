//! Geometric transforms and training-time augmentation.

use serde::{Deserialize, Serialize};

use super::Image;
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Bilinear sample at fractional source coordinates; points outside the
/// frame read as 0.
fn sample(image: &Image, fx: f64, fy: f64, c: usize) -> f64 {
    const SLACK: f64 = 1e-9;
    let (w, h) = (image.width(), image.height());
    if fx < -SLACK || fy < -SLACK || fx > (w - 1) as f64 + SLACK || fy > (h - 1) as f64 + SLACK {
        return 0.0;
    }
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    let top = image.get(x0, y0, c) * (1.0 - tx) + image.get(x1, y0, c) * tx;
    let bottom = image.get(x0, y1, c) * (1.0 - tx) + image.get(x1, y1, c) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Source coordinate for output index `i` under corner-aligned scaling.
fn corner_aligned(i: usize, out_len: usize, in_len: usize) -> f64 {
    if out_len == 1 {
        return (in_len - 1) as f64 / 2.0;
    }
    i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
}

/// Bilinear resize with corner-aligned sampling: the corner pixels of the
/// output sample the corner pixels of the input exactly.
pub fn resize_bilinear(image: &Image, new_width: usize, new_height: usize) -> Result<Image> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {new_width}x{new_height}"
        )));
    }
    let c = image.channels();
    let mut out = Vec::with_capacity(new_width * new_height * c);
    for y in 0..new_height {
        let fy = corner_aligned(y, new_height, image.height());
        for x in 0..new_width {
            let fx = corner_aligned(x, new_width, image.width());
            for ch in 0..c {
                out.push(sample(image, fx, fy, ch));
            }
        }
    }
    Ok(Image::from_clamped(new_width, new_height, c, out))
}

pub fn hflip(image: &Image) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut out = Vec::with_capacity(image.pixels().len());
    for y in 0..h {
        for x in (0..w).rev() {
            for ch in 0..c {
                out.push(image.get(x, y, ch));
            }
        }
    }
    Image::from_clamped(w, h, c, out)
}

pub fn vflip(image: &Image) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let row = w * c;
    let mut out = Vec::with_capacity(image.pixels().len());
    for y in (0..h).rev() {
        out.extend_from_slice(&image.pixels()[y * row..(y + 1) * row]);
    }
    Image::from_clamped(w, h, c, out)
}

/// Rotation by `degrees` (counter-clockwise on screen) about the image center.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut out = Vec::with_capacity(image.pixels().len());
    for y in 0..h {
        for x in 0..w {
            // inverse map the output pixel back into the source; y grows downwards
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            for ch in 0..c {
                out.push(sample(image, sx, sy, ch));
            }
        }
    }
    Image::from_clamped(w, h, c, out)
}

/// Center zoom back to the original extents. `scale < 1` upsamples a central
/// crop covering `scale` of each side; `scale > 1` embeds the image on a zero
/// canvas `scale` times larger and resizes that down.
pub fn zoom(image: &Image, scale: f64) -> Result<Image> {
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "zoom scale must be positive, got {scale}"
        )));
    }
    let (w, h, c) = (image.width(), image.height(), image.channels());
    if scale < 1.0 {
        let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
        let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
        if cw == w && ch == h {
            return Ok(image.clone());
        }
        let x0 = (w - cw) / 2;
        let y0 = (h - ch) / 2;
        let mut crop = Vec::with_capacity(cw * ch * c);
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                for k in 0..c {
                    crop.push(image.get(x, y, k));
                }
            }
        }
        resize_bilinear(&Image::from_clamped(cw, ch, c, crop), w, h)
    } else {
        let bw = (w as f64 * scale).round() as usize;
        let bh = (h as f64 * scale).round() as usize;
        if bw == w && bh == h {
            return Ok(image.clone());
        }
        let x0 = (bw - w) / 2;
        let y0 = (bh - h) / 2;
        let mut canvas = vec![0.0; bw * bh * c];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    canvas[((y + y0) * bw + x + x0) * c + k] = image.get(x, y, k);
                }
            }
        }
        resize_bilinear(&Image::from_clamped(bw, bh, c, canvas), w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Hflip,
    Vflip,
    Rotate(f64),
    Zoom(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_degrees: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_rotation_degrees: 15.0,
            zoom_min: 0.9,
            zoom_max: 1.1,
        }
    }
}

impl Augmentation {
    /// One of the four operations, uniformly, with parameters drawn from `ranges`.
    pub fn random(rng: &mut SeededRng, ranges: &AugmentRanges) -> Self {
        match rng.below(4) {
            0 => Augmentation::Hflip,
            1 => Augmentation::Vflip,
            2 => Augmentation::Rotate(rng.uniform_range(-ranges.max_rotation_degrees, ranges.max_rotation_degrees)),
            _ => Augmentation::Zoom(rng.uniform_range(ranges.zoom_min, ranges.zoom_max)),
        }
    }
}

pub fn augment(image: &Image, op: Augmentation) -> Result<Image> {
    match op {
        Augmentation::Hflip => Ok(hflip(image)),
        Augmentation::Vflip => Ok(vflip(image)),
        Augmentation::Rotate(deg) => Ok(rotate(image, deg)),
        Augmentation::Zoom(scale) => zoom(image, scale),
    }
}
