//! Grad-CAM heatmaps, overlays and a localization score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::DamageBox;
use crate::image_model::{write_ppm, ActShape, CnnModel, Image, Layer, Mode};
use crate::{Error, Result};

/// Pixels added on every side of a ground-truth box before scoring.
pub const LOCALIZATION_MARGIN: u32 = 4;
pub const DEFAULT_OVERLAY_ALPHA: f64 = 0.4;

/// Class-activation map at image resolution, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub target_class: usize,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// First (row-major) position of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn to_gray(&self) -> Image {
        Image::new(self.width, self.height, 1, self.values.clone()).expect("heat values lie in [0, 1]")
    }

    pub fn to_rgb(&self) -> Image {
        let px = self.values.iter().flat_map(|&t| colormap(t)).collect();
        Image::new(self.width, self.height, 3, px).expect("colormap stays in [0, 1]")
    }

    /// Writes the map as an 8-bit grayscale P5 file.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ppm(&self.to_gray(), path)
    }
}

/// How the coarse map is brought to image resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    /// Each map cell is placed at the centre of its receptive field in the
    /// input, with edge values extended outward.
    #[default]
    ReceptiveField,
    /// Map corners pinned to image corners.
    CornerAligned,
}

/// Offset and stride mapping explanation-map cells to input pixel centres.
fn receptive_field(model: &CnnModel, upto: usize) -> (f64, f64) {
    let (mut offset, mut stride) = (0.0, 1.0);
    for slot in &model.layers()[..upto] {
        match &slot.layer {
            Layer::Conv(c) => offset += (c.kernel as f64 - 1.0) / 2.0 * stride,
            Layer::Maxpool => {
                offset += 0.5 * stride;
                stride *= 2.0;
            }
            _ => {}
        }
    }
    (offset, stride)
}

fn upsample(
    cam: &[f64],
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
    mapping: impl Fn(usize, usize, usize) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let fy = mapping(y, out_h, h).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = mapping(x, out_w, w).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = cam[y0 * w + x0] * (1.0 - tx) + cam[y0 * w + x1] * tx;
            let bottom = cam[y1 * w + x0] * (1.0 - tx) + cam[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

pub fn grad_cam(model: &CnnModel, image: &Image, target_class: usize) -> Result<Heatmap> {
    grad_cam_with(model, image, target_class, Upsampling::default())
}

/// Channel weights are the spatial mean of the target logit's gradient at
/// the explanation activation; the map is the ReLU of the weighted channel
/// sum, upsampled and scaled to a maximum of 1.
pub fn grad_cam_with(model: &CnnModel, image: &Image, target_class: usize, upsampling: Upsampling) -> Result<Heatmap> {
    let act_index = model.explanation_activation_index().ok_or(Error::NoExplanationTarget)?;
    let ActShape::Spatial {
        channels,
        height,
        width,
    } = model.activation_shape(act_index)
    else {
        return Err(Error::NoExplanationTarget);
    };
    let fwd = model.forward(&[image], Mode::Eval)?;
    let acts = fwd.activation(model, act_index).ok_or(Error::NoExplanationTarget)?;
    let grads = model.logit_gradient(&fwd, act_index, target_class)?;
    let plane = height * width;
    let mut cam = vec![0.0; plane];
    for k in 0..channels {
        let g = &grads.data()[k * plane..(k + 1) * plane];
        let a = &acts.data()[k * plane..(k + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        for (c, v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    for c in &mut cam {
        *c = c.max(0.0);
    }
    let out = (image.height(), image.width());
    let mut values = match upsampling {
        Upsampling::ReceptiveField => {
            let (offset, stride) = receptive_field(model, act_index);
            upsample(&cam, (height, width), out, |i, _, _| (i as f64 - offset) / stride)
        }
        Upsampling::CornerAligned => upsample(&cam, (height, width), out, |i, n_out, n_in| {
            if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            }
        }),
    };
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    }
    Ok(Heatmap {
        width: image.width(),
        height: image.height(),
        values,
        target_class,
    })
}

/// Blue-to-red ramp: `t ↦ (t, 1 − |2t − 1|, 1 − t)`, so 0 is pure blue,
/// 0.5 is pure green and 1 is pure red.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t]
}

/// `(1 − alpha)·image + alpha·colormap(heat)`, per pixel. Grayscale images
/// are expanded to RGB first.
pub fn overlay(image: &Image, heatmap: &Heatmap, alpha: f64) -> Result<Image> {
    if image.width() != heatmap.width || image.height() != heatmap.height {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, heatmap is {}x{}",
            image.width(),
            image.height(),
            heatmap.width,
            heatmap.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let rgb = image.to_rgb();
    if alpha == 0.0 {
        return Ok(rgb);
    }
    let px = rgb
        .pixels()
        .chunks_exact(3)
        .zip(&heatmap.values)
        .flat_map(|(p, &t)| {
            let c = colormap(t);
            [0, 1, 2].map(|i| (1.0 - alpha) * p[i] + alpha * c[i])
        })
        .collect();
    Image::new(image.width(), image.height(), 3, px)
}

/// Share of total heat inside `box` dilated by [`LOCALIZATION_MARGIN`].
pub fn localization_score(heatmap: &Heatmap, damage_box: &DamageBox) -> Result<f64> {
    if damage_box.width == 0 || damage_box.height == 0 {
        return Err(Error::InvalidArgument("damage box has zero area".into()));
    }
    let (w, h) = (heatmap.width as u32, heatmap.height as u32);
    if damage_box.x + damage_box.width > w || damage_box.y + damage_box.height > h {
        return Err(Error::InvalidArgument(format!(
            "{damage_box:?} exceeds the {w}x{h} heatmap"
        )));
    }
    let total: f64 = heatmap.values.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let b = damage_box.dilate(LOCALIZATION_MARGIN, w, h);
    let mut inside = 0.0;
    for y in b.y..b.y + b.height {
        for x in b.x..b.x + b.width {
            inside += heatmap.get(x as usize, y as usize);
        }
    }
    Ok(inside / total)
}

/// Whether the heatmap's maximum lies in the dilated box.
pub fn argmax_in_box(heatmap: &Heatmap, damage_box: &DamageBox) -> bool {
    let (x, y) = heatmap.argmax();
    damage_box
        .dilate(LOCALIZATION_MARGIN, heatmap.width as u32, heatmap.height as u32)
        .contains(x as u32, y as u32)
}
