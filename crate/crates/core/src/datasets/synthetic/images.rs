//! Procedural 64×64 renders: cardboard boxes (optionally torn) and
//! irrelevant images (gradients, noise fields, screenshot-like layouts).

use super::super::DamageBox;
use crate::image_model::Image;
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RenderKind {
    NotDamaged,
    Damaged,
    Irrelevant,
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            px: vec![0.0; size * size * 3],
        }
    }

    fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.size + x) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [f64; 3]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.put(x, y, rgb);
            }
        }
    }

    fn into_image(mut self, noise: f64, rng: &mut SeededRng) -> Image {
        if noise > 0.0 {
            for v in &mut self.px {
                *v += rng.uniform_range(-noise, noise);
            }
        }
        Image::from_clamped(self.size, self.size, 3, self.px)
    }
}

fn scale(rgb: [f64; 3], k: f64) -> [f64; 3] {
    [rgb[0] * k, rgb[1] * k, rgb[2] * k]
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

fn jagged_polygon(cx: f64, cy: f64, radius: f64, rng: &mut SeededRng) -> Vec<(f64, f64)> {
    let n = 10 + rng.below(5);
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * (i as f64 + rng.uniform_range(-0.25, 0.25)) / n as f64;
            let r = if i % 2 == 0 {
                radius * rng.uniform_range(0.75, 1.0)
            } else {
                radius * rng.uniform_range(0.35, 0.6)
            };
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

fn render_box(size: usize, damaged: bool, rng: &mut SeededRng) -> (Image, Option<DamageBox>) {
    let s = size as f64;
    let mut canvas = Canvas::new(size);
    let base = rng.uniform_range(0.62, 0.95);
    let bg = [
        base + rng.uniform_range(-0.04, 0.04),
        base + rng.uniform_range(-0.04, 0.04),
        base + rng.uniform_range(-0.04, 0.04),
    ];
    canvas.rect(0, 0, size, size, bg);

    let bw = (s * rng.uniform_range(0.42, 0.66)).round() as usize;
    let bh = (s * rng.uniform_range(0.36, 0.6)).round() as usize;
    let margin = (s / 16.0).round() as usize;
    let x0 = margin + rng.below(size - bw - 2 * margin + 1);
    let y0 = margin + rng.below(size - bh - 2 * margin + 1);
    let r = rng.uniform_range(0.55, 0.75);
    let cardboard = [r, r * rng.uniform_range(0.68, 0.78), r * rng.uniform_range(0.38, 0.5)];
    for y in y0..y0 + bh {
        // mild top-to-bottom shading
        let shade = 1.04 - 0.08 * (y - y0) as f64 / bh as f64;
        for x in x0..x0 + bw {
            canvas.put(x, y, scale(cardboard, shade));
        }
    }
    let edge = scale(cardboard, 0.8);
    for x in x0..x0 + bw {
        canvas.put(x, y0, edge);
        canvas.put(x, y0 + bh - 1, edge);
    }
    for y in y0..y0 + bh {
        canvas.put(x0, y, edge);
        canvas.put(x0 + bw - 1, y, edge);
    }
    let t = rng.uniform_range(0.86, 0.96);
    let tape = [t, t * 0.93, t * 0.78];
    let thickness = 4 + rng.below(4);
    if rng.bernoulli(0.5) {
        canvas.rect(x0, y0 + bh / 2 - thickness / 2, bw, thickness, tape);
    } else {
        canvas.rect(x0 + bw / 2 - thickness / 2, y0, thickness, bh, tape);
    }

    let mut damage = None;
    if damaged {
        let tears = 1 + rng.below(3);
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (usize::MAX, usize::MAX, 0, 0);
        for _ in 0..tears {
            let radius = s * rng.uniform_range(0.055, 0.11);
            let inset = 4.0f64.min(bw as f64 / 3.0);
            let cx = rng.uniform_range(x0 as f64 + inset, (x0 + bw) as f64 - inset);
            let cy = rng.uniform_range(y0 as f64 + inset, (y0 + bh) as f64 - inset);
            let poly = jagged_polygon(cx, cy, radius, rng);
            let v = rng.uniform_range(0.04, 0.18);
            let dark = [v * 1.1, v, v * 0.9];
            let lo_x = (cx - radius - 1.0).floor().max(0.0) as usize;
            let hi_x = ((cx + radius + 1.0).ceil() as usize).min(size - 1);
            let lo_y = (cy - radius - 1.0).floor().max(0.0) as usize;
            let hi_y = ((cy + radius + 1.0).ceil() as usize).min(size - 1);
            let mut filled = false;
            for y in lo_y..=hi_y {
                for x in lo_x..=hi_x {
                    if inside(&poly, x as f64, y as f64) {
                        canvas.put(x, y, dark);
                        filled = true;
                        min_x = min_x.min(x);
                        max_x = max_x.max(x);
                        min_y = min_y.min(y);
                        max_y = max_y.max(y);
                    }
                }
            }
            if !filled {
                // degenerate polygon: mark its center so ground truth never lies
                let (x, y) = (cx.round() as usize, cy.round() as usize);
                canvas.put(x, y, dark);
                min_x = min_x.min(x);
                max_x = max_x.max(x);
                min_y = min_y.min(y);
                max_y = max_y.max(y);
            }
        }
        damage = Some(DamageBox {
            x: min_x as u32,
            y: min_y as u32,
            width: (max_x - min_x + 1) as u32,
            height: (max_y - min_y + 1) as u32,
        });
    }
    (canvas.into_image(0.02, rng), damage)
}

fn random_color(rng: &mut SeededRng) -> [f64; 3] {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

fn render_irrelevant(size: usize, rng: &mut SeededRng) -> Image {
    let s = size as f64;
    let mut canvas = Canvas::new(size);
    match rng.below(3) {
        0 => {
            let (a, b) = (random_color(rng), random_color(rng));
            let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let ripple = rng.uniform_range(0.0, 0.12);
            let freq = rng.uniform_range(2.0, 6.0);
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy + 0.5;
                    let t = (u + ripple * (freq * u * std::f64::consts::TAU).sin()).clamp(0.0, 1.0);
                    canvas.put(
                        x,
                        y,
                        [
                            a[0] + (b[0] - a[0]) * t,
                            a[1] + (b[1] - a[1]) * t,
                            a[2] + (b[2] - a[2]) * t,
                        ],
                    );
                }
            }
            canvas.into_image(0.01, rng)
        }
        1 => {
            let tint = random_color(rng);
            let mix = rng.uniform_range(0.0, 0.6);
            for y in 0..size {
                for x in 0..size {
                    let g = rng.uniform();
                    let rgb = [
                        (1.0 - mix) * rng.uniform() + mix * g * tint[0],
                        (1.0 - mix) * rng.uniform() + mix * g * tint[1],
                        (1.0 - mix) * rng.uniform() + mix * g * tint[2],
                    ];
                    canvas.put(x, y, rgb);
                }
            }
            canvas.into_image(0.0, rng)
        }
        _ => {
            let page = rng.uniform_range(0.92, 1.0);
            canvas.rect(0, 0, size, size, [page, page, page]);
            let header_h = (s * rng.uniform_range(0.1, 0.16)).round() as usize;
            canvas.rect(0, 0, size, header_h, random_color(rng));
            let mut y = header_h + 3;
            while y + 3 < size {
                let h = 2 + rng.below(2);
                let indent = 3 + rng.below(6);
                let len = ((s - indent as f64 - 3.0) * rng.uniform_range(0.3, 1.0)) as usize;
                let ink = rng.uniform_range(0.2, 0.55);
                let color = if rng.bernoulli(0.2) {
                    random_color(rng)
                } else {
                    [ink, ink, ink + 0.05]
                };
                canvas.rect(indent, y, len, h, color);
                y += h + 2 + rng.below(4);
            }
            canvas.into_image(0.01, rng)
        }
    }
}

pub(crate) fn render(kind: RenderKind, size: usize, rng: &mut SeededRng) -> (Image, Option<DamageBox>) {
    match kind {
        RenderKind::NotDamaged => render_box(size, false, rng),
        RenderKind::Damaged => render_box(size, true, rng),
        RenderKind::Irrelevant => (render_irrelevant(size, rng), None),
    }
}
