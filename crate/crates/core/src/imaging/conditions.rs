use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RasterImage;

/// Simulated aging of a pack surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Deformation,
    Contamination,
    Dust,
    Scratches,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Deformation,
        Condition::Contamination,
        Condition::Dust,
        Condition::Scratches,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Deformation => "deformation",
            Condition::Contamination => "contamination",
            Condition::Dust => "dust",
            Condition::Scratches => "scratches",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Condition::ALL.iter().map(|c| c.name()).collect();
                format!("unknown condition `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Low-frequency value noise in [0, 1]: random lattice values, smoothly
/// interpolated, thresholded into blotches.
pub fn contamination_mask(width: u32, height: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = (width.max(height) as f64 / 6.0).max(1.0);
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let at = |i: usize, j: usize| lattice[j * gw + i];
    let mut mask = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / cell;
            let fy = y as f64 / cell;
            let (i, j) = (fx as usize, fy as usize);
            let (tx, ty) = (smoothstep(fx - i as f64), smoothstep(fy - j as f64));
            let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
            let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
            let n = top * (1.0 - ty) + bottom * ty;
            mask.push(smoothstep((n - 0.55) / 0.2));
        }
    }
    mask
}

fn blend(c: u8, target: f64, alpha: f64) -> u8 {
    (c as f64 * (1.0 - alpha) + target * alpha).round().clamp(0.0, 255.0) as u8
}

/// Bulges a patch of one image edge outward with a smooth displacement
/// field.
fn deform(image: &RasterImage, strength: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let amplitude = strength * 0.06 * w.min(h);
    let radius = rng.random_range(0.08..0.18) * w.min(h);
    // Edge: 0 right, 1 left, 2 bottom, 3 top. Right edges are the common case.
    let edge = if rng.random::<f64>() < 0.5 { 0 } else { rng.random_range(1..4) };
    let along = rng.random_range(0.2..0.8);
    let (cx, cy, nx, ny) = match edge {
        0 => (w * 0.85, h * along, 1.0, 0.0),
        1 => (w * 0.15, h * along, -1.0, 0.0),
        2 => (w * along, h * 0.85, 0.0, 1.0),
        _ => (w * along, h * 0.15, 0.0, -1.0),
    };
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let g = (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
            let sx = (x as f64 - nx * amplitude * g).round().clamp(0.0, w - 1.0) as u32;
            let sy = (y as f64 - ny * amplitude * g).round().clamp(0.0, h - 1.0) as u32;
            out.set(x, y, image.get(sx, sy));
        }
    }
    out
}

fn contaminate(image: &RasterImage, strength: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let mask = contamination_mask(image.width(), image.height(), rng);
    let tint = [70.0, 150.0, 60.0];
    let mut out = image.clone();
    for (px, m) in out.pixels_mut().chunks_exact_mut(3).zip(&mask) {
        let alpha = strength * 0.8 * m;
        for k in 0..3 {
            px[k] = blend(px[k], tint[k], alpha);
        }
    }
    out
}

fn dust(image: &RasterImage, strength: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let mut out = image.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        let gray = 175.0 + rng.random_range(-20.0..20.0);
        let alpha = strength * 0.35 * rng.random_range(0.7..1.0);
        for c in px.iter_mut() {
            *c = blend(*c, gray, alpha);
        }
    }
    out
}

fn scratch(image: &RasterImage, strength: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let mut out = image.clone();
    let (w, h) = (image.width() as f64, image.height() as f64);
    let count = (strength * 20.0).round() as usize;
    let diagonal = w.hypot(h);
    for _ in 0..count {
        let (x0, y0) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let len = rng.random_range(0.05..0.25) * diagonal;
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let value = rng.random_range(225.0..255.0);
        let steps = len.ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (x0 + t * len * angle.cos()).round();
            let y = (y0 + t * len * angle.sin()).round();
            if (0.0..w).contains(&x) && (0.0..h).contains(&y) {
                let (x, y) = (x as u32, y as u32);
                let px = out.get(x, y);
                out.set(x, y, px.map(|c| blend(c, value, 0.85)));
            }
        }
    }
    out
}

/// Applies a condition filter. `strength` in [0, 1]; 0 returns the input
/// unchanged.
pub fn apply_condition(image: &RasterImage, condition: Condition, strength: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let strength = strength.clamp(0.0, 1.0);
    if strength == 0.0 {
        return image.clone();
    }
    match condition {
        Condition::Deformation => deform(image, strength, rng),
        Condition::Contamination => contaminate(image, strength, rng),
        Condition::Dust => dust(image, strength, rng),
        Condition::Scratches => scratch(image, strength, rng),
    }
}
