use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledImage, RasterImage};

pub const DEFAULT_VARIANTS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flip {
    #[default]
    None,
    Horizontal,
    Vertical,
}

/// Counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn quarter_turns(self) -> u8 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    /// Added to every channel as a fraction of full scale.
    pub brightness: f64,
    /// Scale around mid gray.
    pub contrast: f64,
    /// Kept fraction of each side.
    pub crop: f64,
    pub flip: Flip,
    /// Noise standard deviation in channel units.
    pub gaussian_sigma: f64,
    pub rotation: Rotation,
    pub rng_seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            brightness: 0.0,
            contrast: 1.0,
            crop: 1.0,
            flip: Flip::None,
            gaussian_sigma: 0.0,
            rotation: Rotation::R0,
            rng_seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(-1.0..=1.0).contains(&self.brightness) {
            return Err(format!("brightness {} outside [-1, 1]", self.brightness));
        }
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(format!("contrast {} must be positive", self.contrast));
        }
        if !(self.crop > 0.0 && self.crop <= 1.0) {
            return Err(format!("crop {} outside (0, 1]", self.crop));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(format!("gaussian_sigma {} must be non-negative", self.gaussian_sigma));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub labeled: LabeledImage,
    /// Labels removed because the crop left nothing of them.
    pub dropped: usize,
}

impl Augmented {
    /// The input had labels and none survived.
    pub fn emptied(&self) -> bool {
        self.dropped > 0 && self.labeled.labels.is_empty()
    }
}

fn crop(input: &LabeledImage, fraction: f64, rng: &mut ChaCha8Rng) -> (LabeledImage, usize) {
    let (w, h) = (input.image.width(), input.image.height());
    let cw = ((w as f64 * fraction).round() as u32).clamp(1, w);
    let ch = ((h as f64 * fraction).round() as u32).clamp(1, h);
    let x0 = rng.random_range(0..=w - cw);
    let y0 = rng.random_range(0..=h - ch);
    let mut pixels = Vec::with_capacity(cw as usize * ch as usize * 3);
    let src = input.image.pixels();
    for y in y0..y0 + ch {
        let start = (y as usize * w as usize + x0 as usize) * 3;
        pixels.extend_from_slice(&src[start..start + cw as usize * 3]);
    }
    let image = RasterImage::from_raw(cw, ch, pixels).expect("sized");
    let mut labels = Vec::new();
    let mut dropped = 0;
    for l in &input.labels {
        let [u1, v1, u2, v2] = l.bbox;
        let clipped = Label {
            category: l.category,
            bbox: [
                u1.clamp(x0, x0 + cw) - x0,
                v1.clamp(y0, y0 + ch) - y0,
                u2.clamp(x0, x0 + cw) - x0,
                v2.clamp(y0, y0 + ch) - y0,
            ],
        };
        if clipped.area() >= 1 {
            labels.push(clipped);
        } else {
            dropped += 1;
        }
    }
    (LabeledImage { image, labels }, dropped)
}

fn flip(input: LabeledImage, flip: Flip) -> LabeledImage {
    let (w, h) = (input.image.width(), input.image.height());
    let mut out = RasterImage::new(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = match flip {
                Flip::Horizontal => (w - 1 - x, y),
                Flip::Vertical => (x, h - 1 - y),
                Flip::None => (x, y),
            };
            out.set(x, y, input.image.get(sx, sy));
        }
    }
    let labels = input
        .labels
        .iter()
        .map(|l| {
            let [u1, v1, u2, v2] = l.bbox;
            let bbox = match flip {
                Flip::Horizontal => [w - u2, v1, w - u1, v2],
                Flip::Vertical => [u1, h - v2, u2, h - v1],
                Flip::None => l.bbox,
            };
            Label { category: l.category, bbox }
        })
        .collect();
    LabeledImage { image: out, labels }
}

/// One counter-clockwise quarter turn: pixel `(x, y)` moves to
/// `(y, w - 1 - x)` of an `h x w` image.
fn rotate90(input: LabeledImage) -> LabeledImage {
    let (w, h) = (input.image.width(), input.image.height());
    let mut out = RasterImage::new(h, w, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            out.set(y, w - 1 - x, input.image.get(x, y));
        }
    }
    let labels = input
        .labels
        .iter()
        .map(|l| {
            let [u1, v1, u2, v2] = l.bbox;
            Label {
                category: l.category,
                bbox: [v1, w - u2, v2, w - u1],
            }
        })
        .collect();
    LabeledImage { image: out, labels }
}

fn map_channels(image: &mut RasterImage, f: impl Fn(f64) -> f64) {
    for c in image.pixels_mut() {
        *c = f(*c as f64).round().clamp(0.0, 255.0) as u8;
    }
}

/// Applies crop, flip, rotation, brightness, contrast and noise in that
/// order. Identity settings leave the input untouched.
pub fn augment(input: &LabeledImage, spec: &AugmentSpec) -> Augmented {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (mut out, dropped) = if spec.crop < 1.0 {
        crop(input, spec.crop, &mut rng)
    } else {
        (input.clone(), 0)
    };
    if spec.flip != Flip::None {
        out = flip(out, spec.flip);
    }
    for _ in 0..spec.rotation.quarter_turns() {
        out = rotate90(out);
    }
    if spec.brightness != 0.0 {
        let delta = spec.brightness * 255.0;
        map_channels(&mut out.image, |v| v + delta);
    }
    if spec.contrast != 1.0 {
        map_channels(&mut out.image, |v| (v - 128.0) * spec.contrast + 128.0);
    }
    if spec.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.gaussian_sigma).expect("finite sigma");
        for c in out.image.pixels_mut() {
            *c = (*c as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    Augmented { labeled: out, dropped }
}

/// Draws a spec: brightness in [-0.2, 0.2], contrast in [0.7, 1.3], crop in
/// [0.7, 1.0], any flip, noise sigma in [0, 12], any quarter turn.
pub fn sample_spec(rng: &mut ChaCha8Rng) -> AugmentSpec {
    const FLIPS: [Flip; 3] = [Flip::None, Flip::Horizontal, Flip::Vertical];
    const ROTATIONS: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];
    AugmentSpec {
        brightness: rng.random_range(-0.2..=0.2),
        contrast: rng.random_range(0.7..=1.3),
        crop: rng.random_range(0.7..=1.0),
        flip: FLIPS[rng.random_range(0..FLIPS.len())],
        gaussian_sigma: rng.random_range(0.0..=12.0),
        rotation: ROTATIONS[rng.random_range(0..ROTATIONS.len())],
        rng_seed: rng.random(),
    }
}

/// `n_variants` independently augmented copies.
pub fn expand_dataset(input: &LabeledImage, n_variants: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledImage> {
    (0..n_variants)
        .map(|_| augment(input, &sample_spec(rng)).labeled)
        .collect()
}

/// Expands every input in parallel; input `i` uses stream `i` of a generator
/// seeded with `master_seed`.
pub fn expand_many(inputs: &[LabeledImage], n_variants: usize, master_seed: u64) -> Vec<Vec<LabeledImage>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(i as u64);
            expand_dataset(input, n_variants, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ComponentCategory;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample_image(w: u32, h: u32, seed: u64) -> LabeledImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = vec![0u8; (w * h * 3) as usize];
        rng.fill(&mut pixels[..]);
        let image = RasterImage::from_raw(w, h, pixels).unwrap();
        let labels = (0..3)
            .map(|_| {
                let u1 = rng.random_range(0..w - 1);
                let v1 = rng.random_range(0..h - 1);
                Label {
                    category: ComponentCategory::Bolt,
                    bbox: [u1, v1, rng.random_range(u1 + 1..=w), rng.random_range(v1 + 1..=h)],
                }
            })
            .collect();
        LabeledImage { image, labels }
    }

    fn region(img: &RasterImage, bbox: [u32; 4]) -> Vec<[u8; 3]> {
        let mut px = Vec::new();
        for y in bbox[1]..bbox[3] {
            for x in bbox[0]..bbox[2] {
                px.push(img.get(x, y));
            }
        }
        px.sort();
        px
    }

    #[test]
    fn identity_spec_is_bit_exact() {
        let input = sample_image(31, 17, 1);
        let out = augment(&input, &AugmentSpec::default());
        assert_eq!(out.labeled, input);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn flips_and_half_turn_are_involutions() {
        let input = sample_image(31, 17, 2);
        for spec in [
            AugmentSpec { flip: Flip::Horizontal, ..Default::default() },
            AugmentSpec { flip: Flip::Vertical, ..Default::default() },
            AugmentSpec { rotation: Rotation::R180, ..Default::default() },
        ] {
            let once = augment(&input, &spec).labeled;
            assert_ne!(once.image, input.image);
            assert_eq!(augment(&once, &spec).labeled, input);
        }
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let input = sample_image(7, 4, 3);
        let (w, h) = (7, 4);
        let out = augment(&input, &AugmentSpec { rotation: Rotation::R90, ..Default::default() }).labeled;
        assert_eq!((out.image.width(), out.image.height()), (h, w));
        for y in 0..h {
            for x in 0..w {
                assert_eq!(out.image.get(y, w - 1 - x), input.image.get(x, y));
            }
        }
        for (a, b) in input.labels.iter().zip(&out.labels) {
            let [u1, v1, u2, v2] = a.bbox;
            assert_eq!(b.bbox, [v1, w - u2, v2, w - u1]);
        }
        let four = (0..4).fold(input.clone(), |acc, _| {
            augment(&acc, &AugmentSpec { rotation: Rotation::R90, ..Default::default() }).labeled
        });
        assert_eq!(four, input);
    }

    #[test]
    fn lossless_ops_preserve_bbox_pixels() {
        let input = sample_image(23, 13, 4);
        for spec in [
            AugmentSpec { flip: Flip::Horizontal, ..Default::default() },
            AugmentSpec { flip: Flip::Vertical, ..Default::default() },
            AugmentSpec { rotation: Rotation::R90, ..Default::default() },
            AugmentSpec { rotation: Rotation::R270, flip: Flip::Horizontal, ..Default::default() },
        ] {
            let out = augment(&input, &spec).labeled;
            for (a, b) in input.labels.iter().zip(&out.labels) {
                assert_eq!(region(&input.image, a.bbox), region(&out.image, b.bbox));
            }
        }
    }

    #[test]
    fn pixel_ops_clamp() {
        let input = LabeledImage {
            image: RasterImage::from_raw(2, 1, vec![0, 128, 250, 10, 200, 255]).unwrap(),
            labels: vec![],
        };
        let bright = augment(&input, &AugmentSpec { brightness: 0.1, ..Default::default() }).labeled;
        assert_eq!(bright.image.pixels(), &[26, 154, 255, 36, 226, 255]);
        let contrast = augment(&input, &AugmentSpec { contrast: 2.0, ..Default::default() }).labeled;
        assert_eq!(contrast.image.pixels(), &[0, 128, 255, 0, 255, 255]);
    }

    #[test]
    fn full_crop_out_drops_labels_and_flags() {
        let mut input = sample_image(40, 40, 5);
        input.labels = vec![Label { category: ComponentCategory::Cable, bbox: [0, 0, 1, 1] }];
        // Find a seed whose crop window misses the corner.
        let out = (0..64)
            .map(|seed| augment(&input, &AugmentSpec { crop: 0.5, rng_seed: seed, ..Default::default() }))
            .find(|a| a.labeled.labels.is_empty())
            .unwrap();
        assert!(out.emptied());
        assert_eq!(out.labeled.image.width(), 20);
    }

    #[test]
    fn default_expansion_count_and_reproducibility() {
        let input = sample_image(32, 24, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(expand_dataset(&input, DEFAULT_VARIANTS, &mut rng).len(), 6);
        let one = |seed| expand_dataset(&input, 1, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(one(3), one(3));
        assert_eq!(expand_many(&[input.clone(), input.clone()], 2, 1), expand_many(&[input.clone(), input], 2, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sampled_specs_keep_labels_valid(seed in any::<u64>()) {
            let input = sample_image(37, 29, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in expand_dataset(&input, 6, &mut rng) {
                prop_assert!(v.labels_valid());
            }
        }

        #[test]
        fn zero_strength_pixel_ops_are_identity(seed in any::<u64>()) {
            let input = sample_image(9, 5, seed);
            let spec = AugmentSpec { rng_seed: seed, ..Default::default() };
            prop_assert_eq!(augment(&input, &spec).labeled, input);
        }
    }
}
