//! Synthetic training sets for smoke training and ablation checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::TrainSample;
use crate::image::Image;

fn textured(size: usize, base: f32, rng: &mut impl Rng) -> Image {
    let tint = [rng.gen_range(-0.1..0.1f32), rng.gen_range(-0.1..0.1f32), rng.gen_range(-0.1..0.1f32)];
    Image::from_fn(size, size, |_, _| {
        let n: f32 = rng.gen_range(-0.08..0.08);
        tint.map(|t| (base + t + n).clamp(0.0, 1.0))
    })
}

/// Score = 1 + 9 x mean luma of a noisy, tinted image.
pub fn luminance_set(n: usize, size: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base = rng.gen_range(0.1..0.9);
            let image = textured(size, base, &mut rng);
            let score = 1.0 + 9.0 * image.mean_luma();
            TrainSample { image, score, attributes: None }
        })
        .collect()
}

/// A bright square on a dark textured background. The score depends
/// mostly on the square's vertical position and weakly on its brightness.
/// The square never touches the border, so a translation-invariant
/// encoder with global pooling can only recover the brightness part.
pub fn style_dependent_set(n: usize, size: usize, seed: u64) -> Vec<TrainSample> {
    assert!(size >= 12, "style fixture needs at least 12x12 pixels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = size / 4;
    let margin = 3;
    let max_pos = size - side - margin;
    (0..n)
        .map(|_| {
            let (px, py) = (rng.gen_range(margin..=max_pos), rng.gen_range(margin..=max_pos));
            let b: f32 = rng.gen_range(0.6..1.0);
            let mut image = textured(size, 0.15, &mut rng);
            for y in py..py + side {
                for x in px..px + side {
                    image.set(x, y, [b, b, b]);
                }
            }
            let pos = (py - margin) as f64 / (max_pos - margin) as f64;
            let score = 3.0 + 4.0 * pos + (b as f64 - 0.6) / 0.4;
            TrainSample { image, score, attributes: None }
        })
        .collect()
}

/// Plain textured images for distortion classification.
pub fn texture_images(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base = rng.gen_range(0.3..0.7);
            let freq = rng.gen_range(0.5..1.5f32);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let noise = textured(size, base, &mut rng);
            Image::from_fn(size, size, |x, y| {
                let s = 0.2 * ((x as f32 * freq + phase).sin() * (y as f32 * freq * 0.7).cos());
                noise.get(x, y).map(|v| (v + s).clamp(0.0, 1.0))
            })
        })
        .collect()
}
