//! The ten synthetic distortions used by the distortion-prediction task.
//!
//! Each kind takes one scalar parameter whose meaning depends on the kind
//! (factor, sigma, fraction, level count). [`DistortionKind::sampling_range`]
//! is the law used during training; [`DistortionKind::valid_range`] is what
//! [`apply_distortion`] accepts and may be wider so identity settings can be
//! requested explicitly.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    BrightnessChange,
    ColorEnhancement,
    ContrastChange,
    PiecewiseAffine,
    CutMix,
    DownSampling,
    GaussianBlur,
    GaussianNoise,
    EdgeExtraction,
    Quantization,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamRange {
    Continuous { lo: f64, hi: f64 },
    Discrete(Vec<f64>),
    /// No parameter; callers pass 0.
    Fixed,
}

impl ParamRange {
    pub fn contains(&self, v: f64) -> bool {
        match self {
            Self::Continuous { lo, hi } => v >= *lo && v <= *hi,
            Self::Discrete(set) => set.contains(&v),
            Self::Fixed => v == 0.0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Continuous { lo, hi } => rng.gen_range(*lo..=*hi),
            Self::Discrete(set) => set[rng.gen_range(0..set.len())],
            Self::Fixed => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistortionError {
    #[error("{kind} parameter {value} outside {range}")]
    OutOfRange { kind: DistortionKind, value: f64, range: String },
    #[error("unknown distortion {0:?}")]
    Unknown(String),
    #[error("image too small for {0}")]
    TooSmall(DistortionKind),
}

/// Low/high hysteresis thresholds on the Sobel magnitude of a [0,1] luma image.
pub const CANNY_LOW: f32 = 0.1;
pub const CANNY_HIGH: f32 = 0.25;

impl DistortionKind {
    pub const ALL: [DistortionKind; 10] = [
        Self::BrightnessChange,
        Self::ColorEnhancement,
        Self::ContrastChange,
        Self::PiecewiseAffine,
        Self::CutMix,
        Self::DownSampling,
        Self::GaussianBlur,
        Self::GaussianNoise,
        Self::EdgeExtraction,
        Self::Quantization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BrightnessChange => "brightness_change",
            Self::ColorEnhancement => "color_enhancement",
            Self::ContrastChange => "contrast_change",
            Self::PiecewiseAffine => "piecewise_affine",
            Self::CutMix => "cut_mix",
            Self::DownSampling => "down_sampling",
            Self::GaussianBlur => "gaussian_blur",
            Self::GaussianNoise => "gaussian_noise",
            Self::EdgeExtraction => "edge_extraction",
            Self::Quantization => "quantization",
        }
    }

    pub fn sampling_range(self) -> ParamRange {
        use ParamRange::*;
        match self {
            Self::BrightnessChange | Self::ContrastChange | Self::ColorEnhancement => Continuous { lo: 0.5, hi: 1.5 },
            // max node displacement as a fraction of image size
            Self::PiecewiseAffine => Continuous { lo: 0.01, hi: 0.05 },
            // pasted patch area as a fraction of the image
            Self::CutMix => Continuous { lo: 0.2, hi: 0.4 },
            Self::DownSampling => Discrete(vec![2.0, 4.0]),
            Self::GaussianBlur => Continuous { lo: 0.5, hi: 3.0 },
            Self::GaussianNoise => Continuous { lo: 0.01, hi: 0.1 },
            Self::EdgeExtraction => Fixed,
            Self::Quantization => Discrete(vec![4.0, 8.0, 16.0]),
        }
    }

    pub fn valid_range(self) -> ParamRange {
        match self {
            Self::GaussianNoise => ParamRange::Continuous { lo: 0.0, hi: 0.1 },
            Self::PiecewiseAffine => ParamRange::Continuous { lo: 0.0, hi: 0.05 },
            other => other.sampling_range(),
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = DistortionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| DistortionError::Unknown(s.to_string()))
    }
}

/// Applies one distortion. Deterministic in `(image, kind, param, seed)`;
/// the output has the input's dimensions.
pub fn apply_distortion(img: &Image, kind: DistortionKind, param: f64, seed: u64) -> Result<Image, DistortionError> {
    let range = kind.valid_range();
    if !range.contains(param) {
        return Err(DistortionError::OutOfRange { kind, value: param, range: format!("{range:?}") });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = param as f32;
    let mut out = match kind {
        DistortionKind::BrightnessChange => map_pixels(img, |c| c.map(|v| v * p)),
        DistortionKind::ColorEnhancement => map_pixels(img, |c| {
            let g = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            c.map(|v| g + (v - g) * p)
        }),
        DistortionKind::ContrastChange => {
            let m = img.mean_luma() as f32;
            map_pixels(img, |c| c.map(|v| m + (v - m) * p))
        }
        DistortionKind::PiecewiseAffine => piecewise_affine(img, p, &mut rng),
        DistortionKind::CutMix => cut_mix(img, p, &mut rng)?,
        DistortionKind::DownSampling => {
            let f = param as usize;
            let w = (img.width() / f).max(1);
            let h = (img.height() / f).max(1);
            box_decimate(img, w, h).resize(img.width(), img.height())
        }
        DistortionKind::GaussianBlur => gaussian_blur(img, p),
        DistortionKind::GaussianNoise => {
            if p == 0.0 {
                img.clone()
            } else {
                let normal = Normal::new(0.0f32, p).expect("sigma is positive");
                map_pixels(img, |c| c.map(|v| v + normal.sample(&mut rng)))
            }
        }
        DistortionKind::EdgeExtraction => {
            let edges = canny(img, CANNY_LOW, CANNY_HIGH);
            Image::from_fn(img.width(), img.height(), |x, y| {
                let v = edges[y * img.width() + x];
                [v, v, v]
            })
        }
        DistortionKind::Quantization => {
            let levels = p - 1.0;
            map_pixels(img, |c| c.map(|v| (v.clamp(0.0, 1.0) * levels).round() / levels))
        }
    };
    out.clamp01();
    Ok(out)
}

/// Draws a parameter from the kind's sampling law and applies it.
pub fn random_distortion(img: &Image, kind: DistortionKind, rng: &mut impl Rng) -> Image {
    let param = kind.sampling_range().sample(rng);
    apply_distortion(img, kind, param, rng.gen()).expect("sampled parameter is in range")
}

fn map_pixels(img: &Image, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| f(img.get(x, y)))
}

fn box_decimate(img: &Image, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let x0 = x * img.width() / w;
        let x1 = ((x + 1) * img.width() / w).max(x0 + 1);
        let y0 = y * img.height() / h;
        let y1 = ((y + 1) * img.height() / h).max(y0 + 1);
        let mut acc = [0.0f32; 3];
        for yy in y0..y1 {
            for xx in x0..x1 {
                let p = img.get(xx, yy);
                (0..3).for_each(|k| acc[k] += p[k]);
            }
        }
        let n = ((x1 - x0) * (y1 - y0)) as f32;
        acc.map(|v| v / n)
    })
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f32> = (-r..=r).map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders.
fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(src.width(), src.height(), |x, y| {
            let mut acc = [0.0f32; 3];
            for (i, kv) in k.iter().enumerate() {
                let off = i as isize - r;
                let (sx, sy) = if horizontal {
                    ((x as isize + off).clamp(0, w - 1), y as isize)
                } else {
                    (x as isize, (y as isize + off).clamp(0, h - 1))
                };
                let p = src.get(sx as usize, sy as usize);
                (0..3).for_each(|c| acc[c] += kv * p[c]);
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

fn blur_plane(plane: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let img = Image::from_fn(w, h, |x, y| {
        let v = plane[y * w + x];
        [v, v, v]
    });
    gaussian_blur(&img, sigma).data().chunks_exact(3).map(|p| p[0]).collect()
}

/// Canny edge map (1 on edges, 0 elsewhere) of the luma channel.
pub fn canny(img: &Image, low: f32, high: f32) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    let g = blur_plane(&img.luma(), w, h, 1.0);
    let at = |x: isize, y: isize| g[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0f32; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1);
            let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1);
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let m = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // 0 none, 1 weak, 2 strong
    let mut state = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let (dx, dy) = match dir[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let v = mag[i];
            if v < m(x + dx, y + dy) || v < m(x - dx, y - dy) {
                continue;
            }
            state[i] = if v >= high {
                2
            } else if v >= low {
                1
            } else {
                0
            };
        }
    }
    let mut stack: Vec<usize> = (0..w * h).filter(|i| state[*i] == 2).collect();
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }
    state.into_iter().map(|s| if s == 2 { 1.0 } else { 0.0 }).collect()
}

/// Jitters the interior nodes of a 4x4 control grid and warps each grid
/// triangle affinely; border nodes stay fixed.
fn piecewise_affine(img: &Image, jitter: f32, rng: &mut impl Rng) -> Image {
    const CELLS: usize = 4;
    let (w, h) = (img.width() as f32, img.height() as f32);
    let n = CELLS + 1;
    let mut disp = vec![[0.0f32; 2]; n * n];
    for gy in 1..CELLS {
        for gx in 1..CELLS {
            disp[gy * n + gx] = [rng.gen_range(-1.0..=1.0) * jitter * w, rng.gen_range(-1.0..=1.0) * jitter * h];
        }
    }
    let (cw, ch) = (w / CELLS as f32, h / CELLS as f32);
    Image::from_fn(img.width(), img.height(), |x, y| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let cx = ((px / cw) as usize).min(CELLS - 1);
        let cy = ((py / ch) as usize).min(CELLS - 1);
        let u = px / cw - cx as f32;
        let v = py / ch - cy as f32;
        let d = |gx: usize, gy: usize| disp[gy * n + gx];
        // split each cell along its main diagonal
        let (d0, d1, d2, a, b) = if u >= v {
            (d(cx, cy), d(cx + 1, cy), d(cx + 1, cy + 1), 1.0 - u, u - v)
        } else {
            (d(cx, cy), d(cx + 1, cy + 1), d(cx, cy + 1), 1.0 - v, u)
        };
        let c = 1.0 - a - b;
        let ox = a * d0[0] + b * d1[0] + c * d2[0];
        let oy = a * d0[1] + b * d1[1] + c * d2[1];
        img.sample_bilinear(px - ox - 0.5, py - oy - 0.5)
    })
}

/// Pastes a rectangular patch cut from another location of the same image.
fn cut_mix(img: &Image, area: f32, rng: &mut impl Rng) -> Result<Image, DistortionError> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(DistortionError::TooSmall(DistortionKind::CutMix));
    }
    let side = (area.sqrt() * w as f32).round() as usize;
    let pw = side.clamp(1, w - 1);
    let ph = ((area * (w * h) as f32 / pw as f32).round() as usize).clamp(1, h - 1);
    let (dx, dy) = (rng.gen_range(0..=w - pw), rng.gen_range(0..=h - ph));
    let mut sx;
    let mut sy;
    loop {
        sx = rng.gen_range(0..=w - pw);
        sy = rng.gen_range(0..=h - ph);
        if (sx, sy) != (dx, dy) {
            break;
        }
    }
    let mut out = img.clone();
    for y in 0..ph {
        for x in 0..pw {
            out.set(dx + x, dy + y, img.get(sx + x, sy + y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = ((x * 31 + y * 17) % 23) as f32 / 22.0;
            [v, 1.0 - v, (x as f32 / w as f32)]
        })
    }

    #[test]
    fn identity_parameters() {
        let img = textured(16, 12);
        for (kind, p) in [
            (DistortionKind::BrightnessChange, 1.0),
            (DistortionKind::ContrastChange, 1.0),
            (DistortionKind::ColorEnhancement, 1.0),
            (DistortionKind::GaussianNoise, 0.0),
            (DistortionKind::PiecewiseAffine, 0.0),
        ] {
            let out = apply_distortion(&img, kind, p, 9).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6, "{kind}");
            }
        }
    }

    #[test]
    fn quantization_levels() {
        let ramp = Image::from_fn(256, 1, |x, _| {
            let v = x as f32 / 255.0;
            [v, v, v]
        });
        for levels in [4usize, 8, 16] {
            let out = apply_distortion(&ramp, DistortionKind::Quantization, levels as f64, 0).unwrap();
            let distinct: BTreeSet<u8> = out.to_rgb8().into_iter().collect();
            assert_eq!(distinct.len(), levels);
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let img = textured(17, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in DistortionKind::ALL {
            let p = kind.sampling_range().sample(&mut rng);
            let a = apply_distortion(&img, kind, p, 42).unwrap();
            let b = apply_distortion(&img, kind, p, 42).unwrap();
            assert_eq!((a.width(), a.height()), (17, 13), "{kind}");
            assert_eq!(a, b, "{kind}");
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let img = textured(8, 8);
        for (kind, p) in [
            (DistortionKind::BrightnessChange, 2.0),
            (DistortionKind::DownSampling, 3.0),
            (DistortionKind::Quantization, 5.0),
            (DistortionKind::GaussianBlur, 0.1),
            (DistortionKind::EdgeExtraction, 1.0),
        ] {
            assert!(matches!(apply_distortion(&img, kind, p, 0), Err(DistortionError::OutOfRange { .. })), "{kind}");
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in DistortionKind::ALL {
            assert_eq!(kind.as_str().parse::<DistortionKind>().unwrap(), kind);
        }
        assert_eq!(DistortionKind::ALL.len(), 10);
    }

    #[test]
    fn canny_finds_step_edge() {
        let img = Image::from_fn(16, 16, |x, _| if x < 8 { [0.0; 3] } else { [1.0; 3] });
        let edges = canny(&img, CANNY_LOW, CANNY_HIGH);
        let cols: BTreeSet<usize> = (0..256).filter(|i| edges[*i] > 0.0).map(|i| i % 16).collect();
        assert!(!cols.is_empty());
        assert!(cols.iter().all(|c| (6..=9).contains(c)), "{cols:?}");
        let flat = canny(&Image::filled(8, 8, [0.5; 3]), CANNY_LOW, CANNY_HIGH);
        assert!(flat.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cut_mix_changes_a_bounded_area() {
        let img = textured(20, 20);
        let out = apply_distortion(&img, DistortionKind::CutMix, 0.3, 5).unwrap();
        let changed = (0..20 * 20).filter(|i| out.get(i % 20, i / 20) != img.get(i % 20, i / 20)).count();
        assert!(changed > 0 && changed <= 20 * 20 * 45 / 100, "{changed}");
    }

    #[test]
    fn down_sampling_loses_detail() {
        let img = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] });
        let out = apply_distortion(&img, DistortionKind::DownSampling, 2.0, 0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-5));
    }
}
