//! In-memory RGB image with `f32` channels in `[0, 1]`, interleaved
//! row-major. PNG is the on-disk format.

use std::path::Path;

use crate::schema::BoundingBox;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("box ({x}, {y}, {w}, {h}) exceeds image {width}x{height}")]
    OutOfBounds { x: f64, y: f64, w: f64, h: f64, width: usize, height: usize },
    #[error("empty region")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "raw buffer size");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Clamp-to-edge bilinear sample at continuous pixel-center coordinates.
    pub fn sample_bilinear(&self, fx: f32, fy: f32) -> [f32; 3] {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let fx = fx.clamp(0.0, max_x);
        let fy = fy.clamp(0.0, max_y);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * tx;
            let bot = c[k] + (d[k] - c[k]) * tx;
            out[k] = top + (bot - top) * ty;
        }
        out
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    pub fn mean_luma(&self) -> f64 {
        let l = self.luma();
        l.iter().map(|v| *v as f64).sum::<f64>() / l.len() as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear resize using pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Image::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
        })
    }

    /// Scales the shorter side to `size` and takes the central `size x size` crop.
    pub fn center_crop_resize(&self, size: usize) -> Image {
        let scale = size as f32 / self.width.min(self.height) as f32;
        let w = ((self.width as f32 * scale).round() as usize).max(size);
        let h = ((self.height as f32 * scale).round() as usize).max(size);
        let scaled = self.resize(w, h);
        let x0 = (w - size) / 2;
        let y0 = (h - size) / 2;
        Image::from_fn(size, size, |x, y| scaled.get(x + x0, y + y0))
    }

    /// Aspect-preserving resize into a `size x size` canvas, padded with black.
    pub fn letterbox(&self, size: usize) -> Image {
        let scale = size as f32 / self.width.max(self.height) as f32;
        let w = ((self.width as f32 * scale).round() as usize).clamp(1, size);
        let h = ((self.height as f32 * scale).round() as usize).clamp(1, size);
        let scaled = self.resize(w, h);
        let x0 = (size - w) / 2;
        let y0 = (size - h) / 2;
        let mut out = Image::new(size, size);
        for y in 0..h {
            for x in 0..w {
                out.set(x + x0, y + y0, scaled.get(x, y));
            }
        }
        out
    }

    /// Exact sub-image for a box with integral pixel edges (fractional edges
    /// are floored at the origin and ceiled at the far side).
    pub fn crop(&self, b: &BoundingBox) -> Result<Image, ImageError> {
        let oob = || ImageError::OutOfBounds {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            width: self.width,
            height: self.height,
        };
        if b.x < 0.0 || b.y < 0.0 || b.right() > self.width as f64 || b.bottom() > self.height as f64 {
            return Err(oob());
        }
        let x0 = b.x.floor() as usize;
        let y0 = b.y.floor() as usize;
        let x1 = (b.right().ceil() as usize).min(self.width);
        let y1 = (b.bottom().ceil() as usize).min(self.height);
        if x1 <= x0 || y1 <= y0 {
            return Err(ImageError::Empty);
        }
        Ok(Image::from_fn(x1 - x0, y1 - y0, |x, y| self.get(x + x0, y + y0)))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Image {
        Image::from_raw(width, height, bytes.iter().map(|b| *b as f32 / 255.0).collect())
    }

    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        let img = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        let rgb = img.to_rgb8();
        Ok(Image::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| ImageError::Encode("buffer size".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png).map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| ImageError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::decode(&bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?)
            .map_err(|e| ImageError::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5])
    }

    #[test]
    fn full_crop_is_identity() {
        let img = ramp(12, 9);
        let crop = img.crop(&BoundingBox::new(0.0, 0.0, 12.0, 9.0)).unwrap();
        assert_eq!(crop, img);
    }

    #[test]
    fn small_crop_matches_source() {
        let img = ramp(32, 32);
        let crop = img.crop(&BoundingBox::new(0.0, 0.0, 10.0, 10.0)).unwrap();
        assert_eq!((crop.width(), crop.height()), (10, 10));
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(crop.get(x, y), img.get(x, y));
            }
        }
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = ramp(8, 8);
        assert!(matches!(img.crop(&BoundingBox::new(4.0, 4.0, 5.0, 2.0)), Err(ImageError::OutOfBounds { .. })));
    }

    #[test]
    fn png_round_trip_is_lossless_for_8bit() {
        let img = Image::from_rgb8(3, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 250, 251, 255]);
        let back = Image::decode(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert!(Image::decode(b"not an image").is_err());
    }

    #[test]
    fn letterbox_and_center_crop_sizes() {
        let img = ramp(40, 20);
        let lb = img.letterbox(16);
        assert_eq!((lb.width(), lb.height()), (16, 16));
        assert_eq!(lb.get(0, 0), [0.0; 3]);
        let cc = img.center_crop_resize(16);
        assert_eq!((cc.width(), cc.height()), (16, 16));
    }
}
