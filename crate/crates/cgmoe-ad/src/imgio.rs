//! Raster image and mask I/O.
//!
//! Images are carried as interleaved 8-bit RGB; masks as boolean grids
//! (serialized as single-channel PNG, 0 = normal, 255 = anomalous).

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbBuffer {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        RgbBuffer {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels as `f32` in `[0, 1]`, same interleaved layout.
    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl MaskBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        MaskBuffer {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn count_positive(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count_positive() == 0
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbBuffer> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(RgbBuffer {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

pub fn save_rgb_png(path: &Path, buf: &RgbBuffer) -> Result<()> {
    let img: RgbImage =
        ImageBuffer::from_raw(buf.width as u32, buf.height as u32, buf.pixels.clone())
            .expect("pixel buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Any pixel with nonzero luminance counts as anomalous.
pub fn load_mask(path: &Path) -> Result<MaskBuffer> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    Ok(MaskBuffer {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw().into_iter().map(|v| v > 0).collect(),
    })
}

pub fn save_mask_png(path: &Path, mask: &MaskBuffer) -> Result<()> {
    let raw: Vec<u8> = mask
        .pixels
        .iter()
        .map(|&p| if p { 255 } else { 0 })
        .collect();
    let img: GrayImage = ImageBuffer::from_raw(mask.width as u32, mask.height as u32, raw)
        .expect("pixel buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Exports a score field as 16-bit grayscale PNG. Values are clamped to
/// `[0, scale]` and mapped linearly onto the full u16 range.
pub fn save_gray16_png(
    path: &Path,
    width: usize,
    height: usize,
    values: &[f32],
    scale: f32,
) -> Result<()> {
    assert_eq!(
        values.len(),
        width * height,
        "value count must match dimensions"
    );
    let raw: Vec<u16> = values
        .iter()
        .map(|&v| ((v / scale).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw)
            .expect("pixel buffer matches dimensions");
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = RgbBuffer::new(5, 3);
        buf.set(2, 1, [10, 200, 30]);
        let path = dir.path().join("x.png");
        save_rgb_png(&path, &buf).unwrap();
        let back = load_rgb(&path).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = MaskBuffer::new(4, 4);
        mask.set(0, 0, true);
        mask.set(3, 2, true);
        let path = dir.path().join("m.png");
        save_mask_png(&path, &mask).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back, mask);
        assert_eq!(back.count_positive(), 2);
    }
}
