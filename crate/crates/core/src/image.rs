use crate::error::{Error, Result};

/// Row-major single-channel image with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::InvalidInput(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Non-overlapping `size x size` tiles in raster order, flattened row-major.
    pub fn patches(&self, size: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        if size == 0 {
            return out;
        }
        for py in 0..self.height / size {
            for px in 0..self.width / size {
                let mut patch = Vec::with_capacity(size * size);
                for y in 0..size {
                    let row = (py * size + y) * self.width + px * size;
                    patch.extend_from_slice(&self.pixels[row..row + size]);
                }
                out.push(patch);
            }
        }
        out
    }
}
