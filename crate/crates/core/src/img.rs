//! Dense row-major image buffers used throughout the pipeline.
//!
//! All internal computation is in `f64`; 8-bit conversion happens only at
//! the PNG boundary.

use nalgebra::Vector3;

/// H×W×3 color image, values nominally in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>, // len = width * height * 3
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = self.idx(x, y);
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Vector3<f64>) {
        let i = self.idx(x, y);
        self.data[i] = c.x;
        self.data[i + 1] = c.y;
        self.data[i + 2] = c.z;
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_size(&self, other: &ImageRgb) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// H×W scalar map (depth, alpha, gradients, ...), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2d {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Map2d {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, other: &Map2d) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Median of entries selected by `mask` (true = keep). Returns None if
    /// the selection is empty.
    pub fn masked_median(&self, mask: impl Fn(f64) -> bool) -> Option<f64> {
        let mut v: Vec<f64> = self.data.iter().copied().filter(|&d| mask(d)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(v[v.len() / 2])
    }
}
